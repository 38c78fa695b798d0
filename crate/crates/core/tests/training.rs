use efnet::models::{self, BaselineConfig, BaselineMlp, EfNetConfig, EfNetModel, NeuralClassifier, TrainConfig};
use efnet::nn::softmax_cross_entropy;
use efnet::preprocess::{self, EncodedDataset};
use efnet::schema::TableSchema;
use efnet::split::{stratified_split, SplitFractions};
use efnet::synthetic::{generate_synthetic, SyntheticSpec};

fn data(rows: usize, seed: u64) -> (efnet::preprocess::PreprocessState, EncodedDataset, EncodedDataset) {
    let table = generate_synthetic(
        &TableSchema::emergency_department(),
        &SyntheticSpec {
            rows,
            seed,
            ..SyntheticSpec::default()
        },
    )
    .unwrap();
    let state = preprocess::fit(&table).unwrap();
    let all = preprocess::transform(&table, &state).unwrap();
    let (train, val, _) = stratified_split(&all, state.num_classes(), SplitFractions::default(), seed).unwrap();
    (state, train, val)
}

fn val_loss<M: NeuralClassifier>(model: &M, val: &EncodedDataset) -> f64 {
    softmax_cross_entropy(&model.logits(&val.features).unwrap(), &val.labels).unwrap().0
}

#[test]
fn returns_the_best_epoch_snapshot() {
    let (state, train, val) = data(400, 3);
    let config = TrainConfig {
        max_epochs: 40,
        patience: 3,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let model = EfNetModel::for_state(&state, EfNetConfig::default(), 1).unwrap();
    let (best, log) = models::train(model, &train, &val, &config).unwrap();
    let min = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(log.epochs[log.best_epoch - 1].val_loss, min);
    assert_eq!(val_loss(&best, &val), min);
    assert!(log.stopped_epoch >= log.best_epoch);
    assert!(log.stopped_epoch == config.max_epochs || log.stopped_epoch - log.best_epoch >= 1);
}

#[test]
fn training_is_deterministic_per_seed() {
    let (state, train, val) = data(300, 4);
    let config = TrainConfig {
        max_epochs: 5,
        patience: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let model = BaselineMlp::for_state(&state, BaselineConfig::default(), &train.features, 2).unwrap();
        models::train(model, &train, &val, &config).unwrap()
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let other = TrainConfig { seed: 10, ..config };
    let model = BaselineMlp::for_state(&state, BaselineConfig::default(), &train.features, 2).unwrap();
    let (_, log_c) = models::train(model, &train, &val, &other).unwrap();
    assert_ne!(log_a.epochs[0].train_loss, log_c.epochs[0].train_loss);
}

#[test]
fn probabilities_are_normalized() {
    let (state, train, val) = data(200, 5);
    let model = EfNetModel::for_state(&state, EfNetConfig::default(), 1).unwrap();
    let (model, _) = models::train(
        model,
        &train,
        &val,
        &TrainConfig {
            max_epochs: 3,
            patience: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let p = model.predict_proba(&val.features).unwrap();
    for row in p.iter_rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
