//! End-to-end commands: generate, train, evaluate, predict.
//!
//! `cmd_train` runs load → fit/transform → stratified split → train members
//! → evaluate on the test part, and writes into the output directory:
//!
//! | file            | content                                        |
//! |-----------------|------------------------------------------------|
//! | `bundle.json`   | [`ModelBundle`]                                |
//! | `train_log.csv` | per-epoch (neural) or per-round (GBDT) losses  |
//! | `report.json`   | [`RunReport`] on the test part                 |
//! | `report.txt`    | the same report as text                        |
//! | `confusion.csv` | confusion matrix of the voted prediction       |
//! | `test.csv`      | the test rows, for later `evaluate` runs       |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::ensemble::{EnsembleModel, Member, VoteWeights};
use crate::error::{Error, Result};
use crate::gbdt::{FeatureView, GbdtConfig, GbdtModel};
use crate::metrics::{evaluate, EvalReport};
use crate::models::{self, BaselineConfig, BaselineMlp, EfNetConfig, EfNetModel, FrequencyEncoder, TrainConfig, TrainLog};
use crate::nn::Matrix;
use crate::preprocess::{self, EncodedDataset, PreprocessState};
use crate::rng::SplitMix64;
use crate::schema::{load_csv, load_csv_with, DataTable, TableSchema, TargetPolicy};
use crate::split::{stratified_split_indices, SplitFractions};
use crate::synthetic::{generate_synthetic, SyntheticSpec};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const TEST_SPLIT_FILE: &str = "test.csv";

const MEMBER_SEED_STREAM: u64 = 0x3e3b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    Efnet,
    Gbdt,
    Ensemble,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Efnet => "efnet",
            ModelKind::Gbdt => "gbdt",
            ModelKind::Ensemble => "ensemble",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "efnet" => Ok(ModelKind::Efnet),
            "gbdt" => Ok(ModelKind::Gbdt),
            "ensemble" => Ok(ModelKind::Ensemble),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected baseline, efnet, gbdt or ensemble)"
            ))),
        }
    }
}

/// Which dense layout the GBDT member sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbdtInput {
    #[default]
    Tokens,
    Categories,
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// Everything a training run depends on. Read from a JSON file; CLI flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `None` selects the built-in emergency-department layout.
    pub schema: Option<PathBuf>,
    pub data: DataSource,
    pub model: ModelKind,
    /// Members trained when `model` is `ensemble`.
    pub ensemble_members: Vec<ModelKind>,
    pub ensemble_weights: VoteWeights,
    /// Train ensemble members on separate threads; results are identical.
    pub parallel_members: bool,
    pub train: TrainConfig,
    pub efnet: EfNetConfig,
    pub baseline: BaselineConfig,
    pub gbdt: GbdtConfig,
    pub gbdt_input: GbdtInput,
    pub split: SplitFractions,
    /// Drives the split, parameter initialisation and batch order.
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: None,
            data: DataSource::default(),
            model: ModelKind::Efnet,
            ensemble_members: vec![ModelKind::Efnet, ModelKind::Gbdt],
            ensemble_weights: VoteWeights::Uniform,
            parallel_members: false,
            train: TrainConfig::default(),
            efnet: EfNetConfig::default(),
            baseline: BaselineConfig::default(),
            gbdt: GbdtConfig::default(),
            gbdt_input: GbdtInput::default(),
            split: SplitFractions::default(),
            seed: 0,
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn member_kinds(&self) -> Result<Vec<ModelKind>> {
        if self.model != ModelKind::Ensemble {
            return Ok(vec![self.model]);
        }
        if self.ensemble_members.is_empty() {
            return Err(Error::Config("ensemble_members is empty".into()));
        }
        if self.ensemble_members.contains(&ModelKind::Ensemble) {
            return Err(Error::Config("an ensemble cannot contain an ensemble".into()));
        }
        Ok(self.ensemble_members.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let members = self.member_kinds()?;
        self.ensemble_weights.normalized(members.len())?;
        self.split.validate()?;
        if members.iter().any(|m| matches!(m, ModelKind::Efnet | ModelKind::Baseline)) {
            self.train.validate()?;
        }
        if members.contains(&ModelKind::Gbdt) {
            self.gbdt.validate()?;
        }
        Ok(())
    }

    pub fn load_schema(&self) -> Result<TableSchema> {
        match &self.schema {
            Some(path) => TableSchema::from_json_file(path),
            None => Ok(TableSchema::emergency_department()),
        }
    }

    pub fn load_data(&self, schema: &TableSchema) -> Result<DataTable> {
        match &self.data {
            DataSource::Csv(path) => load_csv(path, schema),
            DataSource::Synthetic(spec) => generate_synthetic(schema, spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub name: String,
    pub report: EvalReport,
}

/// Test-set evaluation of the voted prediction plus, for ensembles of more
/// than one member, each member on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub report: EvalReport,
    pub members: Vec<MemberReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model.as_str());
        let _ = writeln!(out);
        out.push_str(&self.report.to_text());
        for m in &self.members {
            let _ = writeln!(out);
            let _ = writeln!(out, "member: {}", m.name);
            let _ = writeln!(out);
            out.push_str(&m.report.to_text());
        }
        out
    }

    pub fn confusion_csv(&self, class_labels: &[String]) -> String {
        self.report.confusion.to_csv(class_labels)
    }
}

/// Log of one trained member.
#[derive(Debug, Clone, PartialEq)]
pub enum MemberLog {
    Neural(TrainLog),
    /// Training log-loss per boosting round.
    Boosting(Vec<f64>),
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub report: RunReport,
    pub logs: Vec<(String, MemberLog)>,
    /// Row indices of the loaded table in each split part.
    pub test_rows: Vec<usize>,
}

/// `member,epoch,train_loss,val_loss,val_accuracy`; boosting rows leave the
/// validation columns empty.
pub fn train_log_csv(logs: &[(String, MemberLog)]) -> String {
    let mut out = String::from("member,epoch,train_loss,val_loss,val_accuracy\n");
    for (name, log) in logs {
        match log {
            MemberLog::Neural(t) => {
                for e in &t.epochs {
                    let _ = writeln!(
                        out,
                        "{name},{},{},{},{}",
                        e.epoch, e.train_loss, e.val_loss, e.val_accuracy
                    );
                }
            }
            MemberLog::Boosting(losses) => {
                for (i, l) in losses.iter().enumerate() {
                    let _ = writeln!(out, "{name},{},{l},,", i + 1);
                }
            }
        }
    }
    out
}

fn member_seed(seed: u64, index: usize) -> u64 {
    SplitMix64::derive(seed, MEMBER_SEED_STREAM + index as u64).next_u64()
}

fn train_member(
    kind: ModelKind,
    seed: u64,
    config: &RunConfig,
    state: &PreprocessState,
    train_set: &EncodedDataset,
    val_set: &EncodedDataset,
) -> Result<(Member, MemberLog)> {
    let train_config = TrainConfig {
        seed,
        ..config.train
    };
    match kind {
        ModelKind::Efnet => {
            let model = EfNetModel::for_state(state, config.efnet, seed)?;
            let (model, log) = models::train(model, train_set, val_set, &train_config)?;
            Ok((Member::Efnet(model), MemberLog::Neural(log)))
        }
        ModelKind::Baseline => {
            let model = BaselineMlp::for_state(state, config.baseline, &train_set.features, seed)?;
            let (model, log) = models::train(model, train_set, val_set, &train_config)?;
            Ok((Member::Baseline(model), MemberLog::Neural(log)))
        }
        ModelKind::Gbdt => {
            let view = match config.gbdt_input {
                GbdtInput::Tokens => FeatureView::NumericAndTokens,
                GbdtInput::Categories => FeatureView::NumericAndCategories,
                GbdtInput::Frequency => {
                    FeatureView::NumericAndFrequency(FrequencyEncoder::fit(&train_set.features.categories))
                }
            };
            let mut model = GbdtModel::fit_encoded(
                &train_set.features,
                &train_set.labels,
                state.num_classes(),
                &config.gbdt,
                view,
            )?;
            model.preprocess_fingerprint = state.fingerprint();
            let losses = model.train_log_loss.clone();
            Ok((Member::Gbdt(model), MemberLog::Boosting(losses)))
        }
        ModelKind::Ensemble => Err(Error::Config("an ensemble cannot contain an ensemble".into())),
    }
}

/// Evaluates `model` on `data`; member reports only when there are several.
pub fn evaluate_model(
    kind: ModelKind,
    model: &EnsembleModel,
    data: &EncodedDataset,
    class_labels: &[String],
) -> Result<RunReport> {
    let member_probs = model.member_probabilities(&data.features)?;
    let voted = crate::ensemble::soft_vote(&member_probs, &model.weights)?;
    let report = evaluate(&voted, &data.labels, class_labels)?;
    let members = if model.members.len() > 1 {
        model
            .members
            .iter()
            .zip(&member_probs)
            .map(|(m, p)| {
                Ok(MemberReport {
                    name: m.name().to_string(),
                    report: evaluate(p, &data.labels, class_labels)?,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(RunReport {
        model: kind,
        report,
        members,
    })
}

/// Trains in memory without touching the filesystem beyond reading inputs.
pub fn train_run(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let schema = config.load_schema()?;
    let table = config.load_data(&schema)?;
    log::info!("loaded {} rows", table.row_count());
    let state = preprocess::fit(&table)?;
    let data = preprocess::transform(&table, &state)?;
    let parts = stratified_split_indices(
        &data.labels,
        state.num_classes(),
        config.split,
        config.seed,
        Some(&state.label_map),
    )?;
    let train_set = data.select(&parts.train);
    let val_set = data.select(&parts.val);
    let test_set = data.select(&parts.test);
    log::info!(
        "split into {} train, {} validation, {} test rows",
        train_set.len(),
        val_set.len(),
        test_set.len()
    );

    let kinds = config.member_kinds()?;
    let jobs: Vec<(ModelKind, u64)> = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, member_seed(config.seed, i)))
        .collect();
    let run = |&(kind, seed): &(ModelKind, u64)| {
        log::info!("training {}", kind.as_str());
        train_member(kind, seed, config, &state, &train_set, &val_set)
    };
    let trained: Vec<(Member, MemberLog)> = if config.parallel_members && jobs.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs.iter().map(|job| s.spawn(move || run(job))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("member training thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        jobs.iter().map(run).collect::<Result<Vec<_>>>()?
    };

    let mut members = Vec::with_capacity(trained.len());
    let mut logs = Vec::with_capacity(trained.len());
    for (member, log) in trained {
        logs.push((member.name().to_string(), log));
        members.push(member);
    }
    let model = EnsembleModel::new(members, config.ensemble_weights.clone())?;
    let report = evaluate_model(config.model, &model, &test_set, &state.label_map)?;
    let bundle = ModelBundle::new(schema, state, model, config.clone())?;
    Ok(TrainOutcome {
        bundle,
        report,
        logs,
        test_rows: parts.test,
    })
}

/// Writes files, deleting every file written so far (and the directory if
/// this call created it) when any step fails.
struct OutputWriter {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl OutputWriter {
    fn new(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        path
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn rollback(self) {
        for path in &self.written {
            let _ = fs::remove_file(path);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn write_report_files(out: &mut OutputWriter, report: &RunReport, labels: &[String]) -> Result<()> {
    out.write(REPORT_JSON_FILE, &report.to_json())?;
    out.write(REPORT_TEXT_FILE, &report.to_text())?;
    out.write(CONFUSION_FILE, &report.confusion_csv(labels))
}

/// Trains and writes the run outputs into `config.out`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let outcome = train_run(config)?;
    let mut out = OutputWriter::new(&config.out)?;
    let result = (|| {
        let bundle_path = out.path(BUNDLE_FILE);
        outcome.bundle.save(&bundle_path)?;
        out.write(TRAIN_LOG_FILE, &train_log_csv(&outcome.logs))?;
        write_report_files(&mut out, &outcome.report, &outcome.bundle.preprocess.label_map)?;
        let schema = &outcome.bundle.schema;
        let table = config.load_data(schema)?;
        let test_path = out.path(TEST_SPLIT_FILE);
        table.select_rows(&outcome.test_rows).write_csv_file(&test_path)
    })();
    match result {
        Ok(()) => Ok(outcome),
        Err(e) => {
            out.rollback();
            Err(e)
        }
    }
}

/// Evaluates a saved bundle on a labelled CSV; writes report files when
/// `out` is given.
pub fn cmd_evaluate(bundle_path: &Path, data_path: &Path, out: Option<&Path>) -> Result<RunReport> {
    let bundle = ModelBundle::load(bundle_path)?;
    let table = load_csv_with(data_path, &bundle.schema, TargetPolicy::Required)?;
    let data = preprocess::transform(&table, &bundle.preprocess)?;
    let report = evaluate_model(bundle.run_config.model, &bundle.model, &data, &bundle.preprocess.label_map)?;
    if let Some(dir) = out {
        let mut writer = OutputWriter::new(dir)?;
        if let Err(e) = write_report_files(&mut writer, &report, &bundle.preprocess.label_map) {
            writer.rollback();
            return Err(e);
        }
    }
    Ok(report)
}

/// Input rows with one `p_<label>` column per class and `predicted` appended.
pub fn predictions_csv(table: &DataTable, probabilities: &Matrix, class_labels: &[String]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let schema = table.schema();
    let mut header: Vec<String> = schema.columns().iter().map(|c| c.name.clone()).collect();
    header.extend(class_labels.iter().map(|l| format!("p_{l}")));
    header.push("predicted".into());
    writer.write_record(&header)?;
    let predicted = probabilities.argmax_rows();
    for (r, row) in table.rows().iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|c| c.clone().unwrap_or_default()).collect();
        record.extend(probabilities.row(r).iter().map(|p| p.to_string()));
        record.push(class_labels[predicted[r]].clone());
        writer.write_record(&record)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Config(format!("CSV buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Predicts on a CSV whose target column may be absent; returns the
/// probabilities and writes the predictions CSV to `output`.
pub fn cmd_predict(bundle_path: &Path, input: &Path, output: &Path) -> Result<Matrix> {
    let bundle = ModelBundle::load(bundle_path)?;
    let table = load_csv_with(input, &bundle.schema, TargetPolicy::Optional)?;
    let probabilities = bundle.predict_proba(&table)?;
    let text = predictions_csv(&table, &probabilities, &bundle.preprocess.label_map)?;
    fs::write(output, text).map_err(|e| Error::io(output, e))?;
    Ok(probabilities)
}

/// Writes a synthetic table as CSV.
pub fn cmd_generate(schema: &TableSchema, spec: &SyntheticSpec, output: &Path) -> Result<DataTable> {
    let table = generate_synthetic(schema, spec)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    table.write_csv_file(output)?;
    Ok(table)
}

pub fn cmd_inspect(bundle_path: &Path) -> Result<String> {
    Ok(ModelBundle::load(bundle_path)?.summary())
}
