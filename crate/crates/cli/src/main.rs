//! `efnet` command-line tool.
//!
//! Settings resolve in three layers: built-in defaults, then the `--config`
//! JSON file, then individual flags. Failures print one line
//! `error[E_CODE]: message` to stderr and exit with 2 (usage), 3 (data) or
//! 4 (numeric).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efnet::pipeline::{self, DataSource, ModelKind, RunConfig};
use efnet::synthetic::SyntheticSpec;
use efnet::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "efnet", version, about = "Mixed-type tabular classification toolkit")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled CSV.
    Generate(GenerateArgs),
    /// Train a model and write bundle, log and test report.
    Train(TrainArgs),
    /// Evaluate a bundle on a labelled CSV.
    Evaluate(EvaluateArgs),
    /// Append class probabilities and predicted labels to a CSV.
    Predict(PredictArgs),
    /// Print bundle metadata.
    Inspect(InspectArgs),
}

/// Flags shared by `generate` and `train`.
#[derive(Args, Debug)]
struct DataArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Table schema (JSON); defaults to the built-in emergency-department layout.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Seed for the split, initialisation and synthetic data.
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic row count.
    #[arg(long)]
    rows: Option<usize>,
    /// Synthetic class weights, comma-separated, one per class.
    #[arg(long, value_delimiter = ',')]
    imbalance: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Labelled CSV to train on instead of synthetic data.
    #[arg(long = "data", conflicts_with_all = ["rows", "imbalance"])]
    data_path: Option<PathBuf>,
    /// baseline, efnet, gbdt or ensemble.
    #[arg(long)]
    model: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Labelled CSV.
    #[arg(long)]
    data: PathBuf,
    /// Directory for report.json, report.txt and confusion.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Input CSV; the target column may be absent.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    bundle: PathBuf,
}

fn base_config(args: &DataArgs) -> efnet::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(schema) = &args.schema {
        config.schema = Some(schema.clone());
    }
    if args.rows.is_some() || args.imbalance.is_some() {
        let mut spec = match &config.data {
            DataSource::Synthetic(spec) => spec.clone(),
            DataSource::Csv(_) => SyntheticSpec::default(),
        };
        if let Some(rows) = args.rows {
            spec.rows = rows;
        }
        if let Some(weights) = &args.imbalance {
            spec.class_weights = weights.clone();
        }
        config.data = DataSource::Synthetic(spec);
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
        if let DataSource::Synthetic(spec) = &mut config.data {
            spec.seed = seed;
        }
    }
    Ok(config)
}

fn generate(args: &GenerateArgs) -> efnet::Result<()> {
    let config = base_config(&args.data)?;
    let schema = config.load_schema()?;
    let spec = match config.data {
        DataSource::Synthetic(spec) => spec,
        DataSource::Csv(path) => {
            return Err(Error::Config(format!(
                "generate needs a synthetic data source, config names {}",
                path.display()
            )))
        }
    };
    let table = pipeline::cmd_generate(&schema, &spec, &args.out)?;
    println!("wrote {} rows to {}", table.row_count(), args.out.display());
    Ok(())
}

fn train(args: &TrainArgs) -> efnet::Result<()> {
    let mut config = base_config(&args.data)?;
    if let Some(path) = &args.data_path {
        config.data = DataSource::Csv(path.clone());
    }
    if let Some(model) = &args.model {
        config.model = ModelKind::parse(model)?;
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    let outcome = pipeline::cmd_train(&config)?;
    print!("{}", outcome.report.to_text());
    println!();
    println!("outputs written to {}", config.out.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> efnet::Result<()> {
    let report = pipeline::cmd_evaluate(&args.bundle, &args.data, args.out.as_deref())?;
    print!("{}", report.to_text());
    Ok(())
}

fn predict(args: &PredictArgs) -> efnet::Result<()> {
    let probabilities = pipeline::cmd_predict(&args.bundle, &args.data, &args.out)?;
    println!("wrote {} predictions to {}", probabilities.rows(), args.out.display());
    Ok(())
}

fn inspect(bundle: &Path) -> efnet::Result<()> {
    print!("{}", pipeline::cmd_inspect(bundle)?);
    Ok(())
}

fn fail(kind: ErrorKind, message: &str) -> ExitCode {
    let line = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    eprintln!("error[{}]: {line}", kind.code());
    ExitCode::from(kind.exit_status())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return fail(ErrorKind::Usage, first.trim_start_matches("error: "));
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();

    let result = match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Predict(args) => predict(args),
        Command::Inspect(args) => inspect(&args.bundle),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
