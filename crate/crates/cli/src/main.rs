use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use survgen::data::{
    load_csv, load_feature_rows, load_outcomes, read_header, save_csv, synth_linear, synth_two_circles, synth_two_parabolas,
    synthetic_schema, DataSchema, DEFAULT_CENSORING,
};
use survgen::eval::{cross_validate, km_fidelity};
use survgen::generation::{background_conditioning, generate_dataset};
use survgen::model::{train_model, TrainedModel};
use survgen::survival::kaplan_meier;
use survgen::training::{write_log, TrainConfig};
use survgen::Error;

#[derive(Parser, Debug)]
#[command(name = "survgen", version, about = "Generative survival modelling with a VAE and the Beran estimator")]
struct Cli {
    /// Root seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training configuration as JSON (TrainConfig field names).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and save it as JSON.
    Train(TrainArgs),
    /// Expected times and survival curves for feature rows.
    Predict(PredictArgs),
    /// Generate (x, T, delta) triplets.
    Generate(GenerateArgs),
    /// Feature trajectories over the time grid.
    Trajectory(TrajectoryArgs),
    /// Repeated 75/25 hold-out C-index.
    Eval(EvalArgs),
    /// Largest gap between the Kaplan-Meier curves of two datasets.
    KmCompare(KmCompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Linear,
    Parabolas,
    Circles,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    /// Total number of records; split evenly between the two clusters.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = DEFAULT_CENSORING)]
    censoring: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON; without it every column except time and event is continuous.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "time")]
    time_column: String,
    #[arg(long, default_value = "event")]
    event_column: String,
}

impl DataArgs {
    fn schema(&self) -> Result<DataSchema, Error> {
        match &self.schema {
            Some(p) => DataSchema::from_json_file(p),
            None => DataSchema::infer(&read_header(&self.data)?, &self.time_column, &self.event_column),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model_out: PathBuf,
    /// Per-epoch JSON lines log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Rows with the model's feature columns.
    #[arg(long)]
    data: PathBuf,
    /// Long CSV: row, expected_time, time, survival.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Conditioning rows with the model's feature columns.
    #[arg(long, conflicts_with = "count", required_unless_present = "count")]
    rows: Option<PathBuf>,
    /// Number of triplets conditioned on reconstructed training points.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrajectoryArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rows: PathBuf,
    /// Directory receiving `trajectory_<row>.csv` and `.json` per input row.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct KmCompareArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    generated: PathBuf,
    #[arg(long, default_value = "time")]
    time_column: String,
    #[arg(long, default_value = "event")]
    event_column: String,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped to the process exit code.
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() || matches!(e, Error::Autodiff(_)) {
            Failure::Numerical(e.to_string())
        } else if matches!(e, Error::Contract(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Predict(a) => predict(a),
        Command::Generate(a) => generate(cli, a),
        Command::Trajectory(a) => trajectory(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::KmCompare(a) => km_compare(a),
    }
}

fn seed(cli: &Cli) -> u64 {
    cli.seed.unwrap_or(0)
}

/// The JSON config if given, with `--seed` taking precedence over its `seed` field.
fn train_config(cli: &Cli) -> Result<TrainConfig, Failure> {
    let mut config: TrainConfig = match &cli.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CmdResult {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> CmdResult {
    if a.n < 2 || !a.n.is_multiple_of(2) {
        return Err(Failure::Usage("--n must be an even number of at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed(cli));
    let per_cluster = a.n / 2;
    let ds = match a.kind {
        SynthKind::Linear => synth_linear(per_cluster, a.noise, a.censoring, &mut rng)?,
        SynthKind::Parabolas => synth_two_parabolas(per_cluster, a.noise, a.censoring, &mut rng)?,
        SynthKind::Circles => synth_two_circles(per_cluster, a.noise, a.censoring, &mut rng)?,
    };
    save_csv(&ds, &synthetic_schema(), &a.out)?;
    log::info!("wrote {} records to {}", ds.len(), a.out.display());
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> CmdResult {
    let config = train_config(cli)?;
    let schema = a.data.schema()?;
    let ds = load_csv(&a.data.data, &schema)?;
    let (model, history) = train_model(&ds, Some(&schema), &config, None)?;
    model.save(&a.model_out)?;
    if let Some(path) = &a.log {
        write_log(&history, BufWriter::new(File::create(path)?))?;
    }
    log::info!("model saved to {}", a.model_out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(TrainedModel, DataSchema), Failure> {
    let model = TrainedModel::load(path)?;
    let schema = model
        .schema
        .clone()
        .ok_or_else(|| Failure::Data("model file carries no data schema".into()))?;
    Ok((model, schema))
}

fn standardized_rows(model: &TrainedModel, schema: &DataSchema, path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let rows = load_feature_rows(path, schema)?;
    Ok(rows.iter().map(|r| model.standardize(r)).collect())
}

fn predict(a: &PredictArgs) -> CmdResult {
    let (model, schema) = load_model(&a.model)?;
    let rows = standardized_rows(&model, &schema, &a.data)?;
    model.write_predictions(&rows, BufWriter::new(File::create(&a.out)?))?;
    Ok(())
}

fn generate(cli: &Cli, a: &GenerateArgs) -> CmdResult {
    let (model, schema) = load_model(&a.model)?;
    let rows = match (&a.rows, a.count) {
        (Some(path), _) => standardized_rows(&model, &schema, path)?,
        (None, Some(count)) => background_conditioning(&model, count, seed(cli))?,
        (None, None) => return Err(Failure::Usage("either --rows or --count is required".into())),
    };
    let generated = generate_dataset(&model, &rows, seed(cli))?;
    save_csv(&generated, &schema, &a.out)?;
    log::info!(
        "generated {} triplets, censoring rate {:.3}",
        generated.len(),
        generated.censoring_rate()
    );
    Ok(())
}

fn trajectory(cli: &Cli, a: &TrajectoryArgs) -> CmdResult {
    let (model, schema) = load_model(&a.model)?;
    let rows = standardized_rows(&model, &schema, &a.rows)?;
    std::fs::create_dir_all(&a.out)?;
    let names = model.feature_names();
    for (i, x) in rows.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed(cli));
        rng.set_stream(i as u64);
        let traj = model.trajectory(x, &mut rng)?;
        traj.save(
            &names,
            &a.out.join(format!("trajectory_{i}.csv")),
            &a.out.join(format!("trajectory_{i}.json")),
        )?;
    }
    log::info!("wrote {} trajectories to {}", rows.len(), a.out.display());
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let config = train_config(cli)?;
    let schema = a.data.schema()?;
    let ds = load_csv(&a.data.data, &schema)?;
    let report = cross_validate(&ds, Some(&schema), &config, a.reps, seed(cli))?;
    match report.mean {
        Some(m) => log::info!("mean C-index {m:.4} over {} repetitions", report.defined),
        None => log::warn!("no repetition produced a defined C-index"),
    }
    write_json(&report, &a.out)
}

#[derive(Serialize)]
struct KmComparison {
    km_fidelity: f64,
    original_times: Vec<f64>,
    original_survival: Vec<f64>,
    generated_times: Vec<f64>,
    generated_survival: Vec<f64>,
}

fn km_compare(a: &KmCompareArgs) -> CmdResult {
    let original = load_outcomes(&a.original, &a.time_column, &a.event_column)?;
    let generated = load_outcomes(&a.generated, &a.time_column, &a.event_column)?;
    let (ko, kg) = (kaplan_meier(&original)?, kaplan_meier(&generated)?);
    let report = KmComparison {
        km_fidelity: km_fidelity(&original, &generated)?,
        original_times: ko.times().to_vec(),
        original_survival: ko.values().to_vec(),
        generated_times: kg.times().to_vec(),
        generated_survival: kg.values().to_vec(),
    };
    log::info!("km fidelity {:.4}", report.km_fidelity);
    write_json(&report, &a.out)
}
