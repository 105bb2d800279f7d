use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multimodel::dataset::{write_csv, DatasetSchema};
use multimodel::experiment::{self, ExperimentConfig};
use multimodel::pipeline::{self, ModelBundle};
use multimodel::synth::{self, FraminghamParams, RegionalParams};
use multimodel::{Error, Threads};

/// Multi-model outcome prediction: train a roster, score through a
/// map/reduce streaming pipeline, compare against single models.
#[derive(Parser)]
#[command(name = "multimodel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a labelled cohort, train the roster and write a model bundle.
    Train(TrainArgs),
    /// Compare best single model, static mean and dynamic consolidation on a test set.
    Evaluate(EvaluateArgs),
    /// Mapper: CSV records on stdin, one wire line per (record, model) on stdout.
    ///
    /// A patient id seen more than once is keyed `id#2`, `id#3`, ... from its
    /// second occurrence so every record is consolidated on its own.
    Map(MapArgs),
    /// Reducer: key-sorted wire lines on stdin, `patient_id,rho,class,mode` on stdout.
    Reduce(ReduceArgs),
    /// Run map, sort and reduce locally over a CSV file.
    RunLocal(RunLocalArgs),
    /// Generate a synthetic cohort.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args)]
struct ThreadArgs {
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl ThreadArgs {
    fn get(&self) -> Threads {
        Threads::from_count(self.threads)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment config; the flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Schema JSON (defaults to the Framingham layout).
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Roster JSON (defaults to the built-in 25-model roster).
    #[arg(long)]
    roster: Option<PathBuf>,
    #[arg(long)]
    split_fraction: Option<f64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Build error clusters from 5-fold out-of-fold predictions.
    #[arg(long)]
    out_of_fold: bool,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Labelled test CSV.
    #[arg(long)]
    test: PathBuf,
    /// Also write the report as JSON here.
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long, env = "MODEL_BUNDLE")]
    bundle: PathBuf,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Args)]
struct ReduceArgs {
    /// Bundle to read the expected model count from.
    #[arg(long, env = "MODEL_BUNDLE", required_unless_present = "expected_models")]
    bundle: Option<PathBuf>,
    /// Predictions per patient; overrides the bundle.
    #[arg(long)]
    expected_models: Option<usize>,
}

#[derive(Args)]
struct RunLocalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    threads: ThreadArgs,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Two features; label is `X1 >= 0.5` with seeded flips.
    Regional {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Flip rate for both half-planes.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        noise_left: Option<f64>,
        #[arg(long)]
        noise_right: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// Write the matching schema JSON here.
        #[arg(long)]
        schema_out: Option<PathBuf>,
    },
    /// Framingham-layout cohort from a built-in risk model.
    Framingham {
        #[arg(long, default_value_t = 1500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::Level::Warn
    }

    fn log(&self, record: &log::Record) {
        if self.enabled(record.metadata()) {
            eprintln!("{}: {}", record.level(), record.args());
        }
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn write_file(path: &Path, text: &str) -> multimodel::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train(args: TrainArgs) -> multimodel::Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let dataset = args
                .dataset
                .clone()
                .ok_or_else(|| Error::InvalidParams("either --config or --dataset is required".into()))?;
            ExperimentConfig::new(dataset)
        }
    };
    if let Some(d) = args.dataset {
        cfg.dataset = d;
    }
    if args.schema.is_some() {
        cfg.schema = args.schema;
    }
    if args.roster.is_some() {
        cfg.roster = args.roster;
    }
    if let Some(f) = args.split_fraction {
        cfg.split_fraction = f;
    }
    if let Some(s) = args.split_seed {
        cfg.split_seed = s;
    }
    if let Some(o) = args.output_dir {
        cfg.output_dir = o;
    }
    cfg.out_of_fold |= args.out_of_fold;

    let out = experiment::train(&cfg, args.threads.get())?;
    println!(
        "trained {} models on {} records ({} held out)",
        out.bundle.expected_model_count, out.train_size, out.test_size
    );
    println!("bundle: {}", out.bundle_path.display());
    println!("train:  {}", out.train_path.display());
    println!("test:   {}", out.test_path.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> multimodel::Result<()> {
    let (_, report) = experiment::evaluate(&args.bundle, &args.test, args.threads.get())?;
    print!("{}", report.to_text());
    if let Some(path) = &args.json_out {
        write_file(path, &report.to_json()?)?;
    }
    Ok(())
}

fn map(args: MapArgs) -> multimodel::Result<()> {
    let bundle = ModelBundle::load(&args.bundle)?;
    let stdin = io::stdin().lock();
    let mut stdout = BufWriter::new(io::stdout().lock());
    let mut stderr = io::stderr().lock();
    pipeline::map_stage(stdin, &bundle, &mut stdout, &mut stderr, args.threads.get())?;
    Ok(())
}

fn reduce(args: ReduceArgs) -> multimodel::Result<()> {
    let expected = match (args.expected_models, &args.bundle) {
        (Some(n), _) => n,
        (None, Some(path)) => ModelBundle::load(path)?.expected_model_count,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let stdout = BufWriter::new(io::stdout().lock());
    let mut stderr = io::stderr().lock();
    pipeline::reduce_stage(io::stdin().lock(), expected, stdout, &mut stderr)?;
    Ok(())
}

fn run_local(args: RunLocalArgs) -> multimodel::Result<()> {
    let mut stderr = io::stderr().lock();
    let stats = pipeline::run_local(&args.dataset, &args.bundle, &args.output, args.threads.get(), &mut stderr)?;
    writeln!(
        stderr,
        "{} records, {} wire lines, {} patients written to {}",
        stats.map.records,
        stats.map.lines,
        stats.groups,
        args.output.display()
    )?;
    Ok(())
}

fn synth(cmd: SynthCommand) -> multimodel::Result<()> {
    match cmd {
        SynthCommand::Regional {
            n,
            noise,
            noise_left,
            noise_right,
            seed,
            output,
            schema_out,
        } => {
            let params = RegionalParams {
                n,
                noise_left: noise_left.unwrap_or(noise),
                noise_right: noise_right.unwrap_or(noise),
                seed,
            };
            let schema = synth::regional_schema();
            write_file(&output, &write_csv(&synth::regional(&params)?, &schema)?)?;
            if let Some(path) = schema_out {
                write_file(&path, &(serde_json::to_string_pretty(&schema)? + "\n"))?;
            }
        }
        SynthCommand::Framingham { n, seed, output } => {
            let recs = synth::framingham(&FraminghamParams { n, seed })?;
            write_file(&output, &write_csv(&recs, &DatasetSchema::framingham())?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let _ = log::set_logger(&LOGGER).map(|()| log::set_max_level(log::LevelFilter::Warn));
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Map(a) => map(a),
        Command::Reduce(a) => reduce(a),
        Command::RunLocal(a) => run_local(a),
        Command::Synth(c) => synth(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR: {e}");
            ExitCode::from(1)
        }
    }
}
