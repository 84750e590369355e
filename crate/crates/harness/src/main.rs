use std::path::{Path, PathBuf};
use std::process::ExitCode;

use analog_grad::config::ExperimentConfig;
use analog_grad::dataset::generate_dataset;
use analog_grad::emit::{emit, PlotKind};
use analog_grad::runner::run;
use analog_grad::sweep::{sweep, DEFAULT_CAP};
use analog_grad::{HarnessError, Result};
use analog_grad_core::data::SyntheticSpec;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "analog-grad", version, about = "Activation smoothness under analog noise: experiments and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct OutArgs {
    /// Output directory (ANALOG_GRAD_OUT takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print on stdout.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (train or analyze-* mode).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run every cell of a sweep config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent cells; defaults to the number of CPUs.
        #[arg(long)]
        workers: Option<usize>,
        /// Refuse sweeps with more cells than this.
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write the synthetic image set as train.csv and test.csv.
    GenData {
        /// JSON dataset spec; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Build a plot-data CSV from the records in the output directory.
    Emit {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn out_dir(flag: Option<PathBuf>, config: Option<&ExperimentConfig>) -> PathBuf {
    std::env::var_os("ANALOG_GRAD_OUT")
        .map(PathBuf::from)
        .or(flag)
        .or_else(|| config.and_then(|c| c.out_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let config = load(&config, seed)?;
            let dir = out_dir(out.out, Some(&config));
            let (record, path) = run(&config, &dir)?;
            match out.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&record).expect("record serializes")),
                Format::Csv => {
                    for name in record.artifacts.iter().filter(|n| n.ends_with(".csv")) {
                        print!("{}", read_text(&dir.join(name))?);
                    }
                }
            }
            eprintln!("record: {}", path.display());
        }
        Command::Sweep {
            config,
            seed,
            workers,
            cap,
            out,
        } => {
            let config = load(&config, seed)?;
            let dir = out_dir(out.out, Some(&config));
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let outcome = sweep(&config, &dir, workers, cap)?;
            match out.format {
                Format::Csv => print!("{}", read_text(&outcome.summary)?),
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&outcome.records).expect("records serialize")
                ),
            }
            eprintln!(
                "{} cells ({} resumed), summary: {}",
                outcome.records.len(),
                outcome.skipped,
                outcome.summary.display()
            );
        }
        Command::GenData {
            config,
            classes,
            per_class,
            size,
            seed,
            out,
        } => {
            let mut spec: SyntheticSpec = match &config {
                Some(path) => serde_json::from_str(&read_text(path)?).map_err(|e| HarnessError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?,
                None => SyntheticSpec::default(),
            };
            spec.classes = classes.unwrap_or(spec.classes);
            spec.samples_per_class = per_class.unwrap_or(spec.samples_per_class);
            spec.size = size.unwrap_or(spec.size);
            spec.seed = seed.unwrap_or(spec.seed);
            let dir = out_dir(out.out, None);
            let ds = generate_dataset(&spec, &dir)?;
            let summary = serde_json::json!({
                "train": dir.join("train.csv"),
                "test": dir.join("test.csv"),
                "train-rows": ds.train.len(),
                "test-rows": ds.test.len(),
                "shape": ds.sample_shape,
                "spec": spec,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::Emit { kind, out } => {
            let dir = out_dir(out.out, None);
            let report = emit(&dir, kind)?;
            match out.format {
                Format::Csv => print!("{}", read_text(&report.path)?),
                Format::Json => println!(
                    "{}",
                    serde_json::json!({
                        "path": report.path,
                        "rows": report.rows,
                        "spearman": report.spearman,
                    })
                ),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
