use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use fairal::datagen;
use fairal::experiment::{
    read_csv, render_table, run_suite, summarize, write_csv, write_curves, write_summary_csv,
};
use fairal::{DatasetSpec, ExperimentConfig, ExperimentError};

const STEPS_FILE: &str = "steps.csv";
const SUMMARY_FILE: &str = "summary.csv";

#[derive(Parser)]
#[command(
    version,
    about = "Active learning and group fairness experiments on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Generate {
        /// Dataset spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (config, seed) cell and write steps.csv and summary.csv.
    Run {
        /// Experiment config (JSON): one object or an array of objects.
        #[arg(long)]
        config: PathBuf,
        /// Results directory; overrides `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise an existing results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Print the final-step summary table (default when no flag is given).
        #[arg(long)]
        table: bool,
        /// Write one SVG per metric into `<in>/curves/`.
        #[arg(long)]
        curves: bool,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{message}: {source}")]
    Io {
        message: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} configuration(s) had failed cells")]
    FailedCells(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Experiment(e) if e.is_config() => 2,
            _ => 1,
        }
    }
}

fn io_err(message: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let message = message.into();
    move |source| CliError::Io { message, source }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// A config file holds one object or an array of them. The top-level
/// shape picks the target type so that serde reports the real error
/// (an untagged enum would only say that no variant matched).
fn read_configs(path: &Path) -> Result<Vec<ExperimentConfig>, CliError> {
    let value: serde_json::Value = read_json(path)?;
    let bad = |e: serde_json::Error| CliError::Config(format!("{}: {e}", path.display()));
    let configs = if value.is_array() {
        serde_json::from_value(value).map_err(bad)?
    } else {
        vec![serde_json::from_value(value).map_err(bad)?]
    };
    if configs.is_empty() {
        return Err(CliError::Config(format!(
            "{}: config array is empty",
            path.display()
        )));
    }
    Ok(configs)
}

fn output_dir(configs: &[ExperimentConfig], flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    let first = configs[0].output.clone();
    if configs.iter().any(|c| c.output != first) {
        return Err(CliError::Config(
            "configs disagree on `output`; pass --out".into(),
        ));
    }
    first.ok_or_else(|| CliError::Config("no output directory: set `output` or pass --out".into()))
}

fn generate(spec: &Path, out: &Path) -> Result<(), CliError> {
    let spec: DatasetSpec = read_json(spec)?;
    let data = datagen::generate(&spec).map_err(ExperimentError::from)?;
    let file = File::create(out).map_err(io_err(format!("creating {}", out.display())))?;
    data.write_csv(BufWriter::new(file))
        .map_err(ExperimentError::from)?;
    eprintln!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let configs = read_configs(config)?;
    let dir = output_dir(&configs, out)?;
    let suite = run_suite(&configs)?;

    fs::create_dir_all(&dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let steps = dir.join(STEPS_FILE);
    let file = File::create(&steps).map_err(io_err(format!("creating {}", steps.display())))?;
    write_csv(&suite.runs, BufWriter::new(file))
        .map_err(io_err(format!("writing {}", steps.display())))?;
    let summary = dir.join(SUMMARY_FILE);
    let file = File::create(&summary).map_err(io_err(format!("creating {}", summary.display())))?;
    write_summary_csv(&suite.summary, BufWriter::new(file))
        .map_err(io_err(format!("writing {}", summary.display())))?;

    print!("{}", render_table(&suite.summary));
    for row in &suite.summary {
        for f in &row.failures {
            eprintln!(
                "failed: {} λ={} seed {}: {}",
                row.strategy, row.lambda, f.seed, f.message
            );
        }
    }
    let failed = suite
        .summary
        .iter()
        .filter(|r| !r.failures.is_empty())
        .count();
    if failed > 0 {
        return Err(CliError::FailedCells(failed));
    }
    Ok(())
}

fn report(input: &Path, table: bool, curves: bool) -> Result<(), CliError> {
    let steps = input.join(STEPS_FILE);
    let file = File::open(&steps).map_err(io_err(format!("opening {}", steps.display())))?;
    let runs = read_csv(BufReader::new(file))?;
    if table || !curves {
        print!("{}", render_table(&summarize(&runs)));
    }
    if curves {
        if runs.iter().all(|r| r.records.is_empty()) {
            return Err(CliError::Config(format!(
                "{} has no records to plot",
                steps.display()
            )));
        }
        for path in write_curves(&runs, &input.join("curves"))? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { spec, out } => generate(&spec, &out),
        Command::Run { config, out } => run(&config, out),
        Command::Report {
            input,
            table,
            curves,
        } => report(&input, table, curves),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
