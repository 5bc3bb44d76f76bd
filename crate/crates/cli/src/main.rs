use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermoscope::config::ExperimentConfig;
use thermoscope::pipeline::{self, Stage};
use thermoscope::Error;

const AFTER_HELP: &str = "\
Configuration:
  One JSON file drives every stage. Missing keys take their defaults and
  unknown keys are rejected. `--set key.path=value` overrides a single key;
  values are parsed as JSON when possible (e.g. `--set trainer.max_epochs=3`,
  `--set models.2.beta=1e-4`, `--set detector.vote_scope=window`).

Output root:
  --output, else `paths.output` from the config (relative to the config
  file), else $THERMOSCOPE_OUTPUT, else ./runs. Every stage directory gets a
  run.json with the toolkit version and the resolved config; log lines are
  appended, timestamped, to <root>/run.log.

Exit status:
  0  success
  1  a stage failed (missing inputs, i/o, training divergence, ...)
  2  invalid command line or configuration";

/// Synthetic thermogram simulation, conditional encoder-decoder training
/// and contour-based anomaly detection for antenna-array testing.
#[derive(Debug, Parser)]
#[command(name = "thermoscope", version, after_help = AFTER_HELP)]
struct Cli {
    /// Experiment configuration (JSON). Omit to use the defaults.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `trainer.seed=3`. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output root; takes precedence over `paths.output`.
    #[arg(short, long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render raw TIFF sequences and write the manifests.
    Simulate,
    /// Background-subtract, normalize, store containers and the split.
    Preprocess,
    /// Train every configured model variant.
    Train,
    /// Score calibration and test sequences with every trained model.
    Score,
    /// Calibrate thresholds, run the ablations, write summary.json.
    Evaluate,
    /// Write metric/ROC/score CSVs and plots from summary.json.
    Report,
    /// Run every stage in order.
    All,
    /// Validate the configuration and print it with defaults filled in.
    Validate,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Simulate => Stage::Simulate,
            Command::Preprocess => Stage::Preprocess,
            Command::Train => Stage::Train,
            Command::Score => Stage::Score,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
            Command::All | Command::Validate => return None,
        })
    }
}

/// Writes every log line to stderr and to the append-only run log.
struct Tee(fs::File);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        self.0.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stderr().flush()?;
        self.0.flush()
    }
}

fn init_logging(root: &std::path::Path, quiet: bool) -> anyhow::Result<()> {
    fs::create_dir_all(root)?;
    let file = OpenOptions::new().create(true).append(true).open(root.join("run.log"))?;
    let level = if quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Pipe(Box::new(Tee(file))))
        .init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ExperimentConfig::load(cli.config.as_deref(), &cli.overrides) {
        Ok(mut cfg) => {
            if let Some(out) = &cli.output {
                cfg.paths.output = Some(out.clone());
            }
            cfg
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    if let Command::Validate = cli.command {
        return match serde_json::to_string_pretty(&cfg) {
            Ok(s) => match writeln!(io::stdout().lock(), "{s}") {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        };
    }

    if let Err(e) = init_logging(&cfg.output_root(), cli.quiet) {
        eprintln!("error: cannot open run log under {}: {e}", cfg.output_root().display());
        return ExitCode::FAILURE;
    }
    log::info!(
        "thermoscope {} {:?} in {}",
        env!("CARGO_PKG_VERSION"),
        cli.command,
        cfg.output_root().display()
    );
    let result = match cli.command.stage() {
        Some(stage) => pipeline::run_stage(stage, &cfg),
        None => pipeline::run_all(&cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
