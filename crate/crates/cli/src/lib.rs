//! Experiment driver for `ladder-core`: configuration files, checkpoints,
//! metrics streams, MNIST loading and the `ladder` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! error, 3 numeric failure (non-finite cost or a failed gradient check).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;
pub mod mnist;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config line {line}, key `{key}`: {msg}")]
    ConfigKey { line: usize, key: String, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::ConfigKey { .. } | CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Checkpoint(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ladder_core::Error> for CliError {
    fn from(e: ladder_core::Error) -> Self {
        use ladder_core::Error as E;
        match e {
            E::NonFinite(_) | E::NonFiniteAt(_) | E::NonFiniteCost { .. } => CliError::Numeric(e.to_string()),
            E::IdxMagic(_) | E::IdxType(_) | E::IdxTruncated { .. } => CliError::Data(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ladder", version, about = "Semi-supervised ladder network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every repeat of a configuration.
    Train { config: PathBuf },
    /// Error rate and confusion counts of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// labeled, validation or test (recomputed from the checkpoint's config).
        #[arg(long, default_value = "test", conflicts_with_all = ["images", "labels"])]
        split: String,
        /// IDX image file to score instead of a configured split.
        #[arg(long, requires = "labels")]
        images: Option<PathBuf>,
        #[arg(long, requires = "images")]
        labels: Option<PathBuf>,
        /// Confusion CSV path; defaults to `confusion_<target>.csv` beside the checkpoint.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Compare backpropagated gradients with central differences.
    Gradcheck {
        #[arg(long, default_value = "5-7-4")]
        arch: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        batch: usize,
        /// Comma-separated, one per layer; default all 1.
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value = "proposed")]
        g: String,
        #[arg(long, default_value = "batchnorm")]
        u_top: String,
        /// Denoising cost on the top layer only.
        #[arg(long)]
        gamma: bool,
        #[arg(long, hide = true)]
        corrupt_adjoint: bool,
    },
    /// Optimal scalar denoiser and a fitted proposed-g unit, as CSV.
    DenoiseDemo {
        #[arg(long, default_value = "bimodal:1,0.2")]
        prior: String,
        #[arg(long, default_value_t = 0.5)]
        sigma_n: f64,
        /// `LO,HI,POINTS`
        #[arg(long, default_value = "-3,3,201", allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Train { config } => {
            let cfg = config::RunConfig::load(&config)?;
            commands::train(&cfg, out).map(|_| ())
        }
        Command::Eval {
            checkpoint,
            split,
            images,
            labels,
            confusion,
        } => {
            let target = match (images, labels) {
                (Some(images), Some(labels)) => commands::EvalTarget::Files { images, labels },
                _ => match split.as_str() {
                    "labeled" => commands::EvalTarget::Labeled,
                    "validation" => commands::EvalTarget::Validation,
                    "test" => commands::EvalTarget::Test,
                    other => return Err(usage(format!("unknown split `{other}`"))),
                },
            };
            commands::eval(&checkpoint, &target, confusion.as_deref(), out).map(|_| ())
        }
        Command::Gradcheck {
            arch,
            seed,
            batch,
            lambdas,
            noise,
            g,
            u_top,
            gamma,
            corrupt_adjoint,
        } => {
            let widths = arch
                .split('-')
                .map(|w| w.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| usage(format!("cannot parse arch `{arch}`")))?;
            let mut cfg = ladder_core::gradcheck::GradCheckConfig::new(widths, seed);
            cfg.batch = batch;
            cfg.noise_std = noise;
            cfg.g_kind = g.parse().map_err(|e: ladder_core::Error| usage(e.to_string()))?;
            cfg.u_top = config::parse_top_input(&u_top).ok_or_else(|| usage("u_top must be batchnorm or raw"))?;
            cfg.corrupt_adjoint = corrupt_adjoint;
            if let Some(l) = lambdas {
                cfg.lambdas = l
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| usage(format!("cannot parse lambdas `{l}`")))?;
                if cfg.lambdas.len() != cfg.widths.len() {
                    return Err(usage(format!("need {} lambdas", cfg.widths.len())));
                }
            }
            if gamma {
                cfg = cfg.gamma();
            }
            let report = commands::gradcheck(&cfg, out)?;
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Numeric(format!("gradient check failed: max relative error {:.3e}", report.max_rel_err)))
            }
        }
        Command::DenoiseDemo {
            prior,
            sigma_n,
            grid,
            steps,
            seed,
            out: path,
        } => {
            let parts: Vec<&str> = grid.split(',').collect();
            let bad = || usage(format!("cannot parse grid `{grid}`; expected LO,HI,POINTS"));
            let [lo, hi, points] = parts[..] else { return Err(bad()) };
            let spec = commands::DemoSpec {
                prior: commands::parse_prior(&prior)?,
                sigma_n,
                lo: lo.trim().parse().map_err(|_| bad())?,
                hi: hi.trim().parse().map_err(|_| bad())?,
                points: points.trim().parse().map_err(|_| bad())?,
                steps,
                seed,
            };
            let fit = commands::denoise_demo(&spec, &path)?;
            writeln!(
                out,
                "wrote {}; fitted MSE {:.6}, oracle MSE {:.6}",
                path.display(),
                fit.achieved_mse,
                fit.oracle_mse
            )
            .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
