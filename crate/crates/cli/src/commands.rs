//! The four subcommands as library functions. Each writes its human-readable
//! report to `out` and returns the structured result.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ladder_core::data::{make_split, synth_mixture, Dataset, LabeledSplit};
use ladder_core::decoder::GKind;
use ladder_core::gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
use ladder_core::oracle::{fit_g_to_oracle, posterior_mean, DenoiserFit, MixtureComponent, Prior1D, USource};
use ladder_core::training::{evaluate, EpochMetrics, Evaluation, Trainer};
use ladder_core::{Error, Rng};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::{DataSource, RunConfig};
use crate::{metrics, mnist, CliError};

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData, CliError> {
    match &cfg.data {
        DataSource::Mnist { dir } => Ok(LoadedData {
            train: mnist::load(dir, mnist::Part::Train)?,
            test: Some(mnist::load(dir, mnist::Part::Test)?),
        }),
        DataSource::Synthetic(s) => {
            let k = s.means.len();
            let d = s.means[0].len();
            let root = Rng::new(s.seed);
            let make = |n, label| synth_mixture(k, n, d, &s.means, s.std, &mut root.substream(label)).map_err(|e| CliError::Data(e.to_string()));
            let test = if s.test_per_class > 0 { Some(make(s.test_per_class, "test")?) } else { None };
            Ok(LoadedData {
                train: make(s.per_class, "train")?,
                test,
            })
        }
    }
}

/// Validation, labeled and unlabeled indices for one repeat.
pub fn split_for(cfg: &RunConfig, train: &Dataset, seed: u64) -> Result<LabeledSplit, CliError> {
    let mut rng = Rng::new(seed).substream("split");
    let mut split = make_split(train, cfg.val_size, cfg.n_labels, &mut rng).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(limit) = cfg.unlabeled_limit {
        split.unlabeled_idx.truncate(limit);
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub repeat: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    pub test: Option<Evaluation>,
}

impl RunResult {
    pub fn val_err(&self) -> Option<f64> {
        self.metrics.last().and_then(|m| m.val_err)
    }

    pub fn test_err(&self) -> Option<f64> {
        self.test.as_ref().map(|e| e.error_rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub runs: Vec<RunResult>,
}

/// Mean and sample standard deviation, in percent.
pub fn mean_std_percent(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (100.0 * mean, 100.0 * var.sqrt())
}

impl TrainReport {
    pub fn test_errors(&self) -> Vec<f64> {
        self.runs.iter().filter_map(RunResult::test_err).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (name, errs) in [
            ("validation", self.runs.iter().filter_map(RunResult::val_err).collect::<Vec<_>>()),
            ("test", self.test_errors()),
        ] {
            if !errs.is_empty() {
                let (m, sd) = mean_std_percent(&errs);
                s.push_str(&format!("{name} error: {m:.2}% ± {sd:.2}% over {} runs\n", errs.len()));
            }
        }
        s
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trains every repeat; repeat `r` uses seed `seed + r` and writes
/// `metrics.jsonl` and `checkpoint.json` under `output_dir/run_r/`.
pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainReport, CliError> {
    let data = load_data(cfg)?;
    let mut runs = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let run = train_repeat(cfg, &data, r)?;
        let fmt = |e: Option<f64>| e.map_or("-".to_string(), |v| format!("{:.2}%", 100.0 * v));
        writeln!(out, "run {r} (seed {}): validation {} test {}", run.seed, fmt(run.val_err()), fmt(run.test_err())).map_err(io_err(Path::new("<stdout>")))?;
        runs.push(run);
    }
    let report = TrainReport { runs };
    let summary = report.summary();
    write!(out, "{summary}").map_err(io_err(Path::new("<stdout>")))?;
    let path = cfg.output_dir.join("summary.txt");
    write_atomic(&path, summary.as_bytes())?;
    Ok(report)
}

pub fn train_repeat(cfg: &RunConfig, data: &LoadedData, repeat: usize) -> Result<RunResult, CliError> {
    let seed = cfg.train.seed.wrapping_add(repeat as u64);
    let split = split_for(cfg, &data.train, seed)?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let dir = cfg.output_dir.join(format!("run_{repeat}"));
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let ckpt_path = dir.join("checkpoint.json");
    let metrics_path = dir.join("metrics.jsonl");
    let mut trainer = Trainer::new(tc, &data.train, &split)?;
    let snapshot = |t: &Trainer| Checkpoint::capture(cfg, repeat, seed, t.epoch(), t.params(), t.eval_stats(), t.adam());
    snapshot(&trainer).save(&ckpt_path)?;
    let mut mfile = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
    let mut history = Vec::new();
    while !trainer.is_done() {
        let m = match trainer.run_epoch() {
            Ok(m) => m,
            Err(e @ (Error::NonFiniteCost { .. } | Error::NonFinite(_) | Error::NonFiniteAt(_))) => {
                mfile.flush().map_err(io_err(&metrics_path))?;
                return Err(CliError::Numeric(format!("{e}; last good checkpoint kept at {}", ckpt_path.display())));
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(mfile, "{}", metrics::to_line(&m)).map_err(io_err(&metrics_path))?;
        mfile.flush().map_err(io_err(&metrics_path))?;
        snapshot(&trainer).save(&ckpt_path)?;
        history.push(m);
    }
    let test = match &data.test {
        Some(t) => {
            let all: Vec<usize> = (0..t.len()).collect();
            Some(evaluate(&trainer.params().encoder, trainer.eval_stats(), cfg.train.eval_mode, t, &all)?)
        }
        None => None,
    };
    Ok(RunResult {
        repeat,
        seed,
        dir,
        metrics: history,
        test,
    })
}

/// Which rows `eval` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTarget {
    Labeled,
    Validation,
    Test,
    Files { images: PathBuf, labels: PathBuf },
}

impl EvalTarget {
    fn name(&self) -> &'static str {
        match self {
            EvalTarget::Labeled => "labeled",
            EvalTarget::Validation => "validation",
            EvalTarget::Test => "test",
            EvalTarget::Files { .. } => "files",
        }
    }
}

pub fn confusion_csv(e: &Evaluation) -> String {
    let k = e.confusion.len();
    let mut s = String::from("true\\pred");
    for c in 0..k {
        s.push_str(&format!(",{c}"));
    }
    s.push('\n');
    for (t, row) in e.confusion.iter().enumerate() {
        s.push_str(&t.to_string());
        for v in row {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Scores a checkpoint and writes the confusion counts as CSV (rows are
/// true classes). Nothing is written unless evaluation succeeds.
pub fn eval(checkpoint: &Path, target: &EvalTarget, confusion_out: Option<&Path>, out: &mut dyn Write) -> Result<Evaluation, CliError> {
    let restored = Checkpoint::load(checkpoint)?.restore()?;
    let cfg = &restored.config;
    let (dataset, idx) = match target {
        EvalTarget::Files { images, labels } => {
            let ds = mnist::load_pair(images, labels)?;
            let idx = (0..ds.len()).collect();
            (ds, idx)
        }
        EvalTarget::Test => {
            let ds = load_data(cfg)?.test.ok_or_else(|| CliError::Data("the configured dataset has no test set".into()))?;
            let idx = (0..ds.len()).collect();
            (ds, idx)
        }
        EvalTarget::Labeled | EvalTarget::Validation => {
            let ds = load_data(cfg)?.train;
            let split = split_for(cfg, &ds, restored.seed)?;
            let idx = if *target == EvalTarget::Labeled { split.labeled_idx } else { split.validation_idx };
            (ds, idx)
        }
    };
    if idx.is_empty() {
        return Err(CliError::Data(format!("the {} set is empty", target.name())));
    }
    let e = evaluate(&restored.params.encoder, &restored.eval_stats, cfg.train.eval_mode, &dataset, &idx)?;
    let default_path;
    let path = match confusion_out {
        Some(p) => p,
        None => {
            default_path = checkpoint.with_file_name(format!("confusion_{}.csv", target.name()));
            &default_path
        }
    };
    write_atomic(path, confusion_csv(&e).as_bytes())?;
    let wrong = (e.error_rate * idx.len() as f64).round() as usize;
    writeln!(out, "{} error: {:.2}% ({wrong}/{})", target.name(), 100.0 * e.error_rate, idx.len()).map_err(io_err(Path::new("<stdout>")))?;
    writeln!(out, "confusion counts: {}", path.display()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(e)
}

pub fn gradcheck(cfg: &GradCheckConfig, out: &mut dyn Write) -> Result<GradCheckReport, CliError> {
    let report = gradient_check(cfg).map_err(|e| match e {
        Error::Invalid(m) => CliError::Config(m),
        other => other.into(),
    })?;
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_err(Path::new("<stdout>")));
    w(out, format!("arch {:?}, seed {}, {} parameters", cfg.widths, cfg.seed, report.param_count))?;
    for g in &report.groups {
        w(
            out,
            format!("{:<6} n={:<6} max_rel_err={:.3e} max_abs_grad={:.3e}", g.group.name(), g.count, g.max_rel_err, g.max_abs_grad),
        )?;
    }
    w(out, format!("{} (max relative error {:.3e})", if report.passed { "PASS" } else { "FAIL" }, report.max_rel_err))?;
    Ok(report)
}

/// `gaussian:MEAN,STD`, `bimodal:MODE,STD` or `mixture:W,M,S;W,M,S;…`.
pub fn parse_prior(spec: &str) -> Result<Prior1D, CliError> {
    let bad = || CliError::Usage(format!("cannot parse prior `{spec}`"));
    let (kind, args) = spec.split_once(':').ok_or_else(bad)?;
    let nums = |s: &str| -> Result<Vec<f64>, CliError> { s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect() };
    let prior = match kind {
        "gaussian" => match nums(args)?[..] {
            [m, s] => Prior1D::gaussian(m, s),
            _ => return Err(bad()),
        },
        "bimodal" => match nums(args)?[..] {
            [m, s] => Prior1D::symmetric_bimodal(m, s),
            _ => return Err(bad()),
        },
        "mixture" => {
            let comps = args
                .split(';')
                .map(|c| match nums(c)?[..] {
                    [weight, mean, std] => Ok(MixtureComponent { weight, mean, std }),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Prior1D::mixture(comps)
        }
        _ => return Err(bad()),
    };
    prior.map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSpec {
    pub prior: Prior1D,
    pub sigma_n: f64,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Writes `z_tilde,z_hat_oracle,z_hat_fitted_g` over an even grid: the
/// posterior mean and a proposed-`g` unit fitted to it with constant `u`.
pub fn denoise_demo(spec: &DemoSpec, path: &Path) -> Result<DenoiserFit, CliError> {
    if spec.points < 2 || !(spec.hi > spec.lo) {
        return Err(CliError::Usage("the grid needs at least two points and hi > lo".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let fit = fit_g_to_oracle(GKind::Proposed, &spec.prior, spec.sigma_n, USource::Constant(0.0), spec.steps, &mut rng).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut csv = String::from("z_tilde,z_hat_oracle,z_hat_fitted_g\n");
    let step = (spec.hi - spec.lo) / (spec.points - 1) as f64;
    for i in 0..spec.points {
        let zt = spec.lo + step * i as f64;
        let oracle = posterior_mean(&spec.prior, zt, spec.sigma_n).map_err(|e| CliError::Usage(e.to_string()))?;
        let fitted = ladder_core::decoder::g_apply(GKind::Proposed, zt, 0.0, &fit.params);
        csv.push_str(&format!("{zt},{oracle},{fitted}\n"));
    }
    write_atomic(path, csv.as_bytes())?;
    Ok(fit)
}
