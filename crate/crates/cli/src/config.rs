//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment. Lists are comma separated;
//! the synthetic class means are `;`-separated points. Unknown and
//! duplicate keys are rejected, and [`RunConfig::to_text`] writes a file
//! that parses back to an equal value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use ladder_core::decoder::TopInput;
use ladder_core::training::{EvalMode, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub per_class: usize,
    pub test_per_class: usize,
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Directory holding the four uncompressed MNIST IDX files.
    Mnist { dir: PathBuf },
    Synthetic(SynthSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub n_labels: usize,
    pub val_size: usize,
    /// Keep only this many unlabeled rows per repeat.
    pub unlabeled_limit: Option<usize>,
    pub repeats: usize,
    pub output_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "arch",
    "g",
    "lambdas",
    "noise_std",
    "u_top",
    "gamma_model",
    "learning_rate",
    "main_epochs",
    "anneal_epochs",
    "batch_labeled",
    "batch_unlabeled",
    "eval_stats_decay",
    "eval_mode",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "seed",
    "repeats",
    "dataset",
    "mnist_dir",
    "synth_per_class",
    "synth_test_per_class",
    "synth_means",
    "synth_std",
    "synth_seed",
    "n_labels",
    "val_size",
    "unlabeled_limit",
    "output_dir",
];

struct Entry {
    line: usize,
    value: String,
}

struct Table(BTreeMap<String, Entry>);

impl Table {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.0.remove(key).map(|e| (e.line, e.value))
    }

    fn required(&mut self, key: &str) -> Result<(usize, String), CliError> {
        self.take(key).ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => parse_value(line, key, &v),
        }
    }
}

fn key_error(line: usize, key: &str, msg: impl Into<String>) -> CliError {
    CliError::ConfigKey {
        line,
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| key_error(line, key, format!("cannot parse `{v}`: {e}")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str, sep: char) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    v.split(sep).map(|s| parse_value(line, key, s.trim())).collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(key_error(line, key, format!("expected true or false, got `{v}`"))),
    }
}

pub fn parse_top_input(v: &str) -> Option<TopInput> {
    match v {
        "batchnorm" => Some(TopInput::BatchNorm),
        "raw" => Some(TopInput::Raw),
        _ => None,
    }
}

fn top_input_name(t: TopInput) -> &'static str {
    match t {
        TopInput::BatchNorm => "batchnorm",
        TopInput::Raw => "raw",
    }
}

fn join<T: std::fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line}: expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(key_error(line, key, "unknown key"));
            }
            if table.contains_key(key) {
                return Err(key_error(line, key, "duplicate key"));
            }
            table.insert(key.to_string(), Entry { line, value: value.to_string() });
        }
        let mut t = Table(table);

        let (line, arch) = t.required("arch")?;
        let widths: Vec<usize> = parse_list(line, "arch", &arch, '-')?;
        if widths.len() < 2 || widths.contains(&0) {
            return Err(key_error(line, "arch", "need at least input and output widths, all positive"));
        }
        let n = widths.len();
        let mut train = TrainConfig::new(widths.clone());

        let (line, lambdas) = t.required("lambdas")?;
        train.lambdas = parse_list(line, "lambdas", &lambdas, ',')?;
        if train.lambdas.len() != n {
            return Err(key_error(line, "lambdas", format!("expected {n} values (one per layer 0..={}), got {}", n - 1, train.lambdas.len())));
        }
        if let Some((line, v)) = t.take("noise_std") {
            let stds: Vec<f64> = parse_list(line, "noise_std", &v, ',')?;
            train.noise_stds = match stds.len() {
                1 => vec![stds[0]; n],
                len if len == n => stds,
                len => return Err(key_error(line, "noise_std", format!("expected 1 or {n} values, got {len}"))),
            };
        }
        if let Some((line, v)) = t.take("g") {
            train.g_kind = parse_value(line, "g", &v)?;
        }
        if let Some((line, v)) = t.take("u_top") {
            train.u_top = parse_top_input(&v).ok_or_else(|| key_error(line, "u_top", "expected batchnorm or raw"))?;
        }
        if let Some((line, v)) = t.take("gamma_model") {
            train.gamma_model = parse_bool(line, "gamma_model", &v)?;
        }
        if let Some((line, v)) = t.take("eval_mode") {
            train.eval_mode = match v.as_str() {
                "running" => EvalMode::Running,
                "batch" => EvalMode::Batch,
                _ => return Err(key_error(line, "eval_mode", "expected running or batch")),
            };
        }
        train.learning_rate = t.parsed("learning_rate", train.learning_rate)?;
        train.main_epochs = t.parsed("main_epochs", train.main_epochs)?;
        train.anneal_epochs = t.parsed("anneal_epochs", train.anneal_epochs)?;
        train.batch_labeled = t.parsed("batch_labeled", 100)?;
        train.batch_unlabeled = t.parsed("batch_unlabeled", 100)?;
        train.eval_stats_decay = t.parsed("eval_stats_decay", train.eval_stats_decay)?;
        train.adam.beta1 = t.parsed("adam_beta1", train.adam.beta1)?;
        train.adam.beta2 = t.parsed("adam_beta2", train.adam.beta2)?;
        train.adam.eps = t.parsed("adam_eps", train.adam.eps)?;
        train.seed = t.parsed("seed", train.seed)?;
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let repeats = t.parsed("repeats", 1usize)?;
        if repeats == 0 {
            return Err(CliError::Config("repeats must be at least 1".into()));
        }
        let n_labels = t.parsed("n_labels", 100usize)?;
        let val_size = t.parsed("val_size", 0usize)?;
        let unlabeled_limit = match t.take("unlabeled_limit") {
            None => None,
            Some((line, v)) => Some(parse_value(line, "unlabeled_limit", &v)?),
        };
        let (_, out) = t.required("output_dir")?;
        let output_dir = PathBuf::from(out);

        let (line, kind) = t.required("dataset")?;
        let data = match kind.as_str() {
            "mnist" => {
                let (_, dir) = t.required("mnist_dir")?;
                DataSource::Mnist { dir: PathBuf::from(dir) }
            }
            "synthetic" => {
                let (line, means) = t.required("synth_means")?;
                let means: Vec<Vec<f64>> = means.split(';').map(|p| parse_list(line, "synth_means", p.trim(), ',')).collect::<Result<_, _>>()?;
                if means.len() != widths[n - 1] || means.iter().any(|m| m.len() != widths[0]) {
                    return Err(key_error(
                        line,
                        "synth_means",
                        format!("need {} points of dimension {} to match arch", widths[n - 1], widths[0]),
                    ));
                }
                let (line, per) = t.required("synth_per_class")?;
                let per_class: usize = parse_value(line, "synth_per_class", &per)?;
                SynthSpec {
                    per_class,
                    test_per_class: t.parsed("synth_test_per_class", per_class)?,
                    means,
                    std: t.parsed("synth_std", 1.0)?,
                    seed: t.parsed("synth_seed", 0u64)?,
                }
                .into()
            }
            _ => return Err(key_error(line, "dataset", "expected mnist or synthetic")),
        };
        if let Some((key, e)) = t.0.into_iter().next() {
            return Err(key_error(e.line, &key, format!("not used with dataset = {kind}")));
        }
        Ok(Self {
            train,
            data,
            n_labels,
            val_size,
            unlabeled_limit,
            repeats,
            output_dir,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Io { .. } => e,
            other => CliError::Config(format!("{}: {other}", path.display())),
        })
    }

    /// Canonical text form with every key spelled out.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("arch", join(&t.widths, "-"));
        kv("g", t.g_kind.name().to_string());
        kv("lambdas", join(&t.lambdas, ","));
        kv("noise_std", join(&t.noise_stds, ","));
        kv("u_top", top_input_name(t.u_top).to_string());
        kv("gamma_model", t.gamma_model.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("main_epochs", t.main_epochs.to_string());
        kv("anneal_epochs", t.anneal_epochs.to_string());
        kv("batch_labeled", t.batch_labeled.to_string());
        kv("batch_unlabeled", t.batch_unlabeled.to_string());
        kv("eval_stats_decay", t.eval_stats_decay.to_string());
        kv(
            "eval_mode",
            match t.eval_mode {
                EvalMode::Running => "running",
                EvalMode::Batch => "batch",
            }
            .to_string(),
        );
        kv("adam_beta1", t.adam.beta1.to_string());
        kv("adam_beta2", t.adam.beta2.to_string());
        kv("adam_eps", t.adam.eps.to_string());
        kv("seed", t.seed.to_string());
        kv("repeats", self.repeats.to_string());
        match &self.data {
            DataSource::Mnist { dir } => {
                kv("dataset", "mnist".into());
                kv("mnist_dir", dir.display().to_string());
            }
            DataSource::Synthetic(sp) => {
                kv("dataset", "synthetic".into());
                kv("synth_per_class", sp.per_class.to_string());
                kv("synth_test_per_class", sp.test_per_class.to_string());
                kv("synth_means", sp.means.iter().map(|m| join(m, ",")).collect::<Vec<_>>().join("; "));
                kv("synth_std", sp.std.to_string());
                kv("synth_seed", sp.seed.to_string());
            }
        }
        kv("n_labels", self.n_labels.to_string());
        kv("val_size", self.val_size.to_string());
        if let Some(u) = self.unlabeled_limit {
            kv("unlabeled_limit", u.to_string());
        }
        kv("output_dir", self.output_dir.display().to_string());
        s
    }

    /// The same run with every denoising weight set to zero: the
    /// noise-regularized supervised baseline.
    pub fn supervised_baseline(&self) -> Self {
        let mut c = self.clone();
        c.train.lambdas.iter_mut().for_each(|l| *l = 0.0);
        c
    }
}

impl From<SynthSpec> for DataSource {
    fn from(s: SynthSpec) -> Self {
        DataSource::Synthetic(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = "\
# quick run
arch = 2-8-3
lambdas = 1, 0.5, 0.1
dataset = synthetic
synth_means = 0,0; 3,0; 0,3
synth_per_class = 20
n_labels = 6
output_dir = out   # trailing comment
";

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::parse(SYNTH).unwrap();
        assert_eq!(c.train.widths, vec![2, 8, 3]);
        assert_eq!(c.train.lambdas, vec![1.0, 0.5, 0.1]);
        assert_eq!(c.train.noise_stds, vec![0.3; 3]);
        assert_eq!(c.train.learning_rate, 0.002);
        assert_eq!((c.train.main_epochs, c.train.anneal_epochs), (100, 50));
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.repeats, 1);
        match &c.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.means[1], vec![3.0, 0.0]);
                assert_eq!(s.test_per_class, 20);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::parse(SYNTH).unwrap();
        c.train.noise_stds = vec![0.1, 0.25, 1e-3];
        c.train.learning_rate = 0.1 + 0.2;
        c.unlabeled_limit = Some(50);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let m = RunConfig::parse("arch = 784-10\nlambdas = 1000,0.1\ndataset = mnist\nmnist_dir = /data\noutput_dir = o\n").unwrap();
        assert_eq!(RunConfig::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys_with_line() {
        let err = RunConfig::parse(&format!("{SYNTH}colour = red\n")).unwrap_err();
        assert!(matches!(&err, CliError::ConfigKey { line: 9, key, .. } if key == "colour"), "{err}");
        let err = RunConfig::parse(&format!("{SYNTH}arch = 2-3-3\n")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn rejects_wrong_lambda_count() {
        let err = RunConfig::parse(&SYNTH.replace("1, 0.5, 0.1", "1, 0.5")).unwrap_err();
        assert!(matches!(&err, CliError::ConfigKey { line: 3, key, .. } if key == "lambdas"), "{err}");
    }

    #[test]
    fn missing_required_key() {
        let err = RunConfig::parse(&SYNTH.replace("output_dir = out   # trailing comment\n", "")).unwrap_err();
        assert!(err.to_string().contains("output_dir"));
    }

    #[test]
    fn keys_for_other_dataset_are_rejected() {
        let err = RunConfig::parse(&format!("{SYNTH}mnist_dir = x\n")).unwrap_err();
        assert!(err.to_string().contains("mnist_dir"));
    }

    #[test]
    fn gamma_model_requires_top_only_cost() {
        assert!(RunConfig::parse(&format!("{SYNTH}gamma_model = true\n")).is_err());
        let ok = SYNTH.replace("1, 0.5, 0.1", "0, 0, 0.1") + "gamma_model = true\n";
        assert!(RunConfig::parse(&ok).unwrap().train.gamma_model);
    }

    #[test]
    fn baseline_zeroes_lambdas_only() {
        let c = RunConfig::parse(SYNTH).unwrap();
        let b = c.supervised_baseline();
        assert_eq!(b.train.lambdas, vec![0.0; 3]);
        assert_eq!(b.train.noise_stds, c.train.noise_stds);
    }
}
