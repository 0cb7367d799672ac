use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::batchnorm::RunningStats;
use crate::data::{BatchSampler, Dataset, LabeledSplit};
use crate::decoder::{GKind, TopInput};
use crate::encoder::{argmax_rows, predict, predict_with_batch_stats, Architecture, EncoderParams};
use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;

use super::adam::{lr_schedule, AdamConfig, AdamState};
use super::backprop::{backward, forward_cost, NoiseSource};
use super::params::LadderParams;

/// Which normalization statistics evaluation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Exponential moving average of clean-pass training statistics.
    Running,
    /// Statistics of each evaluation chunk itself.
    Batch,
}

/// Rows per evaluation chunk.
pub const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `m_0 … m_L`.
    pub widths: Vec<usize>,
    pub g_kind: GKind,
    /// `λ_0 … λ_L`.
    pub lambdas: Vec<f64>,
    /// Noise std for `l = 0..=L`.
    pub noise_stds: Vec<f64>,
    pub learning_rate: f64,
    pub main_epochs: usize,
    pub anneal_epochs: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub seed: u64,
    pub eval_stats_decay: f64,
    pub eval_mode: EvalMode,
    pub u_top: TopInput,
    /// Decoder restricted to the top layer.
    pub gamma_model: bool,
    pub adam: AdamConfig,
}

impl TrainConfig {
    /// MNIST defaults for the given widths.
    pub fn new(widths: Vec<usize>) -> Self {
        let n = widths.len();
        Self {
            widths,
            g_kind: GKind::Proposed,
            lambdas: vec![0.0; n],
            noise_stds: vec![0.3; n],
            learning_rate: 0.002,
            main_epochs: 100,
            anneal_epochs: 50,
            batch_labeled: 50,
            batch_unlabeled: 50,
            seed: 1,
            eval_stats_decay: 0.99,
            eval_mode: EvalMode::Running,
            u_top: TopInput::BatchNorm,
            gamma_model: false,
            adam: AdamConfig::default(),
        }
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::mlp(&self.widths)
    }

    pub fn total_epochs(&self) -> usize {
        self.main_epochs + self.anneal_epochs
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if self.lambdas.len() != n || self.noise_stds.len() != n {
            return Err(invalid(format!("need {n} denoising weights and noise levels for {} layers", n.saturating_sub(1))));
        }
        if self.lambdas.iter().chain(&self.noise_stds).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("denoising weights and noise levels must be finite and nonnegative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.batch_labeled + self.batch_unlabeled < 2 {
            return Err(invalid("batch_labeled + batch_unlabeled must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.eval_stats_decay) {
            return Err(invalid("eval_stats_decay must lie in [0, 1]"));
        }
        if self.gamma_model && self.lambdas[..n - 1].iter().any(|&l| l != 0.0) {
            return Err(invalid("the gamma model only carries a denoising cost on the top layer"));
        }
        self.architecture().map(|_| ())
    }
}

/// One record per epoch. Costs are means over the epoch's steps; error
/// rates are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub cost_supervised: f64,
    pub cost_denoise: Vec<f64>,
    pub cost_total: f64,
    pub train_err: Option<f64>,
    pub val_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub predictions: Vec<usize>,
}

/// Classifies `idx` rows of `dataset` in fixed-size chunks and scores them
/// against the dataset labels.
pub fn evaluate(params: &EncoderParams, eval_stats: &[RunningStats], mode: EvalMode, dataset: &Dataset, idx: &[usize]) -> Result<Evaluation> {
    let labels = dataset.labels()?;
    let k = dataset.num_classes.max(params.arch.width(params.arch.depth()));
    let mut confusion = vec![vec![0u64; k]; k];
    let mut predictions = Vec::with_capacity(idx.len());
    let mut chunks: Vec<&[usize]> = idx.chunks(EVAL_CHUNK).collect();
    if mode == EvalMode::Batch && chunks.len() > 1 && chunks.last().map_or(false, |c| c.len() < 2) {
        // A trailing single row cannot form a batch; fold it into the previous chunk.
        let start = (chunks.len() - 2) * EVAL_CHUNK;
        chunks.truncate(chunks.len() - 2);
        chunks.push(&idx[start..]);
    }
    for chunk in chunks {
        let x = dataset.inputs.select_rows(chunk)?;
        let pred = match mode {
            EvalMode::Running => predict(params, &x, eval_stats)?,
            EvalMode::Batch => predict_with_batch_stats(params, &x)?,
        };
        for (&row, &p) in chunk.iter().zip(&pred.classes) {
            confusion[labels[row]][p] += 1;
        }
        predictions.extend(pred.classes);
    }
    let wrong = idx.iter().zip(&predictions).filter(|(&i, &p)| labels[i] != p).count();
    let error_rate = if idx.is_empty() { 0.0 } else { wrong as f64 / idx.len() as f64 };
    Ok(Evaluation {
        error_rate,
        confusion,
        predictions,
    })
}

/// Epoch-by-epoch training driver. Everything random derives from
/// `config.seed`: parameter init, batch order and corruption noise each use
/// their own sub-stream.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    config: TrainConfig,
    dataset: &'a Dataset,
    split: &'a LabeledSplit,
    params: LadderParams,
    adam: AdamState,
    eval_stats: Vec<RunningStats>,
    sampler: BatchSampler,
    noise_rng: Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, dataset: &'a Dataset, split: &'a LabeledSplit) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture()?;
        if dataset.inputs.cols() != arch.width(0) {
            return Err(invalid(format!("dataset has {} features, network expects {}", dataset.inputs.cols(), arch.width(0))));
        }
        if config.batch_labeled > 0 && split.labeled_idx.is_empty() {
            return Err(invalid("supervised batches requested but the labeled set is empty"));
        }
        let root = Rng::new(config.seed);
        let params = LadderParams::init(&arch, config.g_kind, config.u_top, config.gamma_model, &root)?;
        let adam = AdamState::new(params.len(), config.adam);
        let eval_stats = (1..=arch.depth()).map(|l| RunningStats::new(arch.width(l), config.eval_stats_decay)).collect();
        let sampler = BatchSampler::new(split, config.batch_labeled, config.batch_unlabeled, root.substream("batches"))?;
        Ok(Self {
            noise_rng: root.substream("noise"),
            config,
            dataset,
            split,
            params,
            adam,
            eval_stats,
            sampler,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &LadderParams {
        &self.params
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn eval_stats(&self) -> &[RunningStats] {
        &self.eval_stats
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.total_epochs()
    }

    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        self.run_epoch_with(|_, _| {})
    }

    /// Runs one epoch, calling `on_step(step, params)` after every update.
    /// A non-finite cost aborts with [`Error::NonFiniteCost`] before that
    /// step's update is applied.
    pub fn run_epoch_with(&mut self, mut on_step: impl FnMut(usize, &LadderParams)) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let lr = lr_schedule(epoch, self.config.main_epochs, self.config.anneal_epochs, self.config.learning_rate)?;
        let plan = self.sampler.next_epoch();
        let depth = self.params.encoder.arch.depth();
        let mut sum_sup = 0.0;
        let mut sum_den = vec![0.0; depth + 1];
        for (step, indices) in plan.iter().enumerate() {
            let batch = indices.materialize(self.dataset)?;
            let numeric = |e: Error| match e {
                Error::NonFinite(_) => Error::NonFiniteCost { epoch, step },
                other => other,
            };
            let (cost, trace) = forward_cost(
                &self.params,
                &batch,
                &self.config.lambdas,
                &self.config.noise_stds,
                NoiseSource::Sample(&mut self.noise_rng),
            )
            .map_err(numeric)?;
            if !cost.total.is_finite() {
                return Err(Error::NonFiniteCost { epoch, step });
            }
            let grad = backward(&self.params, &trace, &batch, &self.config.lambdas).map_err(numeric)?;
            let mut flat = self.params.to_flat();
            self.adam.step(&mut flat, &grad.to_flat(), lr)?;
            self.params.set_flat(&flat).map_err(numeric)?;
            for (rs, layer) in self.eval_stats.iter_mut().zip(&trace.clean.layers) {
                rs.update(&layer.stats)?;
            }
            sum_sup += cost.c_supervised;
            for (s, c) in sum_den.iter_mut().zip(&cost.c_denoise_per_layer) {
                *s += c;
            }
            on_step(step, &self.params);
        }
        let steps = plan.len().max(1) as f64;
        let cost_supervised = sum_sup / steps;
        let cost_denoise: Vec<f64> = sum_den.iter().map(|s| s / steps).collect();
        let cost_total = cost_supervised + cost_denoise.iter().sum::<f64>();
        self.epoch += 1;
        let train_err = self.error_on(&self.split.labeled_idx)?;
        let val_err = self.error_on(&self.split.validation_idx)?;
        Ok(EpochMetrics {
            epoch,
            lr,
            cost_supervised,
            cost_denoise,
            cost_total,
            train_err,
            val_err,
        })
    }

    fn error_on(&self, idx: &[usize]) -> Result<Option<f64>> {
        if idx.is_empty() || self.dataset.labels.is_none() {
            return Ok(None);
        }
        self.evaluate(idx).map(|e| Some(e.error_rate))
    }

    pub fn evaluate(&self, idx: &[usize]) -> Result<Evaluation> {
        evaluate(&self.params.encoder, &self.eval_stats, self.config.eval_mode, self.dataset, idx)
    }

    pub fn into_outcome(self, metrics: Vec<EpochMetrics>) -> TrainOutcome {
        TrainOutcome {
            params: self.params,
            eval_stats: self.eval_stats,
            adam: self.adam,
            metrics,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: LadderParams,
    pub eval_stats: Vec<RunningStats>,
    pub adam: AdamState,
    pub metrics: Vec<EpochMetrics>,
}

/// Runs the full schedule, passing each epoch's metrics to `on_epoch`.
pub fn train(config: &TrainConfig, dataset: &Dataset, split: &LabeledSplit, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), dataset, split)?;
    let mut metrics = Vec::with_capacity(config.total_epochs());
    while !trainer.is_done() {
        let m = trainer.run_epoch()?;
        on_epoch(&m);
        metrics.push(m);
    }
    Ok(trainer.into_outcome(metrics))
}

/// Fraction of rows whose argmax differs from `labels`.
pub fn error_rate(probabilities: &crate::numerics::Matrix, labels: &[usize]) -> f64 {
    let pred = argmax_rows(probabilities);
    let wrong = pred.iter().zip(labels).filter(|(p, t)| p != t).count();
    wrong as f64 / labels.len().max(1) as f64
}
