//! Fully connected encoder: clean pass, corrupted pass and prediction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::batchnorm::{batch_statistics, normalize, BatchStats, RunningStats};
use crate::error::{invalid, Error, Result};
use crate::numerics::{gaussian_sample, matmul, relu, softmax_rows, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softmax,
    Linear,
}

/// One encoder layer. `use_gamma`/`use_beta` follow the redundancy rule:
/// ReLU needs only a shift, softmax needs both, linear needs neither.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub use_gamma: bool,
    pub use_beta: bool,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        let (use_gamma, use_beta) = match activation {
            Activation::Relu => (false, true),
            Activation::Softmax => (true, true),
            Activation::Linear => (false, false),
        };
        Self {
            width,
            activation,
            use_gamma,
            use_beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    input_width: usize,
    layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(input_width: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_width == 0 || layers.is_empty() || layers.iter().any(|l| l.width == 0) {
            return Err(invalid("architecture needs a positive input width and at least one nonempty layer"));
        }
        let last = layers.len() - 1;
        if layers[..last].iter().any(|l| l.activation == Activation::Softmax) {
            return Err(invalid("softmax is only allowed on the top layer"));
        }
        Ok(Self { input_width, layers })
    }

    /// ReLU hidden layers and a softmax top, e.g. `[784, 1000, 500, 10]`.
    pub fn mlp(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("an mlp needs at least an input and an output width"));
        }
        let last = widths.len() - 1;
        let layers = widths[1..]
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let act = if i + 1 == last {
                    Activation::Softmax
                } else {
                    Activation::Relu
                };
                LayerSpec::new(w, act)
            })
            .collect();
        Self::new(widths[0], layers)
    }

    /// Number of encoder layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `m_l`, with `m_0` the input width.
    pub fn width(&self, l: usize) -> usize {
        if l == 0 {
            self.input_width
        } else {
            self.layers[l - 1].width
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..=self.depth()).map(|l| self.width(l)).collect()
    }

    /// Spec of layer `l` in `1..=L`.
    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.layers[l - 1]
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }
}

/// Trainable parameters of one encoder layer. `w` is `m_{l−1} × m_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub w: Matrix,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: Architecture,
    /// Index `l − 1` holds layer `l`.
    pub layers: Vec<EncoderLayer>,
}

impl EncoderParams {
    /// `W` entries ~ N(0, 1/m_{l−1}), `γ = 1`, `β = 0`.
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(arch.depth());
        for l in 1..=arch.depth() {
            let spec = arch.layer(l);
            let fan_in = arch.width(l - 1);
            let w = gaussian_sample(rng, fan_in, spec.width, 1.0 / libm::sqrt(fan_in as f64))?;
            layers.push(EncoderLayer {
                w,
                gamma: spec.use_gamma.then(|| vec![1.0; spec.width]),
                beta: spec.use_beta.then(|| vec![0.0; spec.width]),
            });
        }
        Self::new(arch.clone(), layers)
    }

    pub fn new(arch: Architecture, layers: Vec<EncoderLayer>) -> Result<Self> {
        if layers.len() != arch.depth() {
            return Err(Error::Length {
                op: "EncoderParams::new",
                expected: arch.depth(),
                actual: layers.len(),
            });
        }
        for (i, layer) in layers.iter().enumerate() {
            let l = i + 1;
            let spec = arch.layer(l);
            if layer.w.rows() != arch.width(l - 1) || layer.w.cols() != spec.width {
                return Err(invalid(format!("W{l} has shape {}, expected {}x{}", layer.w.shape(), arch.width(l - 1), spec.width)));
            }
            let ok = |v: &Option<Vec<f64>>, used: bool| match v {
                Some(v) => used && v.len() == spec.width,
                None => !used,
            };
            if !ok(&layer.gamma, spec.use_gamma) || !ok(&layer.beta, spec.use_beta) {
                return Err(invalid(format!("layer {l}: gamma/beta presence or width does not match the layer spec")));
            }
        }
        Ok(Self { arch, layers })
    }
}

/// `γ ⊙ (z + β)` with a missing `γ` read as 1 and a missing `β` as 0.
pub(crate) fn scale_shift(z: &Matrix, gamma: Option<&[f64]>, beta: Option<&[f64]>) -> Matrix {
    let mut s = z.clone();
    let cols = z.cols();
    for row in s.as_mut_slice().chunks_exact_mut(cols) {
        for (j, v) in row.iter_mut().enumerate() {
            let shifted = *v + beta.map_or(0.0, |b| b[j]);
            *v = gamma.map_or(shifted, |g| g[j] * shifted);
        }
    }
    s
}

pub(crate) fn activate(kind: Activation, s: Matrix) -> Matrix {
    match kind {
        Activation::Relu => relu(&s),
        Activation::Softmax => softmax_rows(&s),
        Activation::Linear => s,
    }
}

/// Clean-pass record of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanLayer {
    pub z_pre: Matrix,
    pub stats: BatchStats,
    pub z: Matrix,
    pub h: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanTrace {
    /// `z⁽⁰⁾ = h⁽⁰⁾ = x`.
    pub x: Matrix,
    /// Index `l − 1` holds layer `l`.
    pub layers: Vec<CleanLayer>,
}

impl CleanTrace {
    pub fn z(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.x
        } else {
            &self.layers[l - 1].z
        }
    }

    pub fn h(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.x
        } else {
            &self.layers[l - 1].h
        }
    }

    /// Clean class probabilities `h⁽ᴸ⁾`.
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("non-empty architecture").h
    }
}

/// Corrupted-pass record of one layer. `z` is `z̃`, `h` is `h̃`; `pre` and
/// `stats` are the corrupted pre-activation and its own batch statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedLayer {
    pub pre: Matrix,
    pub stats: BatchStats,
    pub z: Matrix,
    pub h: Matrix,
    pub noise: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedTrace {
    /// `z̃⁽⁰⁾ = h̃⁽⁰⁾ = x + n⁽⁰⁾`.
    pub z0: Matrix,
    pub noise0: Matrix,
    pub layers: Vec<CorruptedLayer>,
}

impl CorruptedTrace {
    pub fn z(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.z0
        } else {
            &self.layers[l - 1].z
        }
    }

    pub fn h(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.z0
        } else {
            &self.layers[l - 1].h
        }
    }

    /// `ỹ = h̃⁽ᴸ⁾`.
    pub fn y_tilde(&self) -> &Matrix {
        &self.layers.last().expect("non-empty architecture").h
    }

    /// The sampled noise, `n⁽⁰⁾ … n⁽ᴸ⁾`, ready for replay.
    pub fn noise(&self) -> Vec<Matrix> {
        core::iter::once(self.noise0.clone())
            .chain(self.layers.iter().map(|l| l.noise.clone()))
            .collect()
    }
}

fn check_input(params: &EncoderParams, x: &Matrix) -> Result<()> {
    if x.rows() < 2 {
        return Err(Error::BatchTooSmall(x.rows()));
    }
    if x.cols() != params.arch.width(0) {
        return Err(Error::Length {
            op: "encoder input width",
            expected: params.arch.width(0),
            actual: x.cols(),
        });
    }
    Ok(())
}

pub fn clean_pass(params: &EncoderParams, x: &Matrix) -> Result<CleanTrace> {
    check_input(params, x)?;
    let mut layers: Vec<CleanLayer> = Vec::with_capacity(params.arch.depth());
    for (i, p) in params.layers.iter().enumerate() {
        let spec = params.arch.layer(i + 1);
        let h_prev = layers.last().map_or(x, |l| &l.h);
        let z_pre = matmul(h_prev, &p.w)?;
        let stats = batch_statistics(&z_pre)?;
        let z = normalize(&z_pre, &stats)?;
        let h = activate(spec.activation, scale_shift(&z, p.gamma.as_deref(), p.beta.as_deref()));
        layers.push(CleanLayer { z_pre, stats, z, h });
    }
    Ok(CleanTrace { x: x.clone(), layers })
}

/// Corrupted pass, sampling `n⁽ˡ⁾ ~ N(0, noise_stds[l]²)` for `l = 0..=L`.
pub fn corrupted_pass(params: &EncoderParams, x: &Matrix, noise_stds: &[f64], rng: &mut Rng) -> Result<CorruptedTrace> {
    check_input(params, x)?;
    let widths = params.arch.widths();
    if noise_stds.len() != widths.len() {
        return Err(Error::Length {
            op: "corrupted_pass noise_stds",
            expected: widths.len(),
            actual: noise_stds.len(),
        });
    }
    let noise = widths
        .iter()
        .zip(noise_stds)
        .map(|(&w, &s)| gaussian_sample(rng, x.rows(), w, s))
        .collect::<Result<Vec<_>>>()?;
    corrupted_pass_with_noise(params, x, &noise)
}

/// Corrupted pass with the noise matrices `n⁽⁰⁾ … n⁽ᴸ⁾` given explicitly.
pub fn corrupted_pass_with_noise(params: &EncoderParams, x: &Matrix, noise: &[Matrix]) -> Result<CorruptedTrace> {
    check_input(params, x)?;
    if noise.len() != params.arch.depth() + 1 {
        return Err(Error::Length {
            op: "corrupted_pass noise",
            expected: params.arch.depth() + 1,
            actual: noise.len(),
        });
    }
    let z0 = x.add(&noise[0])?;
    let mut layers: Vec<CorruptedLayer> = Vec::with_capacity(params.arch.depth());
    for (i, p) in params.layers.iter().enumerate() {
        let spec = params.arch.layer(i + 1);
        let h_prev = layers.last().map_or(&z0, |l| &l.h);
        let pre = matmul(h_prev, &p.w)?;
        let stats = batch_statistics(&pre)?;
        let z = normalize(&pre, &stats)?.add(&noise[i + 1])?;
        let h = activate(spec.activation, scale_shift(&z, p.gamma.as_deref(), p.beta.as_deref()));
        layers.push(CorruptedLayer {
            pre,
            stats,
            z,
            h,
            noise: noise[i + 1].clone(),
        });
    }
    Ok(CorruptedTrace {
        z0,
        noise0: noise[0].clone(),
        layers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Matrix,
    pub classes: Vec<usize>,
}

/// Per-row argmax; ties go to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Clean forward pass normalizing with evaluation statistics instead of the
/// batch's own. Rows are processed independently, so any batch size works.
pub fn predict(params: &EncoderParams, x: &Matrix, eval_stats: &[RunningStats]) -> Result<Prediction> {
    if eval_stats.len() != params.arch.depth() {
        return Err(Error::Length {
            op: "predict eval_stats",
            expected: params.arch.depth(),
            actual: eval_stats.len(),
        });
    }
    if eval_stats.iter().any(|s| !s.is_populated()) {
        return Err(invalid("predict: evaluation statistics have never been updated"));
    }
    if x.cols() != params.arch.width(0) {
        return Err(Error::Length {
            op: "encoder input width",
            expected: params.arch.width(0),
            actual: x.cols(),
        });
    }
    let mut h = x.clone();
    for (i, (p, rs)) in params.layers.iter().zip(eval_stats).enumerate() {
        let spec = params.arch.layer(i + 1);
        let z = normalize(&matmul(&h, &p.w)?, &rs.as_batch_stats())?;
        h = activate(spec.activation, scale_shift(&z, p.gamma.as_deref(), p.beta.as_deref()));
    }
    let classes = argmax_rows(&h);
    Ok(Prediction {
        probabilities: h,
        classes,
    })
}

/// Prediction using the statistics of `x` itself as the batch.
pub fn predict_with_batch_stats(params: &EncoderParams, x: &Matrix) -> Result<Prediction> {
    let trace = clean_pass(params, x)?;
    let probabilities = trace.output().clone();
    let classes = argmax_rows(&probabilities);
    Ok(Prediction {
        probabilities,
        classes,
    })
}
