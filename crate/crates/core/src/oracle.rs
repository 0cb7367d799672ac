//! MSE-optimal denoisers for scalar priors under additive Gaussian noise,
//! and Monte-Carlo fits of parametrized denoisers against them.

use alloc::vec;
use alloc::vec::Vec;

use crate::decoder::{g_apply, g_backward, GKind};
use crate::error::{invalid, Result};
use crate::numerics::Rng;
use crate::training::AdamState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Distribution of the clean latent value `z`.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior1D {
    Gaussian { mean: f64, std: f64 },
    Mixture(Vec<MixtureComponent>),
}

impl Prior1D {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(invalid("gaussian prior needs a finite mean and std >= 0"));
        }
        Ok(Prior1D::Gaussian { mean, std })
    }

    pub fn mixture(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("mixture needs at least one component"));
        }
        if components.iter().any(|c| !(c.std > 0.0) || !(c.weight >= 0.0) || !c.mean.is_finite()) {
            return Err(invalid("mixture components need std > 0 and weight >= 0"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("mixture weights must sum to 1"));
        }
        Ok(Prior1D::Mixture(components))
    }

    /// Equal-weight two-mode mixture at `±mode`.
    pub fn symmetric_bimodal(mode: f64, std: f64) -> Result<Self> {
        Self::mixture(vec![
            MixtureComponent { weight: 0.5, mean: -mode, std },
            MixtureComponent { weight: 0.5, mean: mode, std },
        ])
    }

    pub fn components(&self) -> Vec<MixtureComponent> {
        match self {
            Prior1D::Gaussian { mean, std } => vec![MixtureComponent { weight: 1.0, mean: *mean, std: *std }],
            Prior1D::Mixture(c) => c.clone(),
        }
    }

    /// Draws `z` and the index of the component it came from.
    pub fn sample(&self, rng: &mut Rng) -> (f64, usize) {
        match self {
            Prior1D::Gaussian { mean, std } => (mean + std * rng.normal(), 0),
            Prior1D::Mixture(c) => {
                let r = rng.uniform();
                let mut acc = 0.0;
                let mut k = c.len() - 1;
                for (i, comp) in c.iter().enumerate() {
                    acc += comp.weight;
                    if r < acc {
                        k = i;
                        break;
                    }
                }
                (c[k].mean + c[k].std * rng.normal(), k)
            }
        }
    }
}

/// `(z̃ − μ)·υ + μ` with `υ = σ_z² / (σ_z² + σ_n²)`.
pub fn posterior_mean_gaussian(z_tilde: f64, prior_mean: f64, sigma_z: f64, sigma_n: f64) -> Result<f64> {
    if !(sigma_z >= 0.0) || !(sigma_n >= 0.0) {
        return Err(invalid("standard deviations must be nonnegative"));
    }
    let (vz, vn) = (sigma_z * sigma_z, sigma_n * sigma_n);
    if vz + vn == 0.0 {
        return Err(invalid("prior and noise cannot both be degenerate"));
    }
    let upsilon = vz / (vz + vn);
    Ok((z_tilde - prior_mean) * upsilon + prior_mean)
}

/// Exact `E[z | z̃]` for a Gaussian-mixture prior: each component's Gaussian
/// posterior mean weighted by its responsibility for `z̃` under the
/// noise-convolved component density.
pub fn posterior_mean_mixture(z_tilde: f64, components: &[MixtureComponent], sigma_n: f64) -> Result<f64> {
    if !(sigma_n > 0.0) {
        return Err(invalid("noise std must be positive"));
    }
    if components.is_empty() {
        return Err(invalid("mixture needs at least one component"));
    }
    let vn = sigma_n * sigma_n;
    let log_resp: Vec<f64> = components
        .iter()
        .map(|c| {
            let v = c.std * c.std + vn;
            let d = z_tilde - c.mean;
            libm::log(c.weight) - 0.5 * libm::log(v) - 0.5 * d * d / v
        })
        .collect();
    let max = log_resp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut norm = 0.0;
    let mut acc = 0.0;
    for (c, lr) in components.iter().zip(&log_resp) {
        let w = libm::exp(lr - max);
        norm += w;
        acc += w * posterior_mean_gaussian(z_tilde, c.mean, c.std, sigma_n)?;
    }
    Ok(acc / norm)
}

pub fn posterior_mean(prior: &Prior1D, z_tilde: f64, sigma_n: f64) -> Result<f64> {
    match prior {
        Prior1D::Gaussian { mean, std } => posterior_mean_gaussian(z_tilde, *mean, *std, sigma_n),
        Prior1D::Mixture(c) => posterior_mean_mixture(z_tilde, c, sigma_n),
    }
}

/// Best affine denoiser `ẑ = υ·z̃ + c`, reported as slope `υ` and the
/// implied center `μ = c / (1 − υ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub center: f64,
}

/// Least-squares fit of clean `z` on corrupted `z̃` over Monte-Carlo draws.
pub fn empirical_best_linear(prior: &Prior1D, sigma_n: f64, samples: usize, rng: &mut Rng) -> Result<LinearFit> {
    if samples < 10_000 {
        return Err(invalid("empirical_best_linear needs at least 10^4 samples"));
    }
    let n = samples as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..samples {
        let (z, _) = prior.sample(rng);
        let zt = z + sigma_n * rng.normal();
        sx += zt;
        sy += z;
        sxx += zt * zt;
        sxy += zt * z;
    }
    let (mx, my) = (sx / n, sy / n);
    let var = sxx / n - mx * mx;
    if !(var > 1e-300) {
        return Err(invalid("degenerate corrupted-sample variance"));
    }
    let slope = (sxy / n - mx * my) / var;
    let intercept = my - slope * mx;
    let center = if (1.0 - slope).abs() > 1e-12 { intercept / (1.0 - slope) } else { my };
    Ok(LinearFit { slope, center })
}

/// What the denoiser sees as its top-down input `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum USource {
    Constant(f64),
    /// Index of the mixture component `z` was drawn from, centred around
    /// zero: `k − (K − 1)/2`.
    Component,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserFit {
    pub params: Vec<f64>,
    pub achieved_mse: f64,
    pub oracle_mse: f64,
}

const FIT_BATCH: usize = 256;
const FIT_LR: f64 = 0.02;
/// Monte-Carlo draws used to score a fitted denoiser against the oracle.
pub const FIT_EVAL_SAMPLES: usize = 100_000;

/// Fits one unit of `kind` to minimize the denoising MSE by Adam on fresh
/// minibatches, starting from the identity denoiser. The learning rate is
/// held for the first half of `steps` and decays linearly to zero over the
/// second. Scores the fit and the oracle posterior mean on the same
/// held-out draws.
pub fn fit_g_to_oracle(kind: GKind, prior: &Prior1D, sigma_n: f64, u_source: USource, steps: usize, rng: &mut Rng) -> Result<DenoiserFit> {
    if steps == 0 {
        return Err(invalid("fit_g_to_oracle needs at least one step"));
    }
    if !(sigma_n > 0.0) {
        return Err(invalid("noise std must be positive"));
    }
    let comps = prior.components();
    let centre = (comps.len() as f64 - 1.0) / 2.0;
    let draw = |rng: &mut Rng| {
        let (z, k) = prior.sample(rng);
        let zt = z + sigma_n * rng.normal();
        let u = match u_source {
            USource::Constant(c) => c,
            USource::Component => k as f64 - centre,
        };
        (z, zt, u, k)
    };
    let mut params = kind.identity_params();
    let mut adam = AdamState::new(params.len(), crate::training::AdamConfig::default());
    let mut grad = vec![0.0; params.len()];
    let half = steps.div_ceil(2);
    for step in 0..steps {
        grad.fill(0.0);
        for _ in 0..FIT_BATCH {
            let (z, zt, u, _) = draw(rng);
            let err = g_apply(kind, zt, u, &params) - z;
            g_backward(kind, zt, u, &params, 2.0 * err / FIT_BATCH as f64, &mut grad);
        }
        let lr = if step < half {
            FIT_LR
        } else {
            FIT_LR * (steps - step) as f64 / (steps - half) as f64
        };
        adam.step(&mut params, &grad, lr)?;
    }
    let mut achieved = 0.0;
    let mut oracle = 0.0;
    for _ in 0..FIT_EVAL_SAMPLES {
        let (z, zt, u, k) = draw(rng);
        let fit = g_apply(kind, zt, u, &params);
        let best = match u_source {
            USource::Constant(_) => posterior_mean(prior, zt, sigma_n)?,
            USource::Component => posterior_mean_gaussian(zt, comps[k].mean, comps[k].std, sigma_n)?,
        };
        achieved += (fit - z) * (fit - z);
        oracle += (best - z) * (best - z);
    }
    let n = FIT_EVAL_SAMPLES as f64;
    Ok(DenoiserFit {
        params,
        achieved_mse: achieved / n,
        oracle_mse: oracle / n,
    })
}
