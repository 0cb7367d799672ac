//! Supervised cross-entropy, layer-wise denoising cost and their sum.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::decoder::DecoderTrace;
use crate::encoder::CleanTrace;
use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;

/// Probabilities below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub c_supervised: f64,
    /// `C_d⁽ˡ⁾` for `l = 0..=L`, already weighted by `λ_l`.
    pub c_denoise_per_layer: Vec<f64>,
    pub c_denoise: f64,
    pub total: f64,
}

/// Mean negative log-probability of the target over the labeled rows; zero
/// when no row is labeled.
pub fn supervised_cost(y: &Matrix, targets: &[usize], labeled: &[bool]) -> Result<f64> {
    check_labels(y, targets, labeled)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (r, (&t, &is_labeled)) in targets.iter().zip(labeled).enumerate() {
        if is_labeled {
            sum -= libm::log(y.get(r, t).max(LOG_FLOOR));
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

pub(crate) fn check_labels(y: &Matrix, targets: &[usize], labeled: &[bool]) -> Result<()> {
    if targets.len() != y.rows() || labeled.len() != y.rows() {
        return Err(Error::Length {
            op: "supervised_cost",
            expected: y.rows(),
            actual: targets.len().min(labeled.len()),
        });
    }
    if let Some(&t) = targets.iter().zip(labeled).filter(|(_, &m)| m).map(|(t, _)| t).find(|&&t| t >= y.cols()) {
        return Err(invalid(format!("target class {t} out of range for {} classes", y.cols())));
    }
    Ok(())
}

/// `C_d⁽ˡ⁾ = λ_l / (B·m_l) · Σ ‖z⁽ˡ⁾ − ẑ_BN⁽ˡ⁾‖²`. Layers without a decoder
/// contribute zero and must carry `λ_l = 0`.
pub fn denoising_cost(clean: &CleanTrace, dec: &DecoderTrace, lambdas: &[f64]) -> Result<(Vec<f64>, f64)> {
    let depth = clean.layers.len();
    if lambdas.len() != depth + 1 || dec.layers.len() != depth + 1 {
        return Err(Error::Length {
            op: "denoising_cost lambdas",
            expected: depth + 1,
            actual: lambdas.len(),
        });
    }
    if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(invalid("denoising weights must be finite and nonnegative"));
    }
    let mut per_layer = vec![0.0; depth + 1];
    for (l, &lambda) in lambdas.iter().enumerate() {
        match dec.layer(l) {
            Some(d) => {
                let z = clean.z(l);
                let diff = z.sub(&d.z_hat_bn)?;
                per_layer[l] = lambda / (z.rows() * z.cols()) as f64 * diff.frobenius_sq();
            }
            None if lambda != 0.0 => {
                return Err(invalid(format!("layer {l} has a denoising weight but no decoder")));
            }
            None => {}
        }
    }
    let total = per_layer.iter().sum();
    Ok((per_layer, total))
}

pub fn total_cost(c_sup: f64, per_layer: Vec<f64>) -> CostBreakdown {
    let c_denoise: f64 = per_layer.iter().sum();
    CostBreakdown {
        c_supervised: c_sup,
        c_denoise_per_layer: per_layer,
        c_denoise,
        total: c_sup + c_denoise,
    }
}
