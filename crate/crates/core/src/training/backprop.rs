//! Forward cost evaluation and its exact reverse-mode adjoint.
//!
//! The backward pass walks the computation in reverse: cost terms, then the
//! decoder from the lowest decoded layer upward, then the corrupted encoder
//! and the clean encoder from the top down. Batch statistics are
//! differentiated as functions of the batch everywhere, and the clean-pass
//! statistics additionally receive the gradient of the `ẑ_BN` rescaling.

use alloc::vec;
use alloc::vec::Vec;

use crate::batchnorm::{normalize, normalize_backward};
use crate::data::Batch;
use crate::decoder::{decoder_pass, g_backward, DecoderTrace};
use crate::encoder::{clean_pass, corrupted_pass, corrupted_pass_with_noise, scale_shift, Activation, CleanTrace, CorruptedTrace};
use crate::error::{Error, Result};
use crate::numerics::{matmul_nt, matmul_tn, Matrix, Rng};
use crate::objective::{check_labels, denoising_cost, supervised_cost, total_cost, CostBreakdown, LOG_FLOOR};

use super::params::{accumulate, LadderParams};

/// Where the corruption noise comes from.
pub enum NoiseSource<'a> {
    Sample(&'a mut Rng),
    /// `n⁽⁰⁾ … n⁽ᴸ⁾`, already scaled.
    Frozen(&'a [Matrix]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub clean: CleanTrace,
    pub corrupted: CorruptedTrace,
    pub decoder: DecoderTrace,
}

/// Clean pass, corrupted pass, decoder and the full cost for one batch.
///
/// The decoder is skipped when every `λ` is zero; no cost term would read it.
pub fn forward_cost(
    params: &LadderParams,
    batch: &Batch,
    lambdas: &[f64],
    noise_stds: &[f64],
    noise: NoiseSource<'_>,
) -> Result<(CostBreakdown, ForwardTrace)> {
    let clean = clean_pass(&params.encoder, &batch.x)?;
    let corrupted = match noise {
        NoiseSource::Sample(rng) => corrupted_pass(&params.encoder, &batch.x, noise_stds, rng)?,
        NoiseSource::Frozen(n) => corrupted_pass_with_noise(&params.encoder, &batch.x, n)?,
    };
    let decoder = if lambdas.iter().any(|&l| l != 0.0) {
        decoder_pass(&params.decoder, &corrupted, &clean)?
    } else {
        DecoderTrace {
            layers: vec![None; params.encoder.arch.depth() + 1],
        }
    };
    let c_sup = supervised_cost(corrupted.y_tilde(), &batch.targets, &batch.labeled)?;
    let (per_layer, _) = denoising_cost(&clean, &decoder, lambdas)?;
    let cost = total_cost(c_sup, per_layer);
    Ok((
        cost,
        ForwardTrace {
            clean,
            corrupted,
            decoder,
        },
    ))
}

/// Adjoint of the activation `h = act(s)`.
fn activation_backward(kind: Activation, s: &Matrix, h: &Matrix, dh: &Matrix) -> Matrix {
    match kind {
        Activation::Linear => dh.clone(),
        Activation::Relu => {
            let data = s
                .as_slice()
                .iter()
                .zip(dh.as_slice())
                .map(|(&sv, &g)| if sv > 0.0 { g } else { 0.0 })
                .collect();
            Matrix::from_parts(s.rows(), s.cols(), data)
        }
        Activation::Softmax => {
            let mut ds = Matrix::zeros(h.rows(), h.cols());
            for r in 0..h.rows() {
                let (hr, gr) = (h.row(r), dh.row(r));
                let inner: f64 = hr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..h.cols() {
                    ds.set(r, j, hr[j] * (gr[j] - inner));
                }
            }
            ds
        }
    }
}

/// Backward through `h = act(γ ⊙ (z + β))`: accumulates `dγ`, `dβ` and
/// returns `dz`.
fn affine_activation_backward(
    kind: Activation,
    z: &Matrix,
    h: &Matrix,
    dh: &Matrix,
    gamma: Option<&[f64]>,
    beta: Option<&[f64]>,
    dgamma: Option<&mut Vec<f64>>,
    dbeta: Option<&mut Vec<f64>>,
) -> Matrix {
    let s = scale_shift(z, gamma, beta);
    let ds = activation_backward(kind, &s, h, dh);
    let cols = z.cols();
    if let Some(dg) = dgamma {
        for r in 0..z.rows() {
            for j in 0..cols {
                dg[j] += ds.get(r, j) * (z.get(r, j) + beta.map_or(0.0, |b| b[j]));
            }
        }
    }
    if let Some(db) = dbeta {
        for r in 0..z.rows() {
            for j in 0..cols {
                db[j] += ds.get(r, j) * gamma.map_or(1.0, |g| g[j]);
            }
        }
    }
    match gamma {
        None => ds,
        Some(g) => {
            let mut dz = ds;
            for row in dz.as_mut_slice().chunks_exact_mut(cols) {
                for (v, gj) in row.iter_mut().zip(g) {
                    *v *= gj;
                }
            }
            dz
        }
    }
}

/// Exact gradient of the total cost of `trace` with respect to every
/// parameter, returned in the shape of `params`.
pub fn backward(params: &LadderParams, trace: &ForwardTrace, batch: &Batch, lambdas: &[f64]) -> Result<LadderParams> {
    let arch = &params.encoder.arch;
    let depth = arch.depth();
    let b = batch.x.rows();
    if trace.clean.layers.len() != depth || trace.decoder.layers.len() != depth + 1 || trace.clean.x.rows() != b {
        return Err(Error::Length {
            op: "backward: trace does not match params",
            expected: depth,
            actual: trace.clean.layers.len(),
        });
    }
    if lambdas.len() != depth + 1 {
        return Err(Error::Length {
            op: "backward lambdas",
            expected: depth + 1,
            actual: lambdas.len(),
        });
    }
    let (clean, corrupted, dec_trace) = (&trace.clean, &trace.corrupted, &trace.decoder);
    let mut grad = params.zeros_like();

    // Denoising cost: gradients on clean z, on ẑ, and on the clean statistics.
    let mut dz_clean: Vec<Matrix> = (0..=depth).map(|l| Matrix::zeros(b, arch.width(l))).collect();
    let mut dmean_clean: Vec<Vec<f64>> = (0..=depth).map(|l| vec![0.0; arch.width(l)]).collect();
    let mut dstd_clean: Vec<Vec<f64>> = dmean_clean.clone();
    let mut dz_hat: Vec<Option<Matrix>> = vec![None; depth + 1];
    for l in 0..=depth {
        let Some(d) = dec_trace.layer(l) else { continue };
        let m = arch.width(l);
        let coef = 2.0 * lambdas[l] / (b * m) as f64;
        let z = clean.z(l);
        let mut dzh = Matrix::zeros(b, m);
        for r in 0..b {
            for j in 0..m {
                let g = coef * (z.get(r, j) - d.z_hat_bn.get(r, j));
                dz_clean[l].set(r, j, g);
                if l == 0 {
                    dzh.set(r, j, -g);
                } else {
                    let stats = &clean.layers[l - 1].stats;
                    let gh = -g / stats.std[j];
                    dzh.set(r, j, gh);
                    dmean_clean[l][j] -= gh;
                    dstd_clean[l][j] -= gh * d.z_hat_bn.get(r, j);
                }
            }
        }
        dz_hat[l] = Some(dzh);
    }

    // Decoder, bottom-up.
    let kind = params.decoder.kind;
    let n = kind.param_count();
    let mut dz_tilde: Vec<Matrix> = (0..=depth).map(|l| Matrix::zeros(b, arch.width(l))).collect();
    let mut dh_tilde_top = Matrix::zeros(b, arch.width(depth));
    for l in 0..=depth {
        let Some(d) = dec_trace.layer(l) else { continue };
        let dp_layer = params.decoder.layer(l).expect("trace layer implies params layer");
        let dzh = dz_hat[l].take().expect("set for every decoded layer");
        let z_tilde = corrupted.z(l);
        let m = arch.width(l);
        let mut du = Matrix::zeros(b, m);
        {
            let dg = &mut grad.decoder.layers[l].as_mut().expect("same structure").g;
            for r in 0..b {
                for i in 0..m {
                    let (dz, dui) = g_backward(
                        kind,
                        z_tilde.get(r, i),
                        d.u.get(r, i),
                        &dp_layer.g[i * n..(i + 1) * n],
                        dzh.get(r, i),
                        &mut dg[i * n..(i + 1) * n],
                    );
                    let prev = dz_tilde[l].get(r, i);
                    dz_tilde[l].set(r, i, prev + dz);
                    du.set(r, i, dui);
                }
            }
        }
        let dproj = match &d.u_stats {
            Some(s) => normalize_backward(&d.u, s, &du, None, None)?,
            None => du,
        };
        if l == depth {
            accumulate(&mut dh_tilde_top, &dproj)?;
        } else {
            let above = dec_trace.layer(l + 1).expect("decoded top-down");
            let v = dp_layer.v.as_ref().expect("validated decoder");
            let dv = matmul_tn(&above.z_hat, &dproj)?;
            accumulate(grad.decoder.layers[l].as_mut().expect("same structure").v.as_mut().expect("same structure"), &dv)?;
            let back = matmul_nt(&dproj, v)?;
            match dz_hat[l + 1].as_mut() {
                Some(acc) => accumulate(acc, &back)?,
                None => unreachable!("layer above is decoded"),
            }
        }
    }

    // Supervised cost on ỹ.
    check_labels(corrupted.y_tilde(), &batch.targets, &batch.labeled)?;
    let n_labeled = batch.labeled.iter().filter(|&&m| m).count();
    let mut dh = dh_tilde_top;
    if n_labeled > 0 {
        let y = corrupted.y_tilde();
        for (r, (&t, &is_labeled)) in batch.targets.iter().zip(&batch.labeled).enumerate() {
            let p = y.get(r, t);
            if is_labeled && p > LOG_FLOOR {
                dh.set(r, t, dh.get(r, t) - 1.0 / (n_labeled as f64 * p));
            }
        }
    }

    // Corrupted encoder, top-down.
    for l in (1..=depth).rev() {
        let spec = arch.layer(l);
        let p = &params.encoder.layers[l - 1];
        let cl = &corrupted.layers[l - 1];
        let gl = &mut grad.encoder.layers[l - 1];
        let mut dz = affine_activation_backward(
            spec.activation,
            &cl.z,
            &cl.h,
            &dh,
            p.gamma.as_deref(),
            p.beta.as_deref(),
            gl.gamma.as_mut(),
            gl.beta.as_mut(),
        );
        accumulate(&mut dz, &dz_tilde[l])?;
        let zn = normalize(&cl.pre, &cl.stats)?;
        let dpre = normalize_backward(&zn, &cl.stats, &dz, None, None)?;
        accumulate(&mut gl.w, &matmul_tn(corrupted.h(l - 1), &dpre)?)?;
        if l > 1 {
            dh = matmul_nt(&dpre, &p.w)?;
        }
    }

    // Clean encoder, top-down. The clean output feeds no cost term, so the
    // top layer only receives gradient through z⁽ᴸ⁾ and its statistics.
    let mut dh_clean: Option<Matrix> = None;
    for l in (1..=depth).rev() {
        let spec = arch.layer(l);
        let p = &params.encoder.layers[l - 1];
        let cl = &clean.layers[l - 1];
        let gl = &mut grad.encoder.layers[l - 1];
        let mut dz = match &dh_clean {
            Some(dh) => affine_activation_backward(
                spec.activation,
                &cl.z,
                &cl.h,
                dh,
                p.gamma.as_deref(),
                p.beta.as_deref(),
                gl.gamma.as_mut(),
                gl.beta.as_mut(),
            ),
            None => Matrix::zeros(b, spec.width),
        };
        accumulate(&mut dz, &dz_clean[l])?;
        let dpre = normalize_backward(&cl.z, &cl.stats, &dz, Some(&dmean_clean[l]), Some(&dstd_clean[l]))?;
        accumulate(&mut gl.w, &matmul_tn(clean.h(l - 1), &dpre)?)?;
        if l > 1 {
            dh_clean = Some(matmul_nt(&dpre, &p.w)?);
        }
    }

    Ok(grad)
}
