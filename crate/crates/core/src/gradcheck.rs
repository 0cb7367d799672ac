//! Analytic gradient vs. central differences on a small random ladder with
//! frozen noise.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Batch;
use crate::decoder::{GKind, TopInput};
use crate::encoder::Architecture;
use crate::error::{invalid, Result};
use crate::numerics::{finite_diff_gradient, gaussian_sample, Rng};
use crate::training::{backward, forward_cost, LadderParams, NoiseSource, ParamGroup};

pub const MAX_GRADCHECK_PARAMS: usize = 5000;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub widths: Vec<usize>,
    pub batch: usize,
    pub lambdas: Vec<f64>,
    pub noise_std: f64,
    pub g_kind: GKind,
    pub u_top: TopInput,
    pub seed: u64,
    pub step: f64,
    /// Test hook: perturbs the analytic `W1` gradient so the check must fail.
    pub corrupt_adjoint: bool,
}

impl GradCheckConfig {
    /// Defaults: batch 6, every `λ = 1`, noise 0.3, proposed denoiser.
    pub fn new(widths: Vec<usize>, seed: u64) -> Self {
        let n = widths.len();
        Self {
            widths,
            batch: 6,
            lambdas: vec![1.0; n],
            noise_std: 0.3,
            g_kind: GKind::Proposed,
            u_top: TopInput::BatchNorm,
            seed,
            step: GRADCHECK_STEP,
            corrupt_adjoint: false,
        }
    }

    /// Denoising cost on the top layer only, full decoder kept.
    pub fn gamma(mut self) -> Self {
        let n = self.lambdas.len();
        for l in &mut self.lambdas[..n - 1] {
            *l = 0.0;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub count: usize,
    pub max_rel_err: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// `|a − b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Random network, batch, labels and noise derived from `seed`. Denoiser
/// parameters are moved away from the identity so that every term of `g`
/// is active.
pub fn random_instance(cfg: &GradCheckConfig) -> Result<(LadderParams, Batch, Vec<crate::numerics::Matrix>)> {
    let arch = Architecture::mlp(&cfg.widths)?;
    let root = Rng::new(cfg.seed);
    let mut params = LadderParams::init(&arch, cfg.g_kind, cfg.u_top, false, &root)?;
    let mut rng = root.substream("gradcheck");
    for layer in &mut params.encoder.layers {
        for g in layer.gamma.iter_mut().flatten() {
            *g = 1.0 + 0.2 * rng.normal();
        }
        for b in layer.beta.iter_mut().flatten() {
            *b = 0.2 * rng.normal();
        }
    }
    for d in params.decoder.layers.iter_mut().flatten() {
        for v in &mut d.g {
            *v += 0.3 * rng.normal();
        }
    }
    let b = cfg.batch;
    let classes = arch.width(arch.depth());
    let x = gaussian_sample(&mut rng, b, arch.width(0), 1.0)?;
    let targets = (0..b).map(|_| rng.below(classes)).collect();
    let labeled = (0..b).map(|r| r < b.div_ceil(2)).collect();
    let noise = arch
        .widths()
        .iter()
        .map(|&w| gaussian_sample(&mut rng, b, w, cfg.noise_std))
        .collect::<Result<Vec<_>>>()?;
    Ok((params, Batch { x, targets, labeled }, noise))
}

pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (params, batch, noise) = random_instance(cfg)?;
    let count = params.len();
    if count > MAX_GRADCHECK_PARAMS {
        return Err(invalid(alloc::format!("{count} parameters exceed the gradient-check limit of {MAX_GRADCHECK_PARAMS}")));
    }
    let (_, trace) = forward_cost(&params, &batch, &cfg.lambdas, &[], NoiseSource::Frozen(&noise))?;
    let mut analytic = backward(&params, &trace, &batch, &cfg.lambdas)?.to_flat();
    let layout = params.layout();
    if cfg.corrupt_adjoint {
        let w1 = &layout[0];
        for v in &mut analytic[w1.offset..w1.offset + w1.len] {
            *v *= 1.01;
        }
    }
    let theta = params.to_flat();
    let mut probe = params.clone();
    let numeric = finite_diff_gradient(
        |t| {
            if probe.set_flat(t).is_err() {
                return f64::NAN;
            }
            forward_cost(&probe, &batch, &cfg.lambdas, &[], NoiseSource::Frozen(&noise)).map_or(f64::NAN, |(c, _)| c.total)
        },
        &theta,
        cfg.step,
    )?;

    let mut groups: Vec<GroupReport> = Vec::new();
    for block in &layout {
        let range = block.offset..block.offset + block.len;
        let rel = analytic[range.clone()]
            .iter()
            .zip(&numeric[range.clone()])
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        let abs = analytic[range].iter().map(|v| v.abs()).fold(0.0, f64::max);
        match groups.iter_mut().find(|g| g.group == block.group) {
            Some(g) => {
                g.count += block.len;
                g.max_rel_err = g.max_rel_err.max(rel);
                g.max_abs_grad = g.max_abs_grad.max(abs);
            }
            None => groups.push(GroupReport {
                group: block.group,
                count: block.len,
                max_rel_err: rel,
                max_abs_grad: abs,
            }),
        }
    }
    groups.sort_by_key(|g| g.group);
    let max_rel_err = groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        param_count: count,
        groups,
        max_rel_err,
        passed: max_rel_err < GRADCHECK_TOLERANCE,
    })
}
