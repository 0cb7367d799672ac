//! Denoising decoder: top-down projections, unit-wise denoising functions
//! and reconstruction rescaling with the clean-pass statistics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::batchnorm::{batch_statistics, normalize, BatchStats};
use crate::encoder::{Architecture, CleanTrace, CorruptedTrace};
use crate::error::{invalid, Error, Result};
use crate::numerics::{gaussian_sample, matmul, sigmoid, Matrix, Rng};

/// Parametrization of the unit-wise denoising function `ẑ = g(z̃, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GKind {
    /// `(z̃ − μ(u))·υ(u) + μ(u)` with sigmoid-plus-affine `μ` and `υ`.
    Proposed,
    /// `a·ξ + b·sigmoid(c·ξ)`, `ξ = [1, z̃, u, z̃u]`.
    MiniMlp,
    /// As `MiniMlp` without the `z̃u` term.
    NoAugmented,
    /// `a·ξ`, `ξ = [1, z̃, u, z̃u]`.
    LinearG,
    /// `a₁u + a₂·sigmoid(a₃u + a₄) + a₅z̃ + a₆·sigmoid(a₇z̃ + a₈) + a₉`.
    AdditiveU,
}

impl GKind {
    pub const ALL: [GKind; 5] = [GKind::Proposed, GKind::MiniMlp, GKind::NoAugmented, GKind::LinearG, GKind::AdditiveU];

    pub fn param_count(self) -> usize {
        match self {
            GKind::Proposed => 10,
            GKind::MiniMlp => 9,
            GKind::NoAugmented => 7,
            GKind::LinearG => 4,
            GKind::AdditiveU => 9,
        }
    }

    /// Parameters for which `g(z̃, u) = z̃`.
    pub fn identity_params(self) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count()];
        match self {
            GKind::Proposed => {
                p[1] = 1.0;
                p[6] = 1.0;
                p[9] = 1.0;
            }
            GKind::MiniMlp | GKind::NoAugmented | GKind::LinearG => p[1] = 1.0,
            GKind::AdditiveU => p[4] = 1.0,
        }
        p
    }

    pub fn name(self) -> &'static str {
        match self {
            GKind::Proposed => "proposed",
            GKind::MiniMlp => "mini_mlp",
            GKind::NoAugmented => "no_augmented",
            GKind::LinearG => "linear",
            GKind::AdditiveU => "additive_u",
        }
    }
}

impl FromStr for GKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" | "g" => Ok(GKind::Proposed),
            "mini_mlp" | "g1" => Ok(GKind::MiniMlp),
            "no_augmented" | "g2" => Ok(GKind::NoAugmented),
            "linear" | "g3" => Ok(GKind::LinearG),
            "additive_u" | "g4" => Ok(GKind::AdditiveU),
            other => Err(invalid(format!("unknown denoising function kind `{other}`"))),
        }
    }
}

/// Typed view of one unit's denoiser parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GUnitParams {
    Proposed([f64; 10]),
    MiniMlp { a: [f64; 4], b: f64, c: [f64; 4] },
    NoAugmented { a: [f64; 3], b: f64, c: [f64; 3] },
    LinearG([f64; 4]),
    AdditiveU([f64; 9]),
}

impl GUnitParams {
    pub fn from_slice(kind: GKind, p: &[f64]) -> Result<Self> {
        if p.len() != kind.param_count() {
            return Err(Error::Length {
                op: "GUnitParams::from_slice",
                expected: kind.param_count(),
                actual: p.len(),
            });
        }
        let arr = |r: core::ops::Range<usize>| -> Vec<f64> { p[r].to_vec() };
        Ok(match kind {
            GKind::Proposed => GUnitParams::Proposed(p.try_into().expect("checked length")),
            GKind::MiniMlp => GUnitParams::MiniMlp {
                a: arr(0..4).try_into().expect("len 4"),
                b: p[4],
                c: arr(5..9).try_into().expect("len 4"),
            },
            GKind::NoAugmented => GUnitParams::NoAugmented {
                a: arr(0..3).try_into().expect("len 3"),
                b: p[3],
                c: arr(4..7).try_into().expect("len 3"),
            },
            GKind::LinearG => GUnitParams::LinearG(p.try_into().expect("checked length")),
            GKind::AdditiveU => GUnitParams::AdditiveU(p.try_into().expect("checked length")),
        })
    }

    pub fn kind(&self) -> GKind {
        match self {
            GUnitParams::Proposed(_) => GKind::Proposed,
            GUnitParams::MiniMlp { .. } => GKind::MiniMlp,
            GUnitParams::NoAugmented { .. } => GKind::NoAugmented,
            GUnitParams::LinearG(_) => GKind::LinearG,
            GUnitParams::AdditiveU(_) => GKind::AdditiveU,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            GUnitParams::Proposed(a) => a.to_vec(),
            GUnitParams::MiniMlp { a, b, c } => a.iter().chain([b]).chain(c).copied().collect(),
            GUnitParams::NoAugmented { a, b, c } => a.iter().chain([b]).chain(c).copied().collect(),
            GUnitParams::LinearG(a) => a.to_vec(),
            GUnitParams::AdditiveU(a) => a.to_vec(),
        }
    }

    pub fn apply(&self, z: f64, u: f64) -> f64 {
        g_apply(self.kind(), z, u, &self.to_vec())
    }
}

/// `g(z̃, u)` for one unit with flat parameters `p` (layout of [`GUnitParams::to_vec`]).
pub fn g_apply(kind: GKind, z: f64, u: f64, p: &[f64]) -> f64 {
    match kind {
        GKind::Proposed => {
            let mu = p[0] * sigmoid(p[1] * u + p[2]) + p[3] * u + p[4];
            let ups = p[5] * sigmoid(p[6] * u + p[7]) + p[8] * u + p[9];
            (z - mu) * ups + mu
        }
        GKind::MiniMlp => {
            let xi = [1.0, z, u, z * u];
            dot(&p[0..4], &xi) + p[4] * sigmoid(dot(&p[5..9], &xi))
        }
        GKind::NoAugmented => {
            let xi = [1.0, z, u];
            dot(&p[0..3], &xi) + p[3] * sigmoid(dot(&p[4..7], &xi))
        }
        GKind::LinearG => dot(p, &[1.0, z, u, z * u]),
        GKind::AdditiveU => p[0] * u + p[1] * sigmoid(p[2] * u + p[3]) + p[4] * z + p[5] * sigmoid(p[6] * z + p[7]) + p[8],
    }
}

/// Adjoint of [`g_apply`]: accumulates `upstream · ∂g/∂p` into `dp` and
/// returns `(upstream · ∂g/∂z̃, upstream · ∂g/∂u)`.
pub fn g_backward(kind: GKind, z: f64, u: f64, p: &[f64], upstream: f64, dp: &mut [f64]) -> (f64, f64) {
    match kind {
        GKind::Proposed => {
            let s1 = sigmoid(p[1] * u + p[2]);
            let s2 = sigmoid(p[6] * u + p[7]);
            let mu = p[0] * s1 + p[3] * u + p[4];
            let ups = p[5] * s2 + p[8] * u + p[9];
            let d_mu = upstream * (1.0 - ups);
            let d_ups = upstream * (z - mu);
            let ds1 = p[0] * s1 * (1.0 - s1);
            let ds2 = p[5] * s2 * (1.0 - s2);
            dp[0] += d_mu * s1;
            dp[1] += d_mu * ds1 * u;
            dp[2] += d_mu * ds1;
            dp[3] += d_mu * u;
            dp[4] += d_mu;
            dp[5] += d_ups * s2;
            dp[6] += d_ups * ds2 * u;
            dp[7] += d_ups * ds2;
            dp[8] += d_ups * u;
            dp[9] += d_ups;
            let du = d_mu * (ds1 * p[1] + p[3]) + d_ups * (ds2 * p[6] + p[8]);
            (upstream * ups, du)
        }
        GKind::MiniMlp => {
            let xi = [1.0, z, u, z * u];
            let s = sigmoid(dot(&p[5..9], &xi));
            let ds = p[4] * s * (1.0 - s);
            let mut dxi = [0.0; 4];
            for k in 0..4 {
                dp[k] += upstream * xi[k];
                dp[5 + k] += upstream * ds * xi[k];
                dxi[k] = upstream * (p[k] + ds * p[5 + k]);
            }
            dp[4] += upstream * s;
            (dxi[1] + dxi[3] * u, dxi[2] + dxi[3] * z)
        }
        GKind::NoAugmented => {
            let xi = [1.0, z, u];
            let s = sigmoid(dot(&p[4..7], &xi));
            let ds = p[3] * s * (1.0 - s);
            let mut dxi = [0.0; 3];
            for k in 0..3 {
                dp[k] += upstream * xi[k];
                dp[4 + k] += upstream * ds * xi[k];
                dxi[k] = upstream * (p[k] + ds * p[4 + k]);
            }
            dp[3] += upstream * s;
            (dxi[1], dxi[2])
        }
        GKind::LinearG => {
            let xi = [1.0, z, u, z * u];
            for k in 0..4 {
                dp[k] += upstream * xi[k];
            }
            (upstream * (p[1] + p[3] * u), upstream * (p[2] + p[3] * z))
        }
        GKind::AdditiveU => {
            let su = sigmoid(p[2] * u + p[3]);
            let sz = sigmoid(p[6] * z + p[7]);
            let dsu = p[1] * su * (1.0 - su);
            let dsz = p[5] * sz * (1.0 - sz);
            dp[0] += upstream * u;
            dp[1] += upstream * su;
            dp[2] += upstream * dsu * u;
            dp[3] += upstream * dsu;
            dp[4] += upstream * z;
            dp[5] += upstream * sz;
            dp[6] += upstream * dsz * z;
            dp[7] += upstream * dsz;
            dp[8] += upstream;
            (upstream * (p[4] + dsz * p[6]), upstream * (p[0] + dsu * p[2]))
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Source of the top-layer decoder input `u⁽ᴸ⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopInput {
    /// Batch-normalized `h̃⁽ᴸ⁾` with its own statistics.
    BatchNorm,
    /// `h̃⁽ᴸ⁾ = ỹ` unchanged.
    Raw,
}

/// Decoder parameters for one layer `l`. `v` is `V⁽ˡ⁺¹⁾`, shape
/// `m_{l+1} × m_l`, absent on the top layer. `g` holds `m_l` units of
/// `kind.param_count()` values each, unit-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub v: Option<Matrix>,
    pub g: Vec<f64>,
}

impl DecoderLayer {
    pub fn unit(&self, kind: GKind, i: usize) -> &[f64] {
        let n = kind.param_count();
        &self.g[i * n..(i + 1) * n]
    }

    pub fn unit_params(&self, kind: GKind, i: usize) -> GUnitParams {
        GUnitParams::from_slice(kind, self.unit(kind, i)).expect("layer stores whole units")
    }
}

/// Decoder for layers `l = L..=lowest`. Present layers are contiguous from
/// the top; index `l` of `layers` holds layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub kind: GKind,
    pub top_input: TopInput,
    pub layers: Vec<Option<DecoderLayer>>,
}

impl DecoderParams {
    /// Full decoder: `V` like the encoder weights (N(0, 1/fan-in)), `g` at identity.
    pub fn init(arch: &Architecture, kind: GKind, top_input: TopInput, rng: &mut Rng) -> Result<Self> {
        let depth = arch.depth();
        let mut layers: Vec<Option<DecoderLayer>> = vec![None; depth + 1];
        for l in (0..=depth).rev() {
            let m = arch.width(l);
            let v = if l == depth {
                None
            } else {
                let fan_in = arch.width(l + 1);
                Some(gaussian_sample(rng, fan_in, m, 1.0 / libm::sqrt(fan_in as f64))?)
            };
            let g = kind.identity_params().repeat(m);
            layers[l] = Some(DecoderLayer { v, g });
        }
        Ok(Self { kind, top_input, layers })
    }

    /// Only the top layer's denoiser: the Γ-model decoder.
    pub fn gamma_subset(&self) -> DecoderParams {
        let top = self.layers.len() - 1;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| if l == top { layer.clone() } else { None })
            .collect();
        DecoderParams {
            kind: self.kind,
            top_input: self.top_input,
            layers,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Lowest decoded layer.
    pub fn lowest(&self) -> usize {
        self.layers.iter().position(Option::is_some).unwrap_or(self.layers.len())
    }

    pub fn is_gamma(&self) -> bool {
        self.lowest() == self.depth()
    }

    pub fn layer(&self, l: usize) -> Option<&DecoderLayer> {
        self.layers.get(l).and_then(Option::as_ref)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|d| d.g.len() + d.v.as_ref().map_or(0, |v| v.rows() * v.cols()))
            .sum()
    }

    /// Checks shapes against `arch` and the contiguity invariant.
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let depth = arch.depth();
        if self.layers.len() != depth + 1 {
            return Err(Error::Length {
                op: "DecoderParams layers",
                expected: depth + 1,
                actual: self.layers.len(),
            });
        }
        let lowest = self.lowest();
        if lowest > depth || self.layers[lowest..].iter().any(Option::is_none) {
            return Err(invalid("decoder layers must be contiguous and include the top layer"));
        }
        for l in lowest..=depth {
            let d = self.layers[l].as_ref().expect("checked contiguity");
            let m = arch.width(l);
            if d.g.len() != m * self.kind.param_count() {
                return Err(invalid(format!("decoder layer {l}: expected {} denoiser parameters, got {}", m * self.kind.param_count(), d.g.len())));
            }
            match (&d.v, l == depth) {
                (None, true) => {}
                (Some(v), false) if v.rows() == arch.width(l + 1) && v.cols() == m => {}
                _ => return Err(invalid(format!("decoder layer {l}: projection V has the wrong shape or presence"))),
            }
        }
        Ok(())
    }
}

/// Decoder record for one layer. `proj` is the pre-normalization projection
/// `ẑ⁽ˡ⁺¹⁾V⁽ˡ⁺¹⁾` (or `h̃⁽ᴸ⁾` on top); `u_stats` its batch statistics when
/// normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerTrace {
    pub proj: Matrix,
    pub u_stats: Option<BatchStats>,
    pub u: Matrix,
    pub z_hat: Matrix,
    pub z_hat_bn: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderTrace {
    pub layers: Vec<Option<DecoderLayerTrace>>,
}

impl DecoderTrace {
    pub fn layer(&self, l: usize) -> Option<&DecoderLayerTrace> {
        self.layers.get(l).and_then(Option::as_ref)
    }
}

/// `(ẑ − μ)/σ` with the clean-pass statistics.
pub fn rescale_with_clean_stats(z_hat: &Matrix, stats: &BatchStats) -> Result<Matrix> {
    normalize(z_hat, stats)
}

pub fn decoder_pass(dec: &DecoderParams, corrupted: &CorruptedTrace, clean: &CleanTrace) -> Result<DecoderTrace> {
    let depth = corrupted.layers.len();
    if clean.layers.len() != depth || dec.layers.len() != depth + 1 {
        return Err(Error::Length {
            op: "decoder_pass depth",
            expected: depth + 1,
            actual: dec.layers.len(),
        });
    }
    if clean.x.rows() != corrupted.z0.rows() {
        return Err(invalid("decoder_pass: clean and corrupted traces come from different batches"));
    }
    let kind = dec.kind;
    let n = kind.param_count();
    let mut layers: Vec<Option<DecoderLayerTrace>> = vec![None; depth + 1];
    for l in (dec.lowest()..=depth).rev() {
        let d = dec.layers[l].as_ref().ok_or_else(|| invalid("decoder layers must be contiguous"))?;
        let z_tilde = corrupted.z(l);
        let proj = if l == depth {
            corrupted.h(l).clone()
        } else {
            let above = layers[l + 1].as_ref().expect("decoded top-down");
            let v = d.v.as_ref().ok_or_else(|| invalid(format!("decoder layer {l} lacks V")))?;
            matmul(&above.z_hat, v)?
        };
        let (u, u_stats) = if l == depth && dec.top_input == TopInput::Raw {
            (proj.clone(), None)
        } else {
            let s = batch_statistics(&proj)?;
            (normalize(&proj, &s)?, Some(s))
        };
        if u.shape() != z_tilde.shape() || d.g.len() != z_tilde.cols() * n {
            return Err(Error::Shape {
                op: "decoder_pass",
                lhs: u.shape(),
                rhs: z_tilde.shape(),
            });
        }
        let cols = z_tilde.cols();
        let mut z_hat = Matrix::zeros(z_tilde.rows(), cols);
        for r in 0..z_tilde.rows() {
            for i in 0..cols {
                z_hat.set(r, i, g_apply(kind, z_tilde.get(r, i), u.get(r, i), &d.g[i * n..(i + 1) * n]));
            }
        }
        if !z_hat.is_finite() {
            return Err(Error::NonFinite("denoising function"));
        }
        let z_hat_bn = if l == 0 {
            z_hat.clone()
        } else {
            rescale_with_clean_stats(&z_hat, &clean.layers[l - 1].stats)?
        };
        layers[l] = Some(DecoderLayerTrace {
            proj,
            u_stats,
            u,
            z_hat,
            z_hat_bn,
        });
    }
    Ok(DecoderTrace { layers })
}
