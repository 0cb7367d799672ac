//! Per-unit batch statistics, normalization and running statistics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;

/// Stabilizer added to the biased batch variance before the square root.
pub const EPSILON: f64 = 1e-6;

/// Per-column mean and standard deviation of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl BatchStats {
    /// Mean 0, std 1: normalizing with these is the identity.
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
            epsilon: 0.0,
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }
}

/// Exponential moving average of batch statistics, used at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub decay: f64,
    pub update_count: u64,
}

impl RunningStats {
    pub fn new(width: usize, decay: f64) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
            decay,
            update_count: 0,
        }
    }

    pub fn is_populated(&self) -> bool {
        self.update_count > 0
    }

    /// First call copies `batch`; afterwards `decay·old + (1 − decay)·batch`.
    pub fn update(&mut self, batch: &BatchStats) -> Result<()> {
        if batch.width() != self.mean.len() {
            return Err(Error::Length {
                op: "ema_update",
                expected: self.mean.len(),
                actual: batch.width(),
            });
        }
        if self.update_count == 0 {
            self.mean.copy_from_slice(&batch.mean);
            self.std.copy_from_slice(&batch.std);
        } else {
            let d = self.decay;
            for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
                *r = d * *r + (1.0 - d) * b;
            }
            for (r, b) in self.std.iter_mut().zip(&batch.std) {
                *r = d * *r + (1.0 - d) * b;
            }
        }
        self.update_count += 1;
        Ok(())
    }

    pub fn as_batch_stats(&self) -> BatchStats {
        BatchStats {
            mean: self.mean.clone(),
            std: self.std.clone(),
            epsilon: EPSILON,
        }
    }
}

/// Functional form of [`RunningStats::update`].
pub fn ema_update(running: &RunningStats, batch: &BatchStats) -> Result<RunningStats> {
    let mut next = running.clone();
    next.update(batch)?;
    Ok(next)
}

/// Column means and `sqrt(biased variance + EPSILON)`.
pub fn batch_statistics(z_pre: &Matrix) -> Result<BatchStats> {
    let b = z_pre.rows();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let n = b as f64;
    let mean: Vec<f64> = z_pre.column_sums().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; z_pre.cols()];
    for r in 0..b {
        for ((v, x), m) in var.iter_mut().zip(z_pre.row(r)).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std = var.into_iter().map(|v| libm::sqrt(v / n + EPSILON)).collect();
    Ok(BatchStats {
        mean,
        std,
        epsilon: EPSILON,
    })
}

/// `(z − mean_j) / std_j` per entry.
pub fn normalize(z_pre: &Matrix, stats: &BatchStats) -> Result<Matrix> {
    if stats.width() != z_pre.cols() {
        return Err(Error::Length {
            op: "normalize",
            expected: z_pre.cols(),
            actual: stats.width(),
        });
    }
    if stats.std.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("normalize: std entries must be positive"));
    }
    let mut out = z_pre.clone();
    let cols = z_pre.cols();
    for row in out.as_mut_slice().chunks_exact_mut(cols) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("normalize"));
    }
    Ok(out)
}

/// Adjoint of `z = normalize(x, batch_statistics(x))` with respect to `x`,
/// differentiating through the batch mean and std.
///
/// `z` is the normalized output, `dz` the upstream gradient on it.
/// `dmean`/`dstd` carry extra upstream gradients on the statistics themselves
/// (the clean-pass statistics also rescale the decoder reconstructions).
pub fn normalize_backward(
    z: &Matrix,
    stats: &BatchStats,
    dz: &Matrix,
    dmean: Option<&[f64]>,
    dstd: Option<&[f64]>,
) -> Result<Matrix> {
    if z.shape() != dz.shape() {
        return Err(Error::Shape {
            op: "normalize_backward",
            lhs: z.shape(),
            rhs: dz.shape(),
        });
    }
    let (b, m) = (z.rows(), z.cols());
    let n = b as f64;
    let mut dmean_tot: Vec<f64> = dmean.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
    let mut dstd_tot: Vec<f64> = dstd.map_or_else(|| vec![0.0; m], <[f64]>::to_vec);
    if dmean_tot.len() != m || dstd_tot.len() != m {
        return Err(invalid("normalize_backward: statistic gradient width"));
    }
    for r in 0..b {
        for j in 0..m {
            let g = dz.get(r, j) / stats.std[j];
            dmean_tot[j] -= g;
            dstd_tot[j] -= g * z.get(r, j);
        }
    }
    let mut dx = Matrix::zeros(b, m);
    for r in 0..b {
        for j in 0..m {
            let v = dz.get(r, j) / stats.std[j] + dmean_tot[j] / n + dstd_tot[j] * z.get(r, j) / n;
            dx.set(r, j, v);
        }
    }
    if !dx.is_finite() {
        return Err(Error::NonFinite("normalize_backward"));
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, gaussian_sample, Rng};

    fn col(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn statistics_hand_cases() {
        let s = batch_statistics(&col(&[1.0, 3.0])).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.std, vec![libm::sqrt(1.0 + EPSILON)]);

        let s = batch_statistics(&col(&[4.0, 4.0, 4.0])).unwrap();
        assert_eq!(s.mean, vec![4.0]);
        assert_eq!(s.std, vec![libm::sqrt(EPSILON)]);

        let s = batch_statistics(&col(&[1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!(s.mean, vec![0.0]);
        assert_eq!(s.std, vec![libm::sqrt(1.0 + EPSILON)]);
    }

    #[test]
    fn single_row_batch_is_rejected() {
        assert_eq!(batch_statistics(&col(&[1.0])), Err(Error::BatchTooSmall(1)));
    }

    #[test]
    fn normalize_hand_cases() {
        let x = col(&[1.0, 3.0]);
        let z = normalize(&x, &batch_statistics(&x).unwrap()).unwrap();
        let e = 1.0 / libm::sqrt(1.0 + EPSILON);
        assert_eq!(z.as_slice(), &[-e, e]);

        let c = col(&[2.5, 2.5, 2.5]);
        assert_eq!(normalize(&c, &batch_statistics(&c).unwrap()).unwrap(), Matrix::zeros(3, 1));

        let any = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 7.0]]).unwrap();
        assert_eq!(normalize(&any, &BatchStats::identity(2)).unwrap(), any);
        assert!(normalize(&any, &BatchStats::identity(3)).is_err());
    }

    #[test]
    fn ema_rules() {
        let b = BatchStats {
            mean: vec![2.0],
            std: vec![3.0],
            epsilon: EPSILON,
        };
        let r0 = RunningStats::new(1, 0.5);
        let r1 = ema_update(&r0, &b).unwrap();
        assert_eq!((r1.mean.clone(), r1.std.clone(), r1.update_count), (vec![2.0], vec![3.0], 1));

        let mut fixed = RunningStats::new(1, 1.0);
        fixed.update(&b).unwrap();
        let other = BatchStats {
            mean: vec![-5.0],
            std: vec![9.0],
            epsilon: EPSILON,
        };
        fixed.update(&other).unwrap();
        assert_eq!(fixed.mean, vec![2.0]);

        let mut half = RunningStats {
            mean: vec![0.0],
            std: vec![1.0],
            decay: 0.5,
            update_count: 1,
        };
        half.update(&b).unwrap();
        assert_eq!(half.mean, vec![1.0]);
        assert_eq!(half.update_count, 2);

        assert!(half.update(&BatchStats::identity(2)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(11);
        let x = gaussian_sample(&mut rng, 5, 3, 1.5).unwrap();
        let w = gaussian_sample(&mut rng, 5, 3, 1.0).unwrap();
        let wm = [0.3, -0.7, 1.1];
        let ws = [-0.4, 0.9, 0.2];
        // f(x) = Σ w ⊙ z + wm·mean + ws·std
        let f = |flat: &[f64]| {
            let xm = Matrix::new(5, 3, flat.to_vec()).unwrap();
            let s = batch_statistics(&xm).unwrap();
            let z = normalize(&xm, &s).unwrap();
            let a: f64 = z.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
            let b: f64 = s.mean.iter().zip(&wm).map(|(a, b)| a * b).sum();
            let c: f64 = s.std.iter().zip(&ws).map(|(a, b)| a * b).sum();
            a + b + c
        };
        let num = finite_diff_gradient(f, x.as_slice(), 1e-5).unwrap();
        let s = batch_statistics(&x).unwrap();
        let z = normalize(&x, &s).unwrap();
        let ana = normalize_backward(&z, &s, &w, Some(&wm), Some(&ws)).unwrap();
        for (a, n) in ana.as_slice().iter().zip(&num) {
            assert!((a - n).abs() < 1e-7, "{a} vs {n}");
        }
    }
}
