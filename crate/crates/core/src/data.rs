//! Datasets, IDX decoding, balanced semi-supervised splits, synthetic
//! Gaussian mixtures and minibatch composition.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Option<Vec<usize>>, num_classes: usize) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(Error::Length {
                    op: "Dataset labels",
                    expected: inputs.rows(),
                    actual: l.len(),
                });
            }
            if let Some(bad) = l.iter().find(|&&c| c >= num_classes) {
                return Err(invalid(format!("label {bad} out of range for {num_classes} classes")));
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or_else(|| invalid("dataset has no labels"))
    }
}

/// Raw IDX tensor: dimension sizes and unsigned-byte payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_UBYTE: u8 = 0x08;

/// Decodes an IDX file: two zero bytes, type byte `0x08`, dimension count,
/// big-endian `u32` sizes, then the payload.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            needed: 4,
            available: bytes.len(),
        });
    }
    let lead = u16::from_be_bytes([bytes[0], bytes[1]]);
    if lead != 0 {
        return Err(Error::IdxMagic(lead));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::IdxType(bytes[2]));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            needed: header,
            available: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| invalid("idx: dimension product overflows"))?;
    let needed = header + payload;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(invalid(format!("idx: {} trailing bytes after payload", bytes.len() - needed)));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(array: &IdxArray) -> Result<Vec<u8>> {
    let expected: usize = array.dims.iter().product();
    if array.data.len() != expected || array.dims.len() > 255 {
        return Err(invalid("idx: payload does not match dimensions"));
    }
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&[0, 0, IDX_UBYTE, array.dims.len() as u8]);
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| invalid("idx: dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

impl IdxArray {
    /// One row per leading index, remaining dimensions flattened, bytes
    /// scaled to `[0, 1]`.
    pub fn to_matrix(&self) -> Result<Matrix> {
        let rows = *self.dims.first().ok_or_else(|| invalid("idx: no dimensions"))?;
        let cols: usize = self.dims[1..].iter().product();
        Matrix::new(rows, cols, self.data.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn to_labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(invalid("idx: label file must be one-dimensional"));
        }
        Ok(self.data.iter().map(|&b| b as usize).collect())
    }
}

/// Disjoint index sets into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSplit {
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub validation_idx: Vec<usize>,
}

impl LabeledSplit {
    /// Rows used by the denoising cost: unlabeled and labeled alike.
    pub fn training_pool(&self) -> Vec<usize> {
        self.unlabeled_idx.iter().chain(&self.labeled_idx).copied().collect()
    }
}

/// `n/k` indices per class drawn without replacement, in shuffled order.
pub fn balanced_subset(labels: &[usize], n: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 || n % k != 0 {
        return Err(invalid(format!("balanced subset of {n} is not divisible into {k} classes")));
    }
    let per_class = n / k;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        if c >= k {
            return Err(invalid(format!("label {c} out of range for {k} classes")));
        }
        by_class[c].push(i);
    }
    let mut out = Vec::with_capacity(n);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(invalid(format!("class {c} has {} members, {per_class} needed", members.len())));
        }
        rng.shuffle(members);
        out.extend_from_slice(&members[..per_class]);
    }
    rng.shuffle(&mut out);
    Ok(out)
}

/// Validation set first, then a class-balanced labeled subset of the rest;
/// everything else is unlabeled.
pub fn make_split(dataset: &Dataset, val_size: usize, n_labels: usize, rng: &mut Rng) -> Result<LabeledSplit> {
    let labels = dataset.labels()?;
    let n = dataset.len();
    if val_size + n_labels > n {
        return Err(invalid(format!("validation {val_size} + labeled {n_labels} exceeds {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let validation_idx = order[..val_size].to_vec();
    let rest = &order[val_size..];
    let rest_labels: Vec<usize> = rest.iter().map(|&i| labels[i]).collect();
    let picked = balanced_subset(&rest_labels, n_labels, dataset.num_classes, rng)?;
    let mut is_labeled = vec![false; rest.len()];
    for &p in &picked {
        is_labeled[p] = true;
    }
    let labeled_idx = picked.iter().map(|&p| rest[p]).collect();
    let unlabeled_idx = rest.iter().zip(&is_labeled).filter(|(_, &l)| !l).map(|(&i, _)| i).collect();
    Ok(LabeledSplit {
        labeled_idx,
        unlabeled_idx,
        validation_idx,
    })
}

/// `per_class` isotropic Gaussian samples around each of `class_means`
/// (each of length `d`), class-major order.
pub fn synth_mixture(k: usize, per_class: usize, d: usize, class_means: &[Vec<f64>], within_std: f64, rng: &mut Rng) -> Result<Dataset> {
    if class_means.len() != k || class_means.iter().any(|m| m.len() != d) || per_class == 0 || d == 0 {
        return Err(invalid("synth_mixture: need k means of dimension d and per_class >= 1"));
    }
    if !(within_std >= 0.0) {
        return Err(invalid("synth_mixture: within_std must be nonnegative"));
    }
    let mut data = Vec::with_capacity(k * per_class * d);
    let mut labels = Vec::with_capacity(k * per_class);
    for (c, mean) in class_means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                data.push(m + if within_std > 0.0 { within_std * rng.normal() } else { 0.0 });
            }
            labels.push(c);
        }
    }
    Dataset::new(Matrix::new(k * per_class, d, data)?, Some(labels), k)
}

/// One minibatch: inputs, targets and which rows carry a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub targets: Vec<usize>,
    pub labeled: Vec<bool>,
}

/// Row indices of one batch: the labeled sub-batch comes first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl BatchIndices {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn materialize(&self, dataset: &Dataset) -> Result<Batch> {
        let rows: Vec<usize> = self.labeled.iter().chain(&self.unlabeled).copied().collect();
        let x = dataset.inputs.select_rows(&rows)?;
        let mut targets = vec![0; rows.len()];
        if !self.labeled.is_empty() {
            let labels = dataset.labels()?;
            for (t, &i) in targets.iter_mut().zip(&self.labeled) {
                *t = labels[i];
            }
        }
        let mut labeled = vec![false; rows.len()];
        labeled[..self.labeled.len()].fill(true);
        Ok(Batch { x, targets, labeled })
    }
}

/// Epoch-wise batch composition: each epoch partitions the shuffled training
/// pool into chunks of `b_u`; each chunk is prefixed with `b_l` labeled rows
/// drawn cyclically from a reshuffled labeled order.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    labeled: Vec<usize>,
    pool: Vec<usize>,
    b_l: usize,
    b_u: usize,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(split: &LabeledSplit, b_l: usize, b_u: usize, rng: Rng) -> Result<Self> {
        if b_l > split.labeled_idx.len() {
            return Err(invalid(format!("labeled batch size {b_l} exceeds {} labeled samples", split.labeled_idx.len())));
        }
        if b_l + b_u < 2 {
            return Err(invalid("batches need at least two rows"));
        }
        let pool = split.training_pool();
        if b_u > 0 && pool.is_empty() {
            return Err(invalid("training pool is empty"));
        }
        if b_u == 0 && b_l == 0 {
            return Err(invalid("empty batches"));
        }
        Ok(Self {
            labeled: split.labeled_idx.clone(),
            pool,
            b_l,
            b_u,
            rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn draw_labeled(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.b_l);
        for _ in 0..self.b_l {
            if self.cursor == self.order.len() {
                self.order = self.labeled.clone();
                self.rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Batches of the next epoch. With `b_u = 0` an epoch is one pass over
    /// the labeled set.
    pub fn next_epoch(&mut self) -> Vec<BatchIndices> {
        if self.b_u == 0 {
            let steps = self.labeled.len().div_ceil(self.b_l);
            return (0..steps)
                .map(|_| BatchIndices {
                    labeled: self.draw_labeled(),
                    unlabeled: Vec::new(),
                })
                .collect();
        }
        let mut pool = self.pool.clone();
        self.rng.shuffle(&mut pool);
        let mut chunks: Vec<Vec<usize>> = pool.chunks(self.b_u).map(<[usize]>::to_vec).collect();
        if chunks.len() > 1 && chunks.last().map_or(false, |c| c.len() + self.b_l < 2) {
            let last = chunks.pop().expect("len > 1");
            chunks.last_mut().expect("len > 0").extend(last);
        }
        chunks
            .into_iter()
            .map(|unlabeled| BatchIndices {
                labeled: self.draw_labeled(),
                unlabeled,
            })
            .collect()
    }
}

/// Materialized batches of one epoch.
pub fn batches(split: &LabeledSplit, dataset: &Dataset, b_l: usize, b_u: usize, rng: Rng) -> Result<Vec<Batch>> {
    let mut sampler = BatchSampler::new(split, b_l, b_u, rng)?;
    sampler.next_epoch().iter().map(|b| b.materialize(dataset)).collect()
}
