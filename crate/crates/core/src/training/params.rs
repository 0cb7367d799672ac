use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::decoder::{DecoderParams, GKind, TopInput};
use crate::encoder::{Architecture, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Every trainable value of a ladder network.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    W,
    Gamma,
    Beta,
    V,
    G,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::W => "W",
            ParamGroup::Gamma => "gamma",
            ParamGroup::Beta => "beta",
            ParamGroup::V => "V",
            ParamGroup::G => "g",
        }
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    /// e.g. `W1`, `gamma3`, `V2` (= `V⁽²⁾`), `g0`.
    pub name: String,
    pub group: ParamGroup,
    pub layer: usize,
    pub offset: usize,
    pub len: usize,
}

impl LadderParams {
    /// Fresh network. Encoder and decoder weights come from separate
    /// sub-streams of `rng`, so a Γ-model and a full model with the same
    /// seed share identical encoder and top-denoiser initial values.
    pub fn init(arch: &Architecture, kind: GKind, top_input: TopInput, gamma_model: bool, rng: &Rng) -> Result<Self> {
        let encoder = EncoderParams::init(arch, &mut rng.substream("init/encoder"))?;
        let full = DecoderParams::init(arch, kind, top_input, &mut rng.substream("init/decoder"))?;
        let decoder = if gamma_model { full.gamma_subset() } else { full };
        Ok(Self { encoder, decoder })
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate(&self.encoder.arch)
    }

    /// Stable ordering: encoder layers `1..=L` (`W`, `γ`, `β`), then decoder
    /// layers `L..=lowest` (`V`, `g`).
    fn blocks(&self) -> Vec<(ParamGroup, usize, &[f64])> {
        let mut out = Vec::new();
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            let l = i + 1;
            out.push((ParamGroup::W, l, layer.w.as_slice()));
            if let Some(g) = &layer.gamma {
                out.push((ParamGroup::Gamma, l, g.as_slice()));
            }
            if let Some(b) = &layer.beta {
                out.push((ParamGroup::Beta, l, b.as_slice()));
            }
        }
        for (l, layer) in self.decoder.layers.iter().enumerate().rev() {
            if let Some(d) = layer {
                if let Some(v) = &d.v {
                    out.push((ParamGroup::V, l + 1, v.as_slice()));
                }
                out.push((ParamGroup::G, l, d.g.as_slice()));
            }
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self.encoder.layers.iter_mut() {
            out.push(layer.w.as_mut_slice());
            if let Some(g) = &mut layer.gamma {
                out.push(g.as_mut_slice());
            }
            if let Some(b) = &mut layer.beta {
                out.push(b.as_mut_slice());
            }
        }
        for d in self.decoder.layers.iter_mut().rev().flatten() {
            if let Some(v) = &mut d.v {
                out.push(v.as_mut_slice());
            }
            out.push(d.g.as_mut_slice());
        }
        out
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let mut offset = 0;
        self.blocks()
            .into_iter()
            .map(|(group, layer, values)| {
                let block = ParamBlock {
                    name: format!("{}{}", group.name(), layer),
                    group,
                    layer,
                    offset,
                    len: values.len(),
                };
                offset += values.len();
                block
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for (_, _, v) in self.blocks() {
            out.extend_from_slice(v);
        }
        out
    }

    /// Overwrites every value from `flat` (same ordering as [`Self::to_flat`]).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let len = self.len();
        if flat.len() != len {
            return Err(Error::Length {
                op: "LadderParams::set_flat",
                expected: len,
                actual: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LadderParams::set_flat"));
        }
        let mut rest = flat;
        for block in self.blocks_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Same structure, all values zero. Used to hold gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for block in z.blocks_mut() {
            block.fill(0.0);
        }
        z
    }

    /// Values of the block called `name`, if present.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout()
            .into_iter()
            .zip(self.blocks())
            .find(|(b, _)| b.name == name)
            .map(|(_, (_, _, v))| v)
    }
}

pub(crate) fn accumulate(dst: &mut Matrix, src: &Matrix) -> Result<()> {
    dst.add_assign(src)
}
