//! Versioned JSON checkpoint: the run's config text, flat parameters with
//! their layout, evaluation statistics, Adam state and the epoch counter.
//! Floats are written in shortest round-trip decimal form.

use std::io::Write;
use std::path::Path;

use ladder_core::batchnorm::RunningStats;
use ladder_core::training::{AdamState, LadderParams};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub decay: f64,
    pub update_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: String,
    pub repeat: usize,
    pub seed: u64,
    pub epoch: usize,
    pub layout: Vec<BlockRecord>,
    pub params: Vec<f64>,
    pub running_stats: Vec<StatsRecord>,
    pub adam: AdamRecord,
}

/// What a checkpoint restores to.
#[derive(Debug, Clone, PartialEq)]
pub struct Restored {
    pub config: RunConfig,
    pub repeat: usize,
    pub seed: u64,
    pub epoch: usize,
    pub params: LadderParams,
    pub eval_stats: Vec<RunningStats>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, repeat: usize, seed: u64, epoch: usize, params: &LadderParams, stats: &[RunningStats], adam: &AdamState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: config.to_text(),
            repeat,
            seed,
            epoch,
            layout: params
                .layout()
                .into_iter()
                .map(|b| BlockRecord {
                    name: b.name,
                    offset: b.offset,
                    len: b.len,
                })
                .collect(),
            params: params.to_flat(),
            running_stats: stats
                .iter()
                .map(|s| StatsRecord {
                    mean: s.mean.clone(),
                    std: s.std.clone(),
                    decay: s.decay,
                    update_count: s.update_count,
                })
                .collect(),
            adam: AdamRecord {
                t: adam.t,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                m: adam.m.clone(),
                v: adam.v.clone(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let probe: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Checkpoint(format!("not valid JSON: {e}")))?;
        match probe.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            Some(v) => {
                return Err(CliError::Checkpoint(format!("checkpoint version {v} is not supported; this build reads version {CHECKPOINT_VERSION}")));
            }
            None => return Err(CliError::Checkpoint("missing version field".into())),
        }
        serde_json::from_value(probe).map_err(|e| CliError::Checkpoint(e.to_string()))
    }

    /// Rebuilds the model, checking the stored layout against the one the
    /// config implies.
    pub fn restore(&self) -> Result<Restored, CliError> {
        let config = RunConfig::parse(&self.config).map_err(|e| CliError::Checkpoint(format!("embedded config: {e}")))?;
        let t = &config.train;
        let arch = t.architecture().map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let mut params = LadderParams::init(&arch, t.g_kind, t.u_top, t.gamma_model, &ladder_core::Rng::new(0)).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        let expected: Vec<BlockRecord> = params
            .layout()
            .into_iter()
            .map(|b| BlockRecord {
                name: b.name,
                offset: b.offset,
                len: b.len,
            })
            .collect();
        if expected != self.layout {
            return Err(CliError::Checkpoint("parameter layout does not match the embedded config".into()));
        }
        params.set_flat(&self.params).map_err(|e| CliError::Checkpoint(e.to_string()))?;
        if self.running_stats.len() != arch.depth() {
            return Err(CliError::Checkpoint("wrong number of running statistics".into()));
        }
        let mut eval_stats = Vec::new();
        for (l, s) in self.running_stats.iter().enumerate() {
            let w = arch.width(l + 1);
            if s.mean.len() != w || s.std.len() != w || s.std.iter().any(|v| !(*v > 0.0)) {
                return Err(CliError::Checkpoint(format!("running statistics of layer {} are malformed", l + 1)));
            }
            eval_stats.push(RunningStats {
                mean: s.mean.clone(),
                std: s.std.clone(),
                decay: s.decay,
                update_count: s.update_count,
            });
        }
        let a = &self.adam;
        if a.m.len() != self.params.len() || a.v.len() != self.params.len() {
            return Err(CliError::Checkpoint("Adam moments do not match the parameter count".into()));
        }
        let adam = AdamState {
            m: a.m.clone(),
            v: a.v.clone(),
            t: a.t,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        };
        Ok(Restored {
            config,
            repeat: self.repeat,
            seed: self.seed,
            epoch: self.epoch,
            params,
            eval_stats,
            adam,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// crash never leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
