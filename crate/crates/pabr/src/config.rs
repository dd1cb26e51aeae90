//! Training configuration (TOML) and trained heads (JSON).

use std::fs;
use std::path::Path;

use pabr_core::sketch::{SketchParams, DEFAULT_SKETCH_DIM};
use pabr_core::training::{
    Affine, BatchSpec, HeadDims, LinearHeads, OptimizerConfig, PoolingMode, TrainConfig, TripletLossConfig,
    DEFAULT_MARGIN,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Exact,
    Sketched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadsSection {
    pub appearance_out: usize,
    pub part_out: usize,
}

impl Default for HeadsSection {
    fn default() -> Self {
        Self { appearance_out: 8, part_out: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    pub dim: usize,
    pub seed: u64,
}

impl Default for SketchSection {
    fn default() -> Self {
        Self { dim: DEFAULT_SKETCH_DIM, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub margin: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub total_iters: u64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = OptimizerConfig::default();
        Self {
            learning_rate: d.learning_rate,
            weight_decay: d.weight_decay,
            momentum: d.momentum,
            lr_decay_factor: d.lr_decay_factor,
            lr_decay_every: d.lr_decay_every,
            total_iters: d.total_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSection {
    pub num_ids: usize,
    pub imgs_per_id: usize,
}

impl Default for BatchSection {
    fn default() -> Self {
        let d = BatchSpec::default();
        Self { num_ids: d.num_ids, imgs_per_id: d.imgs_per_id }
    }
}

/// Contents of a training config file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub mode: ModeName,
    pub nonneg_parts: bool,
    /// Defaults to `optimizer.total_iters`.
    pub iterations: Option<u64>,
    pub seed: u64,
    pub heads: HeadsSection,
    pub sketch: SketchSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub batch: BatchSection,
}

impl TrainFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("training config: {e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn iterations(&self) -> u64 {
        self.iterations.unwrap_or(self.optimizer.total_iters)
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            learning_rate: o.learning_rate,
            weight_decay: o.weight_decay,
            momentum: o.momentum,
            lr_decay_factor: o.lr_decay_factor,
            lr_decay_every: o.lr_decay_every,
            total_iters: o.total_iters,
        }
    }

    pub fn pooling_mode(&self) -> Result<PoolingMode> {
        Ok(match self.mode {
            ModeName::Exact => PoolingMode::Exact,
            ModeName::Sketched => PoolingMode::Sketched(SketchParams::new(
                self.sketch.seed,
                self.heads.appearance_out,
                self.heads.part_out,
                self.sketch.dim,
            )?),
        })
    }

    /// Full training configuration for raw maps with the given channel counts.
    pub fn to_train_config(&self, appearance_in: usize, part_in: usize) -> Result<TrainConfig> {
        Ok(TrainConfig {
            head_dims: HeadDims {
                appearance_in,
                appearance_out: self.heads.appearance_out,
                part_in,
                part_out: self.heads.part_out,
            },
            nonneg_parts: self.nonneg_parts,
            mode: self.pooling_mode()?,
            loss: TripletLossConfig::new(self.loss.margin)?,
            optimizer: self.optimizer(),
            batch: BatchSpec { num_ids: self.batch.num_ids, imgs_per_id: self.batch.imgs_per_id },
            iterations: self.iterations(),
            seed: self.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineFile {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl AffineFile {
    fn from_affine(a: &Affine) -> Self {
        Self { inputs: a.inputs(), outputs: a.outputs(), weight: a.weight().to_vec(), bias: a.bias().to_vec() }
    }

    fn into_affine(self) -> Result<Affine> {
        Ok(Affine::new(self.outputs, self.inputs, self.weight, self.bias)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadsFile {
    nonneg_parts: bool,
    appearance: AffineFile,
    part: AffineFile,
}

pub fn heads_to_json(heads: &LinearHeads) -> String {
    let file = HeadsFile {
        nonneg_parts: heads.nonneg_parts,
        appearance: AffineFile::from_affine(&heads.appearance),
        part: AffineFile::from_affine(&heads.part),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("heads serialize");
    s.push('\n');
    s
}

pub fn heads_from_json(text: &str) -> Result<LinearHeads> {
    let file: HeadsFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("heads file: {e}")))?;
    Ok(LinearHeads::new(file.appearance.into_affine()?, file.part.into_affine()?, file.nonneg_parts))
}

pub fn write_heads(heads: &LinearHeads, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, heads_to_json(heads)).map_err(|e| Error::io(path, e))
}

pub fn read_heads(path: impl AsRef<Path>) -> Result<LinearHeads> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    heads_from_json(&text)
}
