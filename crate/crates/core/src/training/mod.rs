//! Triplet-loss training of the per-location linear heads.

mod heads;
mod loss;
mod optim;
mod triplet;

pub use heads::{apply_heads, Affine, HeadDims, HeadGradients, LinearHeads};
pub use loss::{batch_loss, batch_loss_with_route, BatchLoss, GradientRoute};
pub use optim::{sgd_step, OptimizerConfig, SgdState};
pub use triplet::{
    enumerate_triplets, triplet_loss, IdentityGroup, Triplet, TripletBatch, TripletLossConfig, DEFAULT_MARGIN,
};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Embedding, FeatureMap, ImageSample, Layout};
use crate::pooling::{bilinear_pool, concat_average_pool, global_average_pool, normalize};
use crate::sketch::{compact_bilinear_pool, SketchParams};

/// How projected maps are aggregated into one embedding.
#[derive(Debug, Clone, PartialEq)]
pub enum PoolingMode {
    /// Exact bilinear pooling, `c_A·c_P` values.
    Exact,
    /// Tensor-sketched bilinear pooling with fixed random parameters.
    Sketched(SketchParams),
    /// Appearance-only baseline: spatial mean of the appearance map.
    GlobalAverage,
    /// Concatenated spatial means of both maps.
    ConcatAverage,
}

impl PoolingMode {
    /// Unnormalized pooled embedding.
    pub fn pool(&self, appearance: &FeatureMap, part: &FeatureMap) -> Result<Embedding> {
        match self {
            PoolingMode::Exact => bilinear_pool(appearance, part),
            PoolingMode::Sketched(params) => compact_bilinear_pool(appearance, part, params),
            PoolingMode::GlobalAverage => {
                let v = global_average_pool(appearance);
                let len = v.len();
                Embedding::new(v, Layout::Flat { len })
            }
            PoolingMode::ConcatAverage => {
                let v = concat_average_pool(appearance, part)?;
                let len = v.len();
                Embedding::new(v, Layout::Flat { len })
            }
        }
    }

    /// Runs a raw sample through the heads, pools, and normalizes.
    pub fn embed(&self, sample: &ImageSample, heads: &LinearHeads) -> Result<Embedding> {
        let (a, p) = apply_heads(sample, heads)?;
        normalize(&self.pool(&a, &p)?).map_err(|e| match e {
            Error::DegenerateEmbedding(msg) => {
                Error::DegenerateEmbedding(format!("sample {}: {msg}", sample.label.sample_id))
            }
            other => other,
        })
    }
}

/// Identities per batch and images per identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub num_ids: usize,
    pub imgs_per_id: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self { num_ids: 18, imgs_per_id: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub head_dims: HeadDims,
    pub nonneg_parts: bool,
    pub mode: PoolingMode,
    pub loss: TripletLossConfig,
    pub optimizer: OptimizerConfig,
    pub batch: BatchSpec,
    pub iterations: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub initial_heads: LinearHeads,
    pub heads: LinearHeads,
    pub history: Vec<LossRecord>,
}

/// Draws identity-balanced batches: `num_ids` identities without replacement,
/// then `imgs_per_id` images of each, without replacement when the identity
/// has enough images and with replacement otherwise.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    by_identity: Vec<(i64, Vec<&'a ImageSample>)>,
    spec: BatchSpec,
}

impl<'a> BatchSampler<'a> {
    /// Distractors are ignored.
    pub fn new(samples: &'a [ImageSample], spec: BatchSpec) -> Result<Self> {
        if spec.num_ids < 2 || spec.imgs_per_id < 2 {
            return Err(Error::Config(format!(
                "batch needs at least 2 identities with 2 images each, got {}x{}",
                spec.num_ids, spec.imgs_per_id
            )));
        }
        let mut map: BTreeMap<i64, Vec<&'a ImageSample>> = BTreeMap::new();
        for s in samples.iter().filter(|s| !s.label.is_distractor()) {
            map.entry(s.label.identity).or_default().push(s);
        }
        if map.len() < spec.num_ids {
            return Err(Error::Config(format!(
                "batch asks for {} identities but the training set has {}",
                spec.num_ids,
                map.len()
            )));
        }
        Ok(Self { by_identity: map.into_iter().collect(), spec })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TripletBatch<'a>> {
        let ids = index::sample(rng, self.by_identity.len(), self.spec.num_ids);
        let groups = ids
            .into_iter()
            .map(|i| {
                let (identity, pool) = &self.by_identity[i];
                let samples = if pool.len() >= self.spec.imgs_per_id {
                    index::sample(rng, pool.len(), self.spec.imgs_per_id).into_iter().map(|j| pool[j]).collect()
                } else {
                    (0..self.spec.imgs_per_id).map(|_| pool[rng.random_range(0..pool.len())]).collect()
                };
                IdentityGroup { identity: *identity, samples }
            })
            .collect();
        TripletBatch::new(groups)
    }
}

/// Trains the heads with mean triplet loss and SGD. Deterministic given
/// `cfg.seed`: head initialization and batch sampling come from one ChaCha8
/// stream.
pub fn train(samples: &[ImageSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.optimizer.validate()?;
    let sampler = BatchSampler::new(samples, cfg.batch)?;
    if let PoolingMode::Sketched(params) = &cfg.mode {
        let (ia, ip) = (params.appearance().input_dim(), params.part().input_dim());
        if ia != cfg.head_dims.appearance_out || ip != cfg.head_dims.part_out {
            return Err(Error::Config(format!(
                "sketch built for {ia}x{ip} channels, heads output {}x{}",
                cfg.head_dims.appearance_out, cfg.head_dims.part_out
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_heads = LinearHeads::xavier(&mut rng, cfg.head_dims, cfg.nonneg_parts);
    let mut heads = initial_heads.clone();
    let mut state = SgdState::new(&heads);
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    for iteration in 0..cfg.iterations {
        let batch = sampler.sample(&mut rng)?;
        let out = batch_loss(&batch, &heads, &cfg.mode, &cfg.loss)?;
        if !out.loss.is_finite() {
            return Err(Error::Numeric(format!("loss {} at iteration {iteration}", out.loss)));
        }
        sgd_step(&mut heads, &out.gradients, &mut state, &cfg.optimizer, iteration)?;
        history.push(LossRecord {
            iteration,
            loss: out.loss,
            learning_rate: cfg.optimizer.learning_rate_at(iteration),
        });
    }
    Ok(TrainOutcome { initial_heads, heads, history })
}
