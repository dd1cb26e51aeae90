use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ImageSample;

/// Default triplet margin.
pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletLossConfig {
    pub margin: f64,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN }
    }
}

impl TripletLossConfig {
    pub fn new(margin: f64) -> Result<Self> {
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::Config(format!("margin {margin} must be finite and non-negative")));
        }
        Ok(Self { margin })
    }
}

/// `max(m + sim_qn − sim_qp, 0)`.
pub fn triplet_loss(sim_pos: f64, sim_neg: f64, cfg: &TripletLossConfig) -> f64 {
    (cfg.margin + sim_neg - sim_pos).max(0.0)
}

#[derive(Debug, Clone)]
pub struct IdentityGroup<'a> {
    pub identity: i64,
    pub samples: Vec<&'a ImageSample>,
}

/// Images grouped by identity. Every group has at least two images and there
/// are at least two groups, so every image has a positive and a negative.
#[derive(Debug, Clone)]
pub struct TripletBatch<'a> {
    groups: Vec<IdentityGroup<'a>>,
    group_of: Vec<usize>,
}

/// Flat image indices into [`TripletBatch::samples`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub query: usize,
    pub positive: usize,
    pub negative: usize,
}

impl<'a> TripletBatch<'a> {
    pub fn new(groups: Vec<IdentityGroup<'a>>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::MalformedBatch(format!("{} identities, need at least 2", groups.len())));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.samples.len() < 2 {
                return Err(Error::MalformedBatch(format!(
                    "identity {} has {} image(s), need at least 2",
                    g.identity,
                    g.samples.len()
                )));
            }
            if groups[..i].iter().any(|o| o.identity == g.identity) {
                return Err(Error::MalformedBatch(format!("identity {} appears twice", g.identity)));
            }
        }
        let group_of = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| core::iter::repeat_n(gi, g.samples.len()))
            .collect();
        Ok(Self { groups, group_of })
    }

    /// Groups consecutive runs of `samples` by identity label.
    pub fn from_samples(samples: &'a [ImageSample]) -> Result<Self> {
        let mut groups: Vec<IdentityGroup<'a>> = Vec::new();
        for s in samples {
            match groups.iter_mut().find(|g| g.identity == s.label.identity) {
                Some(g) => g.samples.push(s),
                None => groups.push(IdentityGroup { identity: s.label.identity, samples: alloc::vec![s] }),
            }
        }
        Self::new(groups)
    }

    pub fn groups(&self) -> &[IdentityGroup<'a>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = &'a ImageSample> + '_ {
        self.groups.iter().flat_map(|g| g.samples.iter().copied())
    }

    pub fn group_of(&self, image: usize) -> usize {
        self.group_of[image]
    }

    /// `Σ_g |g|·(|g|−1)·(B−|g|)`.
    pub fn triplet_count(&self) -> usize {
        let b = self.len();
        self.groups.iter().map(|g| g.samples.len()).map(|n| n * (n - 1) * (b - n)).sum()
    }
}

/// Every `(q, p, n)` with `id(q) = id(p)`, `q ≠ p`, `id(n) ≠ id(q)`, plus the count.
pub fn enumerate_triplets<'b>(batch: &'b TripletBatch<'_>) -> (usize, impl Iterator<Item = Triplet> + 'b) {
    let b = batch.len();
    let group_of = &batch.group_of;
    let iter = (0..b).flat_map(move |q| {
        (0..b).filter(move |&p| p != q && group_of[p] == group_of[q]).flat_map(move |p| {
            (0..b)
                .filter(move |&n| group_of[n] != group_of[q])
                .map(move |n| Triplet { query: q, positive: p, negative: n })
        })
    });
    (batch.triplet_count(), iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureMap, MapRole, SampleLabel};
    use alloc::vec;

    fn samples(sizes: &[usize]) -> Vec<ImageSample> {
        let mut out = Vec::new();
        for (id, &n) in sizes.iter().enumerate() {
            for j in 0..n {
                let a = FeatureMap::zeros(1, 1, 1, MapRole::Raw).unwrap();
                out.push(
                    ImageSample::new(SampleLabel::new(format!("{id}_{j}"), id as i64, 0), a.clone(), a)
                        .unwrap(),
                );
            }
        }
        out
    }

    #[test]
    fn hinge_examples() {
        let cfg = TripletLossConfig::default();
        assert_eq!(cfg.margin, 0.2);
        assert_eq!(triplet_loss(0.9, 0.5, &cfg), 0.0);
        assert!((triplet_loss(0.5, 0.5, &cfg) - 0.2).abs() < 1e-15);
        assert!((triplet_loss(0.1, 0.6, &cfg) - 0.7).abs() < 1e-15);
        assert!(TripletLossConfig::new(-0.1).is_err());
    }

    #[test]
    fn default_batch_has_275400_triplets() {
        let s = samples(&[10; 18]);
        let batch = TripletBatch::from_samples(&s).unwrap();
        let (count, iter) = enumerate_triplets(&batch);
        assert_eq!(count, 275_400);
        assert_eq!(iter.count(), 275_400);
    }

    #[test]
    fn two_by_two_has_eight() {
        let s = samples(&[2, 2]);
        let batch = TripletBatch::from_samples(&s).unwrap();
        let (count, iter) = enumerate_triplets(&batch);
        let all: Vec<Triplet> = iter.collect();
        assert_eq!((count, all.len()), (8, 8));
        for t in all {
            assert_eq!(batch.group_of(t.query), batch.group_of(t.positive));
            assert_ne!(t.query, t.positive);
            assert_ne!(batch.group_of(t.query), batch.group_of(t.negative));
        }
    }

    #[test]
    fn irregular_groups_match_closed_form() {
        let sizes = [2usize, 5, 3, 7, 2];
        let s = samples(&sizes);
        let batch = TripletBatch::from_samples(&s).unwrap();
        let b: usize = sizes.iter().sum();
        let closed: usize = sizes.iter().map(|n| n * (n - 1) * (b - n)).sum();
        let (count, iter) = enumerate_triplets(&batch);
        assert_eq!(count, closed);
        assert_eq!(iter.count(), closed);
    }

    #[test]
    fn malformed_batches_rejected() {
        let s = samples(&[3]);
        assert!(matches!(TripletBatch::from_samples(&s), Err(Error::MalformedBatch(_))));
        let s = samples(&[3, 1]);
        assert!(matches!(TripletBatch::from_samples(&s), Err(Error::MalformedBatch(_))));
        let s = samples(&[2, 2]);
        let g = IdentityGroup { identity: 0, samples: vec![&s[0], &s[1]] };
        assert!(TripletBatch::new(vec![g.clone(), g]).is_err());
    }
}
