//! CMC and mAP for re-identification ranking.
//!
//! For each query, gallery entries sharing both its identity and its camera are
//! dropped before scoring. Distractors (identity `-1`) stay in the list and
//! never count as correct. Queries left with no correct gallery entry are
//! excluded from the averages and only show up in the counts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matching::{rank_gallery, RankedResult};
use crate::model::{Embedding, SampleLabel};
use crate::pooling::normalize;

/// Ranks reported in the summary tables.
pub const REPORT_RANKS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub label: SampleLabel,
    pub embedding: Embedding,
}

impl LabeledEmbedding {
    pub fn new(label: SampleLabel, embedding: Embedding) -> Self {
        Self { label, embedding }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `cmc[k - 1]` is the fraction of valid queries whose first correct match
    /// is within the top `k`.
    pub cmc: Vec<f64>,
    pub map: f64,
    /// AP of each valid query, in query order.
    pub per_query_ap: Vec<f64>,
    pub num_valid_queries: usize,
    pub num_queries: usize,
}

impl EvalReport {
    /// CMC at rank `k` (1-based), if the curve was computed that far.
    pub fn cmc_at(&self, k: usize) -> Option<f64> {
        self.cmc.get(k.checked_sub(1)?).copied()
    }
}

/// First-hit position and average precision of one filtered ranking, or
/// `None` when the query has no correct match left.
fn score_query(query: &SampleLabel, ranking: &[&SampleLabel]) -> Option<(usize, f64)> {
    let mut kept = 0usize;
    let mut hits = 0usize;
    let mut first = None;
    let mut precision_sum = 0.0;
    for g in ranking {
        if g.identity == query.identity && g.camera == query.camera {
            continue;
        }
        kept += 1;
        if !g.is_distractor() && g.identity == query.identity {
            hits += 1;
            first.get_or_insert(kept - 1);
            precision_sum += hits as f64 / kept as f64;
        }
    }
    first.map(|f| (f, precision_sum / hits as f64))
}

/// Scores precomputed rankings. `gallery` maps sample ids to labels; each
/// ranking must only name ids present there.
pub fn evaluate_rankings(
    queries: &[SampleLabel],
    rankings: &[RankedResult],
    gallery: &BTreeMap<String, SampleLabel>,
    max_rank: usize,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no queries".into()));
    }
    if queries.len() != rankings.len() {
        return Err(crate::error::dim_err!("{} queries but {} rankings", queries.len(), rankings.len()));
    }
    let max_rank = max_rank.max(1);
    let mut hits_at = vec![0usize; max_rank];
    let mut per_query_ap = Vec::new();
    for (q, r) in queries.iter().zip(rankings) {
        if q.sample_id != r.query_id {
            return Err(Error::Config(format!("ranking for {} paired with query {}", r.query_id, q.sample_id)));
        }
        let labels = r
            .ordering
            .iter()
            .map(|id| gallery.get(id).ok_or_else(|| Error::Config(format!("unknown gallery sample {id}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some((first, ap)) = score_query(q, &labels) {
            per_query_ap.push(ap);
            if first < max_rank {
                hits_at[first] += 1;
            }
        }
    }
    let valid = per_query_ap.len();
    let mut cmc = Vec::with_capacity(max_rank);
    let mut running = 0usize;
    for h in hits_at {
        running += h;
        cmc.push(if valid == 0 { 0.0 } else { running as f64 / valid as f64 });
    }
    let map = if valid == 0 { 0.0 } else { per_query_ap.iter().sum::<f64>() / valid as f64 };
    Ok(EvalReport { cmc, map, per_query_ap, num_valid_queries: valid, num_queries: queries.len() })
}

/// Ranks every query against the gallery and scores the result.
pub fn evaluate(queries: &[LabeledEmbedding], gallery: &[LabeledEmbedding], max_rank: usize) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no queries".into()));
    }
    let entries: Vec<(String, Embedding)> =
        gallery.iter().map(|g| (g.label.sample_id.clone(), g.embedding.clone())).collect();
    let lookup = gallery_lookup(gallery)?;
    let rankings = queries
        .iter()
        .map(|q| rank_gallery(&q.label.sample_id, &q.embedding, &entries))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<SampleLabel> = queries.iter().map(|q| q.label.clone()).collect();
    evaluate_rankings(&labels, &rankings, &lookup, max_rank)
}

fn gallery_lookup(gallery: &[LabeledEmbedding]) -> Result<BTreeMap<String, SampleLabel>> {
    let mut out = BTreeMap::new();
    for g in gallery {
        if out.insert(g.label.sample_id.clone(), g.label.clone()).is_some() {
            return Err(Error::Config(format!("duplicate gallery sample id {}", g.label.sample_id)));
        }
    }
    Ok(out)
}

/// Single-shot protocol repeated over random splits: each trial picks one
/// probe image from `views.0` and one gallery image from `views.1` per
/// identity, and the reports are averaged.
pub fn evaluate_multi_trial(
    samples: &[LabeledEmbedding],
    views: (u32, u32),
    trials: usize,
    seed: u64,
    max_rank: usize,
) -> Result<EvalReport> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let mut by_id: BTreeMap<i64, (Vec<&LabeledEmbedding>, Vec<&LabeledEmbedding>)> = BTreeMap::new();
    for s in samples.iter().filter(|s| !s.label.is_distractor()) {
        let e = by_id.entry(s.label.identity).or_default();
        if s.label.camera == views.0 {
            e.0.push(s);
        } else if s.label.camera == views.1 {
            e.1.push(s);
        }
    }
    if by_id.is_empty() {
        return Err(Error::EmptyInput("no labelled identities".into()));
    }
    for (id, (probes, gals)) in &by_id {
        if probes.is_empty() || gals.is_empty() {
            return Err(Error::Config(format!(
                "identity {id} lacks an image in camera {} or {}",
                views.0, views.1
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum: Option<EvalReport> = None;
    for _ in 0..trials {
        let mut queries = Vec::with_capacity(by_id.len());
        let mut gallery = Vec::with_capacity(by_id.len());
        for (probes, gals) in by_id.values() {
            queries.push(probes[rng.random_range(0..probes.len())].clone());
            gallery.push(gals[rng.random_range(0..gals.len())].clone());
        }
        let r = evaluate(&queries, &gallery, max_rank)?;
        sum = Some(match sum {
            None => r,
            Some(mut acc) => {
                acc.cmc.iter_mut().zip(&r.cmc).for_each(|(a, b)| *a += b);
                acc.map += r.map;
                acc.per_query_ap.iter_mut().zip(&r.per_query_ap).for_each(|(a, b)| *a += b);
                acc
            }
        });
    }
    let mut mean = sum.expect("trials > 0");
    let t = trials as f64;
    mean.cmc.iter_mut().for_each(|v| *v /= t);
    mean.map /= t;
    mean.per_query_ap.iter_mut().for_each(|v| *v /= t);
    Ok(mean)
}

/// Elementwise mean of several embeddings of one identity, renormalized.
pub fn multi_query_fuse(embeddings: &[Embedding]) -> Result<Embedding> {
    let first = embeddings.first().ok_or_else(|| Error::EmptyInput("nothing to fuse".into()))?;
    let mut acc = vec![0.0; first.values().len()];
    for e in embeddings {
        first.check_same_layout(e)?;
        acc.iter_mut().zip(e.values()).for_each(|(a, v)| *a += v);
    }
    let n = embeddings.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    normalize(&Embedding::new(acc, first.layout())?)
}
