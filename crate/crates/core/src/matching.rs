//! Similarity, the local factorization of image similarity, and gallery ranking.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{dot, Embedding, FeatureMap};
use crate::pooling::{bilinear_pool, local_part_aligned};

/// Inner product of two embeddings of the same layout.
pub fn similarity(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    e1.check_same_layout(e2)?;
    Ok(dot(e1.values(), e2.values()))
}

/// Similarity used for ranking: a zero (degenerate) embedding on either side
/// scores `-∞` against everything.
pub fn ranking_similarity(query: &Embedding, item: &Embedding) -> Result<f64> {
    let s = similarity(query, item)?;
    if query.is_zero() || item.is_zero() {
        Ok(f64::NEG_INFINITY)
    } else {
        Ok(s)
    }
}

/// Image similarity as the average over all location pairs of appearance
/// similarity times part similarity, with every local descriptor scaled by
/// `1/√‖f‖₂` of its own image. Equals the inner product of the two normalized
/// pooled embeddings; costs `O(S²)` and exists as a verification path.
pub fn image_similarity_direct(
    appearance: &FeatureMap,
    part: &FeatureMap,
    appearance2: &FeatureMap,
    part2: &FeatureMap,
) -> Result<f64> {
    let norm1 = pooled_norm(appearance, part)?;
    let norm2 = pooled_norm(appearance2, part2)?;
    if appearance.channels() != appearance2.channels() || part.channels() != part2.channels() {
        return Err(crate::error::dim_err!("channel counts differ between images"));
    }
    let mut total = 0.0;
    for (a, p) in appearance.descriptors().zip(part.descriptors()) {
        for (a2, p2) in appearance2.descriptors().zip(part2.descriptors()) {
            // each factor carries 1/√‖f‖ on both sides
            total += (dot(a, a2) / libm::sqrt(norm1 * norm2)) * (dot(p, p2) / libm::sqrt(norm1 * norm2));
        }
    }
    let s1 = appearance.locations() as f64;
    let s2 = appearance2.locations() as f64;
    Ok(total / (s1 * s2))
}

fn pooled_norm(appearance: &FeatureMap, part: &FeatureMap) -> Result<f64> {
    let n = bilinear_pool(appearance, part)?.norm();
    if n == 0.0 {
        return Err(Error::DegenerateEmbedding("pooled embedding is zero".into()));
    }
    Ok(n)
}

/// Both sides of `⟨vec(a⊗p), vec(a'⊗p')⟩ = ⟨a,a'⟩·⟨p,p'⟩`.
pub fn local_similarity_factorization(a: &[f64], p: &[f64], a2: &[f64], p2: &[f64]) -> (f64, f64) {
    let lhs = dot(&local_part_aligned(a, p), &local_part_aligned(a2, p2));
    let rhs = dot(a, a2) * dot(p, p2);
    (lhs, rhs)
}

/// A query's gallery ordering, best match first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub query_id: String,
    pub ordering: Vec<String>,
    pub similarities: Vec<f64>,
}

impl RankedResult {
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ordering.iter().map(String::as_str).zip(self.similarities.iter().copied())
    }
}

/// Sorts the gallery by descending similarity to `query`; equal similarities
/// are ordered by ascending sample id.
pub fn rank_gallery(query_id: &str, query: &Embedding, gallery: &[(String, Embedding)]) -> Result<RankedResult> {
    if gallery.is_empty() {
        return Err(Error::EmptyInput("gallery is empty".into()));
    }
    let mut scored = gallery
        .iter()
        .map(|(id, e)| ranking_similarity(query, e).map(|s| (id, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(id1, s1), (id2, s2)| compare_desc(*s1, *s2).then_with(|| id1.cmp(id2)));
    let (ordering, similarities) = scored.into_iter().map(|(id, s)| (id.clone(), s)).unzip();
    Ok(RankedResult { query_id: query_id.into(), ordering, similarities })
}

/// Descending by value; `-0.0` and `0.0` tie.
fn compare_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or_else(|| b.total_cmp(&a))
}
