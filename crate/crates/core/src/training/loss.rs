//! Mean triplet loss over a batch and its exact gradient with respect to the
//! heads, back-propagated through similarity, L2 normalization, pooling and
//! the optional part clamp.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::heads::{HeadGradients, LinearHeads};
use super::triplet::{enumerate_triplets, TripletBatch, TripletLossConfig};
use super::PoolingMode;
use crate::error::{Error, Result};
use crate::model::{dot, FeatureMap, MapRole};
use crate::pooling::clamp_nonneg;
use crate::sketch::{circular_correlate, count_sketch};

/// How per-triplet gradients are accumulated onto the embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientRoute {
    /// Add each active triplet's three embedding gradients directly.
    Direct,
    /// Count signed pair coefficients first, then form each gradient as one
    /// weighted sum of embeddings.
    #[default]
    Regrouped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub gradients: HeadGradients,
    pub triplets: usize,
    /// Triplets with a strictly positive hinge argument.
    pub active: usize,
}

struct ImageForward {
    appearance: FeatureMap,
    part_pre: FeatureMap,
    part: FeatureMap,
    norm: f64,
    unit: Vec<f64>,
}

fn forward(
    batch: &TripletBatch<'_>,
    heads: &LinearHeads,
    mode: &PoolingMode,
) -> Result<Vec<ImageForward>> {
    batch
        .samples()
        .map(|s| {
            let appearance = heads.appearance.apply_map(s.appearance(), MapRole::Appearance)?;
            let part_pre = heads.part.apply_map(s.part(), MapRole::Part)?;
            let part = if heads.nonneg_parts { clamp_nonneg(&part_pre) } else { part_pre.clone() };
            let f = mode.pool(&appearance, &part)?;
            let norm = f.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::DegenerateEmbedding(format!(
                    "sample {} pools to norm {norm}",
                    s.label.sample_id
                )));
            }
            let unit = f.values().iter().map(|v| v / norm).collect();
            Ok(ImageForward { appearance, part_pre, part, norm, unit })
        })
        .collect()
}

pub fn batch_loss(
    batch: &TripletBatch<'_>,
    heads: &LinearHeads,
    mode: &PoolingMode,
    cfg: &TripletLossConfig,
) -> Result<BatchLoss> {
    batch_loss_with_route(batch, heads, mode, cfg, GradientRoute::default())
}

pub fn batch_loss_with_route(
    batch: &TripletBatch<'_>,
    heads: &LinearHeads,
    mode: &PoolingMode,
    cfg: &TripletLossConfig,
    route: GradientRoute,
) -> Result<BatchLoss> {
    let images = forward(batch, heads, mode)?;
    let b = images.len();
    let dim = images[0].unit.len();

    let mut gram = vec![0.0; b * b];
    for i in 0..b {
        for j in i..b {
            let s = dot(&images[i].unit, &images[j].unit);
            gram[i * b + j] = s;
            gram[j * b + i] = s;
        }
    }

    let (count, triplets) = enumerate_triplets(batch);
    let mut loss = 0.0;
    let mut active = 0usize;
    let mut unit_grads = vec![vec![0.0; dim]; b];
    let mut coeff = match route {
        GradientRoute::Regrouped => vec![0.0; b * b],
        GradientRoute::Direct => Vec::new(),
    };
    for t in triplets {
        let (q, p, n) = (t.query, t.positive, t.negative);
        let arg = cfg.margin + gram[q * b + n] - gram[q * b + p];
        // subgradient at the kink (arg == 0) is taken as zero
        if arg <= 0.0 {
            continue;
        }
        loss += arg;
        active += 1;
        match route {
            GradientRoute::Direct => {
                for k in 0..dim {
                    let (uq, up, un) = (images[q].unit[k], images[p].unit[k], images[n].unit[k]);
                    unit_grads[q][k] += un - up;
                    unit_grads[n][k] += uq;
                    unit_grads[p][k] -= uq;
                }
            }
            GradientRoute::Regrouped => {
                coeff[q * b + n] += 1.0;
                coeff[n * b + q] += 1.0;
                coeff[q * b + p] -= 1.0;
                coeff[p * b + q] -= 1.0;
            }
        }
    }
    if route == GradientRoute::Regrouped {
        for (i, g) in unit_grads.iter_mut().enumerate() {
            for (j, img) in images.iter().enumerate() {
                let c = coeff[i * b + j];
                if c != 0.0 {
                    for (gk, uk) in g.iter_mut().zip(&img.unit) {
                        *gk += c * uk;
                    }
                }
            }
        }
    }

    let inv_t = 1.0 / count as f64;
    let loss = loss * inv_t;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("batch loss is {loss}")));
    }

    let mut grads = HeadGradients::zeros(heads);
    if active > 0 {
        for ((img, g_raw), sample) in images.iter().zip(&unit_grads).zip(batch.samples()) {
            let g_unit: Vec<f64> = g_raw.iter().map(|g| g * inv_t).collect();
            let g_pooled = normalize_backward(&img.unit, img.norm, &g_unit);
            let (da, dp) = pool_backward(mode, &img.appearance, &img.part, &g_pooled)?;
            let dz = if heads.nonneg_parts {
                dp.iter()
                    .zip(img.part_pre.data())
                    .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                    .collect()
            } else {
                dp
            };
            accumulate_head_grads(heads, &mut grads.values, sample.appearance(), &da, sample.part(), &dz);
        }
    }

    Ok(BatchLoss { loss, gradients: grads, triplets: count, active })
}

/// Gradient through `u = f/‖f‖`: `(g − u⟨u,g⟩)/‖f‖`.
pub(crate) fn normalize_backward(unit: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let ug = dot(unit, g);
    unit.iter().zip(g).map(|(u, gi)| (gi - u * ug) / norm).collect()
}

/// Gradients of the pooled vector with respect to every local appearance and
/// part descriptor, as flat `S × c` buffers.
fn pool_backward(
    mode: &PoolingMode,
    appearance: &FeatureMap,
    part: &FeatureMap,
    g: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ca = appearance.channels();
    let cp = part.channels();
    let s = appearance.locations();
    let inv_s = 1.0 / s as f64;
    let mut da = vec![0.0; s * ca];
    let mut dp = vec![0.0; s * cp];
    match mode {
        PoolingMode::Exact => {
            for loc in 0..s {
                let a = appearance.descriptor(loc);
                let p = part.descriptor(loc);
                let da_loc = &mut da[loc * ca..(loc + 1) * ca];
                for k in 0..cp {
                    let block = &g[k * ca..(k + 1) * ca];
                    dp[loc * cp + k] = inv_s * dot(block, a);
                    let w = inv_s * p[k];
                    for (d, gb) in da_loc.iter_mut().zip(block) {
                        *d += w * gb;
                    }
                }
            }
        }
        PoolingMode::Sketched(params) => {
            let (sa, sp) = (params.appearance(), params.part());
            for loc in 0..s {
                let a = appearance.descriptor(loc);
                let p = part.descriptor(loc);
                let u = count_sketch(a, sa)?;
                let v = count_sketch(p, sp)?;
                let du = circular_correlate(g, &v)?;
                let dv = circular_correlate(g, &u)?;
                for i in 0..ca {
                    da[loc * ca + i] = inv_s * f64::from(sa.sign()[i]) * du[sa.hash()[i]];
                }
                for k in 0..cp {
                    dp[loc * cp + k] = inv_s * f64::from(sp.sign()[k]) * dv[sp.hash()[k]];
                }
            }
        }
        PoolingMode::GlobalAverage => {
            for loc in 0..s {
                for (d, gi) in da[loc * ca..(loc + 1) * ca].iter_mut().zip(g) {
                    *d = inv_s * gi;
                }
            }
        }
        PoolingMode::ConcatAverage => {
            for loc in 0..s {
                for (d, gi) in da[loc * ca..(loc + 1) * ca].iter_mut().zip(&g[..ca]) {
                    *d = inv_s * gi;
                }
                for (d, gi) in dp[loc * cp..(loc + 1) * cp].iter_mut().zip(&g[ca..]) {
                    *d = inv_s * gi;
                }
            }
        }
    }
    Ok((da, dp))
}

fn accumulate_head_grads(
    heads: &LinearHeads,
    out: &mut [f64],
    raw_a: &FeatureMap,
    da: &[f64],
    raw_p: &FeatureMap,
    dz: &[f64],
) {
    let (wa_len, ba_len) = (heads.appearance.weight().len(), heads.appearance.bias().len());
    let (wa, rest) = out.split_at_mut(wa_len);
    let (ba, rest) = rest.split_at_mut(ba_len);
    let (wp, bp) = rest.split_at_mut(heads.part.weight().len());
    affine_backward(wa, ba, raw_a, da, heads.appearance.outputs());
    affine_backward(wp, bp, raw_p, dz, heads.part.outputs());
}

fn affine_backward(w: &mut [f64], b: &mut [f64], input: &FeatureMap, dout: &[f64], outputs: usize) {
    let inputs = input.channels();
    for (x, d) in input.descriptors().zip(dout.chunks_exact(outputs)) {
        for (o, &dv) in d.iter().enumerate() {
            if dv == 0.0 {
                continue;
            }
            b[o] += dv;
            for (wi, xi) in w[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                *wi += dv * xi;
            }
        }
    }
}
