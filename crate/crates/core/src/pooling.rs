//! Exact bilinear pooling and the baseline aggregators.
//!
//! The local part-aligned vector `vec(a ⊗ p)` is laid out as `c_P` blocks of
//! length `c_A`: block `k` is `p[k] · a`. Everything downstream (sketches,
//! gradients, file dumps) relies on this order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{dot, Embedding, FeatureMap, Layout, MapRole};

/// `vec(a ⊗ p)` in block-per-part-channel layout.
pub fn local_part_aligned(a: &[f64], p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() * p.len()];
    accumulate_outer(&mut out, a, p, 1.0);
    out
}

/// `out += scale · vec(a ⊗ p)`.
#[inline]
pub(crate) fn accumulate_outer(out: &mut [f64], a: &[f64], p: &[f64], scale: f64) {
    let ca = a.len();
    for (k, &pk) in p.iter().enumerate() {
        let w = scale * pk;
        if w == 0.0 {
            continue;
        }
        for (o, &ai) in out[k * ca..(k + 1) * ca].iter_mut().zip(a) {
            *o += w * ai;
        }
    }
}

/// Spatial average of the local part-aligned vectors.
pub fn bilinear_pool(appearance: &FeatureMap, part: &FeatureMap) -> Result<Embedding> {
    appearance.check_same_grid(part)?;
    let (ca, cp) = (appearance.channels(), part.channels());
    let scale = 1.0 / appearance.locations() as f64;
    let mut f = vec![0.0; ca * cp];
    for (a, p) in appearance.descriptors().zip(part.descriptors()) {
        accumulate_outer(&mut f, a, p, scale);
    }
    Embedding::new(f, Layout::Exact { appearance: ca, part: cp })
}

/// Scales `f` to unit L2 norm. A zero vector is a degenerate embedding.
pub fn normalize(f: &Embedding) -> Result<Embedding> {
    let norm = f.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEmbedding(format!("norm is {norm}")));
    }
    let values = f.values().iter().map(|v| v / norm).collect();
    Embedding::new_normalized(values, f.layout())
}

/// Per-channel spatial mean.
pub fn global_average_pool(map: &FeatureMap) -> Vec<f64> {
    let mut out = vec![0.0; map.channels()];
    for d in map.descriptors() {
        for (o, v) in out.iter_mut().zip(d) {
            *o += v;
        }
    }
    let s = map.locations() as f64;
    out.iter_mut().for_each(|o| *o /= s);
    out
}

/// Concatenation of the appearance and part channel means.
pub fn concat_average_pool(appearance: &FeatureMap, part: &FeatureMap) -> Result<Vec<f64>> {
    appearance.check_same_grid(part)?;
    let mut out = global_average_pool(appearance);
    out.extend(global_average_pool(part));
    Ok(out)
}

/// Zeroes every negative entry (non-negative part descriptors).
pub fn clamp_nonneg(map: &FeatureMap) -> FeatureMap {
    let data = map.data().iter().map(|&v| v.max(0.0)).collect();
    FeatureMap::new(map.height(), map.width(), map.channels(), data, map.role())
        .expect("clamping preserves validity")
}

/// Half-open cell rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn area(&self) -> usize {
        self.x1.saturating_sub(self.x0) * self.y1.saturating_sub(self.y0)
    }
}

/// `K` possibly overlapping rectangles standing in for detected body parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxPartLayout {
    pub regions: Vec<Region>,
}

impl BoxPartLayout {
    pub fn new(regions: Vec<Region>) -> Self {
        Self { regions }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::EmptyInput(String::from("box layout has no regions")));
        }
        for (k, r) in self.regions.iter().enumerate() {
            if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > width || r.y1 > height {
                return Err(Error::Range(format!(
                    "region {k} {r:?} is empty or outside the {width}x{height} grid"
                )));
            }
        }
        Ok(())
    }
}

/// Part map whose channel `k` is the membership indicator of region `k`.
pub fn box_indicator_partmap(layout: &BoxPartLayout, height: usize, width: usize) -> Result<FeatureMap> {
    layout.validate(height, width)?;
    FeatureMap::from_fn(height, width, layout.regions.len(), MapRole::Part, |x, y, k| {
        if layout.regions[k].contains(x, y) {
            1.0
        } else {
            0.0
        }
    })
}

/// `⟨f, f'⟩` for two embeddings of the same layout (not necessarily normalized).
pub fn inner_product(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    e1.check_same_layout(e2)?;
    Ok(dot(e1.values(), e2.values()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, role: MapRole) -> FeatureMap {
        FeatureMap::from_fn(h, w, c, role, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
        let scale = a.iter().chain(b).fold(1e-300_f64, |m, v| m.max(v.abs()));
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
    }

    #[test]
    fn one_hot_part_isolates_appearance() {
        assert_eq!(local_part_aligned(&[2.0, 3.0], &[0.0, 1.0]), vec![0.0, 0.0, 2.0, 3.0]);
        assert_eq!(local_part_aligned(&[1.0, 1.0], &[1.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn local_matches_nested_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut oracle = Vec::new();
        for pk in &p {
            for ai in &a {
                oracle.push(pk * ai);
            }
        }
        assert_eq!(local_part_aligned(&a, &p), oracle);
    }

    #[test]
    fn single_location_pool_is_local() {
        let a = FeatureMap::new(1, 1, 3, vec![1.0, -2.0, 0.5], MapRole::Appearance).unwrap();
        let p = FeatureMap::new(1, 1, 2, vec![0.25, 4.0], MapRole::Part).unwrap();
        let f = bilinear_pool(&a, &p).unwrap();
        assert_eq!(f.values(), local_part_aligned(a.data(), p.data()).as_slice());
        assert_eq!(f.layout(), Layout::Exact { appearance: 3, part: 2 });
    }

    #[test]
    fn identical_descriptors_pool_to_shared_local() {
        let a = FeatureMap::from_fn(3, 2, 2, MapRole::Appearance, |_, _, k| [0.5, -1.5][k]).unwrap();
        let p = FeatureMap::from_fn(3, 2, 2, MapRole::Part, |_, _, k| [2.0, 3.0][k]).unwrap();
        let f = bilinear_pool(&a, &p).unwrap();
        let local = local_part_aligned(&[0.5, -1.5], &[2.0, 3.0]);
        assert!(rel_close(f.values(), &local, 1e-15));
    }

    #[test]
    fn pool_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_map(&mut rng, 3, 2, 4, MapRole::Appearance);
        let p = random_map(&mut rng, 3, 2, 2, MapRole::Part);
        let mut oracle = vec![0.0; 8];
        for y in 0..3 {
            for x in 0..2 {
                let ad = a.descriptor_at(x, y).unwrap();
                let pd = p.descriptor_at(x, y).unwrap();
                for k in 0..2 {
                    for i in 0..4 {
                        oracle[k * 4 + i] += pd[k] * ad[i];
                    }
                }
            }
        }
        oracle.iter_mut().for_each(|v| *v /= 6.0);
        assert!(rel_close(bilinear_pool(&a, &p).unwrap().values(), &oracle, 1e-14));
    }

    #[test]
    fn pool_rejects_grid_mismatch() {
        let a = FeatureMap::zeros(2, 2, 3, MapRole::Appearance).unwrap();
        let p = FeatureMap::zeros(2, 3, 1, MapRole::Part).unwrap();
        assert!(matches!(bilinear_pool(&a, &p), Err(Error::Dimension(_))));
        assert!(matches!(concat_average_pool(&a, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn normalize_examples() {
        let f = Embedding::new(vec![3.0, 4.0], Layout::Flat { len: 2 }).unwrap();
        let n = normalize(&f).unwrap();
        assert!(rel_close(n.values(), &[0.6, 0.8], 1e-15));
        assert!(n.is_normalized());

        let again = normalize(&n).unwrap();
        for (x, y) in again.values().iter().zip(n.values()) {
            assert!((x - y).abs() <= 1e-12);
        }

        let z = Embedding::new(vec![0.0; 3], Layout::Flat { len: 3 }).unwrap();
        assert!(matches!(normalize(&z), Err(Error::DegenerateEmbedding(_))));
    }

    #[test]
    fn normalize_random_is_unit_and_proportional() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..20).map(|_| rng.random_range(-10.0..10.0)).collect();
        let f = Embedding::new(v.clone(), Layout::Flat { len: 20 }).unwrap();
        let n = normalize(&f).unwrap();
        assert!((n.norm() - 1.0).abs() <= 1e-12);
        let ratio = v[0] / n.values()[0];
        for (x, y) in v.iter().zip(n.values()) {
            assert!((x - ratio * y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn box_indicator_examples() {
        let whole = BoxPartLayout::new(vec![Region::new(0, 0, 3, 2)]);
        let m = box_indicator_partmap(&whole, 2, 3).unwrap();
        assert_eq!(m.channels(), 1);
        assert!(m.data().iter().all(|&v| v == 1.0));

        let halves = BoxPartLayout::new(vec![Region::new(0, 0, 2, 2), Region::new(2, 0, 4, 2)]);
        let m = box_indicator_partmap(&halves, 2, 4).unwrap();
        for d in m.descriptors() {
            assert_eq!(d.iter().sum::<f64>(), 1.0);
        }
        assert_eq!(m.descriptor_at(1, 1).unwrap(), &[1.0, 0.0]);
        assert_eq!(m.descriptor_at(3, 0).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn box_indicator_membership_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (h, w) = (7, 5);
        for _ in 0..20 {
            let k = rng.random_range(1..5);
            let regions: Vec<Region> = (0..k)
                .map(|_| {
                    let x0 = rng.random_range(0..w);
                    let y0 = rng.random_range(0..h);
                    Region::new(x0, y0, rng.random_range(x0 + 1..=w), rng.random_range(y0 + 1..=h))
                })
                .collect();
            let layout = BoxPartLayout::new(regions.clone());
            let m = box_indicator_partmap(&layout, h, w).unwrap();
            for y in 0..h {
                for x in 0..w {
                    for (c, r) in regions.iter().enumerate() {
                        let inside = x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
                        assert_eq!(m.descriptor_at(x, y).unwrap()[c], if inside { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    #[test]
    fn box_indicator_rejects_outside_region() {
        let bad = BoxPartLayout::new(vec![Region::new(0, 0, 5, 2)]);
        assert!(matches!(box_indicator_partmap(&bad, 2, 4), Err(Error::Range(_))));
        let empty = BoxPartLayout::new(vec![]);
        assert!(box_indicator_partmap(&empty, 2, 4).is_err());
    }

    #[test]
    fn global_average_examples() {
        let m = FeatureMap::from_fn(2, 3, 2, MapRole::Appearance, |_, _, _| 1.5).unwrap();
        assert_eq!(global_average_pool(&m), vec![1.5, 1.5]);
        let m = FeatureMap::new(1, 2, 1, vec![1.0, 3.0], MapRole::Appearance).unwrap();
        assert_eq!(global_average_pool(&m), vec![2.0]);
    }

    #[test]
    fn global_average_matches_channel_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_map(&mut rng, 4, 3, 5, MapRole::Appearance);
        let mut oracle = vec![0.0; 5];
        for (i, v) in m.data().iter().enumerate() {
            oracle[i % 5] += v / 12.0;
        }
        assert!(rel_close(&global_average_pool(&m), &oracle, 1e-14));
    }

    #[test]
    fn concat_average_examples() {
        let a = FeatureMap::from_fn(2, 2, 2, MapRole::Appearance, |_, _, _| 1.0).unwrap();
        let p = FeatureMap::from_fn(2, 2, 1, MapRole::Part, |_, _, _| -2.0).unwrap();
        assert_eq!(concat_average_pool(&a, &p).unwrap(), vec![1.0, 1.0, -2.0]);

        let a = FeatureMap::new(1, 1, 2, vec![4.0, 5.0], MapRole::Appearance).unwrap();
        let p = FeatureMap::new(1, 1, 1, vec![6.0], MapRole::Part).unwrap();
        assert_eq!(concat_average_pool(&a, &p).unwrap(), vec![4.0, 5.0, 6.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = random_map(&mut rng, 3, 3, 3, MapRole::Appearance);
        let p = random_map(&mut rng, 3, 3, 2, MapRole::Part);
        let mut expected = global_average_pool(&a);
        expected.extend(global_average_pool(&p));
        assert_eq!(concat_average_pool(&a, &p).unwrap(), expected);
    }

    #[test]
    fn clamp_zeroes_negatives() {
        let m = FeatureMap::new(1, 2, 2, vec![-1.0, 2.0, 0.0, -0.5], MapRole::Part).unwrap();
        assert_eq!(clamp_nonneg(&m).data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
