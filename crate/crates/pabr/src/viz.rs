//! False-colour rendering of feature maps.
//!
//! Every local descriptor in a collection is scaled to unit length, the
//! collection's principal components are computed, and each location is
//! projected onto the top three. Each component is stretched to `[0, 255]`
//! over the whole collection and becomes one RGB channel. Components the
//! covariance cannot supply are painted a flat 128.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use pabr_core::model::FeatureMap;

use crate::error::{Error, Result};

/// Eigenvalues at or below this (relative to the largest, or absolutely)
/// count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Grey level of a channel with no component behind it.
pub const PAD_LEVEL: u8 = 128;

/// Principal axes of a descriptor collection, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors with non-negligible eigenvalue, at most three.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

fn unit(d: &[f64]) -> Vec<f64> {
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        d.to_vec()
    } else {
        d.iter().map(|v| v / n).collect()
    }
}

impl Pca {
    /// Fits the top three components of the given descriptors.
    pub fn fit(descriptors: &[Vec<f64>]) -> Result<Self> {
        let n = descriptors.len();
        if n < 3 {
            return Err(Error::Validation(format!("need at least 3 descriptors, got {n}")));
        }
        let c = descriptors[0].len();
        let mut mean = vec![0.0; c];
        for d in descriptors {
            mean.iter_mut().zip(d).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut cov = DMatrix::<f64>::zeros(c, c);
        for d in descriptors {
            let centred: Vec<f64> = d.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..c {
                for j in 0..c {
                    cov[(i, j)] += centred[i] * centred[j] / n as f64;
                }
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut components = Vec::new();
        let mut eigenvalues = Vec::new();
        for &k in order.iter().take(3) {
            let lambda = eig.eigenvalues[k];
            if lambda <= RANK_TOLERANCE || lambda <= RANK_TOLERANCE * top {
                break;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // first (near-)largest-magnitude entry positive, so colours do not flip between runs
            let big = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let pivot = v.iter().copied().find(|x| x.abs() >= big - 1e-9).unwrap_or(0.0);
            if pivot < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            eigenvalues.push(lambda);
        }
        Ok(Self { mean, components, eigenvalues })
    }

    pub fn project(&self, d: &[f64]) -> Vec<f64> {
        self.components.iter().map(|v| v.iter().zip(d).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum()).collect()
    }

    /// `mean + Σ ⟨v, d − mean⟩ v` over the kept components.
    pub fn reconstruct(&self, d: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (s, v) in self.project(d).iter().zip(&self.components) {
            out.iter_mut().zip(v).for_each(|(o, a)| *o += s * a);
        }
        out
    }
}

/// An 8-bit RGB image, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    /// Binary portable pixmap (`P6`).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VizWarning {
    RankDeficient { components: usize },
}

impl fmt::Display for VizWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VizWarning::RankDeficient { components } => write!(
                f,
                "descriptor covariance has {components} non-zero component(s); remaining channels set to {PAD_LEVEL}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub pca: Pca,
    pub images: Vec<RgbImage>,
    pub warnings: Vec<VizWarning>,
}

/// Renders every map with a PCA shared across the collection.
pub fn render(maps: &[FeatureMap]) -> Result<Rendering> {
    let first = maps.first().ok_or_else(|| Error::Validation("no maps to render".into()))?;
    if let Some(m) = maps.iter().find(|m| m.channels() != first.channels()) {
        return Err(Error::Validation(format!(
            "maps mix {} and {} channels",
            first.channels(),
            m.channels()
        )));
    }
    let descriptors: Vec<Vec<f64>> = maps.iter().flat_map(|m| m.descriptors().map(unit)).collect();
    let pca = Pca::fit(&descriptors)?;
    let scores: Vec<Vec<f64>> = descriptors.iter().map(|d| pca.project(d)).collect();

    let k = pca.components.len();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); k];
    for s in &scores {
        for (r, v) in ranges.iter_mut().zip(s) {
            *r = (r.0.min(*v), r.1.max(*v));
        }
    }
    let level = |j: usize, v: f64| -> u8 {
        let (lo, hi) = ranges[j];
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            PAD_LEVEL
        }
    };

    let mut images = Vec::with_capacity(maps.len());
    let mut next = scores.iter();
    for m in maps {
        let pixels = (0..m.locations())
            .map(|_| {
                let s = next.next().expect("one score per location");
                let mut px = [PAD_LEVEL; 3];
                for (j, v) in s.iter().enumerate() {
                    px[j] = level(j, *v);
                }
                px
            })
            .collect();
        images.push(RgbImage { width: m.width(), height: m.height(), pixels });
    }
    let warnings = if k < 3 { vec![VizWarning::RankDeficient { components: k }] } else { Vec::new() };
    Ok(Rendering { pca, images, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pabr_core::model::MapRole;

    #[test]
    fn identical_descriptors_give_flat_image() {
        let m = FeatureMap::from_fn(3, 2, 4, MapRole::Appearance, |_, _, k| k as f64 + 1.0).unwrap();
        let r = render(&[m]).unwrap();
        assert!(r.pca.components.is_empty());
        assert_eq!(r.warnings, vec![VizWarning::RankDeficient { components: 0 }]);
        assert!(r.images[0].pixels.iter().all(|p| *p == [128, 128, 128]));
    }

    #[test]
    fn one_varying_axis_is_greyscale_in_red() {
        // after normalization every descriptor is e0 or e1: rank one
        let m = FeatureMap::from_fn(2, 3, 3, MapRole::Part, |x, y, k| match (k, (x + y) % 2) {
            (0, 0) => 1.0 + x as f64,
            (1, 1) => 0.5,
            _ => 0.0,
        })
        .unwrap();
        let r = render(&[m]).unwrap();
        assert_eq!(r.pca.components.len(), 1);
        assert_eq!(r.warnings, vec![VizWarning::RankDeficient { components: 1 }]);
        let px = &r.images[0].pixels;
        assert!(px[0][0] == 0 || px[0][0] == 255);
        for (i, p) in px.iter().enumerate() {
            let (x, y) = (i % 3, i / 3);
            let expected = if (x + y) % 2 == 0 { px[0][0] } else { 255 - px[0][0] };
            assert_eq!(p[0], expected, "{i}");
            assert_eq!(&p[1..], &[128, 128]);
        }
    }

    #[test]
    fn ppm_header() {
        let img = RgbImage { width: 2, height: 1, pixels: vec![[1, 2, 3], [4, 5, 6]] };
        assert_eq!(img.to_ppm(), b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06".to_vec());
    }

    #[test]
    fn too_few_descriptors() {
        let m = FeatureMap::zeros(1, 2, 3, MapRole::Raw).unwrap();
        assert!(matches!(render(&[m]), Err(Error::Validation(_))));
    }
}
