//! PCA rendering against an independent Jacobi eigendecomposition.

#![allow(clippy::needless_range_loop)]

use pabr::viz::{render, Pca};
use pabr_core::model::{FeatureMap, MapRole};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi rotations; returns eigenvalues and column eigenvectors.
fn jacobi(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

fn unit(d: &[f64]) -> Vec<f64> {
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.iter().map(|x| x / n).collect()
}

#[test]
fn reconstruction_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..10 {
        let c = rng.random_range(4..9);
        let maps: Vec<FeatureMap> = (0..3)
            .map(|_| FeatureMap::from_fn(3, 4, c, MapRole::Appearance, |_, _, _| rng.random_range(-1.0..1.0)).unwrap())
            .collect();
        let rendering = render(&maps).unwrap();
        assert!(rendering.warnings.is_empty());

        let descriptors: Vec<Vec<f64>> = maps.iter().flat_map(|m| m.descriptors().map(unit)).collect();
        let n = descriptors.len() as f64;
        let mean: Vec<f64> = (0..c).map(|i| descriptors.iter().map(|d| d[i]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..c)
            .map(|i| (0..c).map(|j| descriptors.iter().map(|d| (d[i] - mean[i]) * (d[j] - mean[j])).sum::<f64>() / n).collect())
            .collect();
        let (values, vectors) = jacobi(cov);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let top: Vec<&Vec<f64>> = order.iter().take(3).map(|&k| &vectors[k]).collect();

        for (k, &idx) in order.iter().take(3).enumerate() {
            assert!((rendering.pca.eigenvalues[k] - values[idx]).abs() <= 1e-9, "trial {trial}");
        }
        for d in &descriptors {
            let mut oracle = mean.clone();
            for v in &top {
                let s: f64 = v.iter().zip(d).zip(&mean).map(|((a, x), m)| a * (x - m)).sum();
                oracle.iter_mut().zip(v.iter()).for_each(|(o, a)| *o += s * a);
            }
            let ours = rendering.pca.reconstruct(d);
            for (a, b) in ours.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-6, "trial {trial}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn channels_span_the_full_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = FeatureMap::from_fn(4, 4, 5, MapRole::Part, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
    let r = render(&[m]).unwrap();
    for ch in 0..3 {
        let vals: Vec<u8> = r.images[0].pixels.iter().map(|p| p[ch]).collect();
        assert_eq!(vals.iter().min(), Some(&0));
        assert_eq!(vals.iter().max(), Some(&255));
    }
}

#[test]
fn fit_requires_three_descriptors() {
    assert!(Pca::fit(&[vec![1.0], vec![2.0]]).is_err());
}
