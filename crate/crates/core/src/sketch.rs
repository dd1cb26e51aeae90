//! Compact bilinear pooling via tensor sketch.
//!
//! Each stream is count-sketched into `d` buckets with its own random hash and
//! sign functions; the circular convolution of the two sketches is a sketch of
//! the outer product. Inner products of such sketches are unbiased estimates of
//! the inner products of the exact bilinear vectors, with variance falling as
//! `1/d`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::fft::{fft_in_place, real_fft, Direction};
use crate::model::{dot, Embedding, FeatureMap, Layout};

/// Output dimension used when none is given.
pub const DEFAULT_SKETCH_DIM: usize = 512;

/// Hash and sign functions of one count sketch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSketch {
    dim: usize,
    hash: Vec<usize>,
    sign: Vec<i8>,
}

impl CountSketch {
    pub fn from_parts(dim: usize, hash: Vec<usize>, sign: Vec<i8>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("sketch dimension must be positive".into()));
        }
        if hash.len() != sign.len() {
            return Err(dim_err!("{} hashes but {} signs", hash.len(), sign.len()));
        }
        if let Some(h) = hash.iter().find(|&&h| h >= dim) {
            return Err(Error::Range(format!("bucket {h} outside 0..{dim}")));
        }
        if sign.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Config("signs must be +1 or -1".into()));
        }
        Ok(Self { dim, hash, sign })
    }

    fn random(rng: &mut ChaCha8Rng, input_dim: usize, dim: usize) -> Self {
        let mut hash = Vec::with_capacity(input_dim);
        let mut sign = Vec::with_capacity(input_dim);
        for _ in 0..input_dim {
            hash.push(rng.random_range(0..dim as u32) as usize);
            sign.push(if rng.random::<bool>() { 1 } else { -1 });
        }
        Self { dim, hash, sign }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.hash.len()
    }

    pub fn hash(&self) -> &[usize] {
        &self.hash
    }

    pub fn sign(&self) -> &[i8] {
        &self.sign
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        count_sketch(x, self)
    }
}

/// Two independent count sketches (appearance side, part side) sharing one
/// output dimension. Rebuilt deterministically from `seed`; never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchParams {
    seed: u64,
    appearance: CountSketch,
    part: CountSketch,
}

impl SketchParams {
    /// Draws the hash/sign tables from a ChaCha8 stream keyed by `seed`; the
    /// appearance and part tables use separate stream ids.
    pub fn new(seed: u64, appearance_dim: usize, part_dim: usize, dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Config(format!("sketch dimension {dim} out of range")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let appearance = CountSketch::random(&mut rng, appearance_dim, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let part = CountSketch::random(&mut rng, part_dim, dim);
        Ok(Self { seed, appearance, part })
    }

    pub fn from_sketches(seed: u64, appearance: CountSketch, part: CountSketch) -> Result<Self> {
        if appearance.dim != part.dim {
            return Err(dim_err!("sketch dims {} and {} differ", appearance.dim, part.dim));
        }
        Ok(Self { seed, appearance, part })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.appearance.dim
    }

    pub fn appearance(&self) -> &CountSketch {
        &self.appearance
    }

    pub fn part(&self) -> &CountSketch {
        &self.part
    }

    pub fn layout(&self) -> Layout {
        Layout::Sketched { dim: self.dim() }
    }
}

/// `out[j] = Σ_{i : hash(i) = j} sign(i) · x[i]`.
pub fn count_sketch(x: &[f64], cs: &CountSketch) -> Result<Vec<f64>> {
    if x.len() != cs.input_dim() {
        return Err(dim_err!("count sketch expects {} inputs, got {}", cs.input_dim(), x.len()));
    }
    let mut out = vec![0.0; cs.dim];
    for ((&v, &h), &s) in x.iter().zip(&cs.hash).zip(&cs.sign) {
        out[h] += f64::from(s) * v;
    }
    Ok(out)
}

/// `out[k] = Σ_j u[j] · v[(k − j) mod d]`. Uses the FFT when `d` is a power of two.
pub fn circular_convolve(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(dim_err!("convolution operands of length {} and {}", u.len(), v.len()));
    }
    let d = u.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    if d.is_power_of_two() {
        let fu = real_fft(u);
        let mut fv = real_fft(v);
        for (b, a) in fv.iter_mut().zip(&fu) {
            *b *= a;
        }
        fft_in_place(&mut fv, Direction::Inverse);
        Ok(fv.into_iter().map(|z| z.re).collect())
    } else {
        Ok(convolve_direct(u, v))
    }
}

fn convolve_direct(u: &[f64], v: &[f64]) -> Vec<f64> {
    let d = u.len();
    let mut out = vec![0.0; d];
    for (j, &uj) in u.iter().enumerate() {
        if uj == 0.0 {
            continue;
        }
        for (m, &vm) in v.iter().enumerate() {
            out[(j + m) % d] += uj * vm;
        }
    }
    out
}

/// `out[j] = Σ_k g[k] · v[(k − j) mod d]`, the adjoint of convolving with `v`.
pub(crate) fn circular_correlate(g: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let d = v.len();
    // reversed[m] = v[(-m) mod d], so correlation becomes a convolution.
    let reversed: Vec<f64> = (0..d).map(|m| v[(d - m) % d]).collect();
    circular_convolve(g, &reversed)
}

/// Tensor sketch of `vec(a ⊗ p)`.
pub fn tensor_sketch_local(a: &[f64], p: &[f64], params: &SketchParams) -> Result<Vec<f64>> {
    let sa = count_sketch(a, &params.appearance)?;
    let sp = count_sketch(p, &params.part)?;
    circular_convolve(&sa, &sp)
}

/// Spatial average of per-location tensor sketches.
pub fn compact_bilinear_pool(appearance: &FeatureMap, part: &FeatureMap, params: &SketchParams) -> Result<Embedding> {
    appearance.check_same_grid(part)?;
    let d = params.dim();
    let s = appearance.locations() as f64;
    let values = if d.is_power_of_two() {
        // Convolution is linear, so the per-location products are summed in the
        // frequency domain and inverted once.
        let mut acc = vec![Complex64::new(0.0, 0.0); d];
        for (a, p) in appearance.descriptors().zip(part.descriptors()) {
            let fa = real_fft(&count_sketch(a, &params.appearance)?);
            let fp = real_fft(&count_sketch(p, &params.part)?);
            for ((o, x), y) in acc.iter_mut().zip(&fa).zip(&fp) {
                *o += x * y;
            }
        }
        fft_in_place(&mut acc, Direction::Inverse);
        acc.into_iter().map(|z| z.re / s).collect()
    } else {
        let mut acc = vec![0.0; d];
        for (a, p) in appearance.descriptors().zip(part.descriptors()) {
            for (o, v) in acc.iter_mut().zip(tensor_sketch_local(a, p, params)?) {
                *o += v;
            }
        }
        acc.into_iter().map(|v| v / s).collect()
    };
    Embedding::new(values, params.layout())
}

/// Dot product of two sketches built with the same parameters.
pub fn estimate_inner_product(e1: &Embedding, e2: &Embedding) -> Result<f64> {
    if !matches!(e1.layout(), Layout::Sketched { .. }) {
        return Err(dim_err!("expected a sketched embedding, got {}", e1.layout()));
    }
    e1.check_same_layout(e2)?;
    Ok(dot(e1.values(), e2.values()))
}
