use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::model::{FeatureMap, ImageSample, MapRole};

/// Per-location affine map `y = W x + b`; `W` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Affine {
    pub fn new(outputs: usize, inputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != outputs * inputs || bias.len() != outputs {
            return Err(dim_err!(
                "affine {outputs}x{inputs} got {} weights and {} biases",
                weight.len(),
                bias.len()
            ));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite head parameter".into()));
        }
        Ok(Self { inputs, outputs, weight, bias })
    }

    pub fn identity(n: usize) -> Self {
        let mut weight = vec![0.0; n * n];
        for i in 0..n {
            weight[i * n + i] = 1.0;
        }
        Self { inputs: n, outputs: n, weight, bias: vec![0.0; n] }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(rng: &mut R, outputs: usize, inputs: usize) -> Self {
        let limit = libm::sqrt(6.0 / (inputs + outputs) as f64);
        let weight = (0..outputs * inputs).map(|_| rng.random_range(-limit..limit)).collect();
        Self { inputs, outputs, weight, bias: vec![0.0; outputs] }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, row), b) in out.iter_mut().zip(self.weight.chunks_exact(self.inputs)).zip(&self.bias) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Applies the map at every location of `map`.
    pub fn apply_map(&self, map: &FeatureMap, role: MapRole) -> Result<FeatureMap> {
        if map.channels() != self.inputs {
            return Err(dim_err!("head expects {} input channels, map has {}", self.inputs, map.channels()));
        }
        let mut data = vec![0.0; map.locations() * self.outputs];
        for (x, out) in map.descriptors().zip(data.chunks_exact_mut(self.outputs)) {
            self.apply_into(x, out);
        }
        FeatureMap::new(map.height(), map.width(), self.outputs, data, role)
    }
}

/// Trainable stand-ins for the last layers of the appearance and part extractors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeads {
    pub appearance: Affine,
    pub part: Affine,
    /// Clamp part descriptors at zero after the affine map.
    pub nonneg_parts: bool,
}

impl LinearHeads {
    pub fn new(appearance: Affine, part: Affine, nonneg_parts: bool) -> Self {
        Self { appearance, part, nonneg_parts }
    }

    pub fn xavier<R: Rng + ?Sized>(rng: &mut R, dims: HeadDims, nonneg_parts: bool) -> Self {
        let appearance = Affine::xavier(rng, dims.appearance_out, dims.appearance_in);
        let part = Affine::xavier(rng, dims.part_out, dims.part_in);
        Self { appearance, part, nonneg_parts }
    }

    pub fn dims(&self) -> HeadDims {
        HeadDims {
            appearance_in: self.appearance.inputs,
            appearance_out: self.appearance.outputs,
            part_in: self.part.inputs,
            part_out: self.part.outputs,
        }
    }

    pub fn num_params(&self) -> usize {
        self.appearance.num_params() + self.part.num_params()
    }

    /// Parameters in the order `W_A, b_A, W_P, b_P`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for h in [&self.appearance, &self.part] {
            out.extend_from_slice(&h.weight);
            out.extend_from_slice(&h.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(dim_err!("expected {} parameters, got {}", self.num_params(), params.len()));
        }
        let mut rest = params;
        for h in [&mut self.appearance, &mut self.part] {
            let (w, r) = rest.split_at(h.weight.len());
            let (b, r) = r.split_at(h.bias.len());
            h.weight.copy_from_slice(w);
            h.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    /// `true` for weight entries, `false` for biases, aligned with [`Self::flat_params`].
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.num_params());
        for h in [&self.appearance, &self.part] {
            out.extend(core::iter::repeat_n(true, h.weight.len()));
            out.extend(core::iter::repeat_n(false, h.bias.len()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadDims {
    pub appearance_in: usize,
    pub appearance_out: usize,
    pub part_in: usize,
    pub part_out: usize,
}

/// Gradients with the same shape as [`LinearHeads`], flattened in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub values: Vec<f64>,
}

impl HeadGradients {
    pub fn zeros(heads: &LinearHeads) -> Self {
        Self { values: vec![0.0; heads.num_params()] }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Projects a raw sample through the heads into (appearance, part) maps.
pub fn apply_heads(sample: &ImageSample, heads: &LinearHeads) -> Result<(FeatureMap, FeatureMap)> {
    let a = heads.appearance.apply_map(sample.appearance(), MapRole::Appearance)?;
    let mut p = heads.part.apply_map(sample.part(), MapRole::Part)?;
    if heads.nonneg_parts {
        p = crate::pooling::clamp_nonneg(&p);
    }
    if !a.data().iter().chain(p.data()).all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite head output for {}", sample.label.sample_id)));
    }
    Ok((a, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampleLabel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(h: usize, w: usize, ca: usize, cp: usize, seed: u64) -> ImageSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = FeatureMap::from_fn(h, w, ca, MapRole::Raw, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let p = FeatureMap::from_fn(h, w, cp, MapRole::Raw, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        ImageSample::new(SampleLabel::new("s", 0, 0), a, p).unwrap()
    }

    #[test]
    fn identity_heads_pass_maps_through() {
        let s = sample(2, 3, 4, 2, 1);
        let heads = LinearHeads::new(Affine::identity(4), Affine::identity(2), false);
        let (a, p) = apply_heads(&s, &heads).unwrap();
        assert_eq!(a.data(), s.appearance().data());
        assert_eq!(p.data(), s.part().data());
        assert_eq!(a.role(), MapRole::Appearance);
    }

    #[test]
    fn nonneg_clamps_negative_part_outputs() {
        let s = sample(2, 2, 2, 3, 2);
        let part = Affine::new(2, 3, vec![0.0; 6], vec![-1.0, -0.5]).unwrap();
        let heads = LinearHeads::new(Affine::identity(2), part, true);
        let (_, p) = apply_heads(&s, &heads).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heads_match_matrix_multiply() {
        let s = sample(3, 2, 5, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut heads = LinearHeads::xavier(
            &mut rng,
            HeadDims { appearance_in: 5, appearance_out: 4, part_in: 3, part_out: 2 },
            false,
        );
        let n = heads.num_params();
        let params: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        heads.set_flat_params(&params).unwrap();
        let (a, p) = apply_heads(&s, &heads).unwrap();
        for loc in 0..6 {
            let x = s.appearance().descriptor(loc);
            for o in 0..4 {
                let mut acc = heads.appearance.bias()[o];
                for i in 0..5 {
                    acc += heads.appearance.weight()[o * 5 + i] * x[i];
                }
                assert!((a.descriptor(loc)[o] - acc).abs() < 1e-14);
            }
            let x = s.part().descriptor(loc);
            for o in 0..2 {
                let mut acc = heads.part.bias()[o];
                for i in 0..3 {
                    acc += heads.part.weight()[o * 3 + i] * x[i];
                }
                assert!((p.descriptor(loc)[o] - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = sample(2, 2, 3, 2, 5);
        let heads = LinearHeads::new(Affine::identity(4), Affine::identity(2), false);
        assert!(matches!(apply_heads(&s, &heads), Err(Error::Dimension(_))));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut heads = LinearHeads::xavier(
            &mut rng,
            HeadDims { appearance_in: 3, appearance_out: 2, part_in: 2, part_out: 2 },
            false,
        );
        let p: Vec<f64> = (0..heads.num_params()).map(|i| i as f64).collect();
        heads.set_flat_params(&p).unwrap();
        assert_eq!(heads.flat_params(), p);
        assert_eq!(heads.appearance.bias(), &[6.0, 7.0]);
        let mask = heads.weight_mask();
        assert_eq!(mask.iter().filter(|m| !**m).count(), 4);
        assert!(heads.set_flat_params(&p[1..]).is_err());
    }
}
