//! Feature maps, embeddings and labelled samples.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{dim_err, Error, Result};

/// Identity label reserved for distractor images. A distractor is never a
/// correct match for any query.
pub const DISTRACTOR: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapRole {
    Appearance,
    Part,
    Raw,
}

impl MapRole {
    pub fn code(self) -> u8 {
        match self {
            MapRole::Appearance => 0,
            MapRole::Part => 1,
            MapRole::Raw => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MapRole::Appearance),
            1 => Some(MapRole::Part),
            2 => Some(MapRole::Raw),
            _ => None,
        }
    }
}

/// A single invariant violation found by [`validate_map`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroDimension { axis: &'static str },
    Length { expected: usize, actual: usize },
    NonFinite { index: usize, value: f64 },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::ZeroDimension { .. } => "zero-dimension",
            Violation::Length { .. } => "length",
            Violation::NonFinite { .. } => "non-finite",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroDimension { axis } => write!(f, "zero-dimension: {axis} is 0"),
            Violation::Length { expected, actual } => {
                write!(f, "length: expected {expected} values, found {actual}")
            }
            Violation::NonFinite { index, value } => {
                write!(f, "non-finite: value {value} at flat index {index}")
            }
        }
    }
}

/// Reports every invariant violation of a candidate map. An empty list means
/// the parts form a valid [`FeatureMap`].
pub fn validate_map(height: usize, width: usize, channels: usize, data: &[f64]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (axis, n) in [("height", height), ("width", width), ("channels", channels)] {
        if n == 0 {
            out.push(Violation::ZeroDimension { axis });
        }
    }
    let expected = height * width * channels;
    if data.len() != expected {
        out.push(Violation::Length { expected, actual: data.len() });
    }
    out.extend(
        data.iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(index, &value)| Violation::NonFinite { index, value }),
    );
    out
}

/// An `h × w` grid of `c`-dimensional descriptors, stored row-major as
/// `(y, x, channel)` with the channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    role: MapRole,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>, role: MapRole) -> Result<Self> {
        let violations = validate_map(height, width, channels, &data);
        if let Some(first) = violations.first() {
            return Err(Error::InvalidMap(format!("{first} ({} violation(s))", violations.len())));
        }
        Ok(Self { height, width, channels, data, role })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, role: MapRole) -> Result<Self> {
        Self::new(height, width, channels, alloc::vec![0.0; height * width * channels], role)
    }

    /// Builds a map by evaluating `f(x, y, channel)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        role: MapRole,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for k in 0..channels {
                    data.push(f(x, y, k));
                }
            }
        }
        Self::new(height, width, channels, data, role)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn role(&self) -> MapRole {
        self.role
    }

    /// Number of spatial locations `S = h·w`.
    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn with_role(mut self, role: MapRole) -> Self {
        self.role = role;
        self
    }

    /// The descriptor at column `x`, row `y`.
    pub fn descriptor_at(&self, x: usize, y: usize) -> Result<&[f64]> {
        if x >= self.width || y >= self.height {
            return Err(Error::Range(format!(
                "location ({x}, {y}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(self.descriptor(y * self.width + x))
    }

    /// The descriptor at flat location index `s = y·w + x`.
    ///
    /// Panics if `s >= h·w`.
    #[inline]
    pub fn descriptor(&self, s: usize) -> &[f64] {
        &self.data[s * self.channels..(s + 1) * self.channels]
    }

    /// Descriptors in location order.
    pub fn descriptors(&self) -> core::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    pub fn same_grid(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_grid(&self, other: &FeatureMap) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(dim_err!(
                "grid {}x{} does not match {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ))
        }
    }
}

/// How the values of an [`Embedding`] are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// `vec(a ⊗ p)`: `part` blocks of `appearance` values, one block per part channel.
    Exact { appearance: usize, part: usize },
    /// Tensor-sketched vector of dimension `dim`.
    Sketched { dim: usize },
    /// Plain pooled vector used by the baseline aggregators.
    Flat { len: usize },
}

impl Layout {
    pub fn len(self) -> usize {
        match self {
            Layout::Exact { appearance, part } => appearance * part,
            Layout::Sketched { dim } => dim,
            Layout::Flat { len } => len,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Exact { appearance, part } => write!(f, "exact:{appearance}x{part}"),
            Layout::Sketched { dim } => write!(f, "sketched:{dim}"),
            Layout::Flat { len } => write!(f, "flat:{len}"),
        }
    }
}

impl core::str::FromStr for Layout {
    type Err = Error;

    /// Parses the [`Display`](fmt::Display) form, e.g. `exact:8x4`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized layout {s:?}"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        match kind {
            "exact" => {
                let (a, p) = rest.split_once('x').ok_or_else(bad)?;
                Ok(Layout::Exact { appearance: num(a)?, part: num(p)? })
            }
            "sketched" => Ok(Layout::Sketched { dim: num(rest)? }),
            "flat" => Ok(Layout::Flat { len: num(rest)? }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    layout: Layout,
    normalized: bool,
}

/// Maximum deviation of a normalized embedding's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl Embedding {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(dim_err!("layout {layout} needs {} values, got {}", layout.len(), values.len()));
        }
        Ok(Self { values, layout, normalized: false })
    }

    /// Wraps values that are already unit-norm (or identically zero).
    pub fn new_normalized(values: Vec<f64>, layout: Layout) -> Result<Self> {
        let mut e = Self::new(values, layout)?;
        let norm = e.norm();
        if norm != 0.0 && (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Numeric(format!("norm {norm} is not 1 within {UNIT_NORM_TOLERANCE}")));
        }
        e.normalized = true;
        Ok(e)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.values, &self.values))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub(crate) fn check_same_layout(&self, other: &Embedding) -> Result<()> {
        if self.layout == other.layout {
            Ok(())
        } else {
            Err(dim_err!("layout {} does not match {}", self.layout, other.layout))
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which part of an experiment a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl core::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Identity and camera labels of one image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleLabel {
    pub sample_id: String,
    /// `-1` ([`DISTRACTOR`]) marks a distractor.
    pub identity: i64,
    pub camera: u32,
}

impl SampleLabel {
    pub fn new(sample_id: impl Into<String>, identity: i64, camera: u32) -> Self {
        Self { sample_id: sample_id.into(), identity, camera }
    }

    pub fn is_distractor(&self) -> bool {
        self.identity == DISTRACTOR
    }
}

/// One image: its labels plus an appearance map and a part map on a shared grid.
/// The maps are either already projected (appearance/part) or raw inputs to the
/// trainable heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub label: SampleLabel,
    appearance: FeatureMap,
    part: FeatureMap,
}

impl ImageSample {
    pub fn new(label: SampleLabel, appearance: FeatureMap, part: FeatureMap) -> Result<Self> {
        appearance.check_same_grid(&part)?;
        Ok(Self { label, appearance, part })
    }

    pub fn appearance(&self) -> &FeatureMap {
        &self.appearance
    }

    pub fn part(&self) -> &FeatureMap {
        &self.part
    }

    pub fn into_maps(self) -> (FeatureMap, FeatureMap) {
        (self.appearance, self.part)
    }
}
