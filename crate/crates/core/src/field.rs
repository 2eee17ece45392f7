//! Images, grayvalue grids, histograms and lifted fields.
//!
//! A [`LiftedField`] stores `k + 1` planes per pixel. Plane `0` is fixed to 1
//! and plane `k` to 0; the drop between planes `i` and `i + 1` encodes the
//! grayvalue `g_i = i / (k - 1)` (0-based). Storage is plane-major so that all
//! pixels of one plane are contiguous.

use crate::error::{Error, Result};

/// Tolerance used when validating constructed fields and histograms.
pub const FIELD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from row-major intensities in `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} intensities, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidImage(format!(
                "intensity {v} at index {i} outside [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Snaps every intensity to its nearest grid level.
    pub fn quantized(&self, grid: &LevelGrid) -> Image {
        let data = self
            .data
            .iter()
            .map(|&v| grid.level(grid.nearest_index(v)))
            .collect();
        Image {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Uniform grid of `k ≥ 2` representable grayvalues `0, 1/(k-1), ..., 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelGrid {
    k: usize,
}

impl LevelGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::TooFewLevels(k));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Level spacing `Δγ = 1 / (k - 1)`.
    pub fn step(&self) -> f64 {
        1.0 / (self.k - 1) as f64
    }

    /// Grayvalue of the 0-based level `i`.
    pub fn level(&self, i: usize) -> f64 {
        i as f64 / (self.k - 1) as f64
    }

    pub fn levels(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.level(i)).collect()
    }

    /// Index of the nearest level; exact midpoints go to the lower level.
    pub fn nearest_index(&self, value: f64) -> usize {
        let t = value.clamp(0.0, 1.0) * (self.k - 1) as f64;
        let i = (t - 0.5).ceil().max(0.0) as usize;
        i.min(self.k - 1)
    }

    pub(crate) fn ensure_same(&self, other: &LevelGrid) -> Result<()> {
        if self.k != other.k {
            return Err(Error::GridMismatch(self.k, other.k));
        }
        Ok(())
    }
}

/// Probability vector over the levels of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    grid: LevelGrid,
    mass: Vec<f64>,
}

impl Histogram {
    pub fn new(grid: LevelGrid, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.k() {
            return Err(Error::InvalidHistogram(format!(
                "expected {} bins, got {}",
                grid.k(),
                mass.len()
            )));
        }
        if let Some((i, m)) = mass
            .iter()
            .enumerate()
            .find(|(_, m)| !m.is_finite() || **m < 0.0)
        {
            return Err(Error::InvalidHistogram(format!(
                "bin {i} has invalid mass {m}"
            )));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > FIELD_TOL {
            return Err(Error::InvalidHistogram(format!(
                "masses sum to {total}, expected 1"
            )));
        }
        Ok(Self { grid, mass })
    }

    /// Point mass at level `i`.
    pub fn dirac(grid: LevelGrid, i: usize) -> Self {
        let mut mass = vec![0.0; grid.k()];
        mass[i] = 1.0;
        Self { grid, mass }
    }

    pub fn uniform(grid: LevelGrid) -> Self {
        let k = grid.k();
        Self {
            grid,
            mass: vec![1.0 / k as f64; k],
        }
    }

    /// Rescales nonnegative weights to unit mass.
    pub fn normalized(grid: LevelGrid, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidHistogram(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Self::new(grid, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn grid(&self) -> LevelGrid {
        self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
}

/// Cumulative distribution function sampled at the grid levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf {
    grid: LevelGrid,
    values: Vec<f64>,
}

impl Cdf {
    pub fn grid(&self) -> LevelGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Dimensions of a lifted field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftedShape {
    pub width: usize,
    pub height: usize,
    pub k: usize,
}

impl LiftedShape {
    pub fn new(width: usize, height: usize, k: usize) -> Self {
        Self { width, height, k }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Number of planes not pinned by the boundary conditions (`k - 1`).
    pub fn free_planes(&self) -> usize {
        self.k - 1
    }

    /// Length of a buffer holding every free plane.
    pub fn free_len(&self) -> usize {
        self.pixels() * self.free_planes()
    }
}

/// Values on the free planes `1..k` of a lifted field, without any
/// constraint. This is what the splitting iterates live in.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneStack {
    shape: LiftedShape,
    data: Vec<f64>,
}

impl PlaneStack {
    pub fn new(shape: LiftedShape, data: Vec<f64>) -> Result<Self> {
        if shape.k < 2 {
            return Err(Error::TooFewLevels(shape.k));
        }
        if data.len() != shape.free_len() {
            return Err(Error::ShapeMismatch(format!(
                "plane stack needs {} values, got {}",
                shape.free_len(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: LiftedShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.free_len()],
        }
    }

    pub fn shape(&self) -> LiftedShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Free plane `l` in `1..k`.
    pub fn plane(&self, l: usize) -> &[f64] {
        let n = self.shape.pixels();
        &self.data[(l - 1) * n..l * n]
    }

    pub fn plane_mut(&mut self, l: usize) -> &mut [f64] {
        let n = self.shape.pixels();
        &mut self.data[(l - 1) * n..l * n]
    }
}

/// A field in the discretized relaxed lifting set: boundary planes fixed,
/// values in `[0,1]`, non-increasing along the level axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedField {
    shape: LiftedShape,
    planes: Vec<f64>,
}

impl LiftedField {
    /// Validates all constraints within [`FIELD_TOL`].
    pub fn new(shape: LiftedShape, planes: Vec<f64>) -> Result<Self> {
        if shape.k < 2 {
            return Err(Error::TooFewLevels(shape.k));
        }
        if shape.width == 0 || shape.height == 0 {
            return Err(Error::InvalidField("empty pixel domain".into()));
        }
        let n = shape.pixels();
        if planes.len() != n * (shape.k + 1) {
            return Err(Error::InvalidField(format!(
                "expected {} values, got {}",
                n * (shape.k + 1),
                planes.len()
            )));
        }
        for x in 0..n {
            if (planes[x] - 1.0).abs() > FIELD_TOL {
                return Err(Error::InvalidField(format!("plane 0 at pixel {x} is not 1")));
            }
            if planes[shape.k * n + x].abs() > FIELD_TOL {
                return Err(Error::InvalidField(format!("plane k at pixel {x} is not 0")));
            }
            for l in 1..=shape.k {
                let v = planes[l * n + x];
                if !(-FIELD_TOL..=1.0 + FIELD_TOL).contains(&v) {
                    return Err(Error::InvalidField(format!(
                        "value {v} at pixel {x}, plane {l} outside [0,1]"
                    )));
                }
                if v > planes[(l - 1) * n + x] + FIELD_TOL {
                    return Err(Error::InvalidField(format!(
                        "increase at pixel {x} between planes {} and {l}",
                        l - 1
                    )));
                }
            }
        }
        Ok(Self { shape, planes })
    }

    /// Completes free-plane values with the fixed boundary planes. The
    /// values must already satisfy the box and monotonicity constraints.
    pub fn from_free(stack: &PlaneStack) -> Result<Self> {
        let shape = stack.shape();
        let n = shape.pixels();
        let mut planes = Vec::with_capacity(n * (shape.k + 1));
        planes.extend(std::iter::repeat_n(1.0, n));
        planes.extend_from_slice(stack.data());
        planes.extend(std::iter::repeat_n(0.0, n));
        Self::new(shape, planes)
    }

    pub fn shape(&self) -> LiftedShape {
        self.shape
    }

    pub fn grid(&self) -> LevelGrid {
        LevelGrid { k: self.shape.k }
    }

    pub fn planes(&self) -> &[f64] {
        &self.planes
    }

    /// Plane `l` in `0..=k`.
    pub fn plane(&self, l: usize) -> &[f64] {
        let n = self.shape.pixels();
        &self.planes[l * n..(l + 1) * n]
    }

    pub fn get(&self, pixel: usize, l: usize) -> f64 {
        self.planes[l * self.shape.pixels() + pixel]
    }

    /// The `k + 1` values of one pixel.
    pub fn column(&self, pixel: usize) -> Vec<f64> {
        let n = self.shape.pixels();
        (0..=self.shape.k).map(|l| self.planes[l * n + pixel]).collect()
    }

    /// Copy of the free planes `1..k`.
    pub fn free_planes(&self) -> PlaneStack {
        let n = self.shape.pixels();
        PlaneStack {
            shape: self.shape,
            data: self.planes[n..self.shape.k * n].to_vec(),
        }
    }

    /// Convex combination `a·self + (1-a)·other`.
    pub fn blend(&self, other: &LiftedField, a: f64) -> Result<LiftedField> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch("blended fields differ in shape".into()));
        }
        let planes = self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(p, q)| a * p + (1.0 - a) * q)
            .collect();
        LiftedField::new(self.shape, planes)
    }

    /// Share of free-plane entries strictly inside `(lo, hi)`.
    pub fn nonintegral_fraction(&self, lo: f64, hi: f64) -> f64 {
        let n = self.shape.pixels();
        let free = &self.planes[n..self.shape.k * n];
        let count = free.iter().filter(|&&v| v > lo && v < hi).count();
        count as f64 / free.len() as f64
    }
}

/// Binary lifting: the upper-level-set indicator of the quantized image.
pub fn lift(image: &Image, grid: &LevelGrid) -> LiftedField {
    let n = image.len();
    let k = grid.k();
    let mut planes = vec![0.0; n * (k + 1)];
    for (x, &v) in image.data().iter().enumerate() {
        // level i is encoded by ones on planes 0..=i
        let i = grid.nearest_index(v);
        for l in 0..=i {
            planes[l * n + x] = 1.0;
        }
    }
    LiftedField {
        shape: LiftedShape::new(image.width(), image.height(), k),
        planes,
    }
}

/// Recovers an image from a (possibly relaxed) field. Pixel `x` gets the
/// level encoded by the first plane `l ≥ 1` with `φ(x, l) ≤ alpha`.
pub fn threshold(field: &LiftedField, alpha: f64) -> Image {
    let shape = field.shape();
    let n = shape.pixels();
    let grid = field.grid();
    let data = (0..n)
        .map(|x| {
            let first = (1..=shape.k)
                .find(|&l| field.planes[l * n + x] <= alpha)
                .unwrap_or(shape.k);
            grid.level(first - 1)
        })
        .collect();
    Image {
        width: shape.width,
        height: shape.height,
        data,
    }
}

/// Histogram of a lifted field: mean drop between consecutive planes.
pub fn marginal_histogram(field: &LiftedField) -> Histogram {
    let shape = field.shape();
    let n = shape.pixels();
    let mass: Vec<f64> = (0..shape.k)
        .map(|i| {
            let upper = field.plane(i);
            let lower = field.plane(i + 1);
            let drop: f64 = upper.iter().zip(lower).map(|(a, b)| a - b).sum();
            (drop / n as f64).max(0.0)
        })
        .collect();
    Histogram {
        grid: field.grid(),
        mass,
    }
}

/// Grayvalue histogram with nearest-level binning.
pub fn histogram_of(image: &Image, grid: &LevelGrid) -> Histogram {
    let mut counts = vec![0usize; grid.k()];
    for &v in image.data() {
        counts[grid.nearest_index(v)] += 1;
    }
    let n = image.len() as f64;
    Histogram {
        grid: *grid,
        mass: counts.into_iter().map(|c| c as f64 / n).collect(),
    }
}

pub fn cdf_of(h: &Histogram) -> Cdf {
    let mut acc = 0.0;
    let mut values: Vec<f64> = h
        .mass()
        .iter()
        .map(|m| {
            acc += m;
            acc.min(1.0)
        })
        .collect();
    if let Some(last) = values.last_mut() {
        *last = 1.0;
    }
    Cdf {
        grid: h.grid(),
        values,
    }
}
