//! Grid data types shared by the solver, the backward pass and the inversion.
//!
//! All per-node arrays are stored row-major. Physical coordinates use
//! `x = col * h` and `y = row * h`, so the first vector component runs along
//! columns and the second along rows (downwards).

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::linalg::{Sym2, Vec2};

/// Sentinel arrival time for nodes the front has not reached.
pub const UNREACHED: f64 = 1e10;

/// Any arrival time at or above this value is treated as unreached.
pub const UNREACHED_THRESHOLD: f64 = 1e9;

#[inline]
pub fn is_reached(t: f64) -> bool {
    t < UNREACHED_THRESHOLD
}

/// Dense row-major 2-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type ScalarField = Grid2<f64>;

impl<T: Clone> Grid2<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Grid2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Grid2 { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid2 { rows, cols, data }
    }

    pub fn map<U: Clone>(&self, f: impl FnMut(&T) -> U) -> Grid2<U> {
        Grid2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T> Grid2<T> {
    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }
}

impl<T> Index<(usize, usize)> for Grid2<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid2<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

impl<T> Index<usize> for Grid2<T> {
    type Output = T;

    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> IndexMut<usize> for Grid2<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// Grid dimensions and physical spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub h: f64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, h: f64) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 3x3, got {rows}x{cols}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {h}")));
        }
        Ok(GridSpec { rows, cols, h })
    }

    /// Square `n x n` grid on the unit domain, `h = 1/n`.
    pub fn unit_square(n: usize) -> Result<Self> {
        GridSpec::new(n, n, 1.0 / n as f64)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.cols, idx % self.cols)
    }

    /// Physical position `(x, y) = (col h, row h)`.
    #[inline]
    pub fn point(&self, row: f64, col: f64) -> Vec2 {
        [col * self.h, row * self.h]
    }

    pub fn is_interior(&self, row: usize, col: usize) -> bool {
        row > 0 && col > 0 && row + 1 < self.rows && col + 1 < self.cols
    }

    pub fn check_dims(&self, what: &str, dims: (usize, usize)) -> Result<()> {
        if dims != (self.rows, self.cols) {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {}x{}, grid is {}x{}",
                dims.0, dims.1, self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// Per-node symmetric metric tensor `G = [[g11, g12], [g12, g22]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField {
    pub g11: ScalarField,
    pub g12: ScalarField,
    pub g22: ScalarField,
}

impl MetricField {
    pub fn new(g11: ScalarField, g12: ScalarField, g22: ScalarField) -> Result<Self> {
        if g11.dims() != g12.dims() || g11.dims() != g22.dims() {
            return Err(Error::DimensionMismatch("metric channels differ in shape".into()));
        }
        Ok(MetricField { g11, g12, g22 })
    }

    pub fn constant(rows: usize, cols: usize, g: Sym2) -> Self {
        MetricField {
            g11: Grid2::filled(rows, cols, g.a11),
            g12: Grid2::filled(rows, cols, g.a12),
            g22: Grid2::filled(rows, cols, g.a22),
        }
    }

    pub fn isotropic(rows: usize, cols: usize, g: f64) -> Self {
        Self::constant(rows, cols, Sym2::scaled_identity(g))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Sym2) -> Self {
        let mut out = Self::isotropic(rows, cols, 1.0);
        for r in 0..rows {
            for c in 0..cols {
                out.set(r * cols + c, f(r, c));
            }
        }
        out
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.g11.dims()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.g11.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.g11.is_empty()
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Sym2 {
        Sym2::new(self.g11[idx], self.g12[idx], self.g22[idx])
    }

    #[inline]
    pub fn set(&mut self, idx: usize, g: Sym2) {
        self.g11[idx] = g.a11;
        self.g12[idx] = g.a12;
        self.g22[idx] = g.a22;
    }

    pub fn channels(&self) -> [&ScalarField; 3] {
        [&self.g11, &self.g12, &self.g22]
    }

    pub fn channels_mut(&mut self) -> [&mut ScalarField; 3] {
        [&mut self.g11, &mut self.g12, &mut self.g22]
    }

    /// First node violating symmetric positive-definiteness, if any.
    pub fn first_non_spd(&self) -> Option<usize> {
        (0..self.len()).find(|&i| !self.at(i).is_spd())
    }
}

/// Per-node drift vector `b = (b1, b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftField {
    pub b1: ScalarField,
    pub b2: ScalarField,
}

impl DriftField {
    pub fn new(b1: ScalarField, b2: ScalarField) -> Result<Self> {
        if b1.dims() != b2.dims() {
            return Err(Error::DimensionMismatch("drift channels differ in shape".into()));
        }
        Ok(DriftField { b1, b2 })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(rows, cols, [0.0, 0.0])
    }

    pub fn constant(rows: usize, cols: usize, b: Vec2) -> Self {
        DriftField {
            b1: Grid2::filled(rows, cols, b[0]),
            b2: Grid2::filled(rows, cols, b[1]),
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.b1.dims()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.b1.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.b1.is_empty()
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Vec2 {
        [self.b1[idx], self.b2[idx]]
    }

    #[inline]
    pub fn set(&mut self, idx: usize, b: Vec2) {
        self.b1[idx] = b[0];
        self.b2[idx] = b[1];
    }

    pub fn channels(&self) -> [&ScalarField; 2] {
        [&self.b1, &self.b2]
    }

    pub fn channels_mut(&mut self) -> [&mut ScalarField; 2] {
        [&mut self.b1, &mut self.b2]
    }
}

/// Boolean mask of source nodes; always holds at least one source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceMask {
    mask: Grid2<bool>,
}

impl SourceMask {
    pub fn new(mask: Grid2<bool>) -> Result<Self> {
        if !mask.iter().any(|&s| s) {
            return Err(Error::EmptySourceMask);
        }
        Ok(SourceMask { mask })
    }

    pub fn point(rows: usize, cols: usize, row: usize, col: usize) -> Result<Self> {
        Self::from_points(rows, cols, &[(row, col)])
    }

    pub fn from_points(rows: usize, cols: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Grid2::filled(rows, cols, false);
        for &(r, c) in points {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "source ({r}, {c}) outside {rows}x{cols} grid"
                )));
            }
            mask[(r, c)] = true;
        }
        Self::new(mask)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    #[inline]
    pub fn is_source(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn grid(&self) -> &Grid2<bool> {
        &self.mask
    }

    pub fn indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }
}

/// Converged arrival times. Sources hold exactly zero, unreached nodes hold
/// [`UNREACHED`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalField {
    pub t: ScalarField,
}

impl ArrivalField {
    pub fn new(t: ScalarField) -> Self {
        ArrivalField { t }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.t.dims()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.t[(row, col)]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        self.t.as_slice()
    }

    pub fn reached_count(&self) -> usize {
        self.t.iter().filter(|&&t| is_reached(t)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_rejects_tiny_or_degenerate_grids() {
        assert!(GridSpec::new(2, 5, 1.0).is_err());
        assert!(GridSpec::new(5, 5, 0.0).is_err());
        assert!(GridSpec::new(5, 5, f64::NAN).is_err());
        let g = GridSpec::new(4, 7, 0.5).unwrap();
        assert_eq!(g.coords(g.index(2, 5)), (2, 5));
        assert_eq!(g.point(2.0, 5.0), [2.5, 1.0]);
    }

    #[test]
    fn source_mask_needs_a_source() {
        let empty = Grid2::filled(3, 3, false);
        assert!(matches!(SourceMask::new(empty), Err(Error::EmptySourceMask)));
        let m = SourceMask::point(3, 3, 1, 1).unwrap();
        assert_eq!(m.indices(), vec![4]);
    }

    #[test]
    fn unreached_threshold() {
        assert!(!is_reached(UNREACHED));
        assert!(!is_reached(1e9));
        assert!(is_reached(1e8));
    }

    #[test]
    fn metric_channels_must_agree() {
        let a = Grid2::filled(3, 3, 1.0);
        let b = Grid2::filled(3, 4, 0.0);
        assert!(MetricField::new(a.clone(), b, a.clone()).is_err());
    }
}
