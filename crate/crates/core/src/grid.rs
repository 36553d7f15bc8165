//! Periodic lattices and the scalar/matrix fields that live on them.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpdeError};
use crate::scalar::Real;

/// Periodic `n`-dimensional lattice with `points` nodes per axis on a box of
/// side `length`. Node indices are row-major with axis 0 slowest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    length: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, length: f64, points: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(SpdeError::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(SpdeError::InvalidGrid(format!("period length {length} must be positive")));
        }
        if points < 2 {
            return Err(SpdeError::InvalidGrid(format!("{points} points per axis, need at least 2")));
        }
        points.checked_pow(dim as u32).ok_or_else(|| SpdeError::InvalidGrid("node count overflows usize".into()))?;
        Ok(Self { dim, length, points })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length / self.points as f64
    }

    /// `dx^n`, the quadrature weight of a node.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Total number of nodes, `N^n`.
    #[inline]
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// `L^n`.
    pub fn measure(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Index distance between neighbours along `axis`.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.dim - 1 - axis) as u32)
    }

    /// Lattice coordinate of `index` along `axis`.
    #[inline]
    pub fn coord(&self, index: usize, axis: usize) -> usize {
        (index / self.stride(axis)) % self.points
    }

    /// Neighbour of `index` one step forward along `axis`, wrapping.
    #[inline]
    pub fn next(&self, index: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        if self.coord(index, axis) + 1 == self.points {
            index + s - self.points * s
        } else {
            index + s
        }
    }

    /// Neighbour of `index` one step backward along `axis`, wrapping.
    #[inline]
    pub fn prev(&self, index: usize, axis: usize) -> usize {
        let s = self.stride(axis);
        if self.coord(index, axis) == 0 {
            index + self.points * s - s
        } else {
            index - s
        }
    }

    /// Neighbour of `index` shifted by `offset` nodes along `axis`, wrapping.
    #[inline]
    pub fn offset(&self, index: usize, axis: usize, offset: usize) -> usize {
        let s = self.stride(axis);
        let c = self.coord(index, axis);
        let shifted = (c + offset) % self.points;
        index - c * s + shifted * s
    }

    /// Physical position of node `index`.
    pub fn position(&self, index: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = self.coord(index, axis) as f64 * self.dx();
        }
        x
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(SpdeError::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Real-valued function sampled on the nodes of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    grid: Grid,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn new(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SpdeError::InvalidArgument(format!("field has {} values, grid has {} nodes", values.len(), grid.len())));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: Grid, c: T) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at every node position.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|j| T::of(f(grid.position(j)))).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn positive_part(&self) -> Self {
        self.map(|v| v.max(T::zero()))
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn ensure_finite(&self) -> Result<()> {
        let mut bad = self.values.iter().enumerate().filter(|(_, v)| !v.is_finite());
        match bad.next() {
            None => Ok(()),
            Some((first, _)) => Err(SpdeError::NonFinite { count: 1 + bad.count(), first }),
        }
    }

    /// Cyclic shift by `by` nodes along `axis`: `out[x] = self[x + by·e_axis]`.
    pub fn shifted(&self, axis: usize, by: usize) -> Self {
        let values = (0..self.grid.len()).map(|j| self.values[self.grid.offset(j, axis, by)]).collect();
        Self { grid: self.grid, values }
    }

    /// Quadrature `Lᵖ` norm `(dxⁿ Σ|f|ᵖ)^{1/p}`; `p = ∞` gives the max modulus.
    pub fn lp_norm(&self, p: f64) -> Result<T> {
        self.ensure_finite()?;
        Ok(lp_norm_unchecked(&self.values, p, self.grid.cell_volume()))
    }

    /// `L²` inner product `dxⁿ Σ f g`.
    pub fn inner(&self, other: &Self) -> Result<T> {
        self.grid.ensure_same(&other.grid)?;
        Ok(dot(&self.values, &other.values) * T::of(self.grid.cell_volume()))
    }
}

/// Node-quadrature `Lᵖ` norm of raw values with cell volume `vol`.
pub(crate) fn lp_norm_unchecked<T: Real>(values: &[T], p: f64, vol: f64) -> T {
    assert!(p > 0.0, "Lp exponent must be positive, got {p}");
    if p == f64::INFINITY {
        return values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    }
    if p == 2.0 {
        return (dot(values, values) * T::of(vol)).sqrt();
    }
    // Rescale by the max so large exponents do not overflow.
    let scale = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let pe = T::of(p);
    let s: T = values.iter().map(|&v| (v.abs() / scale).powf(pe)).sum();
    scale * (s * T::of(vol)).powf(T::one() / pe)
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Diagonal matrix-valued field: `dim` entries per node, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField<T> {
    grid: Grid,
    diag: Vec<T>,
}

impl<T: Real> MatrixField<T> {
    pub fn new(grid: Grid, diag: Vec<T>) -> Result<Self> {
        if diag.len() != grid.len() * grid.dim() {
            return Err(SpdeError::InvalidArgument(format!("matrix field has {} entries, expected {}", diag.len(), grid.len() * grid.dim())));
        }
        Ok(Self { grid, diag })
    }

    pub fn identity(grid: Grid) -> Self {
        Self { grid, diag: vec![T::one(); grid.len() * grid.dim()] }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Diagonal entry `A_{axis,axis}` at `node`.
    #[inline]
    pub fn entry(&self, node: usize, axis: usize) -> T {
        self.diag[node * self.grid.dim() + axis]
    }

    pub fn entries(&self) -> &[T] {
        &self.diag
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Grid {
        Grid::new(1, 1.0, n).unwrap()
    }

    #[test]
    fn constant_field_norm_is_modulus_for_every_p() {
        let f = Field::<f64>::constant(line(64), -3.5);
        for p in [0.5, 1.0, 2.0, 3.0, 7.5, f64::INFINITY] {
            assert!((f.lp_norm(p).unwrap() - 3.5).abs() < 1e-12, "p = {p}");
        }
        let z = Field::<f64>::zeros(line(64));
        for p in [1.0, 2.0, f64::INFINITY] {
            assert_eq!(z.lp_norm(p).unwrap(), 0.0);
        }
    }

    #[test]
    fn half_indicator_l2_norm() {
        let g = line(32);
        let f = Field::<f64>::from_fn(g, |x| if x[0] < 0.5 { 1.0 } else { 0.0 });
        // 16 nodes of weight 1/32.
        assert!((f.lp_norm(2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut f = Field::<f64>::zeros(line(8));
        f.values_mut()[3] = f64::NAN;
        f.values_mut()[5] = f64::INFINITY;
        match f.lp_norm(2.0) {
            Err(SpdeError::NonFinite { count: 2, first: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inner_of_unit_fields_is_measure() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let one = Field::<f64>::constant(g, 1.0);
        assert!((one.inner(&one).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(one.inner(&Field::zeros(g)).unwrap(), 0.0);
    }

    #[test]
    fn discrete_fourier_modes_are_orthogonal() {
        let g = line(64);
        let tau = std::f64::consts::TAU;
        let s1 = Field::<f64>::from_fn(g, |x| (tau * x[0]).sin());
        let s2 = Field::<f64>::from_fn(g, |x| (2.0 * tau * x[0]).sin());
        assert!(s1.inner(&s2).unwrap().abs() < 1e-12);
        assert!((s1.inner(&s1).unwrap() - s1.lp_norm(2.0).unwrap().powi(2)).abs() < 1e-14);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = Field::<f64>::zeros(line(8));
        let b = Field::<f64>::zeros(line(16));
        assert!(matches!(a.inner(&b), Err(SpdeError::GridMismatch(_))));
    }

    #[test]
    fn neighbours_wrap_on_every_axis() {
        let g = Grid::new(3, 2.0, 4).unwrap();
        for j in 0..g.len() {
            for axis in 0..3 {
                assert_eq!(g.prev(g.next(j, axis), axis), j);
                assert_eq!(g.offset(j, axis, 4), j);
                assert_eq!(g.offset(j, axis, 1), g.next(j, axis));
            }
        }
        assert!((g.len() as f64 * g.cell_volume() - g.measure()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(0, 1.0, 8).is_err());
        assert!(Grid::new(4, 1.0, 8).is_err());
        assert!(Grid::new(1, -1.0, 8).is_err());
        assert!(Grid::new(1, 1.0, 1).is_err());
    }
}
