//! Conservative flux-form discretization of `div(A∇·)` on the periodic lattice.
//!
//! Per axis the flux through the face between `j` and `j + e` is
//! `A_face (f_{j+e} − f_j)/dx`, with `A_face` the harmonic mean of the two
//! adjacent diagonal entries. The resulting operator is symmetric and
//! satisfies summation by parts exactly:
//! `⟨div_a_grad(f), g⟩ = −Σ_faces A_face (Δf/dx)(Δg/dx) dxⁿ`.

use crate::error::Result;
use crate::grid::{Field, Grid, MatrixField};
use crate::scalar::Real;

/// Precomputed face coefficients `A_face / dx²`, stored `[node * dim + axis]`
/// for the face between `node` and its forward neighbour.
#[derive(Clone, Debug)]
pub struct DiffusionOperator<T> {
    grid: Grid,
    faces: Vec<T>,
    // Forward and backward neighbours, `[node * dim + axis]`.
    next: Vec<usize>,
    prev: Vec<usize>,
}

fn neighbours(grid: &Grid) -> (Vec<usize>, Vec<usize>) {
    let dim = grid.dim();
    let mut next = Vec::with_capacity(grid.len() * dim);
    let mut prev = Vec::with_capacity(grid.len() * dim);
    for j in 0..grid.len() {
        for axis in 0..dim {
            next.push(grid.next(j, axis));
            prev.push(grid.prev(j, axis));
        }
    }
    (next, prev)
}

#[inline]
fn harmonic_mean<T: Real>(a: T, b: T) -> T {
    let two = T::one() + T::one();
    two * a * b / (a + b)
}

impl<T: Real> DiffusionOperator<T> {
    pub fn new(a: &MatrixField<T>) -> Self {
        let grid = *a.grid();
        let dim = grid.dim();
        let inv_dx2 = T::of(grid.dx().powi(-2));
        let (next, prev) = neighbours(&grid);
        let mut faces = Vec::with_capacity(grid.len() * dim);
        for j in 0..grid.len() {
            for axis in 0..dim {
                faces.push(harmonic_mean(a.entry(j, axis), a.entry(next[j * dim + axis], axis)) * inv_dx2);
            }
        }
        Self { grid, faces, next, prev }
    }

    /// The discrete Laplacian (`A = I`).
    pub fn laplacian(grid: Grid) -> Self {
        let inv_dx2 = T::of(grid.dx().powi(-2));
        let (next, prev) = neighbours(&grid);
        Self { grid, faces: vec![inv_dx2; grid.len() * grid.dim()], next, prev }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `A_face / dx²` for the face between `node` and `node + e_axis`.
    #[inline]
    pub fn face(&self, node: usize, axis: usize) -> T {
        self.faces[node * self.grid.dim() + axis]
    }

    /// `out = div(A∇f)` on raw node values.
    pub fn apply(&self, f: &[T], out: &mut [T]) {
        let g = &self.grid;
        let dim = g.dim();
        debug_assert_eq!(f.len(), g.len());
        debug_assert_eq!(out.len(), g.len());
        for (j, o) in out.iter_mut().enumerate() {
            let fj = f[j];
            let mut acc = T::zero();
            for axis in 0..dim {
                let e = j * dim + axis;
                let (next, prev) = (self.next[e], self.prev[e]);
                acc += self.faces[e] * (f[next] - fj) - self.faces[prev * dim + axis] * (fj - f[prev]);
            }
            *o = acc;
        }
    }

    pub fn apply_field(&self, f: &Field<T>) -> Result<Field<T>> {
        self.grid.ensure_same(f.grid())?;
        let mut out = vec![T::zero(); self.grid.len()];
        self.apply(f.values(), &mut out);
        Field::new(self.grid, out)
    }

    /// Diagonal of `-div(A∇·)`: `Σ_axes (A_{j+½} + A_{j−½}) / dx²`.
    pub fn diagonal(&self) -> Vec<T> {
        let g = &self.grid;
        let dim = g.dim();
        (0..g.len()).map(|j| (0..dim).map(|axis| self.faces[j * dim + axis] + self.faces[self.prev[j * dim + axis] * dim + axis]).sum()).collect()
    }

    /// Discrete Dirichlet form `Σ_faces A_face (Δf/dx)(Δh/dx) dxⁿ` on raw values.
    pub fn dirichlet_form_raw(&self, f: &[T], h: &[T]) -> T {
        let g = &self.grid;
        let dim = g.dim();
        let mut acc = T::zero();
        for j in 0..g.len() {
            for axis in 0..dim {
                let e = j * dim + axis;
                let next = self.next[e];
                acc += self.faces[e] * (f[next] - f[j]) * (h[next] - h[j]);
            }
        }
        acc * T::of(g.cell_volume())
    }

    pub fn dirichlet_form(&self, f: &Field<T>, h: &Field<T>) -> Result<T> {
        self.grid.ensure_same(f.grid())?;
        self.grid.ensure_same(h.grid())?;
        Ok(self.dirichlet_form_raw(f.values(), h.values()))
    }
}

/// `div(A∇f)` with harmonic-mean face coefficients.
pub fn div_a_grad<T: Real>(f: &Field<T>, a: &MatrixField<T>) -> Result<Field<T>> {
    f.grid().ensure_same(a.grid())?;
    DiffusionOperator::new(a).apply_field(f)
}

/// Discrete `‖∇f‖₂²` (forward differences, all axes).
pub fn gradient_energy<T: Real>(f: &Field<T>) -> T {
    DiffusionOperator::laplacian(*f.grid()).dirichlet_form_raw(f.values(), f.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_field_has_zero_divergence() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = MatrixField::new(g, (0..g.len() * 2).map(|_| rng.random_range(0.25..4.0)).collect()).unwrap();
        let out = div_a_grad(&Field::<f64>::constant(g, 2.5), &a).unwrap();
        assert!(out.max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_of_sine_is_second_order_accurate() {
        let tau = std::f64::consts::TAU;
        for n in [32usize, 64, 128] {
            let g = Grid::new(1, 1.0, n).unwrap();
            let f = Field::<f64>::from_fn(g, |x| (tau * x[0]).sin());
            let got = div_a_grad(&f, &MatrixField::identity(g)).unwrap();
            let exact = f.scaled(-tau * tau);
            let rel = got.sub(&exact).unwrap().lp_norm(2.0).unwrap() / exact.lp_norm(2.0).unwrap();
            assert!(rel <= (tau * g.dx()).powi(2), "N = {n}: rel err {rel}");
        }
    }

    #[test]
    fn summation_by_parts_on_checkerboard() {
        let g = Grid::new(2, 1.0, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = MatrixField::new(g, (0..g.len() * 2).map(|i| if (i / 2 / 4 + i / 2 / 64) % 2 == 0 { 0.25 } else { 4.0 }).collect()).unwrap();
        let f = Field::<f64>::from_fn(g, |_| rng.random_range(-1.0..1.0));
        let op = DiffusionOperator::new(&a);
        let lhs = op.apply_field(&f).unwrap().inner(&f).unwrap();
        let rhs = -op.dirichlet_form(&f, &f).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn diagonal_matches_unit_vector_response() {
        let g = Grid::new(2, 1.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = MatrixField::new(g, (0..g.len() * 2).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap();
        let op = DiffusionOperator::new(&a);
        let diag = op.diagonal();
        let mut e = vec![0.0f64; g.len()];
        let mut out = vec![0.0; g.len()];
        for j in 0..g.len() {
            e[j] = 1.0;
            op.apply(&e, &mut out);
            assert!((out[j] + diag[j]).abs() < 1e-12);
            e[j] = 0.0;
        }
    }
}
