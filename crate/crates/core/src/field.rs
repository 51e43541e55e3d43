//! Node-sampled scalar and vector fields and the finite-difference operators
//! acting on them.
//!
//! First derivatives are central at interior indices and second-order one-sided
//! at the ends of an axis. Pure second derivatives use the compact three-point
//! stencil in the interior and the four-point one-sided stencil at the ends;
//! mixed derivatives are compositions of first derivatives.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: [Vec<f64>; 3],
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            grid: *grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position_of(i))).collect();
        Self {
            grid: *grid,
            values,
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, c: [usize; 3]) -> f64 {
        self.values[self.grid.index_of(c)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_same_grid(&self.grid, &other.grid);
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Pointwise product with every component of `v`.
    pub fn times_vector(&self, v: &VectorField) -> VectorField {
        assert_same_grid(&self.grid, &v.grid);
        VectorField {
            grid: self.grid,
            comps: [0, 1, 2].map(|c| {
                self.values
                    .iter()
                    .zip(&v.comps[c])
                    .map(|(a, b)| a * b)
                    .collect()
            }),
        }
    }
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            comps: [0, 1, 2].map(|_| vec![0.0; grid.len()]),
        }
    }

    pub fn constant(grid: &Grid, value: [f64; 3]) -> Self {
        Self {
            grid: *grid,
            comps: [0, 1, 2].map(|c| vec![value[c]; grid.len()]),
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for idx in 0..grid.len() {
            let v = f(grid.position_of(idx));
            for c in 0..3 {
                out.comps[c][idx] = v[c];
            }
        }
        out
    }

    pub fn from_components(grid: &Grid, comps: [Vec<f64>; 3]) -> Result<Self> {
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(format!(
                "component lengths {:?} for a grid of {} nodes",
                comps.each_ref().map(|c| c.len()),
                grid.len()
            )));
        }
        Ok(Self { grid: *grid, comps })
    }

    pub fn from_scalars(x: ScalarField, y: ScalarField, z: ScalarField) -> Self {
        assert_same_grid(&x.grid, &y.grid);
        assert_same_grid(&x.grid, &z.grid);
        Self {
            grid: x.grid,
            comps: [x.values, y.values, z.values],
        }
    }

    /// Component-major flat layout `[c0 | c1 | c2]`.
    pub fn from_flat(grid: &Grid, flat: &[f64]) -> Self {
        let n = grid.len();
        assert_eq!(flat.len(), 3 * n, "flat vector length");
        Self {
            grid: *grid,
            comps: [0, 1, 2].map(|c| flat[c * n..(c + 1) * n].to_vec()),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.comps.concat()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comps[c]
    }

    pub fn component_field(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.comps[c].clone(),
        }
    }

    pub fn components(&self) -> &[Vec<f64>; 3] {
        &self.comps
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        [self.comps[0][idx], self.comps[1][idx], self.comps[2][idx]]
    }

    pub fn set(&mut self, idx: usize, v: [f64; 3]) {
        for c in 0..3 {
            self.comps[c][idx] = v[c];
        }
    }

    pub fn map_components(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            comps: [0, 1, 2].map(|c| self.comps[c].iter().map(|&v| f(c, v)).collect()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        assert_same_grid(&self.grid, &other.grid);
        let values = (0..self.grid.len())
            .map(|i| (0..3).map(|c| self.comps[c][i] * other.comps[c][i]).sum())
            .collect();
        ScalarField {
            grid: self.grid,
            values,
        }
    }
}

pub(crate) fn assert_same_grid(a: &Grid, b: &Grid) {
    assert!(a.same_shape(b), "fields live on different grids");
}

macro_rules! scalar_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr<&ScalarField> for &ScalarField {
            type Output = ScalarField;
            fn $method(self, rhs: &ScalarField) -> ScalarField {
                self.zip_map(rhs, |a, b| a $op b)
            }
        }
        impl $tr<&VectorField> for &VectorField {
            type Output = VectorField;
            fn $method(self, rhs: &VectorField) -> VectorField {
                assert_same_grid(&self.grid, &rhs.grid);
                VectorField {
                    grid: self.grid,
                    comps: [0, 1, 2].map(|c| {
                        self.comps[c]
                            .iter()
                            .zip(&rhs.comps[c])
                            .map(|(a, b)| a $op b)
                            .collect()
                    }),
                }
            }
        }
    };
}

scalar_binop!(Add, add, +);
scalar_binop!(Sub, sub, -);

impl Mul<&ScalarField> for f64 {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        rhs.map(|v| self * v)
    }
}

impl Mul<&VectorField> for f64 {
    type Output = VectorField;
    fn mul(self, rhs: &VectorField) -> VectorField {
        rhs.map_components(|_, v| self * v)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|v| -v)
    }
}

impl Neg for &VectorField {
    type Output = VectorField;
    fn neg(self) -> VectorField {
        self.map_components(|_, v| -v)
    }
}

// ---------------------------------------------------------------------------
// Node-local stencils on flat arrays.

/// First derivative along `axis` at node `c` (flat index `idx`).
#[inline]
pub fn d1_at(grid: &Grid, v: &[f64], idx: usize, c: [usize; 3], axis: usize) -> f64 {
    let s = grid.strides()[axis];
    let h = grid.spacing()[axis];
    let last = grid.cells()[axis];
    let i = c[axis];
    if i == 0 {
        (-3.0 * v[idx] + 4.0 * v[idx + s] - v[idx + 2 * s]) / (2.0 * h)
    } else if i == last {
        (3.0 * v[idx] - 4.0 * v[idx - s] + v[idx - 2 * s]) / (2.0 * h)
    } else {
        (v[idx + s] - v[idx - s]) / (2.0 * h)
    }
}

/// Pure second derivative along `axis` at node `c`.
#[inline]
pub fn d2_at(grid: &Grid, v: &[f64], idx: usize, c: [usize; 3], axis: usize) -> f64 {
    let s = grid.strides()[axis];
    let h = grid.spacing()[axis];
    let last = grid.cells()[axis];
    let i = c[axis];
    let h2 = h * h;
    if i == 0 {
        (2.0 * v[idx] - 5.0 * v[idx + s] + 4.0 * v[idx + 2 * s] - v[idx + 3 * s]) / h2
    } else if i == last {
        (2.0 * v[idx] - 5.0 * v[idx - s] + 4.0 * v[idx - 2 * s] - v[idx - 3 * s]) / h2
    } else {
        (v[idx + s] - 2.0 * v[idx] + v[idx - s]) / h2
    }
}

/// Mixed derivative `∂_a ∂_b` (a ≠ b) as the `a`-derivative of the `b`-derivative.
#[inline]
pub fn mixed_at(grid: &Grid, v: &[f64], idx: usize, c: [usize; 3], a: usize, b: usize) -> f64 {
    let s = grid.strides()[a];
    let h = grid.spacing()[a];
    let last = grid.cells()[a];
    let i = c[a];
    let at = |offset: isize| {
        let mut cc = c;
        cc[a] = (i as isize + offset) as usize;
        let id = (idx as isize + offset * s as isize) as usize;
        d1_at(grid, v, id, cc, b)
    };
    if i == 0 {
        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
    } else if i == last {
        (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
    } else {
        (at(1) - at(-1)) / (2.0 * h)
    }
}

/// Second derivative `∂_a ∂_b`, compact for `a == b`.
#[inline]
pub fn second_at(grid: &Grid, v: &[f64], idx: usize, c: [usize; 3], a: usize, b: usize) -> f64 {
    if a == b {
        d2_at(grid, v, idx, c, a)
    } else {
        mixed_at(grid, v, idx, c, a, b)
    }
}

fn node_map(grid: &Grid, f: impl Fn(usize, [usize; 3]) -> f64) -> Vec<f64> {
    (0..grid.len()).map(|idx| f(idx, grid.coords(idx))).collect()
}

// ---------------------------------------------------------------------------
// Field operators.

pub fn partial(s: &ScalarField, axis: usize) -> ScalarField {
    let g = s.grid;
    ScalarField {
        grid: g,
        values: node_map(&g, |idx, c| d1_at(&g, &s.values, idx, c, axis)),
    }
}

pub fn second_partial(s: &ScalarField, a: usize, b: usize) -> ScalarField {
    let g = s.grid;
    ScalarField {
        grid: g,
        values: node_map(&g, |idx, c| second_at(&g, &s.values, idx, c, a, b)),
    }
}

pub fn gradient(s: &ScalarField) -> VectorField {
    let g = s.grid;
    VectorField {
        grid: g,
        comps: [0, 1, 2].map(|a| node_map(&g, |idx, c| d1_at(&g, &s.values, idx, c, a))),
    }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    ScalarField {
        grid: g,
        values: node_map(&g, |idx, c| {
            (0..3).map(|a| d1_at(&g, &v.comps[a], idx, c, a)).sum()
        }),
    }
}

pub fn curl(v: &VectorField) -> VectorField {
    let g = v.grid;
    let d = |comp: usize, axis: usize, idx: usize, c: [usize; 3]| d1_at(&g, &v.comps[comp], idx, c, axis);
    VectorField {
        grid: g,
        comps: [
            node_map(&g, |idx, c| d(2, 1, idx, c) - d(1, 2, idx, c)),
            node_map(&g, |idx, c| d(0, 2, idx, c) - d(2, 0, idx, c)),
            node_map(&g, |idx, c| d(1, 0, idx, c) - d(0, 1, idx, c)),
        ],
    }
}

/// Compact Laplacian of a scalar.
pub fn laplacian(s: &ScalarField) -> ScalarField {
    let g = s.grid;
    ScalarField {
        grid: g,
        values: node_map(&g, |idx, c| (0..3).map(|a| d2_at(&g, &s.values, idx, c, a)).sum()),
    }
}

pub fn vector_laplacian(v: &VectorField) -> VectorField {
    let g = v.grid;
    VectorField {
        grid: g,
        comps: [0, 1, 2].map(|comp| {
            node_map(&g, |idx, c| (0..3).map(|a| d2_at(&g, &v.comps[comp], idx, c, a)).sum())
        }),
    }
}

/// `∇ div v` with compact pure second derivatives and composed mixed ones.
pub fn grad_div(v: &VectorField) -> VectorField {
    let g = v.grid;
    VectorField {
        grid: g,
        comps: [0, 1, 2].map(|a| {
            node_map(&g, |idx, c| {
                (0..3).map(|b| second_at(&g, &v.comps[b], idx, c, a, b)).sum()
            })
        }),
    }
}

/// Convective derivative `(a · ∇) b`.
pub fn advect(a: &VectorField, b: &VectorField) -> VectorField {
    assert_same_grid(&a.grid, &b.grid);
    let g = a.grid;
    VectorField {
        grid: g,
        comps: [0, 1, 2].map(|comp| {
            node_map(&g, |idx, c| {
                (0..3)
                    .map(|d| a.comps[d][idx] * d1_at(&g, &b.comps[comp], idx, c, d))
                    .sum()
            })
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GeometryConfig};
    use std::f64::consts::PI;

    fn grid(n: [usize; 3]) -> Grid {
        build_grid(GeometryConfig::new(2.0, 1.0, 1.0, n)).unwrap()
    }

    fn interior_max(g: &Grid, v: &[f64]) -> f64 {
        g.interior_nodes().fold(0.0, |m, i| m.max(v[i].abs()))
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = grid([8, 4, 4]);
        let grad = gradient(&ScalarField::constant(&g, 3.5));
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn gradient_exact_for_affine() {
        let g = grid([8, 4, 4]);
        let grad = gradient(&ScalarField::from_fn(&g, |x| x[1]));
        for idx in 0..g.len() {
            let v = grad.at(idx);
            assert!((v[0]).abs() < 1e-13 && (v[1] - 1.0).abs() < 1e-13 && v[2].abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let err = |n: usize| {
            let g = grid([n, 4, 4]);
            let s = ScalarField::from_fn(&g, |x| (PI * x[0]).sin());
            let d = gradient(&s);
            (0..g.len())
                .map(|i| (d.at(i)[0] - PI * (PI * g.position_of(i)[0]).cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(16) / err(32);
        assert!(ratio > 3.5 && ratio < 4.6, "ratio {ratio}");
    }

    #[test]
    fn divergence_of_position_is_three() {
        let g = grid([8, 4, 4]);
        let d = divergence(&VectorField::from_fn(&g, |x| x));
        assert!(d.values().iter().all(|v| (v - 3.0).abs() < 1e-13));
        assert_eq!(divergence(&VectorField::constant(&g, [1.0, -2.0, 0.5])).max_abs(), 0.0);
    }

    #[test]
    fn curl_of_affine_shear() {
        let g = grid([8, 4, 4]);
        let c = curl(&VectorField::from_fn(&g, |x| [0.0, 0.0, x[1]]));
        for idx in 0..g.len() {
            let v = c.at(idx);
            assert!((v[0] - 1.0).abs() < 1e-13 && v[1].abs() < 1e-13 && v[2].abs() < 1e-13);
        }
        assert_eq!(curl(&VectorField::constant(&g, [1.0, 2.0, 3.0])).max_abs(), 0.0);
    }

    #[test]
    fn curl_gradient_and_div_curl_vanish_in_interior() {
        let g = grid([8, 6, 5]);
        let s = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() * (x[1] * x[2]).exp() + x[0] * x[1] * x[1]);
        assert!(interior_max(&g, &curl(&gradient(&s)).to_flat()[..g.len()]) < 1e-12);
        let cg = curl(&gradient(&s));
        for c in 0..3 {
            assert!(interior_max(&g, cg.component(c)) < 1e-12);
        }
        let v = VectorField::from_fn(&g, |x| [x[1].sin() * x[2], x[0] * x[0] * x[2], (x[0] * x[1]).cos()]);
        assert!(interior_max(&g, divergence(&curl(&v)).values()) < 1e-12);
    }

    #[test]
    fn compact_second_derivatives_exact_for_quadratics() {
        let g = grid([8, 4, 4]);
        let s = ScalarField::from_fn(&g, |x| x[0] * x[0] + 2.0 * x[1] * x[2] - x[2] * x[2]);
        let lap = laplacian(&s);
        assert!(lap.values().iter().all(|v| v.abs() < 1e-11));
        let m = second_partial(&s, 1, 2);
        assert!(m.values().iter().all(|v| (v - 2.0).abs() < 1e-11));
    }
}
