//! Discrete Lebesgue, Sobolev, mixed and boundary-trace norms of grid functions.
//!
//! Volume integrals use trapezoidal weights; boundary integrals use the
//! edge-excluded face rule of [`Grid::face_weight`], so edge nodes never
//! contribute. Vector fields are normed by summing the component integrals
//! before taking the root.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{d1_at, second_at, ScalarField, VectorField};
use crate::grid::{Face, Grid, Region};

/// Default integrability exponent for the `W¹ₚ` / `W²ₚ` quantities.
pub const DEFAULT_P: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRegion {
    Inflow,
    Outflow,
    Lateral,
    All,
}

impl BoundaryRegion {
    pub fn faces(self) -> Vec<Face> {
        Face::ALL
            .into_iter()
            .filter(|f| match self {
                BoundaryRegion::All => true,
                BoundaryRegion::Inflow => f.region() == Region::Inflow,
                BoundaryRegion::Outflow => f.region() == Region::Outflow,
                BoundaryRegion::Lateral => f.region() == Region::Lateral,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Lp(f64),
    W1p(f64),
    W2p(f64),
    H1,
    /// Maximum over `x₁`-slices of the cross-sectional `L²` norm.
    LinfL2,
    BoundaryLp(BoundaryRegion, f64),
    /// `W¹ₚ` of the trace, with derivatives tangential to each face.
    BoundaryW1p(BoundaryRegion, f64),
    /// Discrete `W^{1-1/p}_p` trace norm: boundary `Lₚ` plus the Gagliardo
    /// double sum over node pairs of the same face.
    TraceGagliardo(BoundaryRegion, f64),
}

impl NormKind {
    pub fn exponent(self) -> f64 {
        match self {
            NormKind::Lp(p)
            | NormKind::W1p(p)
            | NormKind::W2p(p)
            | NormKind::BoundaryLp(_, p)
            | NormKind::BoundaryW1p(_, p)
            | NormKind::TraceGagliardo(_, p) => p,
            NormKind::H1 | NormKind::LinfL2 => 2.0,
        }
    }

    pub fn label(self) -> String {
        let region = |r: BoundaryRegion| match r {
            BoundaryRegion::Inflow => "inflow",
            BoundaryRegion::Outflow => "outflow",
            BoundaryRegion::Lateral => "lateral",
            BoundaryRegion::All => "boundary",
        };
        match self {
            NormKind::Lp(p) => format!("L{p}"),
            NormKind::W1p(p) => format!("W1,{p}"),
            NormKind::W2p(p) => format!("W2,{p}"),
            NormKind::H1 => "H1".into(),
            NormKind::LinfL2 => "Linf(L2)".into(),
            NormKind::BoundaryLp(r, p) => format!("L{p}({})", region(r)),
            NormKind::BoundaryW1p(r, p) => format!("W1,{p}({})", region(r)),
            NormKind::TraceGagliardo(r, p) => format!("W1-1/{p},{p}({})", region(r)),
        }
    }
}

/// Anything made of one or more node-sampled components on a grid.
pub trait GridFunction {
    fn grid(&self) -> &Grid;
    fn parts(&self) -> Vec<&[f64]>;
}

impl GridFunction for ScalarField {
    fn grid(&self) -> &Grid {
        ScalarField::grid(self)
    }
    fn parts(&self) -> Vec<&[f64]> {
        vec![self.values()]
    }
}

impl GridFunction for VectorField {
    fn grid(&self) -> &Grid {
        VectorField::grid(self)
    }
    fn parts(&self) -> Vec<&[f64]> {
        self.components().iter().map(|c| c.as_slice()).collect()
    }
}

pub fn norm<F: GridFunction + ?Sized>(f: &F, kind: NormKind) -> Result<f64> {
    let p = kind.exponent();
    if !(p.is_finite() && p >= 1.0) {
        return Err(Error::InvalidNorm(format!(
            "exponent must be finite and at least 1, got {p}"
        )));
    }
    let grid = f.grid();
    let parts = f.parts();
    let value = match kind {
        NormKind::Lp(p) => root(parts.iter().map(|v| volume_power(grid, v, p)).sum(), p),
        NormKind::W1p(_) | NormKind::H1 => root(
            parts
                .iter()
                .map(|v| volume_power(grid, v, p) + gradient_power(grid, v, p))
                .sum(),
            p,
        ),
        NormKind::W2p(p) => {
            if grid.nodes().iter().any(|&n| n < 5) {
                return Err(Error::InvalidNorm(
                    "second differences need at least 5 nodes per axis".into(),
                ));
            }
            root(
                parts
                    .iter()
                    .map(|v| {
                        volume_power(grid, v, p)
                            + gradient_power(grid, v, p)
                            + hessian_power(grid, v, p)
                    })
                    .sum(),
                p,
            )
        }
        NormKind::LinfL2 => (0..grid.nodes()[0])
            .map(|i| slice_sq(grid, &parts, i).sqrt())
            .fold(0.0, f64::max),
        NormKind::BoundaryLp(region, p) => root(
            parts.iter().map(|v| boundary_power(grid, v, region, p, false)).sum(),
            p,
        ),
        NormKind::BoundaryW1p(region, p) => root(
            parts.iter().map(|v| boundary_power(grid, v, region, p, true)).sum(),
            p,
        ),
        NormKind::TraceGagliardo(region, p) => root(
            parts
                .iter()
                .map(|v| boundary_power(grid, v, region, p, false) + gagliardo_power(grid, v, region, p))
                .sum(),
            p,
        ),
    };
    Ok(value)
}

/// Trapezoidal `L²` norm over the cut `x₁ = i1·h₁`.
pub fn slice_l2<F: GridFunction + ?Sized>(f: &F, i1: usize) -> Result<f64> {
    let grid = f.grid();
    if i1 >= grid.nodes()[0] {
        return Err(Error::InvalidNorm(format!(
            "slice index {i1} outside 0..={}",
            grid.cells()[0]
        )));
    }
    Ok(slice_sq(grid, &f.parts(), i1).sqrt())
}

fn root(sum: f64, p: f64) -> f64 {
    if p == 2.0 {
        sum.sqrt()
    } else {
        sum.powf(1.0 / p)
    }
}

#[inline]
fn pow(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if p == 2.0 {
        a * a
    } else if p == 4.0 {
        let s = a * a;
        s * s
    } else {
        a.powf(p)
    }
}

fn volume_power(grid: &Grid, v: &[f64], p: f64) -> f64 {
    (0..grid.len())
        .map(|idx| grid.volume_weight(grid.coords(idx)) * pow(v[idx], p))
        .sum()
}

fn gradient_power(grid: &Grid, v: &[f64], p: f64) -> f64 {
    (0..grid.len())
        .map(|idx| {
            let c = grid.coords(idx);
            let s: f64 = (0..3).map(|a| pow(d1_at(grid, v, idx, c, a), p)).sum();
            grid.volume_weight(c) * s
        })
        .sum()
}

fn hessian_power(grid: &Grid, v: &[f64], p: f64) -> f64 {
    (0..grid.len())
        .map(|idx| {
            let c = grid.coords(idx);
            let mut s = 0.0;
            for a in 0..3 {
                for b in a..3 {
                    s += pow(second_at(grid, v, idx, c, a, b), p);
                }
            }
            grid.volume_weight(c) * s
        })
        .sum()
}

fn slice_sq(grid: &Grid, parts: &[&[f64]], i: usize) -> f64 {
    let [_, n1, n2] = grid.nodes();
    let mut sum = 0.0;
    for k in 0..n2 {
        for j in 0..n1 {
            let idx = grid.index(i, j, k);
            let w = grid.slice_weight(j, k);
            sum += w * parts.iter().map(|v| v[idx] * v[idx]).sum::<f64>();
        }
    }
    sum
}

fn boundary_power(grid: &Grid, v: &[f64], region: BoundaryRegion, p: f64, with_gradient: bool) -> f64 {
    let mut sum = 0.0;
    for face in region.faces() {
        let tangential = face.tangential_axes();
        for (idx, c, w) in grid.face_nodes(face) {
            if w == 0.0 {
                continue;
            }
            let mut s = pow(v[idx], p);
            if with_gradient {
                s += tangential
                    .iter()
                    .map(|&a| pow(d1_at(grid, v, idx, c, a), p))
                    .sum::<f64>();
            }
            sum += w * s;
        }
    }
    sum
}

fn gagliardo_power(grid: &Grid, v: &[f64], region: BoundaryRegion, p: f64) -> f64 {
    let mut sum = 0.0;
    for face in region.faces() {
        let nodes: Vec<(f64, [f64; 3], f64)> = grid
            .face_nodes(face)
            .into_iter()
            .filter(|&(_, _, w)| w > 0.0)
            .map(|(idx, c, w)| (v[idx], grid.position(c), w))
            .collect();
        for (m, &(fx, x, wx)) in nodes.iter().enumerate() {
            for &(fy, y, wy) in &nodes[m + 1..] {
                let dist = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
                // Each unordered pair stands for both orderings.
                sum += 2.0 * wx * wy * pow(fx - fy, p) / dist.powf(p + 1.0);
            }
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GeometryConfig};
    use proptest::prelude::*;

    fn grid(n: [usize; 3], l: f64) -> Grid {
        build_grid(GeometryConfig::new(l, 1.0, 1.0, n)).unwrap()
    }

    #[test]
    fn constant_on_unit_volume() {
        let g = grid([4, 4, 4], 1.0);
        let f = ScalarField::constant(&g, -2.5);
        for p in [1.0, 2.0, 4.0, 3.3] {
            assert!((norm(&f, NormKind::Lp(p)).unwrap() - 2.5).abs() < 1e-13);
        }
        assert!((norm(&f, NormKind::W1p(4.0)).unwrap() - 2.5).abs() < 1e-13);
    }

    #[test]
    fn zero_field_has_zero_norms() {
        let g = grid([4, 4, 4], 1.0);
        let f = ScalarField::zeros(&g);
        for kind in [
            NormKind::Lp(4.0),
            NormKind::W1p(4.0),
            NormKind::W2p(4.0),
            NormKind::H1,
            NormKind::LinfL2,
            NormKind::BoundaryLp(BoundaryRegion::All, 2.0),
            NormKind::BoundaryW1p(BoundaryRegion::Inflow, 4.0),
            NormKind::TraceGagliardo(BoundaryRegion::Lateral, 4.0),
        ] {
            assert_eq!(norm(&f, kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_profile_l2_matches_integral() {
        let g = grid([32, 4, 4], 2.0);
        let f = ScalarField::from_fn(&g, |x| x[0]);
        let exact = (8.0f64 / 3.0).sqrt();
        assert!((norm(&f, NormKind::Lp(2.0)).unwrap() - exact).abs() < 1e-3);
    }

    #[test]
    fn rejects_sub_unit_exponent() {
        let g = grid([4, 4, 4], 1.0);
        let f = ScalarField::zeros(&g);
        assert!(norm(&f, NormKind::Lp(0.5)).is_err());
        assert!(norm(&f, NormKind::TraceGagliardo(BoundaryRegion::All, f64::NAN)).is_err());
    }

    #[test]
    fn slices() {
        let g = grid([8, 4, 4], 2.0);
        let one = ScalarField::constant(&g, 1.0);
        for i in 0..=8 {
            assert!((slice_l2(&one, i).unwrap() - 1.0).abs() < 1e-14);
        }
        let x = ScalarField::from_fn(&g, |p| p[0]);
        for i in 0..=8 {
            assert!((slice_l2(&x, i).unwrap() - g.coordinate(0, i)).abs() < 1e-14);
        }
        assert!(slice_l2(&x, 9).is_err());
        let max = (0..=8).map(|i| slice_l2(&x, i).unwrap()).fold(0.0, f64::max);
        assert_eq!(max, norm(&x, NormKind::LinfL2).unwrap());
    }

    #[test]
    fn boundary_norm_of_constant_is_area_root() {
        let g = grid([8, 4, 4], 2.0);
        let f = ScalarField::constant(&g, 3.0);
        let inflow = norm(&f, NormKind::BoundaryLp(BoundaryRegion::Inflow, 2.0)).unwrap();
        assert!((inflow - 3.0).abs() < 1e-13);
        let lateral = norm(&f, NormKind::BoundaryLp(BoundaryRegion::Lateral, 2.0)).unwrap();
        assert!((lateral - 3.0 * 8.0f64.sqrt()).abs() < 1e-12);
        let trace = norm(&f, NormKind::TraceGagliardo(BoundaryRegion::Inflow, 4.0)).unwrap();
        assert!((trace - 3.0).abs() < 1e-13, "constants have zero seminorm");
    }

    fn field_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 5 * 5 * 5)
    }

    proptest! {
        #[test]
        fn homogeneous_and_monotone(values in field_strategy(), c in -3.0f64..3.0) {
            let g = grid([4, 4, 4], 1.0);
            let f = ScalarField::from_values(&g, values).unwrap();
            let cf = c * &f;
            for kind in [
                NormKind::Lp(4.0), NormKind::W1p(4.0), NormKind::W2p(4.0), NormKind::H1,
                NormKind::LinfL2, NormKind::BoundaryLp(BoundaryRegion::All, 3.0),
                NormKind::BoundaryW1p(BoundaryRegion::Lateral, 4.0),
                NormKind::TraceGagliardo(BoundaryRegion::All, 4.0),
            ] {
                let a = norm(&cf, kind).unwrap();
                let b = c.abs() * norm(&f, kind).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b), "{kind:?}: {a} vs {b}");
            }
            let lp = norm(&f, NormKind::Lp(4.0)).unwrap();
            let w1 = norm(&f, NormKind::W1p(4.0)).unwrap();
            let w2 = norm(&f, NormKind::W2p(4.0)).unwrap();
            prop_assert!(lp <= w1 && w1 <= w2);
        }
    }
}
