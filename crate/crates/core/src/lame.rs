//! The linear step: Lamé momentum operator with Navier slip rows, coupled to
//! the steady transport of the density perturbation.
//!
//! Row layout per node and Cartesian component `c`:
//! * interior nodes: `∂₁u_c − μΔu_c − (ν+μ)∂_c div u + γ∂_c w = F_c`;
//! * face-interior nodes: the normal component is pinned to zero; tangential
//!   components keep the momentum row, with the normal second difference and
//!   the normal first derivative closed by the Robin condition
//!   `μ ∂_n u_c + f u_c = g_c` through a ghost value;
//! * edge nodes: components normal to any incident face are pinned; the rest
//!   satisfy the average over incident faces of the one-sided Robin rows.
//!
//! The continuity equation `ũ·∇w + div u = G`, `w = w_in` on the inflow face, is
//! discretised through the characteristic map `S_h` as
//! `w + S_h(div u) = S_h(G) + S_in(w_in)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{d1_at, d2_at, divergence, second_at, ScalarField, VectorField};
use crate::grid::{BoundaryFrames, Face, Grid};
use crate::krylov::{krylov_solve_with, KrylovConfig, KrylovOutcome, LinearOperator};
use crate::material::FlowParams;
use crate::norm::{norm, NormKind};
use crate::transport::{CharacteristicMap, TransportField};

#[derive(Clone, Copy, Debug)]
struct NodeInfo {
    faces: [Face; 3],
    count: u8,
}

impl NodeInfo {
    fn faces(&self) -> &[Face] {
        &self.faces[..self.count as usize]
    }

    fn pins(&self, c: usize) -> bool {
        self.faces().iter().any(|f| f.axis() == c)
    }
}

/// Matrix-free Lamé operator with slip rows on a fixed grid.
#[derive(Clone, Debug)]
pub struct LameOperator {
    grid: Grid,
    params: FlowParams,
    info: Vec<NodeInfo>,
    inv_diag: Vec<f64>,
}

impl LameOperator {
    pub fn new(grid: &Grid, frames: &BoundaryFrames, params: &FlowParams) -> Result<Self> {
        params.validate()?;
        let info = (0..grid.len())
            .map(|idx| {
                let mut faces = [Face::X1Min; 3];
                let mut count = 0u8;
                if let Some(fr) = frames.get(idx) {
                    for (slot, f) in fr.faces.iter().enumerate() {
                        faces[slot] = *f;
                    }
                    count = fr.faces.len() as u8;
                }
                NodeInfo { faces, count }
            })
            .collect();
        let mut op = Self {
            grid: *grid,
            params: *params,
            info,
            inv_diag: Vec::new(),
        };
        let n = grid.len();
        let mut unit = vec![0.0; 3 * n];
        let mut inv_diag = vec![0.0; 3 * n];
        for c in 0..3 {
            for idx in 0..n {
                unit[c * n + idx] = 1.0;
                let d = op.row(&unit, idx, c);
                unit[c * n + idx] = 0.0;
                inv_diag[c * n + idx] = if d != 0.0 { 1.0 / d } else { 1.0 };
            }
        }
        op.inv_diag = inv_diag;
        Ok(op)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    /// True for rows carrying the momentum equation (and hence `γ∂_c w` and `F_c`).
    pub fn is_momentum_row(&self, idx: usize, c: usize) -> bool {
        let info = &self.info[idx];
        match info.count {
            0 => true,
            1 => info.faces[0].axis() != c,
            _ => false,
        }
    }

    /// True for rows pinning a normal velocity component to zero.
    pub fn is_pinned_row(&self, idx: usize, c: usize) -> bool {
        self.info[idx].pins(c)
    }

    /// Homogeneous row `(A u)` at node `idx`, component `c`, on the flat layout.
    fn row(&self, u: &[f64], idx: usize, c: usize) -> f64 {
        let g = &self.grid;
        let n = g.len();
        let comp = |d: usize| &u[d * n..(d + 1) * n];
        let coords = g.coords(idx);
        let info = &self.info[idx];
        let FlowParams { mu, nu, f, .. } = self.params;
        let lam = nu + mu;
        let uc = comp(c);
        match info.count {
            0 => {
                let mut lap = 0.0;
                for a in 0..3 {
                    lap += d2_at(g, uc, idx, coords, a);
                }
                let mut gd = 0.0;
                for d in 0..3 {
                    gd += second_at(g, comp(d), idx, coords, c, d);
                }
                d1_at(g, uc, idx, coords, 0) - mu * lap - lam * gd
            }
            1 => {
                let face = info.faces[0];
                let a = face.axis();
                if c == a {
                    return uc[idx];
                }
                let h = g.spacing()[a];
                let s = g.strides()[a];
                let inner = if face.is_lower() { idx + s } else { idx - s };
                let ub = uc[idx];
                // Ghost value from the Robin row with zero data.
                let normal_second = (2.0 * (uc[inner] - ub) - 2.0 * h * f * ub / mu) / (h * h);
                let mut lap = normal_second;
                for b in face.tangential_axes() {
                    lap += d2_at(g, uc, idx, coords, b);
                }
                let convective = if a == 0 {
                    -face.sign() * f * ub / mu
                } else {
                    d1_at(g, uc, idx, coords, 0)
                };
                let mut gd = 0.0;
                for d in 0..3 {
                    gd += second_at(g, comp(d), idx, coords, c, d);
                }
                convective - mu * lap - lam * gd
            }
            _ => {
                if info.pins(c) {
                    return uc[idx];
                }
                let faces = info.faces();
                let mut s = 0.0;
                for face in faces {
                    let dn = face.sign() * d1_at(g, uc, idx, coords, face.axis());
                    s += mu * dn + f * uc[idx];
                }
                s / faces.len() as f64
            }
        }
    }

    pub fn apply_flat(&self, u: &[f64], out: &mut [f64]) {
        let n = self.grid.len();
        for c in 0..3 {
            for idx in 0..n {
                out[c * n + idx] = self.row(u, idx, c);
            }
        }
    }

    pub fn apply(&self, u: &VectorField) -> VectorField {
        let mut out = vec![0.0; 3 * self.grid.len()];
        self.apply_flat(&u.to_flat(), &mut out);
        VectorField::from_flat(&self.grid, &out)
    }

    /// Adds `γ ∂_c w` on momentum rows.
    pub fn add_pressure(&self, w: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let n = g.len();
        let gamma = self.params.gamma();
        for idx in 0..n {
            let coords = g.coords(idx);
            for c in 0..3 {
                if self.is_momentum_row(idx, c) {
                    out[c * n + idx] += gamma * d1_at(g, w, idx, coords, c);
                }
            }
        }
    }

    /// Right-hand side of the momentum block for forcing `f` and slip data `slip`.
    pub fn rhs(&self, forcing: &VectorField, slip: &VectorField) -> Vec<f64> {
        let g = &self.grid;
        let n = g.len();
        let mu = self.params.mu;
        let mut out = vec![0.0; 3 * n];
        for idx in 0..n {
            let info = &self.info[idx];
            for c in 0..3 {
                let gc = slip.component(c)[idx];
                out[c * n + idx] = match info.count {
                    0 => forcing.component(c)[idx],
                    1 => {
                        let face = info.faces[0];
                        let a = face.axis();
                        if c == a {
                            0.0
                        } else {
                            let h = g.spacing()[a];
                            let mut b = forcing.component(c)[idx] + 2.0 * gc / h;
                            if a == 0 {
                                b -= face.sign() * gc / mu;
                            }
                            b
                        }
                    }
                    _ => {
                        if info.pins(c) {
                            0.0
                        } else {
                            gc
                        }
                    }
                };
            }
        }
        out
    }

    /// `A u + γ∇w − b(F, g)` row by row.
    pub fn residual(
        &self,
        u: &VectorField,
        w: &ScalarField,
        forcing: &VectorField,
        slip: &VectorField,
    ) -> VectorField {
        let n = self.grid.len();
        let mut out = vec![0.0; 3 * n];
        self.apply_flat(&u.to_flat(), &mut out);
        self.add_pressure(w.values(), &mut out);
        let b = self.rhs(forcing, slip);
        for (o, bi) in out.iter_mut().zip(&b) {
            *o -= bi;
        }
        VectorField::from_flat(&self.grid, &out)
    }

    pub fn inverse_diagonal(&self) -> &[f64] {
        &self.inv_diag
    }

    /// Solves `A u = rhs` with Jacobi preconditioning.
    pub fn solve(&self, rhs: &[f64], cfg: &KrylovConfig, guess: Option<&[f64]>) -> Result<KrylovOutcome> {
        krylov_solve_with(self, rhs, cfg, guess, Some(&self.inv_diag))
    }
}

impl LinearOperator for LameOperator {
    fn dim(&self) -> usize {
        3 * self.grid.len()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_flat(x, y)
    }
}

pub fn apply_lame(op: &LameOperator, u: &VectorField) -> VectorField {
    op.apply(u)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearMode {
    /// Alternate momentum solves and transport sweeps.
    Split,
    /// One Krylov solve of the coupled block system.
    #[default]
    Monolithic,
}

impl LinearMode {
    pub fn name(self) -> &'static str {
        match self {
            LinearMode::Split => "split",
            LinearMode::Monolithic => "monolithic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearStepConfig {
    pub krylov: KrylovConfig,
    /// Split mode stops once the sweep-to-sweep change in `H¹ × L∞(L²)` drops below this.
    pub inner_tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LinearStepConfig {
    fn default() -> Self {
        Self {
            krylov: KrylovConfig::default(),
            inner_tolerance: 1e-11,
            max_sweeps: 200,
        }
    }
}

/// Data of one linear step.
#[derive(Clone, Copy, Debug)]
pub struct LinearData<'a> {
    pub forcing: &'a VectorField,
    pub g: &'a ScalarField,
    /// Cartesian slip right-hand side (see `PerturbationData::slip`).
    pub slip: &'a VectorField,
    pub w_in: &'a ScalarField,
}

#[derive(Clone, Debug)]
pub struct LinearStepResult {
    pub u: VectorField,
    pub w: ScalarField,
    /// Krylov iterations (monolithic) or sweeps (split).
    pub inner_iterations: usize,
    /// Relative residual of the coupled discrete system at the returned pair.
    pub residual: f64,
    pub mode: LinearMode,
}

/// The coupled block operator `[A, γ∇; S_h div, I]` on `[u; w]`.
struct BlockOperator<'a> {
    lame: &'a LameOperator,
    map: &'a CharacteristicMap,
}

impl BlockOperator<'_> {
    fn n(&self) -> usize {
        self.lame.grid.len()
    }

    fn div_flat(&self, u: &[f64]) -> Vec<f64> {
        let g = &self.lame.grid;
        let n = g.len();
        (0..n)
            .map(|idx| {
                let coords = g.coords(idx);
                (0..3).map(|a| d1_at(g, &u[a * n..(a + 1) * n], idx, coords, a)).sum()
            })
            .collect()
    }
}

impl LinearOperator for BlockOperator<'_> {
    fn dim(&self) -> usize {
        4 * self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        let (u, w) = x.split_at(3 * n);
        let (yu, yw) = y.split_at_mut(3 * n);
        self.lame.apply_flat(u, yu);
        self.lame.add_pressure(w, yu);
        let div = self.div_flat(u);
        self.map.integrate(&div, yw);
        for (o, wi) in yw.iter_mut().zip(w) {
            *o += wi;
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves the coupled linear system for one step, convected by `convect = ū + u₀`.
pub fn solve_linear_step(
    lame: &LameOperator,
    convect: &VectorField,
    data: LinearData<'_>,
    mode: LinearMode,
    cfg: &LinearStepConfig,
    guess: Option<(&VectorField, &ScalarField)>,
) -> Result<LinearStepResult> {
    let tf = TransportField::from_convecting(convect)?;
    let map = CharacteristicMap::build(&tf)?;
    solve_with_map(lame, &map, data, mode, cfg, guess)
}

/// As [`solve_linear_step`] with a prebuilt characteristic map.
pub fn solve_with_map(
    lame: &LameOperator,
    map: &CharacteristicMap,
    data: LinearData<'_>,
    mode: LinearMode,
    cfg: &LinearStepConfig,
    guess: Option<(&VectorField, &ScalarField)>,
) -> Result<LinearStepResult> {
    let grid = *lame.grid();
    let n = grid.len();
    let b_u = lame.rhs(data.forcing, data.slip);
    let b_w = map.apply(data.g, data.w_in).into_values();
    let block = BlockOperator { lame, map };
    let mut rhs = b_u.clone();
    rhs.extend_from_slice(&b_w);
    let rhs_norm = l2(&rhs);

    let (u, w, inner) = match mode {
        LinearMode::Monolithic => {
            let mut x0 = None;
            if let Some((gu, gw)) = guess {
                let mut v = gu.to_flat();
                v.extend_from_slice(gw.values());
                x0 = Some(v);
            }
            let mut inv = lame.inverse_diagonal().to_vec();
            inv.extend(std::iter::repeat(1.0).take(n));
            let out = krylov_solve_with(&block, &rhs, &cfg.krylov, x0.as_deref(), Some(&inv))?;
            let (u, w) = out.solution.split_at(3 * n);
            (
                VectorField::from_flat(&grid, u),
                ScalarField::from_values(&grid, w.to_vec())?,
                out.iterations,
            )
        }
        LinearMode::Split => {
            let (mut u, mut w) = match guess {
                Some((gu, gw)) => (gu.clone(), gw.clone()),
                None => (VectorField::zeros(&grid), ScalarField::from_values(&grid, b_w.clone())?),
            };
            let mut sweeps = 0;
            let mut last_change = f64::INFINITY;
            while last_change >= cfg.inner_tolerance {
                if sweeps == cfg.max_sweeps {
                    return Err(Error::InnerNotConverged {
                        sweeps,
                        last_change,
                    });
                }
                sweeps += 1;
                let mut rhs_u = b_u.clone();
                let mut grad = vec![0.0; 3 * n];
                lame.add_pressure(w.values(), &mut grad);
                for (r, gr) in rhs_u.iter_mut().zip(&grad) {
                    *r -= gr;
                }
                let sol = lame.solve(&rhs_u, &cfg.krylov, Some(&u.to_flat()))?;
                let u_new = VectorField::from_flat(&grid, &sol.solution);
                let div = divergence(&u_new);
                let mut integral = vec![0.0; n];
                map.integrate(div.values(), &mut integral);
                let w_new = ScalarField::from_values(
                    &grid,
                    b_w.iter().zip(&integral).map(|(b, s)| b - s).collect(),
                )?;
                last_change = norm(&(&u_new - &u), NormKind::H1)? + norm(&(&w_new - &w), NormKind::LinfL2)?;
                if !last_change.is_finite() {
                    return Err(Error::InnerNotConverged {
                        sweeps,
                        last_change,
                    });
                }
                u = u_new;
                w = w_new;
            }
            (u, w, sweeps)
        }
    };

    let mut x = u.to_flat();
    x.extend_from_slice(w.values());
    let mut r = vec![0.0; 4 * n];
    block.apply(&x, &mut r);
    for (ri, bi) in r.iter_mut().zip(&rhs) {
        *ri -= bi;
    }
    let residual = if rhs_norm > 0.0 { l2(&r) / rhs_norm } else { l2(&r) };
    Ok(LinearStepResult {
        u,
        w,
        inner_iterations: inner,
        residual,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{boundary_frames, build_grid, GeometryConfig};
    use std::f64::consts::PI;

    fn op(n: [usize; 3]) -> LameOperator {
        let g = build_grid(GeometryConfig::new(2.0, 1.0, 1.0, n)).unwrap();
        LameOperator::new(&g, &boundary_frames(&g), &FlowParams::default()).unwrap()
    }

    fn interior_max(g: &Grid, v: &VectorField, f: impl Fn([f64; 3]) -> [f64; 3]) -> f64 {
        g.interior_nodes()
            .map(|i| {
                let a = v.at(i);
                let b = f(g.position_of(i));
                (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn constants_and_affine_fields() {
        let l = op([8, 4, 4]);
        let g = *l.grid();
        let out = l.apply(&VectorField::constant(&g, [0.3, -1.0, 2.0]));
        assert!(interior_max(&g, &out, |_| [0.0; 3]) < 1e-12);
        let out = l.apply(&VectorField::from_fn(&g, |x| [x[0], 0.0, 0.0]));
        assert!(interior_max(&g, &out, |_| [1.0, 0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn manufactured_interior_action_is_second_order() {
        // u = (sin πx₂, sin πx₃, sin πx₁) is divergence free with Δu = −π²u,
        // so Lu = ∂₁u + μπ²u.
        let mu = FlowParams::default().mu;
        let exact = |x: [f64; 3]| {
            [
                mu * PI * PI * (PI * x[1]).sin(),
                mu * PI * PI * (PI * x[2]).sin(),
                PI * (PI * x[0]).cos() + mu * PI * PI * (PI * x[0]).sin(),
            ]
        };
        let err = |n: usize| {
            let l = op([2 * n, n, n]);
            let g = *l.grid();
            let u = VectorField::from_fn(&g, |x| [(PI * x[1]).sin(), (PI * x[2]).sin(), (PI * x[0]).sin()]);
            interior_max(&g, &l.apply(&u), exact)
        };
        let (e1, e2) = (err(8), err(16));
        let ratio = e1 / e2;
        assert!(ratio > 3.5, "ratio {ratio}: {e1} {e2}");
    }

    #[test]
    fn solve_after_apply_roundtrip() {
        let l = op([8, 4, 4]);
        let g = *l.grid();
        let u = VectorField::from_fn(&g, |x| [x[1].sin() * x[0], (x[0] * x[2]).cos(), x[1] * x[2] * x[0]]);
        let rhs = l.apply(&u).to_flat();
        let out = l.solve(&rhs, &KrylovConfig::default(), None).unwrap();
        let diff = &VectorField::from_flat(&g, &out.solution) - &u;
        assert!(diff.max_abs() / u.max_abs() < 1e-8, "{}", diff.max_abs());
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let l = op([8, 4, 4]);
        let g = *l.grid();
        let (f, s, gg, w) = (
            VectorField::zeros(&g),
            VectorField::zeros(&g),
            ScalarField::zeros(&g),
            ScalarField::zeros(&g),
        );
        let data = LinearData { forcing: &f, g: &gg, slip: &s, w_in: &w };
        for mode in [LinearMode::Split, LinearMode::Monolithic] {
            let out = solve_linear_step(&l, &VectorField::zeros(&g), data, mode, &LinearStepConfig::default(), None).unwrap();
            assert_eq!(out.u.max_abs() + out.w.max_abs(), 0.0);
        }
    }

    #[test]
    fn modes_agree_and_respond_linearly() {
        let l = op([8, 4, 4]);
        let g = *l.grid();
        let f = VectorField::from_fn(&g, |x| [0.01 * x[1], 0.02 * (x[0]).sin(), -0.01 * x[2] * x[0]]);
        let gg = ScalarField::from_fn(&g, |x| 0.01 * (x[0] + x[1]).cos());
        let s = VectorField::zeros(&g);
        let w_in = ScalarField::from_fn(&g, |x| 0.01 * (PI * x[1]).sin() * (PI * x[2]).sin());
        let convect = VectorField::from_fn(&g, |x| [0.01 * (PI * x[1]).sin(), 0.0, 0.0]);
        let data = LinearData { forcing: &f, g: &gg, slip: &s, w_in: &w_in };
        let cfg = LinearStepConfig::default();
        let mono = solve_linear_step(&l, &convect, data, LinearMode::Monolithic, &cfg, None).unwrap();
        let split = solve_linear_step(&l, &convect, data, LinearMode::Split, &cfg, None).unwrap();
        let du = norm(&(&mono.u - &split.u), NormKind::H1).unwrap();
        let dw = norm(&(&mono.w - &split.w), NormKind::LinfL2).unwrap();
        let scale = norm(&mono.u, NormKind::H1).unwrap() + norm(&mono.w, NormKind::LinfL2).unwrap();
        assert!(du + dw <= 1e-6 * scale.max(1.0), "{du} {dw}");
        assert!(mono.residual < 1e-9 && split.residual < 1e-8, "{} {}", mono.residual, split.residual);
        for fr in boundary_frames(&g).iter() {
            for c in 0..3 {
                if l.is_pinned_row(fr.node, c) {
                    assert!(mono.u.component(c)[fr.node].abs() < 1e-12);
                }
            }
        }

        let (f2, g2, w2) = (2.0 * &f, 2.0 * &gg, 2.0 * &w_in);
        let data2 = LinearData { forcing: &f2, g: &g2, slip: &s, w_in: &w2 };
        let double = solve_linear_step(&l, &convect, data2, LinearMode::Monolithic, &cfg, None).unwrap();
        let diff = norm(&(&double.u - &(2.0 * &mono.u)), NormKind::H1).unwrap();
        assert!(diff < 1e-8 * norm(&mono.u, NormKind::H1).unwrap());
        // The inflow trace is reproduced.
        for (idx, _, _) in g.face_nodes(Face::X1Min) {
            assert!((mono.w.values()[idx] - w_in.values()[idx]).abs() < 1e-12);
        }
    }
}
