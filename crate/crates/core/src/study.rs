//! Refinement studies: manufactured solutions for the coupled linear step and
//! the comparison of the characteristic solver with the upwind march.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::field::{ScalarField, VectorField};
use crate::grid::{boundary_frames, build_grid, dot, GeometryConfig, Grid};
use crate::lame::{solve_linear_step, LameOperator, LinearData, LinearMode, LinearStepConfig};
use crate::material::{slip_rhs, FlowParams};
use crate::norm::{norm, NormKind};
use crate::picard::inflow_l2;
use crate::transport::{apply_s, jacobian_bound, upwind_march, TransportField};

/// `sin(ωx)` or `cos(ωx)`.
#[derive(Clone, Copy, Debug)]
struct Wave {
    sine: bool,
    omega: f64,
}

impl Wave {
    fn sin(omega: f64) -> Self {
        Self { sine: true, omega }
    }

    fn cos(omega: f64) -> Self {
        Self { sine: false, omega }
    }

    /// Value and first two derivatives at `x`.
    fn eval(self, x: f64) -> [f64; 3] {
        let (s, c) = (self.omega * x).sin_cos();
        let w = self.omega;
        if self.sine {
            [s, w * c, -w * w * s]
        } else {
            [c, -w * s, -w * w * c]
        }
    }
}

/// Sum of separable products `a · f₁(x₁) f₂(x₂) f₃(x₃)` with exact derivatives.
#[derive(Clone, Debug, Default)]
struct Separable {
    terms: Vec<(f64, [Wave; 3])>,
}

impl Separable {
    fn term(mut self, amp: f64, waves: [Wave; 3]) -> Self {
        self.terms.push((amp, waves));
        self
    }

    fn value(&self, x: [f64; 3]) -> f64 {
        self.terms
            .iter()
            .map(|(a, w)| a * (0..3).map(|k| w[k].eval(x[k])[0]).product::<f64>())
            .sum()
    }

    fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (a, w) in &self.terms {
            let e = [0, 1, 2].map(|k| w[k].eval(x[k]));
            g[0] += a * e[0][1] * e[1][0] * e[2][0];
            g[1] += a * e[0][0] * e[1][1] * e[2][0];
            g[2] += a * e[0][0] * e[1][0] * e[2][1];
        }
        g
    }

    fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for (a, w) in &self.terms {
            let e = [0, 1, 2].map(|k| w[k].eval(x[k]));
            for (p, row) in h.iter_mut().enumerate() {
                for (q, v) in row.iter_mut().enumerate() {
                    let order = |k: usize| (k == p) as usize + (k == q) as usize;
                    *v += a * (0..3).map(|k| e[k][order(k)]).product::<f64>();
                }
            }
        }
        h
    }
}

/// Smooth exact pair `(u, w)` with `n·u = 0` on every face, and a transport
/// velocity `ũ = e₁ + c` with `c·n = 0` on the lateral walls.
struct Manufactured {
    u: [Separable; 3],
    w: Separable,
    c: [Separable; 3],
}

impl Manufactured {
    fn new(ext: [f64; 3]) -> Self {
        let k = ext.map(|e| std::f64::consts::PI / e);
        let (s, c) = (Wave::sin, Wave::cos);
        let one = c(0.0);
        let u = [
            Separable::default().term(0.1, [s(k[0]), c(k[1]), c(k[2])]),
            Separable::default()
                .term(0.1, [c(k[0]), s(k[1]), c(k[2])])
                .term(0.05, [s(0.5 * k[0]), s(2.0 * k[1]), one]),
            Separable::default()
                .term(0.1, [c(k[0]), c(k[1]), s(k[2])])
                .term(-0.05, [c(0.5 * k[0]), one, s(2.0 * k[2])]),
        ];
        let w = Separable::default()
            .term(0.05, [c(0.5 * k[0]), c(k[1]), c(k[2])])
            .term(0.03, [s(k[0]), one, one]);
        let c = [
            Separable::default().term(0.05, [one, c(k[1]), c(k[2])]),
            Separable::default().term(0.05, [c(0.5 * k[0]), s(k[1]), one]),
            Separable::default().term(0.05, [one, c(k[1]), s(k[2])]),
        ];
        Self { u, w, c }
    }

    fn velocity(&self, x: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| self.u[i].value(x))
    }

    /// `∂₁u − μΔu − (ν+μ)∇div u + γ∇w`.
    fn forcing(&self, x: [f64; 3], p: &FlowParams) -> [f64; 3] {
        let hs = [0, 1, 2].map(|i| self.u[i].hessian(x));
        let gw = self.w.gradient(x);
        [0, 1, 2].map(|c| {
            let d1 = self.u[c].gradient(x)[0];
            let lap = hs[c][0][0] + hs[c][1][1] + hs[c][2][2];
            let grad_div: f64 = (0..3).map(|b| hs[b][c][b]).sum();
            d1 - p.mu * lap - (p.nu + p.mu) * grad_div + p.gamma() * gw[c]
        })
    }

    /// `ũ·∇w + div u`.
    fn continuity(&self, x: [f64; 3]) -> f64 {
        let ut = self.transport(x);
        let div: f64 = (0..3).map(|i| self.u[i].gradient(x)[i]).sum();
        dot(ut, self.w.gradient(x)) + div
    }

    fn transport(&self, x: [f64; 3]) -> [f64; 3] {
        let c = [0, 1, 2].map(|i| self.c[i].value(x));
        [1.0 + c[0], c[1], c[2]]
    }

    /// `n·2μD(u)·τ + f u·τ`.
    fn slip(&self, x: [f64; 3], n: [f64; 3], tau: [f64; 3], p: &FlowParams) -> f64 {
        let g = [0, 1, 2].map(|i| self.u[i].gradient(x));
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += (n[a] * tau[b] + n[b] * tau[a]) * g[a][b];
            }
        }
        p.mu * s + p.f * dot(self.velocity(x), tau)
    }
}

/// Errors of one grid level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub cells: [usize; 3],
    pub h1: f64,
    pub u_error: f64,
    pub w_error: f64,
    pub iterations: usize,
}

/// Observed orders `log₂(e_k / e_{k+1})` between consecutive levels.
pub fn pairwise_rates(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManufacturedStudy {
    pub mode: LinearMode,
    pub rows: Vec<ErrorRow>,
    pub u_rates: Vec<f64>,
    pub w_rates: Vec<f64>,
}

impl ManufacturedStudy {
    pub fn min_u_rate(&self) -> f64 {
        self.u_rates.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn min_w_rate(&self) -> f64 {
        self.w_rates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Solves the coupled linear step for the manufactured pair on `geometry`
/// and returns the discrete `L²` errors of `u` and `w`.
pub fn manufactured_errors(
    geometry: GeometryConfig,
    params: &FlowParams,
    mode: LinearMode,
    cfg: &LinearStepConfig,
) -> Result<ErrorRow> {
    let grid = build_grid(geometry)?;
    let frames = boundary_frames(&grid);
    let m = Manufactured::new(grid.extents());
    let lame = LameOperator::new(&grid, &frames, params)?;
    let forcing = VectorField::from_fn(&grid, |x| m.forcing(x, params));
    let g = ScalarField::from_fn(&grid, |x| m.continuity(x));
    let w_in = ScalarField::from_fn(&grid, |x| m.w.value(x));
    let slip = slip_rhs(&grid, &frames, |face, idx| {
        let x = grid.position_of(idx);
        let (t1, t2) = face.tangents();
        [t1, t2].map(|t| m.slip(x, face.normal(), t, params))
    });
    let convect = VectorField::from_fn(&grid, |x| {
        let t = m.transport(x);
        [t[0] - 1.0, t[1], t[2]]
    });
    let data = LinearData {
        forcing: &forcing,
        g: &g,
        slip: &slip,
        w_in: &w_in,
    };
    let out = solve_linear_step(&lame, &convect, data, mode, cfg, None)?;
    let u_ex = VectorField::from_fn(&grid, |x| m.velocity(x));
    let w_ex = ScalarField::from_fn(&grid, |x| m.w.value(x));
    Ok(ErrorRow {
        cells: grid.cells(),
        h1: grid.spacing()[0],
        u_error: norm(&(&out.u - &u_ex), NormKind::Lp(2.0))?,
        w_error: norm(&(&out.w - &w_ex), NormKind::Lp(2.0))?,
        iterations: out.inner_iterations,
    })
}

/// Manufactured-solution study over `base` and `levels − 1` doublings.
pub fn manufactured_study(
    base: GeometryConfig,
    levels: usize,
    params: &FlowParams,
    mode: LinearMode,
    cfg: &LinearStepConfig,
) -> Result<ManufacturedStudy> {
    let rows = (0..levels)
        .map(|l| manufactured_errors(base.refined(1 << l), params, mode, cfg))
        .collect::<Result<Vec<_>>>()?;
    let u: Vec<f64> = rows.iter().map(|r| r.u_error).collect();
    let w: Vec<f64> = rows.iter().map(|r| r.w_error).collect();
    Ok(ManufacturedStudy {
        mode,
        u_rates: pairwise_rates(&u),
        w_rates: pairwise_rates(&w),
        rows,
    })
}

/// Smooth transport test case on a grid.
struct TransportCase {
    tf: TransportField,
    v: ScalarField,
    w_in: ScalarField,
}

fn smooth_transport_case(grid: &Grid, amplitude: f64) -> Result<TransportCase> {
    let m = Manufactured::new(grid.extents());
    let ext = grid.extents();
    let pi = std::f64::consts::PI;
    let tf = TransportField::from_velocity(VectorField::from_fn(grid, |x| {
        let t = m.transport(x);
        [1.0 + (t[0] - 1.0) * amplitude / 0.05, t[1] * amplitude / 0.05, t[2] * amplitude / 0.05]
    }))?;
    let v = ScalarField::from_fn(grid, |x| (pi * x[0] / ext[0]).sin() * (pi * x[1] / ext[1]).cos() + 0.5);
    let w_in = ScalarField::from_fn(grid, |x| (pi * x[1] / ext[1]).cos() * (pi * x[2] / ext[2]).cos());
    Ok(TransportCase { tf, v, w_in })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransportRow {
    pub cells: [usize; 3],
    /// `‖apply_S − upwind‖_{L²}`.
    pub difference: f64,
    pub cfl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransportStudy {
    pub rows: Vec<TransportRow>,
    pub rates: Vec<f64>,
    /// Largest nodal error of either solver on the straight-flow cases with exact answers.
    pub constant_case_error: f64,
}

impl TransportStudy {
    pub fn min_rate(&self) -> f64 {
        self.rates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Straight flow `ũ = e₁`: `v = 0` gives `w_in` on every slice and `v = 1`
/// gives `w_in + x₁`, for both solvers.
fn constant_cases(grid: &Grid) -> Result<f64> {
    let tf = TransportField::uniform(grid, [1.0, 0.0, 0.0])?;
    let ext = grid.extents();
    let pi = std::f64::consts::PI;
    let w_in = ScalarField::from_fn(grid, |x| 0.3 + (pi * x[1] / ext[1]).sin() * (pi * x[2] / ext[2]).cos());
    let mut worst: f64 = 0.0;
    for value in [0.0, 1.0] {
        let v = ScalarField::constant(grid, value);
        let exact = ScalarField::from_fn(grid, |x| {
            let base = 0.3 + (pi * x[1] / ext[1]).sin() * (pi * x[2] / ext[2]).cos();
            base + value * x[0]
        });
        for out in [apply_s(&tf, &v, &w_in)?, upwind_march(&tf, &v, &w_in)?] {
            worst = worst.max((&out - &exact).max_abs());
        }
    }
    Ok(worst)
}

/// Compares the characteristic solver with the upwind march on a smooth case
/// over `base` and `levels − 1` doublings.
pub fn transport_study(base: GeometryConfig, levels: usize, amplitude: f64) -> Result<TransportStudy> {
    let mut rows = Vec::new();
    for l in 0..levels {
        let grid = build_grid(base.refined(1 << l))?;
        let case = smooth_transport_case(&grid, amplitude)?;
        let s = apply_s(&case.tf, &case.v, &case.w_in)?;
        let up = upwind_march(&case.tf, &case.v, &case.w_in)?;
        rows.push(TransportRow {
            cells: grid.cells(),
            difference: norm(&(&s - &up), NormKind::Lp(2.0))?,
            cfl: crate::transport::cfl_number(&case.tf),
        });
    }
    let d: Vec<f64> = rows.iter().map(|r| r.difference).collect();
    let constant_case_error = constant_cases(&build_grid(base)?)?;
    Ok(TransportStudy {
        rates: pairwise_rates(&d),
        rows,
        constant_case_error,
    })
}

/// One sample of the slice-norm estimate for the transport operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateSample {
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateStudy {
    pub jacobian_bound: f64,
    pub samples: Vec<EstimateSample>,
}

impl EstimateStudy {
    pub fn violations(&self) -> usize {
        self.samples.iter().filter(|s| !(s.lhs <= s.rhs)).count()
    }

    /// Largest `lhs / rhs`.
    pub fn worst_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.lhs / s.rhs).fold(0.0, f64::max)
    }
}

/// Checks `‖S(v)‖_{L∞(L²)} ≤ (1 + J)(‖w_in‖_{L²(Γ_in)} + √(4L)‖v‖_{L²})` on
/// `count` seeded random pairs of nodal fields with random amplitudes.
pub fn estimate_study(tf: &TransportField, count: usize, seed: u64) -> Result<EstimateStudy> {
    let grid = *tf.grid();
    let jac = jacobian_bound(tf)?;
    let length = grid.extents()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let (av, aw) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let v = ScalarField::from_values(&grid, (0..grid.len()).map(|_| av * rng.gen_range(-1.0..1.0)).collect())?;
        let w_in =
            ScalarField::from_values(&grid, (0..grid.len()).map(|_| aw * rng.gen_range(-1.0..1.0)).collect())?;
        let s = apply_s(tf, &v, &w_in)?;
        let lhs = norm(&s, NormKind::LinfL2)?;
        let rhs = (1.0 + jac) * (inflow_l2(&w_in)? + (4.0 * length).sqrt() * norm(&v, NormKind::Lp(2.0))?);
        samples.push(EstimateSample { lhs, rhs });
    }
    Ok(EstimateStudy {
        jacobian_bound: jac,
        samples,
    })
}
