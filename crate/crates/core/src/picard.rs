//! Successive approximations for the perturbation `(u, w)`: each iterate solves
//! the linear step with forcings and transport velocity frozen at the previous
//! iterate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, ScalarField, VectorField};
use crate::grid::{build_grid, boundary_frames, dot, BoundaryFrames, Face, GeometryConfig, Grid};
use crate::lame::{solve_linear_step, LameOperator, LinearData, LinearMode, LinearStepConfig};
use crate::material::{
    assemble_perturbation_data, compute_f, compute_g, normal_shear, BoundaryDataSpec, FlowParams,
    PerturbationData,
};
use crate::norm::{norm, BoundaryRegion, NormKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub mode: LinearMode,
    /// Stop once `d_n = ‖Δu‖_{H¹} + ‖Δw‖_{L∞(L²)}` falls to this value.
    pub outer_tolerance: f64,
    pub max_iterations: usize,
    /// Under-relaxation factor `ω ∈ (0, 1]`; 1 reproduces the plain scheme.
    pub relaxation: f64,
    /// Integrability exponent of the strong norms.
    pub p: f64,
    pub linear: LinearStepConfig,
    /// Seed of the random second start of the uniqueness check.
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            mode: LinearMode::Monolithic,
            outer_tolerance: 1e-9,
            max_iterations: 50,
            relaxation: 1.0,
            p: crate::norm::DEFAULT_P,
            linear: LinearStepConfig::default(),
            seed: 20240607,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tolerance > 0.0 && self.outer_tolerance.is_finite()) {
            return Err(Error::InvalidParameters("outer tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameters("max_iterations must be positive".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidParameters(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameters(format!("p must be >= 1, got {}", self.p)));
        }
        if !(self.linear.inner_tolerance > 0.0) || self.linear.max_sweeps == 0 {
            return Err(Error::InvalidParameters("inner tolerance and sweep cap must be positive".into()));
        }
        self.linear.krylov.validate()
    }
}

/// Everything fixed during one Picard solve.
#[derive(Clone, Debug)]
pub struct ProblemSetup {
    pub grid: Grid,
    pub frames: BoundaryFrames,
    pub params: FlowParams,
    pub data: PerturbationData,
    pub settings: SolverSettings,
    pub lame: LameOperator,
}

impl ProblemSetup {
    pub fn new(
        grid: Grid,
        frames: BoundaryFrames,
        params: FlowParams,
        data: PerturbationData,
        settings: SolverSettings,
    ) -> Result<Self> {
        settings.validate()?;
        if !data.b_measure.is_finite() {
            return Err(Error::InvalidParameters("data measure is not finite".into()));
        }
        let lame = LameOperator::new(&grid, &frames, &params)?;
        Ok(Self {
            grid,
            frames,
            params,
            data,
            settings,
            lame,
        })
    }

    /// Builds grid, frames and boundary data from their descriptions.
    pub fn build(
        geometry: GeometryConfig,
        params: FlowParams,
        spec: &BoundaryDataSpec,
        settings: SolverSettings,
    ) -> Result<Self> {
        let grid = build_grid(geometry)?;
        let frames = boundary_frames(&grid);
        params.validate()?;
        let data = assemble_perturbation_data(&grid, &frames, spec, &params, settings.p)?;
        Self::new(grid, frames, params, data, settings)
    }

    pub fn with_mode(&self, mode: LinearMode) -> Self {
        let mut s = self.clone();
        s.settings.mode = mode;
        s
    }

    pub fn zero_start(&self) -> (VectorField, ScalarField) {
        (VectorField::zeros(&self.grid), ScalarField::zeros(&self.grid))
    }

    /// `A = ‖u‖_{W²ₚ} + ‖w‖_{W¹ₚ}`.
    pub fn strong_norm(&self, u: &VectorField, w: &ScalarField) -> Result<f64> {
        let p = self.settings.p;
        Ok(norm(u, NormKind::W2p(p))? + norm(w, NormKind::W1p(p))?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    /// `A_n = ‖uⁿ‖_{W²ₚ} + ‖wⁿ‖_{W¹ₚ}`.
    pub a_n: f64,
    /// `d_n = ‖uⁿ⁺¹ − uⁿ‖_{H¹} + ‖wⁿ⁺¹ − wⁿ‖_{L∞(L²)}`.
    pub d_n: f64,
    /// `d_n / d_{n−1}`, undefined for `n = 0` or `d_{n−1} = 0`.
    pub r_n: Option<f64>,
    pub f_lp: f64,
    pub g_w1p: f64,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    MaxIter,
    Diverged(String),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::MaxIter => "max_iter",
            Verdict::Diverged(_) => "diverged",
        }
    }

    pub fn is_converged(&self) -> bool {
        *self == Verdict::Converged
    }
}

#[derive(Clone, Debug)]
pub struct SolutionBundle {
    pub u: VectorField,
    pub w: ScalarField,
    /// `v = u + e₁ + u₀`.
    pub v: VectorField,
    /// `ρ = 1 + w`.
    pub rho: ScalarField,
    pub history: Vec<IterationRecord>,
    pub verdict: Verdict,
    /// Strong norm of the returned pair.
    pub final_strong_norm: f64,
}

fn physical(u: &VectorField, w: &ScalarField, data: &PerturbationData) -> (VectorField, ScalarField) {
    let v = (u + &data.u0).map_components(|c, x| if c == 0 { x + 1.0 } else { x });
    (v, w.map(|x| 1.0 + x))
}

/// Runs the iteration from `start` until the Cauchy difference drops below
/// the outer tolerance, the iteration cap is hit, or the perturbative regime
/// is left.
pub fn picard_solve(setup: &ProblemSetup, start: (VectorField, ScalarField)) -> Result<SolutionBundle> {
    let (mut u, mut w) = start;
    if !u.grid().same_shape(&setup.grid) || !w.grid().same_shape(&setup.grid) {
        return Err(Error::GridMismatch("start fields live on another grid".into()));
    }
    let settings = &setup.settings;
    let data = &setup.data;
    let p = settings.p;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut verdict = Verdict::MaxIter;
    let mut guess: Option<(VectorField, ScalarField)> = None;

    for n in 0..settings.max_iterations {
        let a_n = setup.strong_norm(&u, &w)?;
        if !a_n.is_finite() || a_n > 1.0 {
            verdict = Verdict::Diverged(format!("strong norm A_{n} = {a_n:.3e} exceeds 1"));
            break;
        }
        let step = (|| -> Result<_> {
            let f = compute_f(&u, &w, data, &setup.params)?;
            let g = compute_g(&u, &w, data)?;
            let convect = &u + &data.u0;
            let lin = LinearData {
                forcing: &f,
                g: &g,
                slip: &data.slip,
                w_in: &data.w_in,
            };
            let out = solve_linear_step(
                &setup.lame,
                &convect,
                lin,
                settings.mode,
                &settings.linear,
                guess.as_ref().map(|(a, b)| (a, b)),
            )?;
            Ok((f, g, out))
        })();
        let (f, g, out) = match step {
            Ok(x) => x,
            Err(e) => {
                verdict = Verdict::Diverged(e.to_string());
                break;
            }
        };
        guess = Some((out.u.clone(), out.w.clone()));
        let omega = settings.relaxation;
        let (u_next, w_next) = if omega == 1.0 {
            (out.u, out.w)
        } else {
            (
                &(omega * &out.u) + &((1.0 - omega) * &u),
                &(omega * &out.w) + &((1.0 - omega) * &w),
            )
        };
        let d_n = norm(&(&u_next - &u), NormKind::H1)? + norm(&(&w_next - &w), NormKind::LinfL2)?;
        let r_n = history
            .last()
            .and_then(|prev| (prev.d_n > 0.0).then(|| d_n / prev.d_n));
        history.push(IterationRecord {
            n,
            a_n,
            d_n,
            r_n,
            f_lp: norm(&f, NormKind::Lp(p))?,
            g_w1p: norm(&g, NormKind::W1p(p))?,
            inner_iterations: out.inner_iterations,
        });
        u = u_next;
        w = w_next;
        if !d_n.is_finite() {
            verdict = Verdict::Diverged("non-finite Cauchy difference".into());
            break;
        }
        if w.values().iter().any(|&x| !(x > -1.0 && x < 1.0)) {
            verdict = Verdict::Diverged("density left the band (0, 2)".into());
            break;
        }
        if d_n <= settings.outer_tolerance {
            verdict = Verdict::Converged;
            break;
        }
    }
    let final_strong_norm = setup.strong_norm(&u, &w).unwrap_or(f64::NAN);
    let (v, rho) = physical(&u, &w, data);
    Ok(SolutionBundle {
        u,
        w,
        v,
        rho,
        history,
        verdict,
        final_strong_norm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub max_a: f64,
    /// `C_b = (A₁ − A₀²) / b`, frozen after the first iteration (0 when `b = 0`).
    pub c_b: f64,
    /// `s_n = A_{n+1} − (A_n² + C_b b)`.
    pub slack: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
    /// `exp` of the least-squares slope of `log d_n`; 0 when no difference is positive.
    pub geometric_rate: f64,
    /// `2 C_b b`.
    pub bound: f64,
}

pub fn convergence_metrics(history: &[IterationRecord], b_measure: f64) -> Result<ConvergenceReport> {
    if history.len() < 2 {
        return Err(Error::ShortHistory(format!(
            "{} record(s); at least 2 are needed",
            history.len()
        )));
    }
    let a: Vec<f64> = history.iter().map(|r| r.a_n).collect();
    let c_b = if b_measure > 0.0 {
        (a[1] - a[0] * a[0]) / b_measure
    } else {
        0.0
    };
    let slack = a.windows(2).map(|p| p[1] - (p[0] * p[0] + c_b * b_measure)).collect();
    let pts: Vec<(f64, f64)> = history
        .iter()
        .filter(|r| r.d_n > 0.0)
        .map(|r| (r.n as f64, r.d_n.ln()))
        .collect();
    let geometric_rate = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        (sxy / sxx).exp()
    } else {
        0.0
    };
    Ok(ConvergenceReport {
        max_a: a.iter().copied().fold(0.0, f64::max),
        c_b,
        slack,
        ratios: history.iter().map(|r| r.r_n).collect(),
        geometric_rate,
        bound: 2.0 * c_b * b_measure,
    })
}

/// Smooth seeded random start with `n·u = 0` on every face, scaled so that its
/// strong norm equals `target`.
pub fn random_start(setup: &ProblemSetup, seed: u64, target: f64) -> Result<(VectorField, ScalarField)> {
    let grid = setup.grid;
    let ext = grid.extents();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coef = |m: usize| -> Vec<f64> { (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let cu: Vec<Vec<f64>> = (0..3).map(|_| coef(8)).collect();
    let cw = coef(8);
    let pi = std::f64::consts::PI;
    let u = VectorField::from_fn(&grid, |x| {
        let s = [0, 1, 2].map(|a| x[a] / ext[a]);
        [0, 1, 2].map(|c| {
            let (b, d) = ((c + 1) % 3, (c + 2) % 3);
            let mut v = 0.0;
            for (m, a) in cu[c].iter().enumerate() {
                let (k, l, q) = (1 + m % 2, m / 2 % 2, m / 4);
                v += a * (k as f64 * pi * s[c]).sin() * (l as f64 * pi * s[b]).cos() * (q as f64 * pi * s[d]).cos();
            }
            v
        })
    });
    let w = ScalarField::from_fn(&grid, |x| {
        let s = [0, 1, 2].map(|a| x[a] / ext[a]);
        cw.iter()
            .enumerate()
            .map(|(m, a)| {
                let (k, l, q) = (m % 2, m / 2 % 2, m / 4);
                a * (k as f64 * pi * s[0]).cos() * (l as f64 * pi * s[1]).cos() * (q as f64 * pi * s[2]).cos()
            })
            .sum()
    });
    let a0 = setup.strong_norm(&u, &w)?;
    if a0 == 0.0 || target == 0.0 {
        return Ok(setup.zero_start());
    }
    let scale = target / a0;
    Ok((scale * &u, scale * &w))
}

/// Distance `‖u₁ − u₂‖_{H¹} + ‖w₁ − w₂‖_{L²}` between the limits of two starts.
pub fn two_start_uniqueness(
    setup: &ProblemSetup,
    start1: (VectorField, ScalarField),
    start2: (VectorField, ScalarField),
) -> Result<f64> {
    let a = picard_solve(setup, start1)?;
    let b = picard_solve(setup, start2)?;
    for (k, run) in [(1, &a), (2, &b)] {
        if !run.verdict.is_converged() {
            return Err(Error::NotConverged(format!(
                "run {k} ended with verdict {}",
                run.verdict.label()
            )));
        }
    }
    Ok(norm(&(&a.u - &b.u), NormKind::H1)? + norm(&(&a.w - &b.w), NormKind::Lp(2.0))?)
}

/// Discrete `L²` residuals of the original boundary-value problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhysicalResiduals {
    pub momentum: f64,
    pub continuity: f64,
    pub slip: f64,
    pub impermeability: f64,
    pub inflow_density: f64,
}

#[derive(Clone, Debug)]
pub struct PhysicalSolution {
    pub v: VectorField,
    pub rho: ScalarField,
    pub residuals: PhysicalResiduals,
}

fn interior_l2(grid: &Grid, parts: &[&[f64]]) -> f64 {
    grid.interior_nodes()
        .map(|i| grid.volume_weight(grid.coords(i)) * parts.iter().map(|v| v[i] * v[i]).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Maps `(u, w)` back to `(v, ρ)` and evaluates the residuals of the momentum
/// and continuity equations (interior nodes) and of the boundary conditions
/// (face-interior nodes), with the wide composite difference operators.
pub fn reconstruct_physical(
    u: &VectorField,
    w: &ScalarField,
    data: &PerturbationData,
    params: &FlowParams,
    frames: &BoundaryFrames,
) -> Result<PhysicalSolution> {
    let grid = *u.grid();
    let (v, rho) = physical(u, w, data);
    let dpi = crate::material::delta_pi_prime(&params.pressure, w)?;
    let gamma = params.gamma();
    let grad_rho = field::gradient(&rho);
    let lap = VectorField::from_scalars(
        field::divergence(&field::gradient(&v.component_field(0))),
        field::divergence(&field::gradient(&v.component_field(1))),
        field::divergence(&field::gradient(&v.component_field(2))),
    );
    let grad_div = field::gradient(&field::divergence(&v));
    let conv = field::advect(&v, &v);
    let mut momentum = VectorField::zeros(&grid);
    for idx in 0..grid.len() {
        let r = rho.values()[idx];
        let pp = gamma + dpi.values()[idx];
        let (c, l, gd, gr) = (conv.at(idx), lap.at(idx), grad_div.at(idx), grad_rho.at(idx));
        momentum.set(
            idx,
            [0, 1, 2].map(|k| r * c[k] - params.mu * l[k] - (params.mu + params.nu) * gd[k] + pp * gr[k]),
        );
    }
    let continuity = field::divergence(&rho.times_vector(&v));

    let mut slip = 0.0;
    let mut imperm = 0.0;
    let mut inflow = 0.0;
    for fr in frames.iter().filter(|f| !f.is_edge()) {
        let wgt = fr.weight;
        let vel = v.at(fr.node);
        for (k, tau) in [fr.tangent1, fr.tangent2].into_iter().enumerate() {
            let bk = [&data.b1, &data.b2][k].values()[fr.node]
                + normal_shear(&grid, &data.u0, fr.node, fr.normal, tau, params.mu)
                + params.f * tau[0];
            let lhs = normal_shear(&grid, &v, fr.node, fr.normal, tau, params.mu) + params.f * dot(vel, tau);
            slip += wgt * (lhs - bk).powi(2);
        }
        let d = dot(fr.normal, data.u0.at(fr.node)) + fr.normal[0];
        imperm += wgt * (dot(fr.normal, vel) - d).powi(2);
        if fr.face() == Face::X1Min {
            inflow += wgt * (rho.values()[fr.node] - 1.0 - data.w_in.values()[fr.node]).powi(2);
        }
    }
    let m = momentum.components();
    Ok(PhysicalSolution {
        residuals: PhysicalResiduals {
            momentum: interior_l2(&grid, &[&m[0], &m[1], &m[2]]),
            continuity: interior_l2(&grid, &[continuity.values()]),
            slip: slip.sqrt(),
            impermeability: imperm.sqrt(),
            inflow_density: inflow.sqrt(),
        },
        v,
        rho,
    })
}

/// `‖w_in‖` on the inflow face, used by the transport estimate.
pub fn inflow_l2(w_in: &ScalarField) -> Result<f64> {
    norm(w_in, NormKind::BoundaryLp(BoundaryRegion::Inflow, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(eps: f64, n: [usize; 3]) -> ProblemSetup {
        ProblemSetup::build(
            GeometryConfig::new(2.0, 1.0, 1.0, n),
            FlowParams::default(),
            &BoundaryDataSpec::default().with_epsilon(eps),
            SolverSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let s = setup(0.0, [8, 4, 4]);
        let out = picard_solve(&s, s.zero_start()).unwrap();
        assert!(out.verdict.is_converged());
        assert!(out.history.len() <= 2);
        assert!(out.history.iter().all(|r| r.a_n == 0.0));
        let phys = reconstruct_physical(&out.u, &out.w, &s.data, &s.params, &s.frames).unwrap();
        let r = phys.residuals;
        assert!(r.momentum + r.continuity + r.slip + r.impermeability + r.inflow_density <= 1e-11);
        let m = convergence_metrics(&[out.history[0].clone(), out.history[0].clone()], 0.0).unwrap();
        assert!(m.slack.iter().all(|&x| x <= 0.0));
    }

    #[test]
    fn small_data_converges_with_contraction() {
        let s = setup(1e-2, [8, 4, 4]);
        let out = picard_solve(&s, s.zero_start()).unwrap();
        assert!(out.verdict.is_converged(), "{:?}", out.verdict);
        for r in out.history.iter().skip(2) {
            assert!(r.r_n.unwrap() <= 0.5, "{r:?}");
        }
        let m = convergence_metrics(&out.history, s.data.b_measure).unwrap();
        assert!(m.geometric_rate < 1.0);
        assert!(m.max_a <= m.bound);
        let phys = reconstruct_physical(&out.u, &out.w, &s.data, &s.params, &s.frames).unwrap();
        assert!(phys.residuals.impermeability < 1e-12);
        assert!(phys.residuals.inflow_density < 1e-12);
    }

    #[test]
    fn large_data_is_flagged() {
        let s = setup(0.5, [8, 4, 4]);
        let out = picard_solve(&s, s.zero_start()).unwrap();
        assert!(!out.verdict.is_converged(), "{:?}", out.history);
    }

    #[test]
    fn short_history_is_rejected() {
        assert!(matches!(convergence_metrics(&[], 1.0), Err(Error::ShortHistory(_))));
    }

    #[test]
    fn random_start_is_tangential_and_scaled() {
        let s = setup(1e-2, [8, 4, 4]);
        let (u, w) = random_start(&s, 7, 0.004).unwrap();
        assert!((s.strong_norm(&u, &w).unwrap() - 0.004).abs() < 1e-12);
        for fr in s.frames.iter() {
            for face in &fr.faces {
                assert!(u.component(face.axis())[fr.node].abs() < 1e-15);
            }
        }
        let again = random_start(&s, 7, 0.004).unwrap();
        assert_eq!(again.0, u);
    }

    #[test]
    fn identical_starts_have_zero_distance() {
        let s = setup(1e-2, [8, 4, 4]);
        let d = two_start_uniqueness(&s, s.zero_start(), s.zero_start()).unwrap();
        assert_eq!(d, 0.0);
    }
}
