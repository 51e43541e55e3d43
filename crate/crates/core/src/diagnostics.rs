//! Runtime checks of the estimate machinery on computed fields: the energy
//! identity, the slip relations for the boundary vorticity, the Helmholtz
//! splitting and the gradient structure of the effective forcing, a priori
//! ratios and the reflection symmetry of the slip functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, d1_at, ScalarField, VectorField};
use crate::grid::{dot, Face, Grid};
use crate::krylov::{krylov_solve_with, KrylovConfig, LinearOperator};
use crate::material::{normal_shear, slip_trace_norm, FlowParams};
use crate::norm::{norm, BoundaryRegion, NormKind};

/// One named residual or ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticEntry {
    pub key: String,
    pub value: f64,
    /// `None` for informational entries, which pass whenever they are finite.
    pub tolerance: Option<f64>,
    pub pass: bool,
    /// Norm or measure the value is computed in.
    pub norm: String,
    /// The identity or estimate the entry checks.
    pub anchor: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub cells: [usize; 3],
    pub spacing: [f64; 3],
    pub entries: Vec<DiagnosticEntry>,
}

impl DiagnosticReport {
    pub fn new(grid: &Grid) -> Self {
        Self {
            cells: grid.cells(),
            spacing: grid.spacing(),
            entries: Vec::new(),
        }
    }

    /// Appends an entry; non-finite values always fail.
    pub fn push(&mut self, key: &str, value: f64, tolerance: Option<f64>, norm: &str, anchor: &str) {
        let pass = value.is_finite() && tolerance.map_or(true, |t| value <= t);
        self.entries.push(DiagnosticEntry {
            key: key.to_string(),
            value,
            tolerance,
            pass,
            norm: norm.to_string(),
            anchor: anchor.to_string(),
        });
    }

    /// Appends an entry that passes when `value >= minimum`; the minimum is
    /// stored as the tolerance.
    pub fn push_at_least(&mut self, key: &str, value: f64, minimum: f64, norm: &str, anchor: &str) {
        self.entries.push(DiagnosticEntry {
            key: key.to_string(),
            value,
            tolerance: Some(minimum),
            pass: value.is_finite() && value >= minimum,
            norm: norm.to_string(),
            anchor: anchor.to_string(),
        });
    }

    pub fn get(&self, key: &str) -> Option<&DiagnosticEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

/// Pass thresholds of the diagnose run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticTolerances {
    pub energy_identity: f64,
    pub vorticity: f64,
    pub gradient_structure: f64,
    pub helmholtz: f64,
    pub reflection: f64,
    pub apriori_ratio: f64,
}

impl Default for DiagnosticTolerances {
    fn default() -> Self {
        Self {
            energy_identity: 1e-4,
            vorticity: 1e-2,
            gradient_structure: 0.5,
            helmholtz: 1e-2,
            reflection: 1e-12,
            apriori_ratio: 10.0,
        }
    }
}

impl DiagnosticTolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("energy_identity", self.energy_identity),
            ("vorticity", self.vorticity),
            ("gradient_structure", self.gradient_structure),
            ("helmholtz", self.helmholtz),
            ("reflection", self.reflection),
            ("apriori_ratio", self.apriori_ratio),
        ];
        for (key, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ConfigValidation {
                    key: format!("diagnostics.{key}"),
                    message: format!("must be positive and finite, got {v}"),
                });
            }
        }
        Ok(())
    }
}

fn strain(grid: &Grid, u: &VectorField, idx: usize, c: [usize; 3]) -> ([[f64; 3]; 3], f64) {
    let mut g = [[0.0; 3]; 3];
    for (a, row) in g.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = d1_at(grid, u.component(a), idx, c, b);
        }
    }
    let mut d = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            d[a][b] = 0.5 * (g[a][b] + g[b][a]);
        }
    }
    (d, g[0][0] + g[1][1] + g[2][2])
}

/// Relative defect of the energy identity obtained by testing the momentum
/// equation with `u`:
/// `∫ 2μ|D(u)|² + ν (div u)² + ∫_Γ (f + n₁/2)|u|² − γ ∫ w div u = ∫ F·u + ∫_Γ B_i u·τ_i`.
/// Returns `|LHS − RHS| / max(1, |RHS|)`.
pub fn energy_identity_residual(
    u: &VectorField,
    w: &ScalarField,
    forcing: &VectorField,
    b1: &ScalarField,
    b2: &ScalarField,
    params: &FlowParams,
) -> f64 {
    let grid = *u.grid();
    let gamma = params.gamma();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for idx in 0..grid.len() {
        let c = grid.coords(idx);
        let vw = grid.volume_weight(c);
        let (d, div) = strain(&grid, u, idx, c);
        let dd: f64 = d.iter().flatten().map(|x| x * x).sum();
        lhs += vw * (2.0 * params.mu * dd + params.nu * div * div - gamma * w.values()[idx] * div);
        rhs += vw * dot(forcing.at(idx), u.at(idx));
    }
    for face in Face::ALL {
        let n1 = face.normal()[0];
        let (t1, t2) = face.tangents();
        for (idx, _, wt) in grid.face_nodes(face) {
            if wt == 0.0 {
                continue;
            }
            let v = u.at(idx);
            lhs += wt * (params.f + 0.5 * n1) * dot(v, v);
            rhs += wt * (b1.values()[idx] * dot(v, t1) + b2.values()[idx] * dot(v, t2));
        }
    }
    (lhs - rhs).abs() / rhs.abs().max(1.0)
}

/// Which viscosity divides the slip relations of the boundary vorticity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VorticityVariant {
    Mu,
    Nu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FaceResidual {
    pub face: Face,
    /// 1: `α·τ₂ = (B₁ − f u·τ₁)/μ`; 2: `α·τ₁ = −(B₂ − f u·τ₂)/μ`.
    pub relation: u8,
    pub value: f64,
}

/// Discrete `L²` defects, over face-interior nodes of each lateral face, of the
/// tangential vorticity relations implied by the slip condition on flat faces.
pub fn vorticity_boundary_residual(
    u: &VectorField,
    b1: &ScalarField,
    b2: &ScalarField,
    params: &FlowParams,
    variant: VorticityVariant,
) -> Vec<FaceResidual> {
    let grid = *u.grid();
    let visc = match variant {
        VorticityVariant::Mu => params.mu,
        VorticityVariant::Nu => params.nu,
    };
    let alpha = field::curl(u);
    let mut out = Vec::new();
    for face in BoundaryRegion::Lateral.faces() {
        let (t1, t2) = face.tangents();
        let (mut r1, mut r2) = (0.0, 0.0);
        for (idx, _, wt) in grid.face_nodes(face) {
            if wt == 0.0 {
                continue;
            }
            let a = alpha.at(idx);
            let v = u.at(idx);
            let e1 = dot(a, t2) - (b1.values()[idx] - params.f * dot(v, t1)) / visc;
            let e2 = dot(a, t1) + (b2.values()[idx] - params.f * dot(v, t2)) / visc;
            r1 += wt * e1 * e1;
            r2 += wt * e2 * e2;
        }
        out.push(FaceResidual { face, relation: 1, value: r1.sqrt() });
        out.push(FaceResidual { face, relation: 2, value: r2.sqrt() });
    }
    out
}

/// Root sum of squares of per-face residuals.
pub fn combined(residuals: &[FaceResidual]) -> f64 {
    residuals.iter().map(|r| r.value * r.value).sum::<f64>().sqrt()
}

/// Compact Laplacian with mirrored ghosts, i.e. zero Neumann data.
struct NeumannLaplacian {
    grid: Grid,
}

impl NeumannLaplacian {
    fn diagonal(&self) -> f64 {
        self.grid.spacing().iter().map(|h| -2.0 / (h * h)).sum()
    }
}

impl LinearOperator for NeumannLaplacian {
    fn dim(&self) -> usize {
        self.grid.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = &self.grid;
        let (st, hs, last) = (g.strides(), g.spacing(), g.cells());
        for (idx, out) in y.iter_mut().enumerate() {
            let c = g.coords(idx);
            let mut s = 0.0;
            for a in 0..3 {
                let i = c[a];
                let lo = if i == 0 { x[idx + st[a]] } else { x[idx - st[a]] };
                let hi = if i == last[a] { x[idx - st[a]] } else { x[idx + st[a]] };
                s += (lo - 2.0 * x[idx] + hi) / (hs[a] * hs[a]);
            }
            *out = s;
        }
    }
}

fn weighted_mean(grid: &Grid, v: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, x) in v.iter().enumerate() {
        let w = grid.volume_weight(grid.coords(idx));
        num += w * x;
        den += w;
    }
    num / den
}

/// Result of splitting `u = ∇pot + A`.
#[derive(Clone, Debug)]
pub struct Helmholtz {
    pub pot: ScalarField,
    pub a: VectorField,
    pub div_a: f64,
    /// `‖curl A − curl u‖_{L²}`.
    pub curl_mismatch: f64,
    /// `‖A·n‖_{L²(Γ)}`.
    pub normal_trace: f64,
    pub iterations: usize,
}

/// Solves `Δpot = div u` with `∂pot/∂n = 0` (the discrete compatibility defect
/// is removed as a mean), normalises `pot` to zero mean and sets `A = u − ∇pot`.
pub fn helmholtz_decompose(u: &VectorField, cfg: &KrylovConfig) -> Result<Helmholtz> {
    let grid = *u.grid();
    let mut rhs = field::divergence(u).into_values();
    let m = weighted_mean(&grid, &rhs);
    rhs.iter_mut().for_each(|x| *x -= m);
    let op = NeumannLaplacian { grid };
    let inv = vec![1.0 / op.diagonal(); grid.len()];
    let out = krylov_solve_with(&op, &rhs, cfg, None, Some(&inv))?;
    let mut pot = out.solution;
    let m = weighted_mean(&grid, &pot);
    pot.iter_mut().for_each(|x| *x -= m);
    let pot = ScalarField::from_values(&grid, pot)?;
    let a = u - &field::gradient(&pot);
    let div_a = norm(&field::divergence(&a), NormKind::Lp(2.0))?;
    let curl_mismatch = norm(&(&field::curl(&a) - &field::curl(u)), NormKind::Lp(2.0))?;
    let mut trace = 0.0;
    for face in Face::ALL {
        let n = face.normal();
        for (idx, _, wt) in grid.face_nodes(face) {
            trace += wt * dot(a.at(idx), n).powi(2);
        }
    }
    Ok(Helmholtz {
        pot,
        a,
        div_a,
        curl_mismatch,
        normal_trace: trace.sqrt(),
        iterations: out.iterations,
    })
}

/// Nodes at least `depth` nodes away from every face.
fn deep_nodes(grid: &Grid, depth: usize) -> impl Iterator<Item = usize> + '_ {
    let last = grid.cells();
    (0..grid.len()).filter(move |&idx| {
        let c = grid.coords(idx);
        (0..3).all(|a| c[a] >= depth && c[a] + depth <= last[a])
    })
}

/// Relative size of the curl of
/// `C = F − ∂₁A + μΔA + (ν+μ)∇div A − ∂₁∇pot`, which is a gradient for exact
/// solutions of the momentum equation. Evaluated at nodes three or more cells
/// from the boundary, where every stencil involved is centred; 0 when `C`
/// vanishes there or no such node exists.
pub fn gradient_structure_residual(
    forcing: &VectorField,
    pot: &ScalarField,
    a: &VectorField,
    params: &FlowParams,
) -> f64 {
    let grid = *a.grid();
    let d1 = |v: &VectorField| {
        VectorField::from_scalars(
            field::partial(&v.component_field(0), 0),
            field::partial(&v.component_field(1), 0),
            field::partial(&v.component_field(2), 0),
        )
    };
    let grad_pot = field::gradient(pot);
    let c = &(&(forcing - &d1(a)) + &(params.mu * &field::vector_laplacian(a)))
        + &(&((params.nu + params.mu) * &field::grad_div(a)) - &d1(&grad_pot));
    let curl = field::curl(&c);
    let (mut num, mut den) = (0.0, 0.0);
    for idx in deep_nodes(&grid, 3) {
        let w = grid.volume_weight(grid.coords(idx));
        let (k, v) = (curl.at(idx), c.at(idx));
        num += w * dot(k, k);
        den += w * dot(v, v);
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// `(‖u‖_{W²ₚ} + ‖w‖_{W¹ₚ}) / (‖F‖_{Lₚ} + ‖G‖_{W¹ₚ} + ‖B‖_{trace} + ‖w_in‖_{W¹ₚ(Γ_in)})`,
/// with `0/0` reported as 0.
#[allow(clippy::too_many_arguments)]
pub fn apriori_ratio(
    u: &VectorField,
    w: &ScalarField,
    forcing: &VectorField,
    g: &ScalarField,
    b1: &ScalarField,
    b2: &ScalarField,
    w_in: &ScalarField,
    p: f64,
) -> Result<f64> {
    let num = norm(u, NormKind::W2p(p))? + norm(w, NormKind::W1p(p))?;
    let den = norm(forcing, NormKind::Lp(p))?
        + norm(g, NormKind::W1p(p))?
        + slip_trace_norm(b1, b2, p)?
        + norm(w_in, NormKind::BoundaryW1p(BoundaryRegion::Inflow, p))?;
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// The reflected field `ũ(x̃) = (−u₁, u₂, u₃)(x)` with `x̃₁ = −x₁`, stored on the
/// same node layout (node `i` of the mirrored grid is node `n₁ − i` of the
/// original one), so that the inflow face becomes the upper `x₁` face.
pub fn reflect(u: &VectorField) -> VectorField {
    let grid = *u.grid();
    let last = grid.cells()[0];
    let mut out = VectorField::zeros(&grid);
    for idx in 0..grid.len() {
        let mut c = grid.coords(idx);
        c[0] = last - c[0];
        let v = u.at(grid.index_of(c));
        out.set(idx, [-v[0], v[1], v[2]]);
    }
    out
}

/// Largest change of the slip functionals `n·u` and `n·2μD(u)·τ_i + f u·τ_i` on
/// the inflow face under the reflection across `{x₁ = 0}`.
pub fn reflection_residual(u: &VectorField, params: &FlowParams) -> f64 {
    let grid = *u.grid();
    let r = reflect(u);
    let last = grid.cells()[0];
    let face = Face::X1Min;
    let n = face.normal();
    let n_mirror = Face::X1Max.normal();
    let (t1, t2) = face.tangents();
    let mut worst: f64 = 0.0;
    for (idx, c, _) in grid.face_nodes(face) {
        let mut cm = c;
        cm[0] = last;
        let im = grid.index_of(cm);
        worst = worst.max((dot(n, u.at(idx)) - dot(n_mirror, r.at(im))).abs());
        for tau in [t1, t2] {
            let orig = normal_shear(&grid, u, idx, n, tau, params.mu) + params.f * dot(u.at(idx), tau);
            let mirr = normal_shear(&grid, &r, im, n_mirror, tau, params.mu) + params.f * dot(r.at(im), tau);
            worst = worst.max((orig - mirr).abs());
        }
    }
    worst
}
