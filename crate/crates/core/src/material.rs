//! Pressure closure, flow parameters, boundary data profiles, the lifting `u₀`
//! of the normal boundary trace and the nonlinear forcings `F`, `G`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, ScalarField, VectorField};
use crate::grid::{dot, BoundaryFrames, Face, Grid};
use crate::norm::{norm, BoundaryRegion, NormKind, DEFAULT_P};

/// Density perturbations must keep `ρ = 1 + w` inside `(0, 2)`.
pub const DENSITY_BAND: (f64, f64) = (0.0, 2.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PressureLaw {
    /// `π(ρ) = ρ^κ`.
    Power { kappa: f64 },
    /// `π(ρ) = K ρ`.
    Linear {
        #[serde(rename = "K")]
        k: f64,
    },
}

impl Default for PressureLaw {
    fn default() -> Self {
        PressureLaw::Power { kappa: 2.0 }
    }
}

impl PressureLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PressureLaw::Power { kappa } if !(kappa.is_finite() && kappa >= 1.0) => Err(
                Error::InvalidParameters(format!("power-law exponent must be >= 1, got {kappa}")),
            ),
            PressureLaw::Linear { k } if !(k.is_finite() && k > 0.0) => Err(
                Error::InvalidParameters(format!("linear pressure constant must be > 0, got {k}")),
            ),
            _ => Ok(()),
        }
    }

    /// Derivative of order `order` (0..=3) without the band check.
    pub fn derivative(&self, rho: f64, order: u8) -> f64 {
        match *self {
            PressureLaw::Power { kappa } => {
                let mut coef = 1.0;
                for m in 0..order {
                    coef *= kappa - m as f64;
                }
                if coef == 0.0 {
                    0.0
                } else {
                    coef * rho.powf(kappa - order as f64)
                }
            }
            PressureLaw::Linear { k } => match order {
                0 => k * rho,
                1 => k,
                _ => 0.0,
            },
        }
    }

    /// `γ = π′(1)`.
    pub fn gamma(&self) -> f64 {
        self.derivative(1.0, 1)
    }

    /// `max |π″|` over densities in `[lo, hi]`; `π″` is monotone for both closures.
    pub fn second_derivative_bound(&self, lo: f64, hi: f64) -> f64 {
        self.derivative(lo, 2).abs().max(self.derivative(hi, 2).abs())
    }
}

pub fn pressure_eval(law: &PressureLaw, rho: f64, order: u8) -> Result<f64> {
    if !(rho > DENSITY_BAND.0 && rho < DENSITY_BAND.1) {
        return Err(Error::DensityDomain(rho));
    }
    if order > 3 {
        return Err(Error::InvalidParameters(format!(
            "pressure derivative order {order} exceeds 3"
        )));
    }
    Ok(law.derivative(rho, order))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub mu: f64,
    pub nu: f64,
    /// Friction coefficient of the slip condition.
    pub f: f64,
    pub pressure: PressureLaw,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            nu: 1.0,
            f: 10.0,
            pressure: PressureLaw::default(),
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidParameters(format!("mu must be > 0, got {}", self.mu)));
        }
        if !(self.nu.is_finite() && self.mu + 2.0 * self.nu > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "mu + 2 nu must be > 0, got {}",
                self.mu + 2.0 * self.nu
            )));
        }
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(Error::InvalidParameters(format!("f must be > 0, got {}", self.f)));
        }
        self.pressure.validate()?;
        if self.gamma() <= 0.0 {
            return Err(Error::InvalidParameters("pi'(1) must be positive".into()));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.pressure.gamma()
    }

    /// `γ / (ν + 2μ)`, the damping rate of the effective transport equation.
    pub fn gamma_bar(&self) -> f64 {
        self.gamma() / (self.nu + 2.0 * self.mu)
    }
}

fn check_band(w: &ScalarField) -> Result<()> {
    for (node, &v) in w.values().iter().enumerate() {
        let rho = 1.0 + v;
        if !(rho > DENSITY_BAND.0 && rho < DENSITY_BAND.1) {
            return Err(Error::DensityOutOfBand {
                node,
                position: w.grid().position_of(node),
                density: rho,
            });
        }
    }
    Ok(())
}

/// `δπ′(w) = π′(1 + w) − π′(1)`.
pub fn delta_pi_prime(law: &PressureLaw, w: &ScalarField) -> Result<ScalarField> {
    check_band(w)?;
    let gamma = law.gamma();
    Ok(w.map(|v| law.derivative(1.0 + v, 1) - gamma))
}

/// Shapes of boundary data on a face, in normalised tangential coordinates
/// `(s, t) ∈ [0, 1]²`. Every shape vanishes on the face edges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Zero,
    /// `sin(πs) sin(πt)`.
    SineBump,
    /// `sin(2πs) sin(πt)`.
    DoubleBump,
    /// `sin²(πs) sin²(πt)`; its tangential derivatives vanish on the edges too.
    SquaredSineBump,
}

impl Profile {
    pub fn eval(self, s: f64, t: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::SineBump => (PI * s).sin() * (PI * t).sin(),
            Profile::DoubleBump => (2.0 * PI * s).sin() * (PI * t).sin(),
            Profile::SquaredSineBump => ((PI * s).sin() * (PI * t).sin()).powi(2),
        }
    }
}

/// Boundary data as `ε` times profile shapes. Slip profiles prescribe
/// `b_i − f τ_i^{(1)}`, normal profiles prescribe `d − n^{(1)}` and the density
/// profile prescribes `ρ_in − 1`. The normal trace on lateral walls is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryDataSpec {
    pub epsilon: f64,
    pub inflow_normal: Profile,
    pub outflow_normal: Profile,
    pub inflow_slip: [Profile; 2],
    pub outflow_slip: [Profile; 2],
    pub lateral_slip: [Profile; 2],
    pub inflow_density: Profile,
}

impl Default for BoundaryDataSpec {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            inflow_normal: Profile::SquaredSineBump,
            outflow_normal: Profile::SquaredSineBump,
            inflow_slip: [Profile::Zero; 2],
            outflow_slip: [Profile::Zero; 2],
            lateral_slip: [Profile::SineBump, Profile::Zero],
            inflow_density: Profile::SineBump,
        }
    }
}

impl BoundaryDataSpec {
    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidParameters(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    fn normal_profile(&self, face: Face) -> Profile {
        match face {
            Face::X1Min => self.inflow_normal,
            Face::X1Max => self.outflow_normal,
            _ => Profile::Zero,
        }
    }

    fn slip_profiles(&self, face: Face) -> [Profile; 2] {
        match face {
            Face::X1Min => self.inflow_slip,
            Face::X1Max => self.outflow_slip,
            _ => self.lateral_slip,
        }
    }

    fn on_face(&self, grid: &Grid, face: Face, profile: Profile, x: [f64; 3]) -> f64 {
        let [b, d] = face.tangential_axes();
        let ext = grid.extents();
        self.epsilon * profile.eval(x[b] / ext[b], x[d] / ext[d])
    }

    /// Prescribed `d − n^{(1)}` at a point of `face`.
    pub fn normal_trace(&self, grid: &Grid, face: Face, x: [f64; 3]) -> f64 {
        self.on_face(grid, face, self.normal_profile(face), x)
    }

    /// Prescribed `b_i − f τ_i^{(1)}` for `i = 1, 2` at a point of `face`.
    pub fn slip_trace(&self, grid: &Grid, face: Face, x: [f64; 3]) -> [f64; 2] {
        self.slip_profiles(face).map(|p| self.on_face(grid, face, p, x))
    }

    /// Prescribed `ρ_in − 1` at a point of the inflow face.
    pub fn density_trace(&self, grid: &Grid, x: [f64; 3]) -> f64 {
        self.on_face(grid, Face::X1Min, self.inflow_density, x)
    }
}

/// `C²` cutoff: 1 at `t = 0`, 0 for `t ≥ 1`, with vanishing first and second
/// derivatives at both ends.
pub fn ramp(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else if t <= 0.0 {
        1.0
    } else {
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

/// Width of the cutoff ramp of the lifting next to the faces normal to `axis`:
/// a quarter of the extent along that axis.
pub fn ramp_width(grid: &Grid, axis: usize) -> f64 {
    grid.extents()[axis] / 4.0
}

/// Lifting `u₀` with `n·u₀ = d − n^{(1)}` on every face: each face contributes
/// its normal profile times the ramp in the distance to the face, along its
/// normal axis. Tangential components of each contribution are zero.
pub fn extend_normal_trace(grid: &Grid, spec: &BoundaryDataSpec) -> VectorField {
    let ext = grid.extents();
    VectorField::from_fn(grid, |x| {
        let mut u = [0.0; 3];
        for face in Face::ALL {
            let a = face.axis();
            let dist = if face.is_lower() { x[a] } else { ext[a] - x[a] };
            let r = ramp(dist / ramp_width(grid, a));
            if r == 0.0 {
                continue;
            }
            u[a] += face.sign() * spec.normal_trace(grid, face, x) * r;
        }
        u
    })
}

/// Everything the iteration needs from the boundary data.
#[derive(Clone, Debug)]
pub struct PerturbationData {
    pub u0: VectorField,
    /// Slip data `B₁`, `B₂` at face-interior nodes (zero elsewhere).
    pub b1: ScalarField,
    pub b2: ScalarField,
    /// Right-hand side of the tangential slip rows per Cartesian component:
    /// `B₁τ₁ + B₂τ₂` on face interiors, face-averaged on edges.
    pub slip: VectorField,
    /// Inflow density perturbation `ρ_in − 1` on the inflow face (zero elsewhere).
    pub w_in: ScalarField,
    pub b_measure: f64,
    /// `μΔu₀ + (ν+μ)∇div u₀`.
    pub u0_viscous: VectorField,
    pub div_u0: ScalarField,
    pub p: f64,
}

impl PerturbationData {
    /// Data for an arbitrary lifting, slip data and inflow trace.
    pub fn new(
        frames: &BoundaryFrames,
        params: &FlowParams,
        u0: VectorField,
        b1: ScalarField,
        b2: ScalarField,
        w_in: ScalarField,
        p: f64,
    ) -> Result<Self> {
        let grid = *u0.grid();
        let slip = slip_rhs(&grid, frames, |_, idx| [b1.values()[idx], b2.values()[idx]]);
        let b_measure = norm(&u0, NormKind::W2p(p))?
            + slip_trace_norm(&b1, &b2, p)?
            + norm(&w_in, NormKind::BoundaryW1p(BoundaryRegion::Inflow, p))?;
        let u0_viscous = &(params.mu * &field::vector_laplacian(&u0))
            + &((params.nu + params.mu) * &field::grad_div(&u0));
        let div_u0 = field::divergence(&u0);
        Ok(Self {
            u0,
            b1,
            b2,
            slip,
            w_in,
            b_measure,
            u0_viscous,
            div_u0,
            p,
        })
    }

    /// Zero data on `grid`.
    pub fn zero(grid: &Grid, frames: &BoundaryFrames, params: &FlowParams) -> Result<Self> {
        Self::new(
            frames,
            params,
            VectorField::zeros(grid),
            ScalarField::zeros(grid),
            ScalarField::zeros(grid),
            ScalarField::zeros(grid),
            DEFAULT_P,
        )
    }

    pub fn grid(&self) -> &Grid {
        self.u0.grid()
    }

    /// Same data with every boundary quantity multiplied by `factor` (the lifting too).
    pub fn scaled(&self, frames: &BoundaryFrames, params: &FlowParams, factor: f64) -> Result<Self> {
        Self::new(
            frames,
            params,
            factor * &self.u0,
            factor * &self.b1,
            factor * &self.b2,
            factor * &self.w_in,
            self.p,
        )
    }
}

/// `‖(B₁, B₂)‖` in the discrete trace norm over the whole boundary.
pub fn slip_trace_norm(b1: &ScalarField, b2: &ScalarField, p: f64) -> Result<f64> {
    let kind = NormKind::TraceGagliardo(BoundaryRegion::All, p);
    Ok((norm(b1, kind)?.powf(p) + norm(b2, kind)?.powf(p)).powf(1.0 / p))
}

/// Cartesian right-hand side of the tangential slip rows from per-face slip
/// values `(B₁, B₂)`. On edges, each component tangent to all incident faces
/// gets the average of the incident faces' values; other components are zero.
pub fn slip_rhs(
    grid: &Grid,
    frames: &BoundaryFrames,
    per_face: impl Fn(Face, usize) -> [f64; 2],
) -> VectorField {
    let mut out = VectorField::zeros(grid);
    for fr in frames.iter() {
        let mut acc = [0.0; 3];
        for &face in &fr.faces {
            let (t1, t2) = face.tangents();
            let [s1, s2] = per_face(face, fr.node);
            for c in 0..3 {
                acc[c] += s1 * t1[c] + s2 * t2[c];
            }
        }
        let m = fr.faces.len() as f64;
        let mut v = [0.0; 3];
        for c in 0..3 {
            if fr.faces.iter().all(|f| f.axis() != c) {
                v[c] = acc[c] / m;
            }
        }
        out.set(fr.node, v);
    }
    out
}

/// `n · 2μ D(v) · τ` at a boundary node, with one-sided differences normal to the face.
pub fn normal_shear(grid: &Grid, v: &VectorField, idx: usize, n: [f64; 3], tau: [f64; 3], mu: f64) -> f64 {
    let c = grid.coords(idx);
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            let w = n[a] * tau[b] + n[b] * tau[a];
            if w != 0.0 {
                s += w * field::d1_at(grid, v.component(a), idx, c, b);
            }
        }
    }
    mu * s
}

pub fn assemble_perturbation_data(
    grid: &Grid,
    frames: &BoundaryFrames,
    spec: &BoundaryDataSpec,
    params: &FlowParams,
    p: f64,
) -> Result<PerturbationData> {
    spec.validate()?;
    let u0 = extend_normal_trace(grid, spec);
    let mut b1 = ScalarField::zeros(grid);
    let mut b2 = ScalarField::zeros(grid);
    let mut w_in = ScalarField::zeros(grid);
    for fr in frames.iter() {
        let x = grid.position(fr.coords);
        if fr.faces.contains(&Face::X1Min) {
            w_in.values_mut()[fr.node] = spec.density_trace(grid, x);
        }
        if fr.is_edge() {
            continue;
        }
        let [s1, s2] = spec.slip_trace(grid, fr.face(), x);
        b1.values_mut()[fr.node] = s1 - normal_shear(grid, &u0, fr.node, fr.normal, fr.tangent1, params.mu);
        b2.values_mut()[fr.node] = s2 - normal_shear(grid, &u0, fr.node, fr.normal, fr.tangent2, params.mu);
    }
    PerturbationData::new(frames, params, u0, b1, b2, w_in, p)
}

/// Momentum forcing
/// `F = ∂₁u − (1+w)(e₁+u+u₀)·∇(u+u₀) + μΔu₀ + (ν+μ)∇div u₀ − δπ′(w)∇w`,
/// equal to the expanded quadratic form in `(u, w)` plus the `u₀` terms.
pub fn compute_f(
    u: &VectorField,
    w: &ScalarField,
    data: &PerturbationData,
    params: &FlowParams,
) -> Result<VectorField> {
    let dpi = delta_pi_prime(&params.pressure, w)?;
    let grid = *u.grid();
    let vel = u + &data.u0;
    let grad_w = field::gradient(w);
    let grads: Vec<VectorField> = (0..3)
        .map(|c| field::gradient(&vel.component_field(c)))
        .collect();
    let mut out = VectorField::zeros(&grid);
    for idx in 0..grid.len() {
        let coords = grid.coords(idx);
        let wv = w.values()[idx];
        let a = vel.at(idx);
        let carrier = [1.0 + a[0], a[1], a[2]];
        let visc = data.u0_viscous.at(idx);
        let gw = grad_w.at(idx);
        let mut f = [0.0; 3];
        for c in 0..3 {
            let convective = (1.0 + wv) * dot(carrier, grads[c].at(idx));
            f[c] = visc[c] + field::d1_at(&grid, u.component(c), idx, coords, 0)
                - convective
                - dpi.values()[idx] * gw[c];
        }
        out.set(idx, f);
    }
    Ok(out)
}

/// Continuity forcing `G = −(w + 1) div u₀ − w div u`.
pub fn compute_g(u: &VectorField, w: &ScalarField, data: &PerturbationData) -> Result<ScalarField> {
    check_band(w)?;
    let div_u = field::divergence(u);
    let grid = *u.grid();
    let values = (0..grid.len())
        .map(|i| {
            let wv = w.values()[i];
            -(wv + 1.0) * data.div_u0.values()[i] - wv * div_u.values()[i]
        })
        .collect();
    ScalarField::from_values(&grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{boundary_frames, build_grid, GeometryConfig};
    use proptest::prelude::*;

    fn setup() -> (Grid, BoundaryFrames, FlowParams) {
        let g = build_grid(GeometryConfig::new(2.0, 1.0, 1.0, [8, 4, 4])).unwrap();
        (g, boundary_frames(&g), FlowParams::default())
    }

    #[test]
    fn pressure_values() {
        let power = PressureLaw::Power { kappa: 2.0 };
        assert_eq!(pressure_eval(&power, 1.0, 1).unwrap(), 2.0);
        assert_eq!(power.gamma(), 2.0);
        assert_eq!(pressure_eval(&PressureLaw::Linear { k: 1.0 }, 0.7, 2).unwrap(), 0.0);
        assert_eq!(pressure_eval(&PressureLaw::Power { kappa: 1.4 }, 1.0, 0).unwrap(), 1.0);
        assert!(pressure_eval(&power, 2.0, 0).is_err());
        assert!(pressure_eval(&power, 0.0, 1).is_err());
        let k = 1.4;
        let third = pressure_eval(&PressureLaw::Power { kappa: k }, 1.5, 3).unwrap();
        assert!((third - k * (k - 1.0) * (k - 2.0) * 1.5f64.powf(k - 3.0)).abs() < 1e-14);
    }

    #[test]
    fn delta_pi_prime_values() {
        let (g, _, _) = setup();
        let law = PressureLaw::Power { kappa: 2.0 };
        assert_eq!(delta_pi_prime(&law, &ScalarField::zeros(&g)).unwrap().max_abs(), 0.0);
        let d = delta_pi_prime(&law, &ScalarField::constant(&g, 0.1)).unwrap();
        assert!(d.values().iter().all(|v| (v - 0.2).abs() < 1e-14));
        let err = delta_pi_prime(&law, &ScalarField::constant(&g, -1.5)).unwrap_err();
        assert!(matches!(err, Error::DensityOutOfBand { node: 0, .. }));
    }

    #[test]
    fn params_validation() {
        assert!(FlowParams::default().validate().is_ok());
        assert!(FlowParams { mu: -1.0, ..Default::default() }.validate().is_err());
        assert!(FlowParams { nu: -0.6, ..Default::default() }.validate().is_err());
        assert!(FlowParams { f: 0.0, ..Default::default() }.validate().is_err());
        assert!(FlowParams {
            pressure: PressureLaw::Power { kappa: 0.5 },
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn ramp_is_c2_cutoff() {
        assert_eq!(ramp(0.0), 1.0);
        assert_eq!(ramp(1.0), 0.0);
        assert_eq!(ramp(3.0), 0.0);
        let h = 1e-4;
        for t in [0.0, 1.0] {
            let d1 = (ramp(t + h) - ramp(t - h)) / (2.0 * h);
            let d2 = (ramp(t + h) - 2.0 * ramp(t) + ramp(t - h)) / (h * h);
            assert!(d1.abs() < 1e-6 && d2.abs() < 1e-3, "t={t}: {d1} {d2}");
        }
    }

    #[test]
    fn zero_epsilon_gives_zero_data() {
        let (g, frames, params) = setup();
        let spec = BoundaryDataSpec::default().with_epsilon(0.0);
        assert_eq!(extend_normal_trace(&g, &spec).max_abs(), 0.0);
        let data = assemble_perturbation_data(&g, &frames, &spec, &params, DEFAULT_P).unwrap();
        assert_eq!(data.b1.max_abs() + data.b2.max_abs() + data.w_in.max_abs(), 0.0);
        assert_eq!(data.b_measure, 0.0);
    }

    #[test]
    fn lifting_matches_inflow_trace_and_decays() {
        let (g, _, _) = setup();
        let eps = 0.01;
        let spec = BoundaryDataSpec {
            epsilon: eps,
            inflow_normal: Profile::SineBump,
            outflow_normal: Profile::Zero,
            ..BoundaryDataSpec::default()
        };
        let u0 = extend_normal_trace(&g, &spec);
        for idx in 0..g.len() {
            let x = g.position_of(idx);
            let expect = if x[0] == 0.0 {
                -eps * (PI * x[1]).sin() * (PI * x[2]).sin()
            } else {
                let t = x[0] / 0.5;
                let r = if t >= 1.0 { 0.0 } else { 1.0 - 10.0 * t.powi(3) + 15.0 * t.powi(4) - 6.0 * t.powi(5) };
                -eps * (PI * x[1]).sin() * (PI * x[2]).sin() * r
            };
            let v = u0.at(idx);
            assert!((v[0] - expect).abs() < 1e-15);
            assert_eq!((v[1], v[2]), (0.0, 0.0));
            if x[0] >= 0.5 {
                assert_eq!(v[0], 0.0);
            }
        }
    }

    #[test]
    fn lifting_normal_trace_on_every_face() {
        let (g, frames, _) = setup();
        let spec = BoundaryDataSpec::default().with_epsilon(0.3);
        let u0 = extend_normal_trace(&g, &spec);
        for fr in frames.iter().filter(|f| !f.is_edge()) {
            let x = g.position(fr.coords);
            let normal = dot(fr.normal, u0.at(fr.node));
            assert!((normal - spec.normal_trace(&g, fr.face(), x)).abs() < 1e-15);
        }
    }

    #[test]
    fn lifting_norm_is_linear_in_epsilon() {
        let (g, _, _) = setup();
        let n = |eps: f64| {
            norm(&extend_normal_trace(&g, &BoundaryDataSpec::default().with_epsilon(eps)), NormKind::W2p(4.0)).unwrap()
        };
        let base = n(1e-3);
        assert!((n(1e-2) / base - 10.0).abs() < 1e-10);
        assert!((n(1e-1) / base - 100.0).abs() < 1e-9);
    }

    #[test]
    fn slip_data_without_lifting_is_profile() {
        let (g, frames, params) = setup();
        let spec = BoundaryDataSpec {
            epsilon: 0.02,
            inflow_normal: Profile::Zero,
            outflow_normal: Profile::Zero,
            lateral_slip: [Profile::SineBump, Profile::DoubleBump],
            ..BoundaryDataSpec::default()
        };
        let data = assemble_perturbation_data(&g, &frames, &spec, &params, 4.0).unwrap();
        for fr in frames.in_region(crate::grid::Region::Lateral) {
            let s = spec.slip_trace(&g, fr.face(), g.position(fr.coords));
            assert_eq!(data.b1.values()[fr.node], s[0]);
            assert_eq!(data.b2.values()[fr.node], s[1]);
        }
    }

    #[test]
    fn b_measure_matches_direct_recomputation() {
        let (g, frames, params) = setup();
        let data = assemble_perturbation_data(&g, &frames, &BoundaryDataSpec::default(), &params, 4.0).unwrap();
        let tg = NormKind::TraceGagliardo(BoundaryRegion::All, 4.0);
        let b = norm(&data.u0, NormKind::W2p(4.0)).unwrap()
            + (norm(&data.b1, tg).unwrap().powi(4) + norm(&data.b2, tg).unwrap().powi(4)).powf(0.25)
            + norm(&data.w_in, NormKind::BoundaryW1p(BoundaryRegion::Inflow, 4.0)).unwrap();
        assert!((b - data.b_measure).abs() < 1e-12 * b.max(1.0));
        assert!(data.b_measure > 0.0);
    }

    #[test]
    fn forcings_reduce_as_expected() {
        let (g, frames, params) = setup();
        let zero = PerturbationData::zero(&g, &frames, &params).unwrap();
        let u = VectorField::zeros(&g);
        let w = ScalarField::zeros(&g);
        assert_eq!(compute_f(&u, &w, &zero, &params).unwrap().max_abs(), 0.0);
        assert_eq!(compute_g(&u, &w, &zero).unwrap().max_abs(), 0.0);

        let data = assemble_perturbation_data(&g, &frames, &BoundaryDataSpec::default(), &params, 4.0).unwrap();
        let f = compute_f(&u, &w, &data, &params).unwrap();
        let u0 = &data.u0;
        let expect = &(&(&(params.mu * &field::vector_laplacian(u0))
            + &((params.nu + params.mu) * &field::grad_div(u0)))
            - &field::advect(u0, u0))
            - &field::advect(&VectorField::constant(&g, [1.0, 0.0, 0.0]), u0);
        assert!((&f - &expect).max_abs() < 1e-13);
        let gg = compute_g(&u, &w, &data).unwrap();
        assert!((&gg + &field::divergence(u0)).max_abs() < 1e-15);

        let u = VectorField::from_fn(&g, |x| [0.01 * x[1], 0.02 * x[0] * x[2], 0.0]);
        let w = ScalarField::from_fn(&g, |x| 0.05 * x[0]);
        let gz = compute_g(&u, &w, &zero).unwrap();
        let expect = -&w.zip_map(&field::divergence(&u), |a, b| a * b);
        assert!((&gz - &expect).max_abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn delta_pi_prime_lipschitz(a in prop::collection::vec(-0.4f64..0.4, 225), b in prop::collection::vec(-0.4f64..0.4, 225)) {
            let g = build_grid(GeometryConfig::new(2.0, 1.0, 1.0, [8, 4, 4])).unwrap();
            let law = PressureLaw::Power { kappa: 3.0 };
            let wa = ScalarField::from_values(&g, a).unwrap();
            let wb = ScalarField::from_values(&g, b).unwrap();
            let c = law.second_derivative_bound(0.6, 1.4);
            let da = delta_pi_prime(&law, &wa).unwrap();
            let db = delta_pi_prime(&law, &wb).unwrap();
            let lhs = norm(&(&da - &db), NormKind::Lp(2.0)).unwrap();
            let rhs = c * norm(&(&wa - &wb), NormKind::Lp(2.0)).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
            prop_assert!(da.max_abs() <= c * wa.max_abs() * (1.0 + 1e-12));
        }
    }
}
