//! Steady transport `ũ·∇w = v` with `w = w_in` on the inflow face, solved by
//! tracing characteristics backwards to the inflow face, plus a first-order
//! upwind march in `x₁` used as an independent oracle.

use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;

/// Forward-progress threshold for the axial component of `ũ`.
pub const MIN_AXIAL_SPEED: f64 = 0.5;

/// Sup-norm summary of how far `ũ` is from `(1, 0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smallness {
    /// `max |ũ^{(1)} − 1|`.
    pub axial_deviation: f64,
    pub max_transverse: [f64; 2],
    pub min_axial: f64,
}

/// The transport velocity `ũ = (1 + c₁, c₂, c₃)` built from a convecting field `c`.
#[derive(Clone, Debug)]
pub struct TransportField {
    velocity: VectorField,
    certificate: Smallness,
}

impl TransportField {
    /// `ũ = e₁ + c`.
    pub fn from_convecting(c: &VectorField) -> Result<Self> {
        Self::from_velocity(c.map_components(|comp, v| if comp == 0 { 1.0 + v } else { v }))
    }

    /// Uses `velocity` as `ũ` directly.
    pub fn from_velocity(velocity: VectorField) -> Result<Self> {
        if !velocity.is_finite() {
            return Err(Error::TransportRegime("non-finite transport velocity".into()));
        }
        let axial = velocity.component(0);
        let min_axial = axial.iter().copied().fold(f64::INFINITY, f64::min);
        if min_axial < MIN_AXIAL_SPEED {
            let node = axial.iter().position(|&v| v == min_axial).unwrap_or(0);
            return Err(Error::TransportRegime(format!(
                "axial speed {min_axial:.4} < {MIN_AXIAL_SPEED} at {:?}",
                velocity.grid().position_of(node)
            )));
        }
        let max_abs = |c: usize| velocity.component(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let certificate = Smallness {
            axial_deviation: axial.iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs())),
            max_transverse: [max_abs(1), max_abs(2)],
            min_axial,
        };
        Ok(Self {
            velocity,
            certificate,
        })
    }

    pub fn uniform(grid: &Grid, v: [f64; 3]) -> Result<Self> {
        Self::from_velocity(VectorField::constant(grid, v))
    }

    pub fn grid(&self) -> &Grid {
        self.velocity.grid()
    }

    pub fn velocity(&self) -> &VectorField {
        &self.velocity
    }

    pub fn certificate(&self) -> Smallness {
        self.certificate
    }

    fn at(&self, x: [f64; 3]) -> [f64; 3] {
        let st = Stencil::new(self.grid(), x);
        [0, 1, 2].map(|c| st.eval(self.velocity.component(c)))
    }

    /// Pseudo-time step of the integrators.
    pub fn step(&self) -> f64 {
        0.5 * self.grid().min_spacing()
    }

    fn step_cap(&self) -> usize {
        (8.0 * self.grid().extents()[0] / self.step()).ceil() as usize
    }
}

/// Trilinear interpolation stencil: 8 node indices and weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

impl Stencil {
    /// Stencil at `x`, which is clamped to the closed box first.
    pub fn new(grid: &Grid, x: [f64; 3]) -> Self {
        let ext = grid.extents();
        let h = grid.spacing();
        let cells = grid.cells();
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let xa = x[a].clamp(0.0, ext[a]);
            let i = ((xa / h[a]).floor() as usize).min(cells[a] - 1);
            base[a] = i;
            t[a] = (xa / h[a] - i as f64).clamp(0.0, 1.0);
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0.0; 8];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if off[a] == 1 { t[a] } else { 1.0 - t[a] };
            }
            nodes[corner] = grid.index(base[0] + off[0], base[1] + off[1], base[2] + off[2]);
            weights[corner] = w;
        }
        Self { nodes, weights }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        let mut s = 0.0;
        for m in 0..8 {
            s += self.weights[m] * values[self.nodes[m]];
        }
        s
    }
}

pub fn interpolate(s: &ScalarField, x: [f64; 3]) -> f64 {
    Stencil::new(s.grid(), x).eval(s.values())
}

/// Result of tracing one characteristic backwards to the inflow face.
#[derive(Clone, Debug, PartialEq)]
pub struct CharacteristicTrace {
    pub seed: [f64; 3],
    pub arrival: [f64; 3],
    /// Pseudo-time `T` needed to reach the inflow face.
    pub travel: f64,
    /// `∫₀ᵀ v(X(s)) ds` for the payload `v`.
    pub integral: f64,
    pub steps: usize,
    /// Largest distance by which a stage point had to be clamped into the box.
    pub clamp_distance: f64,
}

fn clamp_box(grid: &Grid, x: [f64; 3], record: &mut f64) -> [f64; 3] {
    let ext = grid.extents();
    let mut out = x;
    let mut d2 = 0.0;
    for a in 0..3 {
        out[a] = x[a].clamp(0.0, ext[a]);
        d2 += (out[a] - x[a]).powi(2);
    }
    *record = record.max(d2.sqrt());
    out
}

struct Rk4Step {
    end: [f64; 3],
    stages: [[f64; 3]; 4],
    clamp: f64,
}

/// One classical RK4 step of `dX/ds = dir·ũ(X)`, stage points clamped to the box.
fn rk4(tf: &TransportField, x: [f64; 3], ds: f64, dir: f64) -> Rk4Step {
    let grid = tf.grid();
    let mut clamp = 0.0;
    let add = |a: [f64; 3], k: [f64; 3], s: f64| [0, 1, 2].map(|c| a[c] + s * k[c]);
    let s1 = x;
    let k1 = tf.at(s1).map(|v| dir * v);
    let s2 = clamp_box(grid, add(x, k1, 0.5 * ds), &mut clamp);
    let k2 = tf.at(s2).map(|v| dir * v);
    let s3 = clamp_box(grid, add(x, k2, 0.5 * ds), &mut clamp);
    let k3 = tf.at(s3).map(|v| dir * v);
    let s4 = clamp_box(grid, add(x, k3, ds), &mut clamp);
    let k4 = tf.at(s4).map(|v| dir * v);
    let raw = [0, 1, 2].map(|c| x[c] + ds / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
    Rk4Step {
        end: raw,
        stages: [s1, s2, s3, s4],
        clamp,
    }
}

const STAGE_WEIGHTS: [f64; 4] = [1.0, 2.0, 2.0, 1.0];

/// Traces backwards from `x`, calling `visit(point, weight)` for every payload
/// quadrature point so that `Σ weight·v(point)` is the path integral of `v`.
fn trace_with(
    tf: &TransportField,
    x: [f64; 3],
    mut visit: impl FnMut([f64; 3], f64),
) -> Result<CharacteristicTrace> {
    let grid = tf.grid();
    let ds = tf.step();
    let cap = tf.step_cap();
    let mut clamp = 0.0;
    let mut pos = clamp_box(grid, x, &mut clamp);
    clamp = 0.0;
    let mut travel = 0.0;
    let mut steps = 0;
    while pos[0] > 0.0 {
        if steps >= cap {
            return Err(Error::CharacteristicStalled { start: x, steps });
        }
        steps += 1;
        let full = rk4(tf, pos, ds, -1.0);
        if full.end[0] > 0.0 {
            clamp = clamp.max(full.clamp);
            for (st, w) in full.stages.iter().zip(STAGE_WEIGHTS) {
                visit(*st, ds / 6.0 * w);
            }
            travel += ds;
            pos = clamp_box(grid, full.end, &mut clamp);
            continue;
        }
        // Final partial step landing on x₁ = 0, found by safeguarded secant iterations.
        let (mut lo, mut hi) = (0.0, ds);
        let (mut f_lo, mut f_hi) = (pos[0], full.end[0]);
        let mut sigma = ds * f_lo / (f_lo - f_hi);
        let tol = 1e-14 * grid.extents()[0];
        let mut step = rk4(tf, pos, sigma, -1.0);
        for _ in 0..60 {
            let f = step.end[0];
            if f.abs() <= tol {
                break;
            }
            if f > 0.0 {
                lo = sigma;
                f_lo = f;
            } else {
                hi = sigma;
                f_hi = f;
            }
            let next = lo + (hi - lo) * f_lo / (f_lo - f_hi);
            sigma = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            step = rk4(tf, pos, sigma, -1.0);
        }
        clamp = clamp.max(step.clamp);
        for (st, w) in step.stages.iter().zip(STAGE_WEIGHTS) {
            visit(*st, sigma / 6.0 * w);
        }
        travel += sigma;
        let mut end = clamp_box(grid, step.end, &mut clamp);
        end[0] = 0.0;
        pos = end;
    }
    Ok(CharacteristicTrace {
        seed: x,
        arrival: pos,
        travel,
        integral: 0.0,
        steps,
        clamp_distance: clamp,
    })
}

pub fn trace_characteristic(
    tf: &TransportField,
    x: [f64; 3],
    payload: &ScalarField,
) -> Result<CharacteristicTrace> {
    let mut integral = 0.0;
    let mut trace = trace_with(tf, x, |p, w| integral += w * interpolate(payload, p))?;
    trace.integral = integral;
    Ok(trace)
}

/// `S(v)` with inflow trace `w_in` (a field whose values on the inflow face are used).
pub fn apply_s(tf: &TransportField, v: &ScalarField, w_in: &ScalarField) -> Result<ScalarField> {
    let grid = *tf.grid();
    let mut out = ScalarField::zeros(&grid);
    for idx in 0..grid.len() {
        let tr = trace_characteristic(tf, grid.position_of(idx), v)?;
        out.values_mut()[idx] = interpolate(w_in, tr.arrival) + tr.integral;
    }
    Ok(out)
}

/// `S` as a sparse linear map: for each node, weights on payload values and
/// on inflow-trace values. Reused across the many applications of one step.
#[derive(Clone, Debug)]
pub struct CharacteristicMap {
    len: usize,
    payload_offsets: Vec<usize>,
    payload: Vec<(u32, f64)>,
    inflow: Vec<[(u32, f64); 4]>,
    pub max_clamp: f64,
    pub max_travel: f64,
}

impl CharacteristicMap {
    pub fn build(tf: &TransportField) -> Result<Self> {
        let grid = *tf.grid();
        let n = grid.len();
        let mut acc = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut payload_offsets = Vec::with_capacity(n + 1);
        let mut payload = Vec::new();
        let mut inflow = Vec::with_capacity(n);
        let mut max_clamp: f64 = 0.0;
        let mut max_travel: f64 = 0.0;
        payload_offsets.push(0);
        for idx in 0..n {
            let tr = trace_with(tf, grid.position_of(idx), |p, w| {
                let st = Stencil::new(&grid, p);
                for m in 0..8 {
                    if st.weights[m] == 0.0 {
                        continue;
                    }
                    let j = st.nodes[m];
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += w * st.weights[m];
                    if acc[j] == 0.0 {
                        // Keep the node registered even if the sum cancels exactly.
                        acc[j] = f64::MIN_POSITIVE;
                    }
                }
            })?;
            touched.sort_unstable();
            for &j in &touched {
                payload.push((j as u32, acc[j]));
                acc[j] = 0.0;
            }
            touched.clear();
            payload_offsets.push(payload.len());
            let st = Stencil::new(&grid, tr.arrival);
            // On x₁ = 0 only the four corners with offset 0 along axis 0 carry weight.
            let mut row = [(0u32, 0.0); 4];
            for (slot, m) in [0usize, 2, 4, 6].into_iter().enumerate() {
                row[slot] = (st.nodes[m] as u32, st.weights[m] + st.weights[m + 1]);
            }
            inflow.push(row);
            max_clamp = max_clamp.max(tr.clamp_distance);
            max_travel = max_travel.max(tr.travel);
        }
        Ok(Self {
            len: n,
            payload_offsets,
            payload,
            inflow,
            max_clamp,
            max_travel,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Payload part: path integrals of `v`.
    pub fn integrate(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.len {
            let mut s = 0.0;
            for &(j, w) in &self.payload[self.payload_offsets[i]..self.payload_offsets[i + 1]] {
                s += w * v[j as usize];
            }
            out[i] = s;
        }
    }

    /// Inflow part: `w_in` at the arrival points.
    pub fn lift(&self, w_in: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.inflow) {
            *o = row.iter().map(|&(j, w)| w * w_in[j as usize]).sum();
        }
    }

    pub fn apply(&self, v: &ScalarField, w_in: &ScalarField) -> ScalarField {
        let mut a = vec![0.0; self.len];
        let mut b = vec![0.0; self.len];
        self.integrate(v.values(), &mut a);
        self.lift(w_in.values(), &mut b);
        let values = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        ScalarField::from_values(v.grid(), values).expect("map built on this grid")
    }
}

/// CFL number of the upwind march.
pub fn cfl_number(tf: &TransportField) -> f64 {
    let h = tf.grid().spacing();
    let c = tf.certificate();
    c.max_transverse[0].max(c.max_transverse[1]) * h[0] / (c.min_axial * h[1].min(h[2]))
}

/// Explicit first-order march in `x₁` of `w_{x₁} = (v − ũ²w_{x₂} − ũ³w_{x₃})/ũ¹`
/// with donor-cell differences across the section.
pub fn upwind_march(tf: &TransportField, v: &ScalarField, w_in: &ScalarField) -> Result<ScalarField> {
    let cfl = cfl_number(tf);
    if cfl > 1.0 {
        return Err(Error::CflViolation { number: cfl });
    }
    let grid = *tf.grid();
    let [n0, n1, n2] = grid.nodes();
    let h = grid.spacing();
    let u = tf.velocity();
    let mut w = ScalarField::zeros(&grid);
    for k in 0..n2 {
        for j in 0..n1 {
            let idx = grid.index(0, j, k);
            w.values_mut()[idx] = w_in.values()[idx];
        }
    }
    let strides = grid.strides();
    for i in 0..n0 - 1 {
        for k in 0..n2 {
            for j in 0..n1 {
                let idx = grid.index(i, j, k);
                let vals = w.values();
                let mut transverse = 0.0;
                for (axis, pos, n) in [(1usize, j, n1), (2usize, k, n2)] {
                    let a = u.component(axis)[idx];
                    let s = strides[axis];
                    let deriv = if a > 0.0 {
                        if pos > 0 {
                            (vals[idx] - vals[idx - s]) / h[axis]
                        } else {
                            0.0
                        }
                    } else if pos + 1 < n {
                        (vals[idx + s] - vals[idx]) / h[axis]
                    } else {
                        0.0
                    };
                    transverse += a * deriv;
                }
                let rate = (v.values()[idx] - transverse) / u.component(0)[idx];
                let next = vals[idx] + h[0] * rate;
                w.values_mut()[idx + strides[0]] = next;
            }
        }
    }
    Ok(w)
}

fn trace_forward(tf: &TransportField, z: [f64; 3], samples: usize) -> Vec<[f64; 3]> {
    let ds = tf.step();
    let mut out = Vec::with_capacity(samples + 1);
    let mut pos = z;
    out.push(pos);
    let mut clamp = 0.0;
    for _ in 0..samples {
        let step = rk4(tf, pos, ds, 1.0);
        pos = clamp_box(tf.grid(), step.end, &mut clamp);
        out.push(pos);
    }
    out
}

fn det3(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0]) + a[2] * (b[0] * c[1] - b[1] * c[0])
}

/// Estimate of `sup |Jψ − 1|` for the map `ψ(z) = X(z₁; (0, z₂, z₃))` along
/// forward characteristics, sampled on a lattice of inflow seeds.
pub fn jacobian_bound(tf: &TransportField) -> Result<f64> {
    let grid = *tf.grid();
    let [_, n1, n2] = grid.nodes();
    let h = grid.spacing();
    let length = grid.extents()[0];
    let ds = tf.step();
    // Enough samples for the slowest path to cross the domain.
    let samples = ((length / (tf.certificate().min_axial * ds)).ceil() as usize).min(tf.step_cap());
    let paths: Vec<Vec<[f64; 3]>> = (0..n2)
        .flat_map(|k| (0..n1).map(move |j| (j, k)))
        .map(|(j, k)| trace_forward(tf, [0.0, grid.coordinate(1, j), grid.coordinate(2, k)], samples))
        .collect();
    let path = |j: usize, k: usize| &paths[j + n1 * k];
    let diff = |j: usize, k: usize, axis: usize, m: usize| -> [f64; 3] {
        let (pos, n, hh) = if axis == 1 { (j, n1, h[1]) } else { (k, n2, h[2]) };
        let at = |q: usize| {
            if axis == 1 {
                path(q, k)[m]
            } else {
                path(j, q)[m]
            }
        };
        if pos == 0 {
            let (a, b, c) = (at(0), at(1), at(2));
            [0, 1, 2].map(|d| (-3.0 * a[d] + 4.0 * b[d] - c[d]) / (2.0 * hh))
        } else if pos + 1 == n {
            let (a, b, c) = (at(n - 1), at(n - 2), at(n - 3));
            [0, 1, 2].map(|d| (3.0 * a[d] - 4.0 * b[d] + c[d]) / (2.0 * hh))
        } else {
            let (a, b) = (at(pos + 1), at(pos - 1));
            [0, 1, 2].map(|d| (a[d] - b[d]) / (2.0 * hh))
        }
    };
    let mut bound: f64 = 0.0;
    for k in 0..n2 {
        for j in 0..n1 {
            for m in 0..=samples {
                let x = path(j, k)[m];
                if x[0] >= length {
                    break;
                }
                let jac = det3(tf.at(x), diff(j, k, 1, m), diff(j, k, 2, m));
                if !jac.is_finite() {
                    return Err(Error::TransportRegime(format!(
                        "non-finite Jacobian along the characteristic from {:?}",
                        path(j, k)[0]
                    )));
                }
                bound = bound.max((jac - 1.0).abs());
            }
        }
    }
    Ok(bound)
}
