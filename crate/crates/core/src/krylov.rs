//! Matrix-free BiCGStab with right Jacobi preconditioning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A linear map on `ℝⁿ` given by its action.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.1)(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrylovConfig {
    /// Relative residual target `‖b − Ax‖ / ‖b‖`.
    pub tolerance: f64,
    /// Iteration cap; `None` means ten times the number of unknowns.
    pub max_iterations: Option<usize>,
    /// Restart when the recursive residual drifts from the true one by this factor.
    pub drift_factor: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: None,
            drift_factor: 10.0,
        }
    }
}

impl KrylovConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidParameters(format!(
                "Krylov tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == Some(0) {
            return Err(Error::InvalidParameters("Krylov iteration cap must be positive".into()));
        }
        if !(self.drift_factor >= 1.0) {
            return Err(Error::InvalidParameters("drift factor must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// True relative residual of `solution`.
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn true_residual(op: &dyn LinearOperator, rhs: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = bi - *ri;
    }
    norm2(r)
}

/// Solves `A x = rhs` from a zero initial guess without preconditioning.
pub fn krylov_solve(op: &dyn LinearOperator, rhs: &[f64], cfg: &KrylovConfig) -> Result<KrylovOutcome> {
    krylov_solve_with(op, rhs, cfg, None, None)
}

/// Solves `A x = rhs` with an optional warm start and an optional inverse
/// diagonal used as right preconditioner.
pub fn krylov_solve_with(
    op: &dyn LinearOperator,
    rhs: &[f64],
    cfg: &KrylovConfig,
    guess: Option<&[f64]>,
    inv_diag: Option<&[f64]>,
) -> Result<KrylovOutcome> {
    cfg.validate()?;
    let n = op.dim();
    assert_eq!(rhs.len(), n, "right-hand side length");
    let b_norm = norm2(rhs);
    if b_norm == 0.0 {
        return Ok(KrylovOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let precond = |src: &[f64], dst: &mut [f64]| match inv_diag {
        Some(d) => {
            for i in 0..n {
                dst[i] = d[i] * src[i];
            }
        }
        None => dst.copy_from_slice(src),
    };
    let cap = cfg.max_iterations.unwrap_or(10 * n).max(1);
    let tol = cfg.tolerance;

    let mut x = guess.map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vec![0.0; n];
    let mut rel = true_residual(op, rhs, &x, &mut r) / b_norm;
    let mut best = (rel, x.clone());
    if rel <= tol {
        return Ok(KrylovOutcome {
            solution: x,
            iterations: 0,
            residual: rel,
        });
    }

    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut iterations = 0;
    let mut fresh = true;

    while iterations < cap {
        iterations += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            // Breakdown: restart from the true residual.
            rel = true_residual(op, rhs, &x, &mut r) / b_norm;
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|e| *e = 0.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            fresh = true;
            if rel <= tol {
                break;
            }
            continue;
        }
        if fresh {
            p.copy_from_slice(&r);
            fresh = false;
        } else {
            let beta = (rho_new / rho) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
        }
        rho = rho_new;
        precond(&p, &mut p_hat);
        op.apply(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            r_hat.copy_from_slice(&r);
            fresh = true;
            continue;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / b_norm <= tol {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            rel = true_residual(op, rhs, &x, &mut r) / b_norm;
            if rel < best.0 {
                best = (rel, x.clone());
            }
            if rel <= tol {
                break;
            }
            r_hat.copy_from_slice(&r);
            fresh = true;
            continue;
        }
        precond(&s, &mut s_hat);
        op.apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        let est = norm2(&r) / b_norm;
        if omega == 0.0 || est <= tol {
            rel = true_residual(op, rhs, &x, &mut r) / b_norm;
            if rel < best.0 {
                best = (rel, x.clone());
            }
            if rel <= tol {
                break;
            }
            if rel > cfg.drift_factor * est || omega == 0.0 {
                r_hat.copy_from_slice(&r);
                fresh = true;
            }
        } else if est < best.0 {
            best = (est, x.clone());
        }
    }

    if rel <= tol {
        return Ok(KrylovOutcome {
            solution: x,
            iterations,
            residual: rel,
        });
    }
    let best_true = true_residual(op, rhs, &best.1, &mut r) / b_norm;
    Err(Error::KrylovNotConverged {
        iterations,
        best_residual: best_true.min(rel),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Tridiag {
        n: usize,
        shift: f64,
    }

    impl LinearOperator for Tridiag {
        fn dim(&self) -> usize {
            self.n
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            for i in 0..self.n {
                let left = if i > 0 { x[i - 1] } else { 0.0 };
                let right = if i + 1 < self.n { x[i + 1] } else { 0.0 };
                // Nonsymmetric: convection-diffusion with a drift.
                y[i] = (2.0 + self.shift) * x[i] - 1.3 * left - 0.7 * right;
            }
        }
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let id = (4usize, |x: &[f64], y: &mut [f64]| y.copy_from_slice(x));
        let rhs = [1.0, -2.0, 3.0, 0.5];
        let out = krylov_solve(&id, &rhs, &KrylovConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.solution, rhs.to_vec());
    }

    #[test]
    fn zero_rhs_gives_zero_without_iterating() {
        let op = Tridiag { n: 10, shift: 0.1 };
        let out = krylov_solve(&op, &[0.0; 10], &KrylovConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn recovers_known_solution_nonsymmetric() {
        let op = Tridiag { n: 200, shift: 0.05 };
        let known: Vec<f64> = (0..200).map(|i| (i as f64 * 0.1).sin()).collect();
        let mut rhs = vec![0.0; 200];
        op.apply(&known, &mut rhs);
        let diag = vec![1.0 / 2.05; 200];
        let out = krylov_solve_with(&op, &rhs, &KrylovConfig::default(), None, Some(&diag)).unwrap();
        let err: f64 = known.iter().zip(&out.solution).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(out.residual <= 1e-10);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn warm_start_at_solution_needs_no_iterations() {
        let op = Tridiag { n: 20, shift: 1.0 };
        let known: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut rhs = vec![0.0; 20];
        op.apply(&known, &mut rhs);
        let out = krylov_solve_with(&op, &rhs, &KrylovConfig::default(), Some(&known), None).unwrap();
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn cap_reports_best_residual() {
        let op = Tridiag { n: 400, shift: 0.0 };
        let rhs = vec![1.0; 400];
        let cfg = KrylovConfig {
            max_iterations: Some(3),
            ..KrylovConfig::default()
        };
        match krylov_solve(&op, &rhs, &cfg) {
            Err(Error::KrylovNotConverged { iterations, best_residual }) => {
                assert_eq!(iterations, 3);
                assert!(best_residual > 0.0 && best_residual <= 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let op = Tridiag { n: 3, shift: 0.0 };
        assert!(krylov_solve(&op, &[1.0; 3], &KrylovConfig::with_tolerance(0.0)).is_err());
        assert!(krylov_solve(&op, &[1.0; 3], &KrylovConfig::with_tolerance(1.5)).is_err());
    }
}
