use slipflow::grid::GeometryConfig;
use slipflow::material::{BoundaryDataSpec, FlowParams};
use slipflow::picard::{
    convergence_metrics, picard_solve, reconstruct_physical, two_start_uniqueness, ProblemSetup, SolutionBundle,
    SolverSettings,
};

fn setup(eps: f64, cells: [usize; 3]) -> ProblemSetup {
    ProblemSetup::build(
        GeometryConfig::new(2.0, 1.0, 1.0, cells),
        FlowParams::default(),
        &BoundaryDataSpec::default().with_epsilon(eps),
        SolverSettings::default(),
    )
    .unwrap()
}

fn run(s: &ProblemSetup) -> SolutionBundle {
    let out = picard_solve(s, s.zero_start()).unwrap();
    assert!(out.verdict.is_converged(), "{:?}", out.verdict);
    out
}

#[test]
fn history_entries_are_finite_and_nonnegative() {
    let out = run(&setup(1e-2, [16, 8, 8]));
    for r in &out.history {
        for x in [r.a_n, r.d_n, r.f_lp, r.g_w1p].into_iter().chain(r.r_n) {
            assert!(x.is_finite() && x >= 0.0, "{r:?}");
        }
    }
    assert!(out.rho.values().iter().all(|&x| x > 0.0 && x < 2.0));
}

#[test]
fn quadratic_recursion_holds_with_frozen_constant() {
    let s = setup(1e-2, [16, 8, 8]);
    let out = run(&s);
    let m = convergence_metrics(&out.history, s.data.b_measure).unwrap();
    assert!(m.c_b > 0.0);
    // The first slack is zero by construction of C_b.
    assert!(m.slack[0].abs() <= 1e-14);
    assert!(m.slack.iter().all(|&x| x <= 1e-14), "{:?}", m.slack);
    let a0 = out.history[0].a_n;
    assert!(out.history.iter().all(|r| r.a_n <= a0.max(m.bound)));
    assert!(m.geometric_rate > 0.0 && m.geometric_rate < 1.0);
}

#[test]
fn zero_data_metrics_have_nonpositive_slack() {
    let s = setup(0.0, [8, 4, 4]);
    let out = picard_solve(&s, s.zero_start()).unwrap();
    let mut history = out.history.clone();
    if history.len() < 2 {
        history.push(history[0].clone());
    }
    let m = convergence_metrics(&history, s.data.b_measure).unwrap();
    assert_eq!(m.max_a, 0.0);
    assert!(m.slack.iter().all(|&x| x <= 0.0));
}

#[test]
fn halving_epsilon_halves_the_solution() {
    let a = run(&setup(1e-2, [16, 8, 8])).final_strong_norm;
    let b = run(&setup(5e-3, [16, 8, 8])).final_strong_norm;
    let ratio = b / a;
    assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_data_reconstructs_the_constant_flow() {
    let s = setup(0.0, [8, 4, 4]);
    let out = run(&s);
    let ph = reconstruct_physical(&out.u, &out.w, &s.data, &s.params, &s.frames).unwrap();
    for idx in 0..s.grid.len() {
        assert_eq!(ph.v.at(idx), [1.0, 0.0, 0.0]);
        assert_eq!(ph.rho.values()[idx], 1.0);
    }
    let r = ph.residuals;
    for x in [r.momentum, r.continuity, r.slip, r.impermeability, r.inflow_density] {
        assert!(x <= 1e-11, "{r:?}");
    }
}

#[test]
fn physical_residuals_shrink_under_refinement() {
    let residuals = |cells| {
        let s = setup(1e-2, cells);
        let out = run(&s);
        reconstruct_physical(&out.u, &out.w, &s.data, &s.params, &s.frames)
            .unwrap()
            .residuals
    };
    let (c, f) = (residuals([16, 8, 8]), residuals([32, 16, 16]));
    assert!(c.continuity / f.continuity >= 2.0, "{c:?} {f:?}");
    assert!(c.slip / f.slip >= 2.0, "{c:?} {f:?}");
    // Near-wall one-sided stencils of the composite operators hold the
    // momentum residual below first order at these resolutions.
    assert!(c.momentum / f.momentum >= 1.5, "{c:?} {f:?}");
    assert!(f.inflow_density <= 1e-12);
}

#[test]
fn identical_zero_starts_agree_exactly() {
    let s = setup(1e-2, [8, 4, 4]);
    assert_eq!(two_start_uniqueness(&s, s.zero_start(), s.zero_start()).unwrap(), 0.0);
}
