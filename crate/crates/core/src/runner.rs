//! Orchestration of the four commands. Each command writes its artifacts to
//! the configured output directory and reports whether its verdict passed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DumpKind, RunConfig};
use crate::diagnostics::{
    apriori_ratio, combined, energy_identity_residual, gradient_structure_residual, helmholtz_decompose,
    reflection_residual, vorticity_boundary_residual, DiagnosticReport, VorticityVariant,
};
use crate::error::{Error, Result};
use crate::field::{self, ScalarField, VectorField};
use crate::grid::{boundary_frames, build_grid, GeometryConfig};
use crate::material::{assemble_perturbation_data, compute_f, compute_g};
use crate::norm::{norm, NormKind};
use crate::output::{self, FieldDump};
use crate::picard::{convergence_metrics, picard_solve, reconstruct_physical, PhysicalResiduals, ProblemSetup};
use crate::study::{estimate_study, manufactured_study, transport_study};
use crate::transport::TransportField;

/// Smallest acceptable observed velocity order of the manufactured study.
pub const VERIFY_MIN_U_RATE: f64 = 1.8;
/// Smallest acceptable observed density order of the manufactured study.
pub const VERIFY_MIN_W_RATE: f64 = 0.8;
/// Smallest acceptable order of `‖apply_S − upwind‖`.
pub const TRANSPORT_MIN_RATE: f64 = 0.8;
pub const CONSTANT_CASE_TOLERANCE: f64 = 1e-10;
pub const ESTIMATE_SAMPLES: usize = 100;
/// Amplitude of the transverse part of the smooth transport test velocity.
pub const TRANSPORT_AMPLITUDE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Verify,
    Diagnose,
    TransportTest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Diagnose => "diagnose",
            Command::TransportTest => "transport-test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub command: Command,
    /// Drives the exit status.
    pub success: bool,
    pub summary: String,
    pub report: DiagnosticReport,
    pub artifacts: Vec<PathBuf>,
}

pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    match cmd {
        Command::Solve => solve(cfg),
        Command::Verify => verify(cfg),
        Command::Diagnose => diagnose(cfg),
        Command::TransportTest => transport_test(cfg),
    }
}

fn push_physical(report: &mut DiagnosticReport, r: &PhysicalResiduals) {
    for (key, value) in [
        ("physical.momentum", r.momentum),
        ("physical.continuity", r.continuity),
        ("physical.slip", r.slip),
        ("physical.impermeability", r.impermeability),
        ("physical.inflow_density", r.inflow_density),
    ] {
        report.push(key, value, None, "L2", "residual of the original boundary-value problem");
    }
}

fn solve(cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = cfg.output.directory.as_path();
    let setup = ProblemSetup::build(cfg.geometry, cfg.physics, &cfg.data, cfg.solver)?;
    let bundle = picard_solve(&setup, setup.zero_start())?;
    let mut artifacts = vec![output::write_config_echo(dir, cfg)?];
    artifacts.push(output::write_history(dir, &bundle.history, &bundle.verdict)?);

    let mut dumps = cfg.output.dumps.clone();
    dumps.sort();
    dumps.dedup();
    for kind in dumps {
        let dump = match kind {
            DumpKind::U => FieldDump::from_vector(kind.name(), &bundle.u),
            DumpKind::W => FieldDump::from_scalar(kind.name(), &bundle.w),
            DumpKind::V => FieldDump::from_vector(kind.name(), &bundle.v),
            DumpKind::Rho => FieldDump::from_scalar(kind.name(), &bundle.rho),
        };
        let path = dir.join(kind.file_name());
        output::write_dump(&path, &dump)?;
        artifacts.push(path);
    }

    let mut report = DiagnosticReport::new(&setup.grid);
    let last_d = bundle.history.last().map_or(f64::NAN, |r| r.d_n);
    report.push(
        "picard.final_d_n",
        last_d,
        Some(cfg.solver.outer_tolerance),
        "H1 x LinfL2",
        "Cauchy difference of the last iterate",
    );
    report.push(
        "picard.iterations",
        bundle.history.len() as f64,
        Some(cfg.solver.max_iterations as f64),
        "count",
        "Picard iterations",
    );
    report.push("picard.final_strong_norm", bundle.final_strong_norm, Some(1.0), "W2p x W1p", "perturbative regime");
    report.push("data.b_measure", setup.data.b_measure, None, "data norm", "size of the boundary data");
    if let Ok(m) = convergence_metrics(&bundle.history, setup.data.b_measure) {
        report.push("picard.max_a", m.max_a, None, "W2p x W1p", "largest strong norm of the iterates");
        report.push("picard.c_b", m.c_b, None, "-", "boundedness constant frozen after one step");
        report.push("picard.geometric_rate", m.geometric_rate, None, "-", "fitted contraction factor");
        let slack = m.slack.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        report.push("picard.max_slack", slack, None, "W2p x W1p", "A_(n+1) - A_n^2 - C_b b");
    }
    if bundle.u.is_finite() && bundle.w.is_finite() {
        if let Ok(ph) = reconstruct_physical(&bundle.u, &bundle.w, &setup.data, &setup.params, &setup.frames) {
            push_physical(&mut report, &ph.residuals);
        }
    }
    artifacts.push(output::write_report(dir, &report)?);

    let success = bundle.verdict.is_converged();
    let mut summary = format!(
        "solve: verdict {} after {} iteration(s), final d_n {:.3e}, strong norm {:.3e}",
        bundle.verdict.label(),
        bundle.history.len(),
        last_d,
        bundle.final_strong_norm
    );
    if let crate::picard::Verdict::Diverged(why) = &bundle.verdict {
        let _ = write!(summary, " ({why})");
    }
    Ok(RunOutcome {
        command: Command::Solve,
        success,
        summary,
        report,
        artifacts,
    })
}

/// Coarsest level of the grid studies: `n₁ = 8` with the transverse counts
/// scaled by the configured aspect ratio.
fn study_base(cfg: &RunConfig) -> GeometryConfig {
    let c = cfg.geometry.cells;
    let scale = |m: usize| ((8 * m) as f64 / c[0] as f64).round().max(crate::grid::MIN_CELLS as f64) as usize;
    GeometryConfig {
        cells: [8, scale(c[1]), scale(c[2])],
        ..cfg.geometry
    }
}

fn verify(cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = cfg.output.directory.as_path();
    let base = study_base(cfg);
    let study = manufactured_study(base, 3, &cfg.physics, cfg.solver.mode, &cfg.solver.linear)?;

    let mut csv = String::from("n1,n2,n3,h1,u_error,w_error,u_rate,w_rate,inner_iterations\n");
    for (m, r) in study.rows.iter().enumerate() {
        let rate = |v: &[f64]| m.checked_sub(1).map(|k| format!("{:.6}", v[k])).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.cells[0],
            r.cells[1],
            r.cells[2],
            r.h1,
            r.u_error,
            r.w_error,
            rate(&study.u_rates),
            rate(&study.w_rates),
            r.iterations
        );
    }
    let csv_path = dir.join("verify.csv");
    output::write_atomic(&csv_path, csv.as_bytes())?;

    let grid = build_grid(base.refined(4))?;
    let mut report = DiagnosticReport::new(&grid);
    for (r, row) in study.rows.iter().enumerate() {
        report.push(&format!("verify.level{r}.u_error"), row.u_error, None, "L2", "manufactured velocity error");
        report.push(&format!("verify.level{r}.w_error"), row.w_error, None, "L2", "manufactured density error");
    }
    report.push_at_least(
        "verify.u_rate",
        study.min_u_rate(),
        VERIFY_MIN_U_RATE,
        "observed order",
        "second-order Lame discretisation",
    );
    report.push("verify.w_rate", study.min_w_rate(), None, "observed order", "density order");
    let report_path = output::write_report(dir, &report)?;
    let success = study.min_u_rate() >= VERIFY_MIN_U_RATE;
    Ok(RunOutcome {
        command: Command::Verify,
        success,
        summary: format!(
            "verify ({} mode): u errors {:?}, min u order {:.3}, min w order {:.3}",
            study.mode.name(),
            study.rows.iter().map(|r| r.u_error).collect::<Vec<_>>(),
            study.min_u_rate(),
            study.min_w_rate()
        ),
        report,
        artifacts: vec![csv_path, report_path],
    })
}

fn load_vector(dir: &Path, kind: DumpKind, grid: &crate::grid::Grid) -> Result<VectorField> {
    output::load_dump(&dir.join(kind.file_name()))?.into_vector(grid)
}

fn load_scalar(dir: &Path, kind: DumpKind, grid: &crate::grid::Grid) -> Result<ScalarField> {
    output::load_dump(&dir.join(kind.file_name()))?.into_scalar(grid)
}

/// Every diagnostic of a stored solution `(u, w)` with the data of `cfg`.
pub fn diagnose_fields(cfg: &RunConfig, u: &VectorField, w: &ScalarField) -> Result<DiagnosticReport> {
    let grid = build_grid(cfg.geometry)?;
    let frames = boundary_frames(&grid);
    let params = &cfg.physics;
    let p = cfg.solver.p;
    let tol = &cfg.diagnostics;
    let data = assemble_perturbation_data(&grid, &frames, &cfg.data, params, p)?;
    let f = compute_f(u, w, &data, params)?;
    let g = compute_g(u, w, &data)?;
    let mut report = DiagnosticReport::new(&grid);

    report.push(
        "energy_identity",
        energy_identity_residual(u, w, &f, &data.b1, &data.b2, params),
        Some(tol.energy_identity),
        "relative",
        "energy identity of the momentum equation tested with u",
    );
    let mu_res = vorticity_boundary_residual(u, &data.b1, &data.b2, params, VorticityVariant::Mu);
    for r in &mu_res {
        report.push(
            &format!("vorticity.mu.{}.relation{}", r.face.name(), r.relation),
            r.value,
            None,
            "L2(face)",
            "tangential vorticity trace from the slip condition",
        );
    }
    report.push(
        "vorticity.mu",
        combined(&mu_res),
        Some(tol.vorticity),
        "L2(lateral faces)",
        "tangential vorticity traces with viscosity mu",
    );
    let nu_res = vorticity_boundary_residual(u, &data.b1, &data.b2, params, VorticityVariant::Nu);
    report.push(
        "vorticity.nu",
        combined(&nu_res),
        None,
        "L2(lateral faces)",
        "tangential vorticity traces with viscosity nu",
    );

    let h = helmholtz_decompose(u, &cfg.solver.linear.krylov)?;
    let curl_u = norm(&field::curl(u), NormKind::Lp(2.0))?;
    let rel = if curl_u > 0.0 { h.curl_mismatch / curl_u } else { h.curl_mismatch };
    report.push("helmholtz.curl_mismatch", rel, Some(tol.helmholtz), "relative L2", "curl A = curl u");
    report.push("helmholtz.div_a", h.div_a, None, "L2", "div A");
    report.push("helmholtz.normal_trace", h.normal_trace, None, "L2(boundary)", "A . n");
    report.push(
        "gradient_structure",
        gradient_structure_residual(&f, &h.pot, &h.a, params),
        Some(tol.gradient_structure),
        "relative L2(deep interior)",
        "rotational part of the momentum balance is a gradient",
    );
    report.push(
        "apriori_ratio",
        apriori_ratio(u, w, &f, &g, &data.b1, &data.b2, &data.w_in, p)?,
        Some(tol.apriori_ratio),
        "W2p x W1p over data norms",
        "a priori estimate of the linear step",
    );
    report.push(
        "reflection",
        reflection_residual(u, params),
        Some(tol.reflection),
        "max",
        "slip functionals invariant under reflection of the inflow face",
    );
    report.push("forcing.F_lp", norm(&f, NormKind::Lp(p))?, None, "Lp", "nonlinear forcing");
    report.push("forcing.G_w1p", norm(&g, NormKind::W1p(p))?, None, "W1p", "continuity forcing");
    let ph = reconstruct_physical(u, w, &data, params, &frames)?;
    push_physical(&mut report, &ph.residuals);
    Ok(report)
}

fn diagnose(cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = cfg.output.directory.as_path();
    let grid = build_grid(cfg.geometry)?;
    let u = load_vector(dir, DumpKind::U, &grid)?;
    let w = load_scalar(dir, DumpKind::W, &grid)?;
    let report = diagnose_fields(cfg, &u, &w)?;
    let path = output::write_report(dir, &report)?;
    let failed: Vec<&str> = report.entries.iter().filter(|e| !e.pass).map(|e| e.key.as_str()).collect();
    Ok(RunOutcome {
        command: Command::Diagnose,
        success: failed.is_empty(),
        summary: if failed.is_empty() {
            format!("diagnose: all {} entries pass", report.entries.len())
        } else {
            format!("diagnose: failing entries {failed:?}")
        },
        report,
        artifacts: vec![path],
    })
}

fn transport_test(cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = cfg.output.directory.as_path();
    let study = transport_study(study_base(cfg), 4, TRANSPORT_AMPLITUDE)?;

    let grid = build_grid(cfg.geometry)?;
    let frames = boundary_frames(&grid);
    let data = assemble_perturbation_data(&grid, &frames, &cfg.data, &cfg.physics, cfg.solver.p)?;
    let tf = TransportField::from_convecting(&data.u0)?;
    let est = estimate_study(&tf, ESTIMATE_SAMPLES, cfg.solver.seed)?;

    let mut csv = String::from("n1,n2,n3,difference,rate,cfl\n");
    for (m, r) in study.rows.iter().enumerate() {
        let rate = m.checked_sub(1).map(|k| format!("{:.6}", study.rates[k])).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{:.16e},{},{:.6}",
            r.cells[0], r.cells[1], r.cells[2], r.difference, rate, r.cfl
        );
    }
    let csv_path = dir.join("transport.csv");
    output::write_atomic(&csv_path, csv.as_bytes())?;

    let mut report = DiagnosticReport::new(&grid);
    report.push_at_least(
        "transport.rate",
        study.min_rate(),
        TRANSPORT_MIN_RATE,
        "observed order",
        "characteristic and upwind solvers agree",
    );
    report.push(
        "transport.constant_cases",
        study.constant_case_error,
        Some(CONSTANT_CASE_TOLERANCE),
        "max",
        "exact straight-flow solutions",
    );
    report.push(
        "estimate.violations",
        est.violations() as f64,
        Some(0.0),
        "count",
        "slice-norm bound of the transport operator",
    );
    report.push("estimate.worst_ratio", est.worst_ratio(), None, "lhs / rhs", "slice-norm bound");
    report.push("estimate.jacobian_bound", est.jacobian_bound, None, "-", "characteristic Jacobian deviation");
    let path = output::write_report(dir, &report)?;
    Ok(RunOutcome {
        command: Command::TransportTest,
        success: report.all_pass(),
        summary: format!(
            "transport-test: differences {:?}, min order {:.3}, constant cases {:.2e}, {} of {} estimate violations",
            study.rows.iter().map(|r| r.difference).collect::<Vec<_>>(),
            study.min_rate(),
            study.constant_case_error,
            est.violations(),
            est.samples.len()
        ),
        report,
        artifacts: vec![csv_path, path],
    })
}

/// Structured error report for stderr.
pub fn error_json(err: &Error) -> String {
    let mut obj = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
    });
    match err {
        Error::ConfigValidation { key, .. } => obj["key"] = key.clone().into(),
        Error::ConfigParse { line, column, .. } => {
            obj["line"] = (*line).into();
            obj["column"] = (*column).into();
        }
        Error::Io { path, .. } | Error::MalformedDump { path, .. } => {
            obj["path"] = path.display().to_string().into();
        }
        _ => {}
    }
    obj.to_string()
}
