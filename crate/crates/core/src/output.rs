//! Run artifacts: convergence history, plain-text field dumps, diagnostics
//! report and configuration echo. Every file is written to a temporary
//! sibling first and then renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::diagnostics::DiagnosticReport;
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::picard::{IterationRecord, Verdict};

pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const HISTORY_HEADER: &str = "n,A_n,d_n,r_n,F_lp,G_w1p,verdict";

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV history. Every row but the last carries `continue`; the last carries
/// the final verdict. An undefined ratio is left empty.
pub fn history_csv(history: &[IterationRecord], verdict: &Verdict) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for (m, r) in history.iter().enumerate() {
        let label = if m + 1 == history.len() {
            verdict.label()
        } else {
            "continue"
        };
        let ratio = r.r_n.map(num).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n,
            num(r.a_n),
            num(r.d_n),
            ratio,
            num(r.f_lp),
            num(r.g_w1p),
            label
        );
    }
    out
}

pub fn write_history(dir: &Path, history: &[IterationRecord], verdict: &Verdict) -> Result<PathBuf> {
    let path = dir.join(HISTORY_FILE);
    write_atomic(&path, history_csv(history, verdict).as_bytes())?;
    Ok(path)
}

/// Contents of a field dump.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub name: String,
    pub nodes: [usize; 3],
    pub spacing: [f64; 3],
    /// One vector per component, in node order.
    pub components: Vec<Vec<f64>>,
}

impl FieldDump {
    pub fn from_scalar(name: &str, s: &ScalarField) -> Self {
        Self::new(name, s.grid(), vec![s.values().to_vec()])
    }

    pub fn from_vector(name: &str, v: &VectorField) -> Self {
        Self::new(name, v.grid(), v.components().to_vec())
    }

    fn new(name: &str, grid: &Grid, components: Vec<Vec<f64>>) -> Self {
        Self {
            name: name.to_string(),
            nodes: grid.nodes(),
            spacing: grid.spacing(),
            components,
        }
    }

    pub fn render(&self) -> String {
        let [a, b, c] = self.nodes;
        let mut out = format!("{a} {b} {c}\n");
        let _ = writeln!(out, "{} {} {}", num(self.spacing[0]), num(self.spacing[1]), num(self.spacing[2]));
        let _ = writeln!(out, "{} {}", self.name, self.components.len());
        let len = self.components.first().map_or(0, Vec::len);
        for i in 0..len {
            let row: Vec<String> = self.components.iter().map(|c| num(c[i])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let bad = |message: String| Error::MalformedDump {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        let mut header = |what: &str| lines.next().ok_or_else(|| bad(format!("missing {what} line")));
        let nodes_line = header("node count")?;
        let spacing_line = header("spacing")?;
        let name_line = header("field name")?;
        let nodes: Vec<usize> = nodes_line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("node counts: {e}")))?;
        let spacing: Vec<f64> = spacing_line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("spacings: {e}")))?;
        if nodes.len() != 3 || spacing.len() != 3 {
            return Err(bad("node count and spacing lines need three entries".into()));
        }
        let mut name_parts = name_line.split_whitespace();
        let name = name_parts.next().ok_or_else(|| bad("empty field name".into()))?.to_string();
        let ncomp: usize = name_parts
            .next()
            .and_then(|s| s.parse().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| bad("component count missing".into()))?;
        let total = nodes.iter().product::<usize>();
        let mut components = vec![Vec::with_capacity(total); ncomp];
        for (row, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("row {row}: {e}")))?;
            if vals.len() != ncomp {
                return Err(bad(format!("row {row} has {} entries, expected {ncomp}", vals.len())));
            }
            for (c, v) in vals.into_iter().enumerate() {
                components[c].push(v);
            }
        }
        if components[0].len() != total {
            return Err(bad(format!("{} rows, expected {total}", components[0].len())));
        }
        Ok(Self {
            name,
            nodes: [nodes[0], nodes[1], nodes[2]],
            spacing: [spacing[0], spacing[1], spacing[2]],
            components,
        })
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        let h = grid.spacing();
        let close = (0..3).all(|a| (self.spacing[a] - h[a]).abs() <= 1e-12 * h[a]);
        if self.nodes != grid.nodes() || !close {
            return Err(Error::GridMismatch(format!(
                "dump `{}` has nodes {:?} and spacing {:?}; the grid has {:?} and {:?}",
                self.name,
                self.nodes,
                self.spacing,
                grid.nodes(),
                h
            )));
        }
        Ok(())
    }

    pub fn into_scalar(self, grid: &Grid) -> Result<ScalarField> {
        self.check_grid(grid)?;
        if self.components.len() != 1 {
            return Err(Error::GridMismatch(format!("dump `{}` is not a scalar field", self.name)));
        }
        ScalarField::from_values(grid, self.components.into_iter().next().unwrap_or_default())
    }

    pub fn into_vector(self, grid: &Grid) -> Result<VectorField> {
        self.check_grid(grid)?;
        let Ok(comps) = <[Vec<f64>; 3]>::try_from(self.components) else {
            return Err(Error::GridMismatch(format!("dump `{}` is not a vector field", self.name)));
        };
        VectorField::from_components(grid, comps)
    }
}

pub fn write_dump(path: &Path, dump: &FieldDump) -> Result<()> {
    write_atomic(path, dump.render().as_bytes())
}

pub fn load_dump(path: &Path) -> Result<FieldDump> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FieldDump::parse(path, &text)
}

#[derive(Serialize)]
struct ReportValue {
    value: f64,
    tolerance: Option<f64>,
    pass: bool,
}

/// Flat `key → {value, tolerance, pass}` map.
pub fn report_json(report: &DiagnosticReport) -> String {
    let map: BTreeMap<&str, ReportValue> = report
        .entries
        .iter()
        .map(|e| {
            (
                e.key.as_str(),
                ReportValue {
                    value: e.value,
                    tolerance: e.tolerance,
                    pass: e.pass,
                },
            )
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&map).expect("report serializes");
    s.push('\n');
    s
}

/// Human-readable table with the norm and reference of each entry.
pub fn report_text(report: &DiagnosticReport) -> String {
    let mut out = format!("cells {:?}  spacing {:?}\n", report.cells, report.spacing);
    for e in &report.entries {
        let tol = e.tolerance.map(|t| format!("{t:.3e}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<40} {:>14.6e}  tol {:>10}  {:<4}  [{}] {}",
            e.key,
            e.value,
            tol,
            if e.pass { "pass" } else { "FAIL" },
            e.norm,
            e.anchor
        );
    }
    out
}

pub fn write_report(dir: &Path, report: &DiagnosticReport) -> Result<PathBuf> {
    let path = dir.join(REPORT_FILE);
    write_atomic(&path, report_json(report).as_bytes())?;
    write_atomic(&dir.join(REPORT_TEXT_FILE), report_text(report).as_bytes())?;
    Ok(path)
}

pub fn write_config_echo(dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let path = dir.join(CONFIG_ECHO_FILE);
    let mut s = cfg.to_json();
    s.push('\n');
    write_atomic(&path, s.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GeometryConfig};

    #[test]
    fn history_marks_only_the_last_row() {
        let rec = |n, d| IterationRecord {
            n,
            a_n: 0.0,
            d_n: d,
            r_n: if n == 0 { None } else { Some(0.5) },
            f_lp: 0.0,
            g_w1p: 0.0,
            inner_iterations: 1,
        };
        let csv = history_csv(&[rec(0, 1.0), rec(1, 0.5)], &Verdict::Converged);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert!(lines[1].ends_with(",,0.0000000000000000e0,0.0000000000000000e0,continue"));
        assert!(lines[2].ends_with("converged"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn dump_text_roundtrips_bitwise() {
        let grid = build_grid(GeometryConfig::new(2.0, 1.0, 0.7, [4, 5, 4])).unwrap();
        let v = VectorField::from_fn(&grid, |x| [x[0].sin() / 3.0, -x[1].exp(), 1e-300 * x[2]]);
        let d = FieldDump::from_vector("u", &v);
        let back = FieldDump::parse(Path::new("u.dat"), &d.render()).unwrap();
        assert_eq!(back.name, "u");
        let v2 = back.into_vector(&grid).unwrap();
        for c in 0..3 {
            let same = v.component(c).iter().zip(v2.component(c)).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }

    #[test]
    fn dump_rejects_truncation_and_wrong_grid() {
        let grid = build_grid(GeometryConfig::new(2.0, 1.0, 1.0, [4, 4, 4])).unwrap();
        let s = ScalarField::from_fn(&grid, |x| x[0]);
        let text = FieldDump::from_scalar("w", &s).render();
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            FieldDump::parse(Path::new("w.dat"), &cut),
            Err(Error::MalformedDump { .. })
        ));
        let other = build_grid(GeometryConfig::new(2.0, 1.0, 1.0, [4, 4, 5])).unwrap();
        let d = FieldDump::parse(Path::new("w.dat"), &text).unwrap();
        assert!(matches!(d.into_scalar(&other), Err(Error::GridMismatch(_))));
    }
}
