//! Run configuration: a single JSON document with one block per module.
//!
//! Missing keys take documented defaults, unknown keys are rejected with the
//! nearest known key, and every value is validated before any computation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::DiagnosticTolerances;
use crate::error::{Error, Result};
use crate::grid::{build_grid, GeometryConfig};
use crate::material::{BoundaryDataSpec, FlowParams, PressureLaw};
use crate::picard::SolverSettings;

/// Fields that can be dumped after a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpKind {
    /// Velocity perturbation.
    U,
    /// Density perturbation.
    W,
    /// Physical velocity.
    V,
    /// Physical density.
    Rho,
}

impl DumpKind {
    pub fn name(self) -> &'static str {
        match self {
            DumpKind::U => "u",
            DumpKind::W => "w",
            DumpKind::V => "v",
            DumpKind::Rho => "rho",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.dat", self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub dumps: Vec<DumpKind>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            dumps: vec![DumpKind::U, DumpKind::W, DumpKind::V, DumpKind::Rho],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub physics: FlowParams,
    pub data: BoundaryDataSpec,
    pub solver: SolverSettings,
    pub output: OutputConfig,
    pub diagnostics: DiagnosticTolerances,
}

fn invalid(key: &str, message: impl Into<String>) -> Error {
    Error::ConfigValidation {
        key: key.to_string(),
        message: message.into(),
    }
}

fn keyed(key: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        e @ Error::ConfigValidation { .. } => e,
        other => invalid(key, other.to_string()),
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let ph = &self.physics;
        if !(ph.mu.is_finite() && ph.mu > 0.0) {
            return Err(invalid("physics.mu", format!("must be > 0, got {}", ph.mu)));
        }
        if !(ph.nu.is_finite() && ph.mu + 2.0 * ph.nu > 0.0) {
            return Err(invalid("physics.nu", format!("mu + 2 nu must be > 0, got nu = {}", ph.nu)));
        }
        if !(ph.f.is_finite() && ph.f > 0.0) {
            return Err(invalid("physics.f", format!("must be > 0, got {}", ph.f)));
        }
        let pkey = match ph.pressure {
            PressureLaw::Power { .. } => "physics.pressure.kappa",
            PressureLaw::Linear { .. } => "physics.pressure.K",
        };
        keyed(pkey, ph.pressure.validate())?;

        let g = &self.geometry;
        for (key, v) in [
            ("geometry.length", g.length),
            ("geometry.width2", g.width2),
            ("geometry.width3", g.width3),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, format!("must be > 0, got {v}")));
            }
        }
        keyed("geometry.cells", build_grid(*g).map(|_| ()))?;

        keyed("data.epsilon", self.data.validate())?;

        let s = &self.solver;
        if !(s.outer_tolerance.is_finite() && s.outer_tolerance > 0.0) {
            return Err(invalid("solver.outer_tolerance", "must be > 0"));
        }
        if s.max_iterations == 0 {
            return Err(invalid("solver.max_iterations", "must be positive"));
        }
        if !(s.relaxation > 0.0 && s.relaxation <= 1.0) {
            return Err(invalid("solver.relaxation", format!("must lie in (0, 1], got {}", s.relaxation)));
        }
        if !(s.p.is_finite() && s.p >= 1.0) {
            return Err(invalid("solver.p", format!("must be >= 1, got {}", s.p)));
        }
        if !(s.linear.inner_tolerance > 0.0) {
            return Err(invalid("solver.linear.inner_tolerance", "must be > 0"));
        }
        if s.linear.max_sweeps == 0 {
            return Err(invalid("solver.linear.max_sweeps", "must be positive"));
        }
        keyed("solver.linear.krylov", s.linear.krylov.validate())?;

        if self.output.directory.as_os_str().is_empty() {
            return Err(invalid("output.directory", "must not be empty"));
        }
        self.diagnostics.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Known keys at every object level, taken from the serialized defaults. The
/// pressure block accepts the keys of every closure.
fn known_tree() -> Value {
    let mut tree = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let pressure = &mut tree["physics"]["pressure"];
    pressure["K"] = Value::from(1.0);
    tree
}

fn check_keys(value: &Value, known: &Value, path: &str) -> Result<()> {
    let (Value::Object(given), Value::Object(allowed)) = (value, known) else {
        return Ok(());
    };
    for (key, v) in given {
        let full = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match allowed.get(key) {
            Some(sub) => check_keys(v, sub, &full)?,
            None => {
                let nearest = allowed
                    .keys()
                    .map(|k| (strsim::normalized_damerau_levenshtein(k, key), k))
                    .fold(None, |best: Option<(f64, &String)>, c| match best {
                        Some(b) if b.0 >= c.0 => Some(b),
                        _ => Some(c),
                    })
                    .map(|(_, k)| format!("; nearest known key is `{k}`"))
                    .unwrap_or_default();
                let known: Vec<&str> = allowed.keys().map(String::as_str).collect();
                return Err(invalid(
                    &full,
                    format!("unknown key{nearest} (known keys: {})", known.join(", ")),
                ));
            }
        }
    }
    Ok(())
}

fn parse_error(e: serde_json::Error) -> Error {
    Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn block<T: serde::de::DeserializeOwned + Default>(root: &Value, key: &str) -> Result<T> {
    match root.get(key) {
        None => Ok(T::default()),
        Some(v) => T::deserialize(v).map_err(|e| invalid(key, e.to_string())),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let root: Value = serde_json::from_str(text).map_err(parse_error)?;
    if !root.is_object() {
        return Err(Error::ConfigParse {
            line: 1,
            column: 1,
            message: "top level must be a JSON object".into(),
        });
    }
    check_keys(&root, &known_tree(), "")?;
    let cfg = RunConfig {
        geometry: block(&root, "geometry")?,
        physics: block(&root, "physics")?,
        data: block(&root, "data")?,
        solver: block(&root, "solver")?,
        output: block(&root, "output")?,
        diagnostics: block(&root, "diagnostics")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}
