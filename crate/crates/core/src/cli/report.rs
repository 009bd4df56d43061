//! Report files: canonical JSON with sorted keys and 17 significant digits,
//! plus CSV for sweeps. Writes go through a temporary file and a rename.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::grid::GridSpec;
use crate::info::Divergence;
use crate::linalg::Matrix;
use crate::redundancy::{Method, RedundancyReport, SweepParameter, SweepTable};
use crate::reliable::{ReliabilityReport, Synthesis};
use crate::system::FailureMode;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// The invocation, with defaults resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEcho {
    pub command: String,
    pub method: Method,
    pub seed: u64,
    /// `paper` (1/(2N)) or `mean` (1/N).
    pub avg_normalization: String,
    pub paper_literal_jacobian: bool,
}

/// Summary of one mode's Euler–Maruyama run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSimulation {
    pub mode: FailureMode,
    pub seed: u64,
    pub n_paths: usize,
    pub dt: f64,
    pub t_final: f64,
    pub epsilon: f64,
    pub mean: Vec<f64>,
    pub covariance: Matrix<f64>,
    /// Lyapunov covariance, when σ is constant.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stationary_covariance: Option<Matrix<f64>>,
    /// `max_i |C_ii / P_ii − 1|` against the Lyapunov covariance.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_relative_variance_error: Option<f64>,
}

/// One mode's stationary grid density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeFpGrid {
    pub mode: FailureMode,
    pub epsilon: f64,
    pub grid: GridSpec<f64>,
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub covariance: Vec<f64>,
    /// L1 distance to the discretized Lyapunov Gaussian, when σ is constant.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l1_to_gaussian: Option<f64>,
    /// Cell values, row-major with the last axis fastest.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum ReportOutput {
    Reliability(ReliabilityReport<f64>),
    Synthesis(Synthesis<f64>),
    Redundancy(RedundancyReport<f64>),
    Sweep(SweepTable<f64>),
    Simulation(Vec<ModeSimulation>),
    FpGrid(Vec<ModeFpGrid>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: String,
    pub tool: ToolInfo,
    pub command: CommandEcho,
    /// SHA-256 of the canonical config and the resolved invocation.
    pub inputs_digest: String,
    /// Method tag covering every number in `output`.
    pub method: Method,
    pub output: ReportOutput,
    /// Only present with `--timing`; otherwise reports are byte-identical.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_seconds: Option<f64>,
}

/// Seventeen significant digits, always in exponent form.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn render(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null | Value::Bool(_) | Value::String(_) => {
            out.push_str(&serde_json::to_string(value).expect("scalar JSON"))
        }
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) if !n.is_f64() => write!(out, "{u}").unwrap(),
            (_, Some(i)) if !n.is_f64() => write!(out, "{i}").unwrap(),
            _ => out.push_str(&format_float(n.as_f64().expect("finite number"))),
        },
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&"  ".repeat(indent + 1));
                render(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, key) in keys.iter().enumerate() {
                out.push_str(&"  ".repeat(indent + 1));
                out.push_str(&serde_json::to_string(key).expect("key"));
                out.push_str(": ");
                render(&map[key.as_str()], indent + 1, out);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push('}');
        }
    }
}

/// Sorted keys, two-space indentation, floats via [`format_float`].
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    render(value, 0, &mut out);
    out.push('\n');
    out
}

impl ReportFile {
    pub fn to_canonical(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("reports serialize"))
    }
}

fn divergence_cell(d: &Divergence<f64>) -> String {
    match d.finite() {
        Some(v) => format_float(v),
        None => "inf".into(),
    }
}

/// `parameter, r, avg_term, entropy_term, kl_1 … kl_N`, one row per sweep row.
pub fn render_csv(table: &SweepTable<f64>) -> String {
    let name = match table.parameter {
        SweepParameter::Epsilon => "epsilon",
        SweepParameter::Time => "t",
    };
    let channels = table.rows.first().map_or(0, |r| r.kl_per_channel.len());
    let mut out = format!("{name},r,avg_term,entropy_term");
    for i in 1..=channels {
        write!(out, ",kl_{i}").unwrap();
    }
    out.push('\n');
    for (p, row) in table.parameter_values().iter().zip(&table.rows) {
        write!(
            out,
            "{},{},{},{}",
            format_float(*p),
            divergence_cell(&row.r),
            divergence_cell(&row.avg_term),
            format_float(row.entropy_term.0)
        )
        .unwrap();
        for kl in &row.kl_per_channel {
            write!(out, ",{}", divergence_cell(kl)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes `contents` to a sibling temporary file, syncs it, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("report");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io)
}

pub fn read_report(path: &Path) -> Result<ReportFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::ConfigSyntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}
