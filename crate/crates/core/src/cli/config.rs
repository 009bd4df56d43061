//! JSON problem configuration.
//!
//! ```json
//! {
//!   "schema_version": "1",
//!   "system": { "A": [[1.0]], "B": [[[1.0]], [[1.0]]], "sigma": { "kind": "constant", "S": [[1.0]] } },
//!   "gains": [[[-2.0]], [[-2.0]]],
//!   "epsilon": 0.1
//! }
//! ```
//!
//! Matrices are row-major nested arrays. Every shape is checked before any
//! computation; errors name the offending field.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::report::canonical_json;
use super::CliError;
use crate::grid::GridSpec;
use crate::linalg::Matrix;
use crate::liouville::{GaussianDensity, GeneralDensity};
use crate::redundancy::{AvgNormalization, GridOptions, Method, MonteCarloOptions};
use crate::reliable::SynthesisOptions;
use crate::system::{DiffusionSpec, GainSet, MultiChannelSystem};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: String,
    #[serde(default)]
    d: Option<usize>,
    #[serde(default, rename = "N")]
    n: Option<usize>,
    system: RawSystem,
    #[serde(default)]
    gains: Option<Vec<Rows>>,
    #[serde(default)]
    epsilon: Option<RawEpsilon>,
    #[serde(default)]
    rho0: Option<RawRho0>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    method: Option<Method>,
    #[serde(default)]
    avg_normalization: Option<RawNormalization>,
    #[serde(default)]
    grid: Option<RawGrid>,
    #[serde(default)]
    times: Option<Vec<f64>>,
    #[serde(default)]
    monte_carlo: Option<RawMonteCarlo>,
    #[serde(default)]
    synthesis: Option<RawSynthesis>,
    #[serde(default)]
    x0: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Vec<Rows>,
    #[serde(default)]
    sigma: Option<RawSigma>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawSigma {
    Constant {
        #[serde(rename = "S")]
        s: Rows,
    },
    DiagAffine {
        c: Vec<f64>,
        s: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawEpsilon {
    Single(f64),
    List(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawRho0Tagged {
    Gaussian {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        cov: Rows,
    },
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGaussian {
    #[serde(default)]
    mean: Option<Vec<f64>>,
    cov: Rows,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawRho0 {
    Tagged(RawRho0Tagged),
    Gaussian(RawGaussian),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawNormalization {
    Paper,
    Mean,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(default)]
    lo: Option<Vec<f64>>,
    #[serde(default)]
    hi: Option<Vec<f64>>,
    #[serde(default)]
    cells: Option<usize>,
    #[serde(default)]
    k_sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMonteCarlo {
    #[serde(default)]
    n_paths: Option<usize>,
    #[serde(default)]
    dt: Option<f64>,
    #[serde(default)]
    horizon: Option<f64>,
    #[serde(default)]
    cells: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthesis {
    #[serde(default)]
    q_weight: Option<Rows>,
    #[serde(default)]
    r_weights: Option<Vec<Rows>>,
    #[serde(default)]
    theta_max: Option<f64>,
    #[serde(default)]
    margin_floor: Option<f64>,
}

/// Noise level(s) from the config.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonSpec {
    Single(f64),
    List(Vec<f64>),
}

impl EpsilonSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Single(e) => vec![*e],
            Self::List(v) => v.clone(),
        }
    }
}

/// Initial density for transported laws.
pub type Rho0Spec = GeneralDensity<f64>;

/// A fully validated problem with defaults filled in.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub system: MultiChannelSystem<f64>,
    pub gains: Option<GainSet<f64>>,
    pub epsilon: Option<EpsilonSpec>,
    pub rho0: Option<Rho0Spec>,
    pub seed: u64,
    pub method: Method,
    pub avg_normalization: AvgNormalization,
    pub grid: GridOptions<f64>,
    /// Explicit `grid.cells`, if given.
    pub grid_cells: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub monte_carlo: MonteCarloOptions<f64>,
    pub synthesis: SynthesisOptions<f64>,
    pub x0: Option<Vec<f64>>,
    /// Canonical rendering of the parsed config, used for the inputs digest.
    pub canonical: String,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.system.dim()
    }
}

pub fn parse_config(path: &Path) -> Result<ProblemSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ProblemSpec, CliError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CliError::ConfigSyntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let raw: RawConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
        let msg = e.inner().to_string();
        let field = if msg.starts_with("unknown field") {
            unknown_field(&msg)
        } else {
            e.path()
                .iter()
                .rev()
                .find_map(|seg| match seg {
                    serde_path_to_error::Segment::Map { key } => Some(key.clone()),
                    _ => None,
                })
                .unwrap_or_else(|| "config".into())
        };
        CliError::invalid(&field, format!("{msg} (at {})", e.path()))
    })?;
    build(raw, canonical_json(&value))
}

/// Pulls the key out of serde's "unknown field `x`" messages.
fn unknown_field(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

fn matrix(field: &str, rows: Rows) -> Result<Matrix<f64>, CliError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::invalid(field, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(CliError::invalid(field, "matrix rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::invalid(field, "matrix entries must be finite"));
    }
    Matrix::from_rows(rows).map_err(|e| CliError::invalid(field, e.to_string()))
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn vector(field: &str, v: Vec<f64>, d: usize) -> Result<Vec<f64>, CliError> {
    if v.len() != d {
        return Err(CliError::invalid(field, format!("expected {d} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::invalid(field, "entries must be finite"));
    }
    Ok(v)
}

fn build(raw: RawConfig, canonical: String) -> Result<ProblemSpec, CliError> {
    if raw.schema_version != "1" {
        return Err(CliError::invalid(
            "schema_version",
            format!("unsupported schema version {:?}, expected \"1\"", raw.schema_version),
        ));
    }

    let a = matrix("A", raw.system.a)?;
    if !a.is_square() {
        return Err(CliError::invalid("A", format!("must be square, got {}x{}", a.nrows(), a.ncols())));
    }
    let d = a.nrows();
    if let Some(dd) = raw.d {
        if dd != d {
            return Err(CliError::invalid("A", format!("A is {d}x{d} but d = {dd}")));
        }
    }

    let n = raw.n.or(raw.gains.as_ref().map(Vec::len)).unwrap_or(raw.system.b.len());
    if raw.system.b.len() != n || n == 0 {
        return Err(CliError::invalid(
            "B",
            format!("expected {n} input matrices, got {}", raw.system.b.len()),
        ));
    }
    let b = raw
        .system
        .b
        .into_iter()
        .map(|rows| matrix("B", rows))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, bi) in b.iter().enumerate() {
        if bi.nrows() != d {
            return Err(CliError::invalid(
                "B",
                format!("B[{i}] has {} rows, expected {d}", bi.nrows()),
            ));
        }
    }

    let sigma = match raw.system.sigma {
        None => DiffusionSpec::constant(Matrix::identity(d)),
        Some(RawSigma::Constant { s }) => {
            let s = matrix("sigma", s)?;
            if s.nrows() != d {
                return Err(CliError::invalid("sigma", format!("S has {} rows, expected {d}", s.nrows())));
            }
            DiffusionSpec::constant(s)
        }
        Some(RawSigma::DiagAffine { c, s }) => {
            let c = vector("sigma", c, d)?;
            let s = vector("sigma", s, d)?;
            DiffusionSpec::diag_affine(c, s)
        }
    }
    .map_err(|e| CliError::invalid("sigma", e.to_string()))?;

    let system = MultiChannelSystem::new(a, b, sigma).map_err(|e| CliError::invalid("system", e.to_string()))?;

    let gains = match raw.gains {
        None => None,
        Some(list) => {
            let k = list
                .into_iter()
                .map(|rows| matrix("gains", rows))
                .collect::<Result<Vec<_>, _>>()?;
            let gains = GainSet::new(k);
            system
                .check_gains(&gains)
                .map_err(|e| CliError::invalid("gains", e.to_string()))?;
            Some(gains)
        }
    };

    let epsilon = match raw.epsilon {
        None => None,
        Some(RawEpsilon::Single(e)) => Some(EpsilonSpec::Single(positive("epsilon", e)?)),
        Some(RawEpsilon::List(v)) => {
            if v.is_empty() {
                return Err(CliError::invalid("epsilon", "list is empty"));
            }
            let v = v
                .into_iter()
                .map(|e| positive("epsilon", e))
                .collect::<Result<Vec<_>, _>>()?;
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(CliError::invalid("epsilon", "values must be distinct"));
            }
            Some(EpsilonSpec::List(v))
        }
    };

    let rho0 = match raw.rho0 {
        None => None,
        Some(RawRho0::Gaussian(RawGaussian { mean, cov }))
        | Some(RawRho0::Tagged(RawRho0Tagged::Gaussian { mean, cov })) => {
            let cov = matrix("rho0", cov)?;
            let mean = vector("rho0", mean.unwrap_or_else(|| vec![0.0; d]), d)?;
            Some(GeneralDensity::Gaussian(
                GaussianDensity::new(mean, cov).map_err(|e| CliError::invalid("rho0", e.to_string()))?,
            ))
        }
        Some(RawRho0::Tagged(RawRho0Tagged::Uniform { lo, hi })) => {
            let lo = vector("rho0", lo, d)?;
            let hi = vector("rho0", hi, d)?;
            Some(GeneralDensity::uniform(lo, hi).map_err(|e| CliError::invalid("rho0", e.to_string()))?)
        }
    };

    let times = match raw.times {
        None => None,
        Some(t) => {
            if t.is_empty() || t.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(CliError::invalid("times", "times must be a non-empty list of finite values >= 0"));
            }
            Some(t)
        }
    };

    let mut grid = GridOptions::default();
    let mut grid_cells = None;
    if let Some(g) = raw.grid {
        if let Some(k) = g.k_sigma {
            grid.k_sigma = positive("grid", k)?;
        }
        if let Some(c) = g.cells {
            if c == 0 {
                return Err(CliError::invalid("grid", "cells must be positive"));
            }
            grid.cells_1d = c;
            grid.cells_2d = c;
            grid_cells = Some(c);
        }
        match (g.lo, g.hi) {
            (None, None) => {}
            (Some(lo), Some(hi)) => {
                let lo = vector("grid", lo, d)?;
                let hi = vector("grid", hi, d)?;
                GridSpec::uniform(lo.clone(), hi.clone(), grid.cells_1d)
                    .map_err(|e| CliError::invalid("grid", e.to_string()))?;
                grid.bounds = Some((lo, hi));
            }
            _ => return Err(CliError::invalid("grid", "lo and hi must be given together")),
        }
    }

    let mut monte_carlo = MonteCarloOptions::default();
    if let Some(mc) = raw.monte_carlo {
        if let Some(n) = mc.n_paths {
            if n == 0 {
                return Err(CliError::invalid("monte_carlo", "n_paths must be positive"));
            }
            monte_carlo.n_paths = n;
        }
        monte_carlo.dt = mc.dt.map(|v| positive("monte_carlo", v)).transpose()?;
        monte_carlo.horizon = mc.horizon.map(|v| positive("monte_carlo", v)).transpose()?;
        if let Some(c) = mc.cells {
            if c == 0 {
                return Err(CliError::invalid("monte_carlo", "cells must be positive"));
            }
            monte_carlo.cells_1d = c;
            monte_carlo.cells_2d = c;
        }
    }

    let mut synthesis = SynthesisOptions::default();
    if let Some(s) = raw.synthesis {
        synthesis.q_weight = s.q_weight.map(|q| matrix("synthesis", q)).transpose()?;
        synthesis.r_weights = s
            .r_weights
            .map(|r| r.into_iter().map(|m| matrix("synthesis", m)).collect::<Result<Vec<_>, _>>())
            .transpose()?;
        if let Some(t) = s.theta_max {
            synthesis.theta_max = positive("synthesis", t)?;
        }
        if let Some(m) = s.margin_floor {
            synthesis.margin_floor = positive("synthesis", m)?;
        }
    }

    let x0 = raw.x0.map(|v| vector("x0", v, d)).transpose()?;

    Ok(ProblemSpec {
        system,
        gains,
        epsilon,
        rho0,
        seed: raw.seed.unwrap_or(42),
        method: raw.method.unwrap_or_default(),
        avg_normalization: match raw.avg_normalization {
            Some(RawNormalization::Mean) => AvgNormalization::Mean,
            Some(RawNormalization::Paper) | None => AvgNormalization::HalfN,
        },
        grid,
        grid_cells,
        times,
        monte_carlo,
        synthesis,
        x0,
        canonical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const S1: &str = r#"{
        "schema_version": "1",
        "system": { "A": [[1.0]], "B": [[[1.0]], [[1.0]]], "sigma": { "kind": "constant", "S": [[1.0]] } },
        "gains": [[[-2.0]], [[-2.0]]],
        "epsilon": 0.1
    }"#;

    fn field_of(e: CliError) -> String {
        match e {
            CliError::ConfigValidation { field, .. } => field,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = parse_config_str(S1).unwrap();
        assert_eq!(spec.seed, 42);
        assert_eq!(spec.method, Method::ClosedForm);
        assert_eq!(spec.avg_normalization, AvgNormalization::HalfN);
        assert_eq!(spec.dim(), 1);
        assert_eq!(spec.system.channels(), 2);
        assert_eq!(spec.epsilon, Some(EpsilonSpec::Single(0.1)));
    }

    #[test]
    fn too_many_input_matrices() {
        let text = S1.replace(r#""B": [[[1.0]], [[1.0]]]"#, r#""B": [[[1.0]], [[1.0]], [[1.0]]]"#);
        assert_eq!(field_of(parse_config_str(&text).unwrap_err()), "B");
    }

    #[test]
    fn negative_epsilon() {
        let text = S1.replace("0.1", "-0.1");
        assert_eq!(field_of(parse_config_str(&text).unwrap_err()), "epsilon");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_config_str("{\n  \"schema_version\": \"1\",\n  oops\n}").unwrap_err();
        match err {
            CliError::ConfigSyntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column >= 3);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn type_errors_name_the_field() {
        let text = S1.replace(r#""A": [[1.0]]"#, r#""A": "one""#);
        assert_eq!(field_of(parse_config_str(&text).unwrap_err()), "A");
        let text = S1.replace(r#""epsilon": 0.1"#, r#""epsilon": 0.1, "bogus": 1"#);
        assert_eq!(field_of(parse_config_str(&text).unwrap_err()), "bogus");
    }

    #[test]
    fn gain_shapes_are_checked() {
        let text = S1.replace(r#""gains": [[[-2.0]], [[-2.0]]]"#, r#""gains": [[[-2.0, 1.0]], [[-2.0]]]"#);
        assert_eq!(field_of(parse_config_str(&text).unwrap_err()), "gains");
        let text = S1.replace(r#""gains": [[[-2.0]], [[-2.0]]]"#, r#""N": 3"#);
        assert_eq!(field_of(parse_config_str(&text).unwrap_err()), "B");
    }

    #[test]
    fn canonical_form_ignores_whitespace() {
        let a = parse_config_str(S1).unwrap().canonical;
        let b = parse_config_str(&S1.replace('\n', " ")).unwrap().canonical;
        assert_eq!(a, b);
    }
}
