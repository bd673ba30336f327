//! Run configuration: `[section]` headers followed by `key = value` lines.
//!
//! Values are JSON; anything that does not parse as JSON is taken as a bare
//! string. Lines starting with `#` or `;` are comments, and ` #` outside a
//! double-quoted string starts a trailing comment.
//!
//! ```text
//! [problem]
//! dimension = 2
//! [grid]
//! lower = -5
//! upper = 5
//! nodes = 201
//! [constraints]
//! list = [{"expr": "x1^2 + x2^2", "target": 1.0}]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::dynamics::stability_bound;
use crate::expr::Expr;
use crate::grid::{Axis, GridSpec};
use crate::maxent::ConstraintSet;
use crate::transport::Quadrature;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("expression {expr:?}: {source}")]
    Expr {
        expr: String,
        source: crate::expr::ParseError,
    },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// A scalar applied to every axis, or one value per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAxis<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> PerAxis<T> {
    fn resolve(&self, n: usize, key: &str) -> Result<Vec<T>, ConfigError> {
        match self {
            PerAxis::One(v) => Ok(vec![v.clone(); n]),
            PerAxis::Many(v) if v.len() == n => Ok(v.clone()),
            PerAxis::Many(v) => Err(invalid(format!(
                "grid.{key} has {} entries for dimension {n}",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub dimension: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: PerAxis<f64>,
    pub upper: PerAxis<f64>,
    pub nodes: PerAxis<usize>,
}

/// One constraint: exactly one of `lambda` (fixed) or `target` (fitted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub expr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    #[serde(default)]
    pub list: Vec<ConstraintSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    /// Drift `b` componentwise; overrides `-∇(Σ λ_k J_k)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<String>>,
    /// Scale of the candidate connection `A = -b/λ` in certification.
    pub lambda: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection {
            components: None,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureName {
    Trapezoid,
    #[default]
    Gauss4,
}

impl From<QuadratureName> for Quadrature {
    fn from(q: QuadratureName) -> Quadrature {
        match q {
            QuadratureName::Trapezoid => Quadrature::Trapezoid,
            QuadratureName::Gauss4 => Quadrature::Gauss4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub curvature_tol: f64,
    pub path_tol: f64,
    pub fp_tol: f64,
    pub quadrature: QuadratureName,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            tol: 1e-10,
            max_iter: 100,
            curvature_tol: 1e-8,
            path_tol: 1e-8,
            fp_tol: 1e-4,
            quadrature: QuadratureName::Gauss4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Initial {
    #[default]
    Uniform,
    /// The transport-built stationary density.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    /// Defaults to half the Fokker–Planck stability bound of the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "D")]
    pub diffusion: f64,
    pub particles: usize,
    pub seed: u64,
    pub sample_every: usize,
    pub initial: Initial,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            dt: None,
            t_final: 1.0,
            diffusion: 1.0,
            particles: 10_000,
            seed: 0,
            sample_every: 100,
            initial: Initial::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<Vec<f64>>>,
    pub closed: bool,
    /// Defaults to the box center.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basepoint: Option<Vec<f64>>,
    pub paths_k: usize,
}

impl Default for TransportSection {
    fn default() -> Self {
        TransportSection {
            path: None,
            closed: false,
            basepoint: None,
            paths_k: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourSection {
    pub levels: Vec<f64>,
    pub step: f64,
    pub max_steps: usize,
}

impl Default for ContourSection {
    fn default() -> Self {
        ContourSection {
            levels: Vec::new(),
            step: 1e-3,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub constraints: ConstraintsSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default)]
    pub contour: ContourSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

/// Drops a trailing ` # ...` comment that lies outside double quotes.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    let mut escaped = false;
    let mut prev_blank = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if quoted => escaped = true,
            '"' => quoted = !quoted,
            '#' if !quoted && prev_blank => return line[..i].trim_end(),
            _ => {}
        }
        prev_blank = c.is_whitespace();
    }
    line
}

/// Splits the text into sections of JSON values.
fn parse_sections(text: &str) -> Result<Map<String, Value>, ConfigError> {
    let mut sections: BTreeMap<String, Map<String, Value>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw.trim());
        let lineno = i + 1;
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|n| !n.is_empty())
                .ok_or_else(|| ConfigError::Syntax {
                    line: lineno,
                    message: format!("bad section header {line:?}"),
                })?;
            if sections.contains_key(name) {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    message: format!("section [{name}] repeated"),
                });
            }
            sections.insert(name.to_string(), Map::new());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: lineno,
            message: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: lineno,
                message: "empty key".into(),
            });
        }
        let section = current.as_ref().ok_or_else(|| ConfigError::Syntax {
            line: lineno,
            message: format!("key {key:?} outside any section"),
        })?;
        let map = sections.get_mut(section).expect("section was inserted");
        if map
            .insert(key.to_string(), parse_value(value.trim()))
            .is_some()
        {
            return Err(ConfigError::Syntax {
                line: lineno,
                message: format!("key {key:?} repeated in [{section}]"),
            });
        }
    }
    Ok(sections
        .into_iter()
        .map(|(k, v)| (k, Value::Object(v)))
        .collect())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let value = Value::Object(parse_sections(text)?);
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.grid_spec()?;
        for (i, c) in self.constraints.list.iter().enumerate() {
            if c.lambda.is_some() == c.target.is_some() {
                return Err(invalid(format!(
                    "constraint {i} ({}) needs exactly one of lambda or target",
                    c.expr
                )));
            }
            self.expr(&c.expr)?;
        }
        if let Some(components) = &self.drift.components {
            if components.len() != self.problem.dimension {
                return Err(invalid(format!(
                    "drift has {} components for dimension {}",
                    components.len(),
                    self.problem.dimension
                )));
            }
            for c in components {
                self.expr(c)?;
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.problem.dimension
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        let n = self.problem.dimension;
        let lower = self.grid.lower.resolve(n, "lower")?;
        let upper = self.grid.upper.resolve(n, "upper")?;
        let nodes = self.grid.nodes.resolve(n, "nodes")?;
        let axes = (0..n)
            .map(|i| Axis {
                lower: lower[i],
                upper: upper[i],
                nodes: nodes[i],
            })
            .collect();
        GridSpec::new(axes).map_err(|e| invalid(format!("grid: {e}")))
    }

    pub fn expr(&self, source: &str) -> Result<Expr, ConfigError> {
        Expr::parse(source, self.problem.dimension).map_err(|source_err| ConfigError::Expr {
            expr: source.to_string(),
            source: source_err,
        })
    }

    /// Constraint set with fixed multipliers where given and `λ = 0` plus a
    /// target where the multiplier is to be fitted.
    pub fn constraint_set(&self) -> Result<ConstraintSet, ConfigError> {
        let mut cs = ConstraintSet::new(self.problem.dimension);
        for c in &self.constraints.list {
            cs.push(self.expr(&c.expr)?, c.lambda.unwrap_or(0.0), c.target)
                .map_err(|e| invalid(e.to_string()))?;
        }
        Ok(cs)
    }

    pub fn drift_exprs(&self) -> Result<Option<Vec<Expr>>, ConfigError> {
        self.drift
            .components
            .as_ref()
            .map(|c| c.iter().map(|s| self.expr(s)).collect())
            .transpose()
    }

    /// Fills in defaults that depend on the grid.
    pub fn resolve(&mut self) -> Result<(), ConfigError> {
        let grid = self.grid_spec()?;
        let n = grid.dimension();
        self.grid = GridSection {
            lower: PerAxis::Many(grid.axes().iter().map(|a| a.lower).collect()),
            upper: PerAxis::Many(grid.axes().iter().map(|a| a.upper).collect()),
            nodes: PerAxis::Many(grid.axes().iter().map(|a| a.nodes).collect()),
        };
        if self.dynamics.dt.is_none() {
            self.dynamics.dt = Some(0.5 * stability_bound(&grid, self.dynamics.diffusion));
        }
        if self.transport.basepoint.is_none() {
            self.transport.basepoint = Some(grid.center());
        }
        if let Some(b) = &self.transport.basepoint {
            if b.len() != n {
                return Err(invalid(format!(
                    "basepoint has {} coordinates for dimension {n}",
                    b.len()
                )));
            }
        }
        Ok(())
    }

    /// Renders the configuration in the same format [`RunConfig::parse`]
    /// reads.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        let order = [
            "problem",
            "grid",
            "constraints",
            "drift",
            "solver",
            "dynamics",
            "transport",
            "contour",
            "output",
        ];
        for name in order {
            let Some(Value::Object(section)) = value.get(name) else {
                continue;
            };
            if section.is_empty() {
                continue;
            }
            let _ = writeln!(out, "[{name}]");
            for (key, v) in section {
                let text = crate::json::to_string(v).expect("value serializes");
                let _ = writeln!(out, "{key} = {text}");
            }
            out.push('\n');
        }
        out
    }
}
