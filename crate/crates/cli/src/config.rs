//! Experiment configuration documents.

use std::path::PathBuf;

use holonomy_core::verify::Suite;
use holonomy_core::{Complex64, Region};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    MuRoots,
    Solve,
    Transport,
    Sweep,
    Prop4,
    Surface,
    VerifyAll,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown mode {s:?} (expected mu-roots, solve, transport, sweep, prop4, surface or verify-all)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// `[0, side]²` with periodic identifications.
    Torus { n: usize, side: f64 },
    /// `[−radius, radius]²` with the disk `|z| < radius` as Dirichlet domain.
    Disk { n: usize, radius: f64 },
    /// Dirichlet problem on a rectangle, optionally restricted to `domain`.
    Rectangle { x: [f64; 2], y: [f64; 2], n: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Torus { n: 64, side: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Newton tolerance relative to `max(1, e^S)`.
    pub newton: f64,
    /// Minimum distance kept from zeros of `U₀`.
    pub clearance: f64,
    /// RK4 steps per transport; chosen from `λ` and `L` when absent.
    pub steps: Option<usize>,
    /// Picard quadrature intervals per segment (multiple of 4).
    pub picard_intervals: Option<usize>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { newton: 1e-9, clearance: 1e-3, steps: None, picard_intervals: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKind {
    #[default]
    Obj,
    Csv,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub dir: Option<PathBuf>,
    pub mesh: MeshKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Coefficients of `U₀`, lowest degree first, as `[re, im]` pairs.
    #[serde(default = "default_u0")]
    pub u0: Vec<Complex64>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_thetas")]
    pub thetas: Vec<f64>,
    #[serde(rename = "L", default = "default_lengths")]
    pub lengths: Vec<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    /// Dirichlet domain for rectangle grids.
    #[serde(default)]
    pub domain: Option<Region>,
    /// Compact set `K` for prop4.
    #[serde(default = "default_compact")]
    pub compact: Region,
    /// Segment start, and the base point of surface patches.
    #[serde(default = "default_start")]
    pub start: Complex64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_suite")]
    pub suite: Suite,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_u0() -> Vec<Complex64> {
    vec![Complex64::new(2.0, 0.0)]
}
fn default_lambdas() -> Vec<f64> {
    vec![1.0]
}
fn default_thetas() -> Vec<f64> {
    vec![0.0]
}
fn default_lengths() -> Vec<f64> {
    vec![1.0]
}
fn default_compact() -> Region {
    Region::Annulus { center: Complex64::new(0.0, 0.0), inner: 0.5, outer: 0.9 }
}
fn default_start() -> Complex64 {
    Complex64::new(0.6, 0.0)
}
fn default_suite() -> Suite {
    Suite::Torus
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            mode: None,
            u0: default_u0(),
            lambdas: default_lambdas(),
            thetas: default_thetas(),
            lengths: default_lengths(),
            grid: GridSpec::default(),
            domain: None,
            compact: default_compact(),
            start: default_start(),
            tolerances: Tolerances::default(),
            suite: default_suite(),
            outputs: Outputs::default(),
        }
    }
}

/// Parse failure with the 1-based position reported by the JSON reader.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into(), line: None, column: None }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{} at line {l} column {c}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde_json appends " at line L column C"; keep the bare message.
            let bare = msg.rsplit_once(" at line ").map(|(m, _)| m.to_string()).unwrap_or(msg);
            ConfigError { message: bare, line: Some(e.line()), column: Some(e.column()) }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::new(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        for (name, list) in [("lambdas", &self.lambdas), ("thetas", &self.thetas), ("L", &self.lengths)] {
            if list.is_empty() {
                return Err(ConfigError::new(format!("{name} must not be empty")));
            }
            if list.iter().any(|v| !v.is_finite()) {
                return Err(ConfigError::new(format!("{name} must be finite")));
            }
        }
        if let Some(l) = self.lambdas.iter().find(|l| **l <= 0.0) {
            return Err(ConfigError::new(format!("lambdas must be > 0, got {l}")));
        }
        if let Some(l) = self.lengths.iter().find(|l| **l < 0.0) {
            return Err(ConfigError::new(format!("L must be ≥ 0, got {l}")));
        }
        if self.u0.is_empty() || self.u0.iter().all(|c| c.norm() == 0.0) {
            return Err(ConfigError::new("u0 must have a nonzero coefficient"));
        }
        let t = &self.tolerances;
        if !(t.newton > 0.0) || !(t.clearance > 0.0) {
            return Err(ConfigError::new("tolerances must be > 0"));
        }
        if t.steps == Some(0) {
            return Err(ConfigError::new("tolerances.steps must be > 0"));
        }
        if let Some(m) = t.picard_intervals {
            if m < 4 || m % 4 != 0 {
                return Err(ConfigError::new(format!("tolerances.picard_intervals must be a positive multiple of 4, got {m}")));
            }
        }
        let n = match self.grid {
            GridSpec::Torus { n, side } => {
                if !(side > 0.0) {
                    return Err(ConfigError::new("grid.side must be > 0"));
                }
                if self.u0.len() != 1 {
                    return Err(ConfigError::new("torus grids need a constant u0"));
                }
                n
            }
            GridSpec::Disk { n, radius } => {
                if !(radius > 0.0) {
                    return Err(ConfigError::new("grid.radius must be > 0"));
                }
                n
            }
            GridSpec::Rectangle { x, y, n } => {
                if !(x[1] > x[0]) || !(y[1] > y[0]) {
                    return Err(ConfigError::new("grid.x and grid.y must be increasing intervals"));
                }
                n
            }
        };
        if n < 8 {
            return Err(ConfigError::new(format!("grid.n must be ≥ 8, got {n}")));
        }
        Ok(())
    }
}
