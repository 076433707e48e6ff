//! Experiment configuration files.
//!
//! TOML, schema version 1:
//!
//! ```toml
//! version = 1
//!
//! [scenario]            # or: [trace] path = "trace.csv"
//! n = 2
//! p = 1
//! horizon = 300
//! theta_true_0 = [1.0, -1.0]
//! meas_noise_bound = 0.05
//! regressor = { type = "sinusoidal-pe" }
//!
//! [strategy]
//! kind = "exponential-forgetting"
//! lambda = 0.95
//!
//! [estimator]
//! theta0 = [0.0, 0.0]   # default zeros
//! p0 = 1.0              # scalar, diagonal list or full matrix; default 1
//!
//! [analysis]
//! window = 4
//! checks = ["conditions", "tier", "bound", "lemmas", "rate-fit"]
//! rate_fit = [50, 300]
//! # noise = { delta_theta = 0.0, delta_y_bar = 0.1, delta_phi_bar = 0.0, theta_max = 1.0 }
//!
//! [output]
//! dir = "out"
//! format = "csv"
//! plot = true
//! ```

use std::path::{Path, PathBuf};

use gfrls::forgetting::MatrixSpec;
use gfrls::simulation::ScenarioSpec;
use gfrls::{NoiseProfile, StrategySpec, StrategyTag};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unsupported schema version {found}; this build reads version {SCHEMA_VERSION}")]
    Version { found: u32 },
    #[error("unknown strategy kind {found:?}; valid kinds: {}", StrategyTag::BUILTIN.join(", "))]
    UnknownStrategy { found: String },
    #[error("exactly one of [scenario] and [trace] must be present")]
    DataSource,
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Conditions,
    Tier,
    Bound,
    Lemmas,
    RateFit,
}

pub const ALL_CHECKS: [Check; 5] = [
    Check::Conditions,
    Check::Tier,
    Check::Bound,
    Check::Lemmas,
    Check::RateFit,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    /// Resolved against the config file's directory when relative.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub p0: Option<MatrixSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub window: usize,
    #[serde(default = "all_checks")]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub rate_fit: Option<(usize, usize)>,
    /// Noise bounds for the ultimate bound. Required for bounds on external
    /// traces; scenario runs measure them from the generated data.
    #[serde(default)]
    pub noise: Option<NoiseProfile>,
}

fn all_checks() -> Vec<Check> {
    ALL_CHECKS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
    #[serde(default = "yes")]
    pub plot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: Format::Csv,
            plot: true,
        }
    }
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub trace: Option<TraceSource>,
    pub strategy: StrategySpec,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(trace) = &mut cfg.trace {
            if trace.path.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                trace.path = base.join(&trace.path);
            }
        }
        Ok(cfg)
    }

    /// Parses and checks the parts that do not depend on trace contents.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        match raw.get("version").and_then(toml::Value::as_integer) {
            Some(v) if v == i64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(ConfigError::Version {
                    found: u32::try_from(v).unwrap_or(u32::MAX),
                })
            }
            None => return Err(ConfigError::Parse("missing integer key `version`".into())),
        }
        if let Some(kind) = raw
            .get("strategy")
            .and_then(|s| s.get("kind"))
            .and_then(toml::Value::as_str)
        {
            if !StrategyTag::BUILTIN.contains(&kind) {
                return Err(ConfigError::UnknownStrategy { found: kind.into() });
            }
        }
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.scenario.is_some() == cfg.trace.is_some() {
            return Err(ConfigError::DataSource);
        }
        if cfg.analysis.window == 0 {
            return Err(ConfigError::Invalid("analysis.window must be >= 1".into()));
        }
        if let Some((a, b)) = cfg.analysis.rate_fit {
            if a >= b {
                return Err(ConfigError::Invalid(format!(
                    "analysis.rate_fit = [{a}, {b}] must be an increasing range"
                )));
            }
        }
        if let Some(noise) = &cfg.analysis.noise {
            noise.validate().map_err(|e| ConfigError::Invalid(format!("analysis.noise: {e}")))?;
        }
        if let Some(s) = &cfg.scenario {
            s.validate().map_err(|e| ConfigError::Invalid(format!("scenario: {e}")))?;
            cfg.validate_dims(s.n, s.p)?;
        }
        Ok(cfg)
    }

    /// Checks the strategy and estimator against the data dimensions.
    pub fn validate_dims(&self, n: usize, p: usize) -> Result<(), ConfigError> {
        self.strategy
            .validate(n, p)
            .map_err(|e| ConfigError::Invalid(format!("strategy: {e}")))?;
        if let Some(t) = &self.estimator.theta0 {
            if t.len() != n {
                return Err(ConfigError::Invalid(format!(
                    "estimator.theta0 has {} entries, n = {n}",
                    t.len()
                )));
            }
        }
        if let Some(p0) = &self.estimator.p0 {
            p0.to_spd(n)
                .map_err(|e| ConfigError::Invalid(format!("estimator.p0: {e}")))?;
        }
        Ok(())
    }

    pub fn wants(&self, check: Check) -> bool {
        self.analysis.checks.contains(&check)
    }
}
