//! Run configuration: TOML with flat dotted keys, presets embedded at build time.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qmpe_core::dynamics::{gamma_from_coherence_time, Evolver};
use qmpe_core::hamiltonian::{build_disordered, read_fields, sample_disorder, HamiltonianSpec};
use qmpe_core::pipeline::MAX_PIPELINE_SITES;
use qmpe_core::protocol::Budget;
use qmpe_core::rng::{derive_seed, stream_rng};
use qmpe_core::spin::SiteSet;
use qmpe_core::stats::{enumerate_subsystems, CrossingRule, SubsystemMode};

use crate::error::CliError;

pub const PRESETS: &[(&str, &str)] = &[
    ("xy", include_str!("../../../data/presets/xy.toml")),
    (
        "disorder-weak",
        include_str!("../../../data/presets/disorder-weak.toml"),
    ),
    (
        "disorder-strong",
        include_str!("../../../data/presets/disorder-strong.toml"),
    ),
    (
        "dephasing",
        include_str!("../../../data/presets/dephasing.toml"),
    ),
    (
        "four-qubit",
        include_str!("../../../data/presets/four-qubit.toml"),
    ),
];

/// Stream tags separating the disorder draws from the measurement draws.
const DISORDER_STREAM: u64 = 1;
pub const MEASURE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disorder: Option<DisorderConfig>,
    #[serde(default)]
    pub dephasing: DephasingConfig,
    pub state: StateConfig,
    pub times: TimesConfig,
    pub subsystem: SubsystemConfig,
    #[serde(default)]
    pub measure: MeasureConfig,
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_sites: usize,
    /// `false` runs dephasing without any Hamiltonian.
    #[serde(default = "yes")]
    pub hamiltonian: bool,
    #[serde(default = "default_j0")]
    pub j0: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub echo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    /// Field width in units of J0.
    #[serde(default)]
    pub w: f64,
    #[serde(default = "one")]
    pub realizations: usize,
    /// Fixed fields (rad/s), one realization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephasingConfig {
    /// Coherence time [s]; Γ = 1/(2 T_coh).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_coh: Option<f64>,
    /// Rate [1/s], alternative to `t_coh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    /// Tilt angles in units of π.
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesConfig {
    #[serde(default)]
    pub start: f64,
    #[serde(default)]
    pub stop: f64,
    #[serde(default)]
    pub points: usize,
    /// Explicit grid; overrides start/stop/points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemConfig {
    pub mode: ModeName,
    pub n_a: usize,
    /// 1-based ion indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Connected,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default = "default_n_u")]
    pub n_u: usize,
    #[serde(default = "default_n_m")]
    pub n_m: usize,
    /// Budget used at t = 0 when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_n_u: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_n_m: Option<usize>,
    /// Measurement times; defaults to the simulation grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            n_u: default_n_u(),
            n_m: default_n_m(),
            initial_n_u: None,
            initial_n_m: None,
            times: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default = "default_sigma")]
    pub sigma_multiplier: f64,
    /// Crossings later than this [s] do not count; defaults to the last time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            sigma_multiplier: default_sigma(),
            window: None,
        }
    }
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn default_j0() -> f64 {
    560.0
}
fn default_alpha() -> f64 {
    1.0
}
fn default_n_u() -> usize {
    Budget::DEFAULT.n_u
}
fn default_n_m() -> usize {
    Budget::DEFAULT.n_m
}
fn default_sigma() -> f64 {
    1.0
}

pub fn preset_text(name: &str) -> Result<&'static str, CliError> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::Config(format!(
                "unknown preset '{name}' (available: {})",
                names.join(", ")
            ))
        })
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Overlay `top` onto `base`, descending into tables.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Preset first, then the config file on top of it.
pub fn load(preset: Option<&str>, file: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut table = match preset {
        Some(name) => parse_table(preset_text(name)?, &format!("preset {name}"))?,
        None => toml::Table::new(),
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut top = parse_table(&text, &path.display().to_string())?;
        // relative disorder files are resolved against the config file
        if let Some(toml::Value::Table(d)) = top.get_mut("disorder") {
            if let Some(toml::Value::String(f)) = d.get_mut("file") {
                if Path::new(f.as_str()).is_relative() {
                    if let Some(dir) = path.parent() {
                        *f = dir.join(&*f).display().to_string();
                    }
                }
            }
        }
        merge(&mut table, top);
    }
    if preset.is_none() && file.is_none() {
        return Err(CliError::Config(
            "no configuration: pass --preset NAME or --config PATH".into(),
        ));
    }
    let cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

fn finite_non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let n = self.model.n_sites;
        check((1..=MAX_PIPELINE_SITES).contains(&n), || {
            format!("model.n_sites must lie in 1..={MAX_PIPELINE_SITES}, got {n}")
        })?;
        check(finite_non_negative(self.model.j0), || {
            format!("model.j0 must be finite and ≥ 0, got {}", self.model.j0)
        })?;
        check(finite_non_negative(self.model.alpha), || {
            format!(
                "model.alpha must be finite and ≥ 0, got {}",
                self.model.alpha
            )
        })?;
        if let Some(d) = &self.disorder {
            check(self.model.hamiltonian, || {
                "disorder requires model.hamiltonian = true".into()
            })?;
            check(finite_non_negative(d.w), || {
                format!("disorder.w must be finite and ≥ 0, got {}", d.w)
            })?;
            check(d.realizations >= 1, || {
                "disorder.realizations must be ≥ 1".into()
            })?;
            check(d.file.is_none() || d.realizations == 1, || {
                "disorder.file fixes a single realization".into()
            })?;
        }
        match (self.dephasing.t_coh, self.dephasing.gamma) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "set only one of dephasing.t_coh and dephasing.gamma".into(),
                ))
            }
            (Some(t), None) => check(t.is_finite() && t > 0.0, || {
                format!("dephasing.t_coh must be > 0, got {t}")
            })?,
            (None, Some(g)) => check(finite_non_negative(g), || {
                format!("dephasing.gamma must be ≥ 0, got {g}")
            })?,
            (None, None) => {}
        }
        check(!self.state.thetas.is_empty(), || {
            "state.thetas is empty".into()
        })?;
        for &th in &self.state.thetas {
            check((0.0..=1.0).contains(&th), || {
                format!("state.thetas are in units of π and must lie in [0, 1], got {th}")
            })?;
        }
        let times = self.time_grid()?;
        check(!times.is_empty(), || "empty time grid".into())?;
        check(times.iter().all(|t| finite_non_negative(*t)), || {
            "times must be finite and ≥ 0".into()
        })?;
        check(times.windows(2).all(|w| w[1] > w[0]), || {
            "times must be strictly increasing".into()
        })?;
        self.subsystems()?;
        let m = &self.measure;
        check(m.n_u >= 3 && m.n_m >= 1, || {
            "measure.n_u must be ≥ 3 and measure.n_m ≥ 1".into()
        })?;
        check(m.initial_n_u.is_none_or(|v| v >= 3), || {
            "measure.initial_n_u must be ≥ 3".into()
        })?;
        check(m.initial_n_m.is_none_or(|v| v >= 1), || {
            "measure.initial_n_m must be ≥ 1".into()
        })?;
        if let Some(ts) = &m.times {
            check(
                !ts.is_empty() && ts.iter().all(|t| finite_non_negative(*t)),
                || "measure.times must be non-empty, finite and ≥ 0".into(),
            )?;
            check(ts.windows(2).all(|w| w[1] > w[0]), || {
                "measure.times must be strictly increasing".into()
            })?;
        }
        check(
            self.report.sigma_multiplier.is_finite() && self.report.sigma_multiplier >= 0.0,
            || "report.sigma_multiplier must be ≥ 0".into(),
        )?;
        check(self.report.window.is_none_or(|w| w > 0.0), || {
            "report.window must be > 0".into()
        })?;
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        match (self.dephasing.t_coh, self.dephasing.gamma) {
            (Some(t), _) => gamma_from_coherence_time(t),
            (None, Some(g)) => g,
            (None, None) => 0.0,
        }
    }

    /// Tilt angles in radians.
    pub fn thetas(&self) -> Vec<f64> {
        self.state.thetas.iter().map(|t| t * PI).collect()
    }

    pub fn time_grid(&self) -> Result<Vec<f64>, CliError> {
        let t = &self.times;
        if let Some(v) = &t.values {
            return Ok(v.clone());
        }
        check(t.points >= 2, || "times.points must be ≥ 2".into())?;
        check(finite_non_negative(t.start) && t.stop > t.start, || {
            format!(
                "need 0 ≤ times.start < times.stop, got {} and {}",
                t.start, t.stop
            )
        })?;
        let step = (t.stop - t.start) / (t.points - 1) as f64;
        Ok((0..t.points).map(|k| t.start + step * k as f64).collect())
    }

    pub fn measure_times(&self) -> Result<Vec<f64>, CliError> {
        match &self.measure.times {
            Some(v) => Ok(v.clone()),
            None => self.time_grid(),
        }
    }

    pub fn budget_at(&self, t: f64) -> Budget {
        let m = &self.measure;
        if t == 0.0 {
            Budget {
                n_u: m.initial_n_u.unwrap_or(m.n_u),
                n_m: m.initial_n_m.unwrap_or(m.n_m),
            }
        } else {
            Budget {
                n_u: m.n_u,
                n_m: m.n_m,
            }
        }
    }

    pub fn subsystems(&self) -> Result<Vec<SiteSet>, CliError> {
        let n = self.model.n_sites;
        let s = &self.subsystem;
        let mode = match s.mode {
            ModeName::Connected => SubsystemMode::Connected,
            ModeName::Pool => {
                let pool = s.pool.clone().unwrap_or_else(|| (1..=n).collect());
                check(pool.iter().all(|&i| (1..=n).contains(&i)), || {
                    format!("subsystem.pool entries must lie in 1..={n}")
                })?;
                SubsystemMode::Pool(pool.iter().map(|i| i - 1).collect())
            }
        };
        check(s.mode == ModeName::Pool || s.pool.is_none(), || {
            "subsystem.pool is only valid with mode = \"pool\"".into()
        })?;
        enumerate_subsystems(n, s.n_a, &mode)
            .map_err(|e| CliError::Config(format!("subsystem: {e}")))
    }

    pub fn crossing_rule(&self) -> CrossingRule {
        CrossingRule {
            sigma_multiplier: self.report.sigma_multiplier,
        }
    }

    pub fn disorder_realizations(&self) -> usize {
        self.disorder.as_ref().map_or(1, |d| d.realizations)
    }

    /// Hamiltonian of realization `r`, `None` without interactions.
    pub fn hamiltonian(&self, r: usize) -> Result<Option<HamiltonianSpec>, CliError> {
        if !self.model.hamiltonian {
            return Ok(None);
        }
        let n = self.model.n_sites;
        let fields = match &self.disorder {
            None => vec![0.0; n],
            Some(DisorderConfig {
                file: Some(path), ..
            }) => read_fields(path)
                .map_err(|e| CliError::from_core(e, &path.display().to_string()))?,
            Some(d) => {
                let mut rng = stream_rng(derive_seed(self.seed, &[DISORDER_STREAM]), r as u64);
                sample_disorder(n, d.w, self.model.j0, &mut rng)
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        build_disordered(n, self.model.j0, self.model.alpha, fields)
            .map(Some)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn evolver(&self, r: usize) -> Result<Evolver, CliError> {
        let h = self.hamiltonian(r)?;
        Evolver::new(self.model.n_sites, h.as_ref(), self.model.echo)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Realization tag written to outputs: `None` without disorder.
    pub fn realization_tag(&self, r: usize) -> Option<usize> {
        self.disorder.as_ref().map(|_| r)
    }

    /// SHA-256 of the canonical JSON form (output location excluded).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
