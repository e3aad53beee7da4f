//! Experiment configuration.
//!
//! Configs are sectioned key-value TOML files; unknown keys are rejected so a
//! misspelled parameter never silently falls back to a default. Initial
//! conditions, targets and planted controls are finite sine-mode expansions,
//! written as arrays of `[mode, coefficient]` pairs, which keeps them exactly
//! representable and exactly reportable.
//!
//! ```toml
//! seed = 42
//! output = "slope.csv"
//!
//! [discretization]
//! m = 31          # interior grid points
//! k = 200         # time steps
//! t = 0.5         # horizon
//!
//! [model]
//! r = 3.0
//! theta1 = 1.0
//! sigma = 0.1     # theta2, psi_form, phi_form, drift_multiplier optional
//!
//! [noise]
//! n_modes = 4
//! beta = 1.0      # q_k = k^-beta; or an explicit q = [...] list
//!
//! [experiment]
//! kind = "ldp-slope"
//! eps = [0.5, 0.4, 0.3]
//! delta = 0.15
//! n_paths = 20000
//! x0 = [[1, 0.1]]
//! control = [[1, 1.0]]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::noise::NoiseSpec;
use crate::spaces::{Discretization, Field};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Skeleton,
    Rate,
    LdpSlope,
    ExpEstimate,
    ApproxErrors,
    ShortTime,
    ValidateModel,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Kind::Simulate => "simulate",
            Kind::Skeleton => "skeleton",
            Kind::Rate => "rate",
            Kind::LdpSlope => "ldp-slope",
            Kind::ExpEstimate => "exp-estimate",
            Kind::ApproxErrors => "approx-errors",
            Kind::ShortTime => "short-time",
            Kind::ValidateModel => "validate-model",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Interior grid points M.
    pub m: usize,
    /// Time steps K.
    pub k: usize,
    /// Horizon T.
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub n_modes: usize,
    /// Power decay q_k = k^-beta; mutually exclusive with `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Explicit multipliers, length n_modes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrivingMode {
    QPhi,
    Raw,
}

/// The experiment block; `kind` selects which of the optional parameters are
/// required, checked before any computation starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    /// Initial condition as [mode, coefficient] pairs; empty means zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<(usize, f64)>,
    /// Target field as [mode, coefficient] pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<(usize, f64)>>,
    /// Planted control, constant in time, as [mode, coefficient] pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Vec<(usize, f64)>>,
    /// Ball slack of the rate-endpoint constraint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_constraint: Option<f64>,
    /// Exponential-moment parameters gamma.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    /// Spectral ranks n swept by approx-errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes_list: Option<Vec<usize>>,
    /// Interpolation node counts N swept by approx-errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interp_list: Option<Vec<usize>>,
    /// Sample pairs for validate-model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
    /// Skeleton driving mode (default q-phi).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driving: Option<DrivingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ctrl_modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ctrl_times: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub discretization: GridSection,
    pub model: ModelSpec,
    pub noise: NoiseSection,
    pub experiment: ExperimentSection,
}

/// Parses a config text, applying `--set key=value` overrides on the raw TOML
/// tree before the typed (unknown-key rejecting) deserialization.
pub fn parse_config(text: &str, sets: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
    for s in sets {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{s}'")))?;
        let parsed = parse_override_value(raw);
        set_path(&mut table, path.trim(), parsed)?;
    }
    toml::from_str(&table.to_string()).map_err(|e| Error::Config(format!("config error: {e}")))
}

pub fn load_config(path: &Path, sets: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, sets)
}

fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {}", raw.trim());
    if let Ok(tbl) = wrapped.parse::<toml::Table>() {
        if let Some(v) = tbl.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.trim().to_string())
}

fn set_path(root: &mut toml::Table, path: &str, new: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override path '{path}'")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), new);
    Ok(())
}

/// FNV-1a fingerprint of the canonical serialized config, for the run
/// manifest. The output path is not part of the experiment identity and is
/// excluded, so redirecting a run does not change its fingerprint.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut canonical = config.clone();
    canonical.output = None;
    let text = toml::to_string(&canonical).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Validated, fully constructed experiment inputs.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub d: Discretization,
    pub model: ModelSpec,
    pub noise: NoiseSpec,
    pub x0: Field,
}

impl Resolved {
    pub fn kind(&self) -> Kind {
        self.config.experiment.kind
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn field_from_modes(&self, modes: &[(usize, f64)]) -> Result<Field> {
        Field::from_modes(modes, &self.d)
    }
}

/// Fail-fast validation: every structural constraint is checked before any
/// computation runs.
pub fn resolve(config: &ExperimentConfig) -> Result<Resolved> {
    let g = &config.discretization;
    if g.m < 3 {
        return Err(Error::Config(format!(
            "discretization.m must be >= 3, got {}",
            g.m
        )));
    }
    let d = Discretization::new(g.m, g.k, g.t)?;

    config
        .model
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;

    let ns = &config.noise;
    if ns.n_modes == 0 {
        return Err(Error::Config("noise.n_modes must be positive".into()));
    }
    if ns.n_modes > g.m {
        return Err(Error::Config(format!(
            "noise.n_modes = {} exceeds grid size m = {}",
            ns.n_modes, g.m
        )));
    }
    let noise = match (&ns.beta, &ns.q) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give exactly one of noise.beta and noise.q".into(),
            ))
        }
        (None, None) => return Err(Error::Config("give one of noise.beta or noise.q".into())),
        (Some(beta), None) => {
            NoiseSpec::power_decay(ns.n_modes, *beta).map_err(|e| Error::Config(e.to_string()))?
        }
        (None, Some(q)) => {
            if q.len() != ns.n_modes {
                return Err(Error::Config(format!(
                    "noise.q has {} entries, n_modes = {}",
                    q.len(),
                    ns.n_modes
                )));
            }
            NoiseSpec::new(q.clone()).map_err(|e| Error::Config(e.to_string()))?
        }
    };

    let e = &config.experiment;
    let need_eps = |min: usize, what: &str| -> Result<()> {
        if e.eps.len() < min {
            return Err(Error::Config(format!(
                "{} needs at least {min} entries in experiment.eps",
                what
            )));
        }
        Ok(())
    };
    let need = |present: bool, key: &str| -> Result<()> {
        if !present {
            return Err(Error::Config(format!(
                "experiment.{key} is required for kind = {}",
                e.kind
            )));
        }
        Ok(())
    };
    match e.kind {
        Kind::Simulate => {
            if e.eps.len() != 1 {
                return Err(Error::Config(
                    "simulate needs exactly one entry in experiment.eps".into(),
                ));
            }
        }
        Kind::Skeleton => {}
        Kind::Rate => {
            need(e.target.is_some(), "target")?;
        }
        Kind::LdpSlope => {
            need_eps(3, "ldp-slope")?;
            need(e.delta.is_some(), "delta")?;
            need(e.n_paths.is_some(), "n_paths")?;
            need(
                e.target.is_some() || e.control.is_some(),
                "target (or control)",
            )?;
        }
        Kind::ExpEstimate => {
            need_eps(1, "exp-estimate")?;
            need(e.gamma.is_some(), "gamma")?;
            need(e.n_paths.is_some(), "n_paths")?;
        }
        Kind::ApproxErrors => {
            if e.eps.len() != 1 {
                return Err(Error::Config(
                    "approx-errors needs exactly one entry in experiment.eps".into(),
                ));
            }
            need(e.delta.is_some(), "delta")?;
            need(e.n_paths.is_some(), "n_paths")?;
            need(e.modes_list.is_some(), "modes_list")?;
            need(e.interp_list.is_some(), "interp_list")?;
            for &n_sub in e.interp_list.as_deref().unwrap_or(&[]) {
                if n_sub == 0 || g.k % n_sub != 0 {
                    return Err(Error::Config(format!(
                        "experiment.interp_list entry {n_sub} does not divide k = {}",
                        g.k
                    )));
                }
            }
            for &n in e.modes_list.as_deref().unwrap_or(&[]) {
                if n > ns.n_modes {
                    return Err(Error::Config(format!(
                        "experiment.modes_list entry {n} exceeds noise.n_modes = {}",
                        ns.n_modes
                    )));
                }
            }
        }
        Kind::ShortTime => {
            need_eps(1, "short-time")?;
            need(e.n_paths.is_some(), "n_paths")?;
        }
        Kind::ValidateModel => {}
    }

    let x0 = Field::from_modes(&e.x0, &d).map_err(|err| Error::Config(err.to_string()))?;
    if let Some(target) = &e.target {
        Field::from_modes(target, &d).map_err(|err| Error::Config(err.to_string()))?;
    }
    if let Some(ctrl) = &e.control {
        for &(k, _) in ctrl {
            if k == 0 || k > noise.n_modes() {
                return Err(Error::Config(format!(
                    "control mode {k} outside 1..={}",
                    noise.n_modes()
                )));
            }
        }
    }

    Ok(Resolved {
        config: config.clone(),
        d,
        model: config.model,
        noise,
        x0,
    })
}
