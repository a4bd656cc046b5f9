//! Line-oriented `key = value` configuration.
//!
//! Keys carry a section prefix (`model.`, `utility.`, `grid.`, `sim.`) except
//! for the top-level `seed`. Blank lines and `#` comments are ignored. The
//! claim menu is written `model.claims = delta:prob, delta:prob, ...`.
//!
//! ```text
//! model.alpha = 0.4
//! model.beta = 0.3
//! model.intensity = 1
//! model.claims = 1.0:1.0
//! model.horizon = 1
//! utility.eta = 0.5
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

use crate::dual::{GridSpec, Scheme};
use crate::model::{CrraUtility, MarketModel, ValidationError, ValidationErrors};
use crate::simulator::{DpSpec, SimSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(ValidationErrors),
}

const KEYS: &[&str] = &[
    "seed",
    "model.alpha",
    "model.beta",
    "model.intensity",
    "model.claims",
    "model.horizon",
    "utility.eta",
    "grid.y_min",
    "grid.y_max",
    "grid.n_y",
    "grid.n_t",
    "grid.cfl_safety",
    "grid.scheme",
    "grid.tol_convex",
    "grid.tau_region_rel",
    "grid.residual_factor",
    "grid.x_max",
    "grid.n_x",
    "sim.n_paths",
    "sim.dt",
    "sim.antithetic",
    "sim.t0",
    "sim.x0",
    "sim.y_probes",
    "sim.dp_t_steps",
    "sim.dp_x_nodes",
    "sim.dp_theta_nodes",
    "sim.dp_x_span",
    "sim.dp_rel_tol",
    "sim.duality_rel_gap",
];

/// Parsed but not yet validated entries, with their line numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(ConfigError::Parse { line, message: format!("unknown key `{key}`") });
            }
            if let Some((_, first)) = entries.get(key) {
                return Err(ConfigError::Parse {
                    line,
                    message: format!("`{key}` already set on line {first}"),
                });
            }
            entries.insert(key.to_string(), (value.to_string(), line));
        }
        Ok(RawConfig { entries })
    }

    /// Sets or replaces a key, as if written on line 0.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| ConfigError::Parse {
                line: *line,
                message: format!("cannot parse `{v}` for `{key}`"),
            }),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn required(&self, key: &str) -> Result<f64, ConfigError> {
        self.get(key)?.ok_or_else(|| ConfigError::Parse {
            line: 0,
            message: format!("missing required key `{key}`"),
        })
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| ConfigError::Parse {
                    line: *line,
                    message: format!("cannot parse `{}` in `{key}`", s.trim()),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn claims(&self) -> Result<Vec<(f64, f64)>, ConfigError> {
        let Some((v, line)) = self.entries.get("model.claims") else {
            return Ok(Vec::new());
        };
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|item| {
                let bad = || ConfigError::Parse {
                    line: *line,
                    message: format!("claim `{}` is not `delta:prob`", item.trim()),
                };
                let (d, p) = item.split_once(':').ok_or_else(bad)?;
                Ok((
                    d.trim().parse().map_err(|_| bad())?,
                    p.trim().parse().map_err(|_| bad())?,
                ))
            })
            .collect()
    }
}

/// Wealth grid for primal exports: `n_x` points from just above `b(t)` to
/// `x_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WealthGrid {
    pub x_max: f64,
    pub n_x: usize,
}

impl WealthGrid {
    pub fn nodes(&self, threshold: f64) -> Vec<f64> {
        let h = (self.x_max - threshold) / self.n_x as f64;
        (1..=self.n_x).map(|j| threshold + h * j as f64).collect()
    }
}

/// Tolerances of the two-oracle and duality checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    pub dp: DpSpec,
    pub dp_rel_tol: f64,
    pub duality_rel_gap: f64,
    pub y_probes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub model: MarketModel,
    pub utility: CrraUtility,
    pub grid: GridSpec,
    pub sim: SimSpec,
    pub t0: f64,
    pub x0: f64,
    pub wealth: WealthGrid,
    pub checks: CheckSpec,
    pub seed: u64,
}

impl ProblemConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    /// Builds and validates, collecting every invariant violation.
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let d = GridSpec::default();
        let scheme: Scheme = raw.or("grid.scheme", Scheme::Explicit)?;
        let grid = GridSpec {
            y_min: raw.or("grid.y_min", d.y_min)?,
            y_max: raw.or("grid.y_max", d.y_max)?,
            n_y: raw.or("grid.n_y", d.n_y)?,
            n_t: raw.or("grid.n_t", d.n_t)?,
            cfl_safety: raw.or("grid.cfl_safety", d.cfl_safety)?,
            scheme,
            tol_convex: raw.or("grid.tol_convex", d.tol_convex)?,
            tau_region_rel: raw.or("grid.tau_region_rel", d.tau_region_rel)?,
            residual_factor: raw.or("grid.residual_factor", d.residual_factor)?,
        };
        let seed: u64 = raw.or("seed", 0)?;
        let s = SimSpec::default();
        let dp = DpSpec::default();
        let alpha = raw.required("model.alpha")?;
        let beta = raw.required("model.beta")?;
        let intensity = raw.required("model.intensity")?;
        let horizon = raw.required("model.horizon")?;
        let eta = raw.required("utility.eta")?;
        let claims = raw.claims()?;
        let sim = SimSpec {
            n_paths: raw.or("sim.n_paths", s.n_paths)?,
            dt: raw.or("sim.dt", s.dt)?,
            seed,
            antithetic: raw.or("sim.antithetic", s.antithetic)?,
        };
        let t0: f64 = raw.or("sim.t0", 0.0)?;
        let x0: f64 = raw.or("sim.x0", 2.0)?;
        let wealth = WealthGrid { x_max: raw.or("grid.x_max", 10.0)?, n_x: raw.or("grid.n_x", 64)? };
        let checks = CheckSpec {
            dp: DpSpec {
                t_steps: raw.or("sim.dp_t_steps", dp.t_steps)?,
                x_nodes: raw.or("sim.dp_x_nodes", dp.x_nodes)?,
                theta_nodes: raw.or("sim.dp_theta_nodes", dp.theta_nodes)?,
                x_span: raw.or("sim.dp_x_span", dp.x_span)?,
            },
            dp_rel_tol: raw.or("sim.dp_rel_tol", 0.05)?,
            duality_rel_gap: raw.or("sim.duality_rel_gap", 0.10)?,
            y_probes: raw
                .list("sim.y_probes")?
                .unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 5.0]),
        };

        let mut errs = Vec::new();
        let model = MarketModel::new(alpha, beta, intensity, claims, horizon)
            .map_err(|e| errs.extend(e.0))
            .ok();
        let utility = CrraUtility::new(eta).map_err(|e| errs.push(e)).ok();
        if let Err(e) = grid.validate() {
            errs.extend(e);
        }
        if horizon > 0.0 {
            if let Err(e) = sim.validate(horizon) {
                errs.push(ValidationError::BadSim(e.to_string()));
            }
        }
        if !(wealth.n_x >= 2 && wealth.x_max > 0.0) {
            errs.push(ValidationError::BadGrid(format!(
                "wealth grid needs n_x >= 2 and x_max > 0 (got {}, {})",
                wealth.n_x, wealth.x_max
            )));
        }
        if checks.y_probes.iter().any(|&y| !(y > 0.0)) {
            errs.push(ValidationError::BadSim("y_probes must be positive".into()));
        }
        if let Some(m) = &model {
            if !(t0 >= 0.0 && t0 < horizon) {
                errs.push(ValidationError::BadStart(format!("t0 = {t0} must lie in [0, {horizon})")));
            } else if !(x0 >= m.feasibility_threshold(t0)) {
                errs.push(ValidationError::BadStart(format!(
                    "x0 = {x0} is below the feasibility threshold {}",
                    m.feasibility_threshold(t0)
                )));
            }
            if wealth.x_max <= m.feasibility_threshold(0.0) {
                errs.push(ValidationError::BadGrid(format!(
                    "x_max = {} must exceed the feasibility threshold {}",
                    wealth.x_max,
                    m.feasibility_threshold(0.0)
                )));
            }
        }
        match (model, utility) {
            (Some(model), Some(utility)) if errs.is_empty() => Ok(ProblemConfig {
                model,
                utility,
                grid,
                sim,
                t0,
                x0,
                wealth,
                checks,
                seed,
            }),
            _ => Err(ConfigError::Invalid(ValidationErrors(errs))),
        }
    }

    /// Every effective setting as `key = value`, defaults included.
    pub fn effective_settings(&self) -> Vec<(String, String)> {
        let m = &self.model;
        let claims = m
            .claims()
            .iter()
            .map(|c| format!("{}:{}", c.size, c.prob))
            .collect::<Vec<_>>()
            .join(", ");
        let probes = self
            .checks
            .y_probes
            .iter()
            .map(|y| y.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let g = &self.grid;
        let dp = &self.checks.dp;
        [
            ("seed", self.seed.to_string()),
            ("model.alpha", m.alpha().to_string()),
            ("model.beta", m.beta().to_string()),
            ("model.intensity", m.intensity().to_string()),
            ("model.claims", claims),
            ("model.horizon", m.horizon().to_string()),
            ("utility.eta", self.utility.eta().to_string()),
            ("grid.y_min", g.y_min.to_string()),
            ("grid.y_max", g.y_max.to_string()),
            ("grid.n_y", g.n_y.to_string()),
            ("grid.n_t", g.n_t.to_string()),
            ("grid.cfl_safety", g.cfl_safety.to_string()),
            ("grid.scheme", g.scheme.as_str().to_string()),
            ("grid.tol_convex", g.tol_convex.to_string()),
            ("grid.tau_region_rel", g.tau_region_rel.to_string()),
            ("grid.residual_factor", g.residual_factor.to_string()),
            ("grid.x_max", self.wealth.x_max.to_string()),
            ("grid.n_x", self.wealth.n_x.to_string()),
            ("sim.n_paths", self.sim.n_paths.to_string()),
            ("sim.dt", self.sim.dt.to_string()),
            ("sim.antithetic", self.sim.antithetic.to_string()),
            ("sim.t0", self.t0.to_string()),
            ("sim.x0", self.x0.to_string()),
            ("sim.y_probes", probes),
            ("sim.dp_t_steps", dp.t_steps.to_string()),
            ("sim.dp_x_nodes", dp.x_nodes.to_string()),
            ("sim.dp_theta_nodes", dp.theta_nodes.to_string()),
            ("sim.dp_x_span", dp.x_span.to_string()),
            ("sim.dp_rel_tol", self.checks.dp_rel_tol.to_string()),
            ("sim.duality_rel_gap", self.checks.duality_rel_gap.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
