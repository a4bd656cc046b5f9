//! Backward solver for the dual variational inequality
//!
//! ```text
//! min{ d_t v + H(t, y, v, d_y v), -d_y v } = 0,   v(T, y) = U~(y)
//! ```
//!
//! on a log-spaced `y` grid. Each time step is split into a PDE step (either
//! explicit or a policy-iteration step implicit in the local terms) followed
//! by the obstacle projection, a running minimum in increasing `y`.

use rayon::prelude::*;
use thiserror::Error;

use crate::hamiltonian::{
    minimize_node, ControlBox, HamiltonianError, HamiltonianResult, NodeProblem, ValueSlice,
};
use crate::model::{CrraUtility, MarketModel, ValidationError};

/// Largest number of interval halvings tried before reporting a CFL failure.
pub const MAX_SUBSTEP_DOUBLINGS: u32 = 6;
/// Convergence tolerance of the per-step policy iteration.
pub const POLICY_TOL: f64 = 1e-9;
pub const POLICY_MAX_ITERS: usize = 50;

/// Time-stepping variant for the PDE part of each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// `v_k = v_{k+1} + dt * H(v_{k+1})` with automatic sub-stepping.
    Explicit,
    /// Freeze the policy, solve the tridiagonal system that is implicit in
    /// the local terms, re-minimize, repeat.
    PolicyIteration,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Explicit => "explicit",
            Scheme::PolicyIteration => "policy_iteration",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(Scheme::Explicit),
            "policy_iteration" | "policy" => Ok(Scheme::PolicyIteration),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub n_y: usize,
    pub n_t: usize,
    pub cfl_safety: f64,
    pub scheme: Scheme,
    /// Relative tolerance on discrete slope increments.
    pub tol_convex: f64,
    /// `|y d_y v| <= tau_region_rel * |v|` marks a flat node.
    pub tau_region_rel: f64,
    /// The residual tolerance is `residual_factor * dt`.
    pub residual_factor: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            y_min: 1e-3,
            y_max: 1e3,
            n_y: 256,
            n_t: 256,
            cfl_safety: 0.9,
            scheme: Scheme::Explicit,
            tol_convex: 1e-8,
            tau_region_rel: 1e-6,
            residual_factor: 10.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        let mut errs = Vec::new();
        let mut bad = |msg: String| errs.push(ValidationError::BadGrid(msg));
        if !(self.y_min > 0.0 && self.y_min < 1.0) {
            bad(format!("y_min = {} must lie in (0, 1)", self.y_min));
        }
        if !(self.y_max > 1.0 && self.y_max.is_finite()) {
            bad(format!("y_max = {} must be finite and exceed 1", self.y_max));
        }
        if self.n_y < 16 {
            bad(format!("n_y = {} must be at least 16", self.n_y));
        }
        if self.n_t < 4 {
            bad(format!("n_t = {} must be at least 4", self.n_t));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            bad(format!("cfl_safety = {} must lie in (0, 1]", self.cfl_safety));
        }
        if !(self.tol_convex >= 0.0) {
            bad(format!("tol_convex = {} must be nonnegative", self.tol_convex));
        }
        if !(self.tau_region_rel >= 0.0) {
            bad(format!("tau_region_rel = {} must be nonnegative", self.tau_region_rel));
        }
        if !(self.residual_factor > 0.0) {
            bad(format!("residual_factor = {} must be positive", self.residual_factor));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Log-spaced nodes from `y_min` to `y_max` inclusive.
    pub fn y_nodes(&self) -> Vec<f64> {
        let (a, b) = (self.y_min.ln(), self.y_max.ln());
        let last = (self.n_y - 1) as f64;
        (0..self.n_y)
            .map(|k| match k {
                0 => self.y_min,
                k if k == self.n_y - 1 => self.y_max,
                k => (a + (b - a) * k as f64 / last).exp(),
            })
            .collect()
    }

    pub fn times(&self, horizon: f64) -> Vec<f64> {
        (0..=self.n_t)
            .map(|k| horizon * k as f64 / self.n_t as f64)
            .collect()
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.n_t as f64
    }

    pub fn log_step(&self) -> f64 {
        (self.y_max / self.y_min).ln() / (self.n_y - 1) as f64
    }

    pub fn residual_tolerance(&self, horizon: f64) -> f64 {
        self.residual_factor * self.dt(horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid grid: {0:?}")]
    InvalidGrid(Vec<ValidationError>),
    #[error("CFL violation at step {step}: dt = {dt:e} needs more than {max} sub-steps (stable dt = {stable_dt:e})")]
    CflViolation {
        step: usize,
        dt: f64,
        stable_dt: f64,
        max: u32,
    },
    #[error("policy iteration did not converge at step {step} after {iterations} iterations (last change {change:e})")]
    NonconvergedPolicyIteration {
        step: usize,
        iterations: usize,
        change: f64,
    },
    #[error("non-finite value at step {step}, node {node}")]
    NonfiniteValue { step: usize, node: usize },
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

/// Flag per node: which branch of the variational inequality holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// PDE branch (no-jump region).
    R1,
    /// Obstacle branch (jump region, `d_y v = 0`).
    R2,
    Both,
    Neither,
}

impl Region {
    fn from_flags(pde: bool, flat: bool) -> Self {
        match (pde, flat) {
            (true, true) => Region::Both,
            (true, false) => Region::R1,
            (false, true) => Region::R2,
            (false, false) => Region::Neither,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::R1 => "R1",
            Region::R2 => "R2",
            Region::Both => "both",
            Region::Neither => "none",
        }
    }

    pub fn is_jump(&self) -> bool {
        matches!(self, Region::R2 | Region::Both)
    }

    pub fn is_pde(&self) -> bool {
        matches!(self, Region::R1 | Region::Both)
    }
}

impl std::str::FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "R1" => Ok(Region::R1),
            "R2" => Ok(Region::R2),
            "both" => Ok(Region::Both),
            "none" => Ok(Region::Neither),
            other => Err(format!("unknown region `{other}`")),
        }
    }
}

/// Diagnostics gathered while solving.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveStats {
    /// Sub-steps used for each time interval.
    pub substeps: Vec<u32>,
    /// Policy iterations used for each time interval.
    pub policy_iterations: Vec<usize>,
    /// Nodes whose minimizer touched the lower bound of the box.
    pub floor_hits: usize,
    /// Nodes whose minimizer touched the upper bound of the box.
    pub cap_hits: usize,
}

/// The solved dual value on the full time x y grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub grid: GridSpec,
    pub model: MarketModel,
    pub utility: CrraUtility,
    pub times: Vec<f64>,
    pub slices: Vec<ValueSlice>,
    /// `controls[k][j]` is the distortion used to produce slice `k` at node `j`
    /// (for the terminal slice: the minimizer on the terminal slice itself).
    pub controls: Vec<Vec<Vec<f64>>>,
    /// Nodes where the running-minimum projection lowered the value.
    pub projected: Vec<Vec<bool>>,
    pub regions: Vec<Vec<Region>>,
    pub stats: SolveStats,
}

impl DualField {
    pub fn n_t(&self) -> usize {
        self.times.len() - 1
    }

    pub fn terminal(&self) -> &ValueSlice {
        &self.slices[self.slices.len() - 1]
    }

    /// Index of the stored slice nearest to `t`.
    pub fn nearest_slice(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &tk) in self.times.iter().enumerate() {
            if (tk - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    /// Dual value at `(t, y)` from the nearest slice.
    pub fn value(&self, t: f64, y: f64) -> Result<f64, HamiltonianError> {
        Ok(self.slices[self.nearest_slice(t)].interpolate(y)?.0)
    }

    /// Rebuilds a field from stored slices and controls, recomputing the
    /// projection flags from the data and the regions from the residuals.
    pub fn from_parts(
        model: MarketModel,
        utility: CrraUtility,
        grid: GridSpec,
        times: Vec<f64>,
        slices: Vec<ValueSlice>,
        controls: Vec<Vec<Vec<f64>>>,
    ) -> Self {
        let projected = slices
            .iter()
            .map(|s| {
                let v = s.values();
                (0..v.len()).map(|j| j > 0 && v[j] == v[j - 1]).collect()
            })
            .collect();
        let mut field = Self {
            grid,
            model,
            utility,
            times,
            slices,
            controls,
            projected,
            regions: Vec::new(),
            stats: SolveStats::default(),
        };
        field.regions = region_map(&field);
        field
    }
}

/// Running minimum in increasing `y`; returns which entries were lowered.
pub fn running_min(values: &mut [f64]) -> Vec<bool> {
    let mut active = vec![false; values.len()];
    for j in 1..values.len() {
        if values[j] > values[j - 1] {
            values[j] = values[j - 1];
            active[j] = true;
        }
    }
    active
}

/// Largest nonincreasing slice dominated by `slice`.
pub fn enforce_monotone(slice: &ValueSlice) -> ValueSlice {
    let mut v = slice.values().to_vec();
    running_min(&mut v);
    slice
        .with_values(v)
        .expect("projection preserves the grid")
}

/// Solves with terminal data `U~`.
pub fn solve(
    model: &MarketModel,
    utility: &CrraUtility,
    grid: &GridSpec,
) -> Result<DualField, SolveError> {
    solve_from_terminal(model, utility, grid, |y| utility.conjugate(y))
}

/// Solves with arbitrary terminal data (used for comparison checks).
pub fn solve_from_terminal(
    model: &MarketModel,
    utility: &CrraUtility,
    grid: &GridSpec,
    terminal: impl Fn(f64) -> f64,
) -> Result<DualField, SolveError> {
    grid.validate().map_err(SolveError::InvalidGrid)?;
    let horizon = model.horizon();
    let times = grid.times(horizon);
    let n_t = grid.n_t;
    let gamma = utility.gamma();
    let y = grid.y_nodes();
    let terminal_slice = ValueSlice::from_fn(horizon, y, gamma, terminal)?;
    if let Some(node) = terminal_slice.values().iter().position(|v| !v.is_finite()) {
        return Err(SolveError::NonfiniteValue { step: n_t, node });
    }

    let mut slices: Vec<Option<ValueSlice>> = vec![None; n_t + 1];
    let mut controls = vec![Vec::new(); n_t + 1];
    let mut projected = vec![Vec::new(); n_t + 1];
    let mut stats = SolveStats {
        substeps: vec![0; n_t],
        policy_iterations: vec![0; n_t],
        ..SolveStats::default()
    };

    let term_h = hamiltonians(&terminal_slice, model);
    controls[n_t] = term_h.iter().map(|r| r.minimizer.clone()).collect();
    projected[n_t] = vec![false; terminal_slice.len()];
    slices[n_t] = Some(terminal_slice);

    for k in (0..n_t).rev() {
        let later = slices[k + 1].as_ref().expect("filled backward");
        let dt = times[k + 1] - times[k];
        let step = match grid.scheme {
            Scheme::Explicit => explicit_step(later, model, grid, dt, k)?,
            Scheme::PolicyIteration => policy_step(later, model, dt, k)?,
        };
        stats.substeps[k] = step.substeps;
        stats.policy_iterations[k] = step.iterations;
        stats.floor_hits += step.floor_hits;
        stats.cap_hits += step.cap_hits;
        let mut values = step.values;
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(SolveError::NonfiniteValue { step: k, node });
        }
        projected[k] = running_min(&mut values);
        controls[k] = step.controls;
        let slice = ValueSlice::new(times[k], later.nodes().to_vec(), values, gamma)?;
        slices[k] = Some(slice);
    }

    let mut field = DualField {
        grid: grid.clone(),
        model: model.clone(),
        utility: *utility,
        times,
        slices: slices.into_iter().map(|s| s.expect("all filled")).collect(),
        controls,
        projected,
        regions: Vec::new(),
        stats,
    };
    field.regions = region_map(&field);
    Ok(field)
}

fn hamiltonians(slice: &ValueSlice, model: &MarketModel) -> Vec<HamiltonianResult> {
    (0..slice.len())
        .into_par_iter()
        .map(|j| {
            let bounds = ControlBox::for_node(model, slice, j);
            minimize_node(&NodeProblem::on_slice(slice, j), model, &bounds)
        })
        .collect()
}

struct StepOutput {
    values: Vec<f64>,
    controls: Vec<Vec<f64>>,
    substeps: u32,
    iterations: usize,
    floor_hits: usize,
    cap_hits: usize,
}

/// Rate `r_j` such that the explicit update is monotone for `dt * r_j <= 1`:
/// the intensity (coefficient of `v_j`) plus the upwind drift coefficient.
fn cfl_rate(slice: &ValueSlice, model: &MarketModel, j: usize, rho: &[f64]) -> f64 {
    let y = slice.nodes();
    let n = y.len();
    let h_fwd = if j + 1 < n { y[j + 1] - y[j] } else { y[j] - y[j - 1] };
    let h_bwd = if j > 0 { Some(y[j] - y[j - 1]) } else { None };
    model
        .claim_intensities()
        .iter()
        .zip(rho)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, &r)| {
            let drift = if r < 1.0 {
                (1.0 - r) * y[j] / h_fwd
            } else {
                h_bwd.map_or(0.0, |h| (r - 1.0) * y[j] / h)
            };
            pi * (1.0 + drift)
        })
        .sum()
}

fn explicit_step(
    later: &ValueSlice,
    model: &MarketModel,
    grid: &GridSpec,
    dt: f64,
    step: usize,
) -> Result<StepOutput, SolveError> {
    let total_units: u32 = 1 << MAX_SUBSTEP_DOUBLINGS;
    let mut n_sub: u32 = 1;
    let mut done_units: u32 = 0;
    let mut current = later.clone();
    let mut last_results: Vec<HamiltonianResult> = Vec::new();
    let mut floor_hits = 0;
    let mut cap_hits = 0;
    let mut used = 0;

    while done_units < total_units {
        let results = hamiltonians(&current, model);
        let max_rate = results
            .iter()
            .enumerate()
            .map(|(j, r)| cfl_rate(&current, model, j, &r.minimizer))
            .fold(0.0, f64::max);
        let stable_dt = if max_rate > 0.0 {
            grid.cfl_safety / max_rate
        } else {
            f64::INFINITY
        };
        loop {
            let sub_dt = dt / n_sub as f64;
            if sub_dt <= stable_dt * (1.0 + 1e-12) {
                break;
            }
            if n_sub >= total_units {
                return Err(SolveError::CflViolation {
                    step,
                    dt,
                    stable_dt,
                    max: total_units,
                });
            }
            n_sub *= 2;
        }
        let sub_dt = dt / n_sub as f64;
        let mut values: Vec<f64> = current
            .values()
            .iter()
            .zip(&results)
            .map(|(v, r)| v + sub_dt * r.value)
            .collect();
        done_units += total_units / n_sub;
        used += 1;
        floor_hits = results.iter().filter(|r| r.floor_hit).count();
        cap_hits = results.iter().filter(|r| r.cap_hit).count();
        if done_units < total_units {
            running_min(&mut values);
            if let Some(node) = values.iter().position(|v| !v.is_finite()) {
                return Err(SolveError::NonfiniteValue { step, node });
            }
        }
        current = current.with_values(values)?;
        last_results = results;
    }
    Ok(StepOutput {
        values: current.values().to_vec(),
        controls: last_results.into_iter().map(|r| r.minimizer).collect(),
        substeps: used,
        iterations: 0,
        floor_hits,
        cap_hits,
    })
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for j in 1..n {
        let m = diag[j] - lower[j] * c[j - 1];
        c[j] = if j + 1 < n { upper[j] / m } else { 0.0 };
        d[j] = (rhs[j] - lower[j] * d[j - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for j in (0..n - 1).rev() {
        x[j] = d[j] - c[j] * x[j + 1];
    }
    x
}

fn policy_step(
    later: &ValueSlice,
    model: &MarketModel,
    dt: f64,
    step: usize,
) -> Result<StepOutput, SolveError> {
    let y = later.nodes().to_vec();
    let n = y.len();
    let pis = model.claim_intensities();
    let mut results = hamiltonians(later, model);
    let mut iterate = later.clone();
    let mut change = f64::INFINITY;

    for iteration in 1..=POLICY_MAX_ITERS {
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for j in 0..n {
            let rho = &results[j].minimizer;
            let (bwd, fwd) = iterate.node_slopes(j);
            let mut explicit = y[j] * model.premium_term(rho);
            for (&pi, &r) in pis.iter().zip(rho) {
                if pi <= 0.0 {
                    continue;
                }
                explicit += pi * later.value_unchecked(r * y[j]);
                diag[j] += dt * pi;
                if r < 1.0 {
                    let coef = pi * (1.0 - r) * y[j];
                    if j + 1 < n {
                        let a = dt * coef / (y[j + 1] - y[j]);
                        diag[j] += a;
                        upper[j] -= a;
                    } else {
                        explicit += coef * fwd;
                    }
                } else if r > 1.0 {
                    let coef = pi * (r - 1.0) * y[j];
                    if j > 0 {
                        let a = dt * coef / (y[j] - y[j - 1]);
                        diag[j] += a;
                        lower[j] -= a;
                    } else {
                        explicit -= coef * bwd;
                    }
                }
            }
            rhs[j] = later.values()[j] + dt * explicit;
        }
        let next = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        if let Some(node) = next.iter().position(|v| !v.is_finite()) {
            return Err(SolveError::NonfiniteValue { step, node });
        }
        let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        change = next
            .iter()
            .zip(iterate.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        iterate = iterate.with_values(next)?;
        results = (0..n)
            .into_par_iter()
            .map(|j| {
                let (slope_bwd, slope_fwd) = iterate.node_slopes(j);
                let problem = NodeProblem {
                    y: y[j],
                    v_here: iterate.values()[j],
                    slope_bwd,
                    slope_fwd,
                    shifted: later,
                };
                let bounds = ControlBox::for_node(model, later, j);
                minimize_node(&problem, model, &bounds)
            })
            .collect();
        if change <= POLICY_TOL * scale {
            return Ok(StepOutput {
                values: iterate.values().to_vec(),
                floor_hits: results.iter().filter(|r| r.floor_hit).count(),
                cap_hits: results.iter().filter(|r| r.cap_hit).count(),
                controls: results.into_iter().map(|r| r.minimizer).collect(),
                substeps: 1,
                iterations: iteration,
            });
        }
    }
    Err(SolveError::NonconvergedPolicyIteration {
        step,
        iterations: POLICY_MAX_ITERS,
        change,
    })
}

/// Residual of one node of a non-terminal slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeResidual {
    pub time_index: usize,
    pub y_index: usize,
    /// `(v_{k+1} - v_k) / dt + H(v_{k+1})`.
    pub pde: f64,
    /// `-(v_j - v_{j-1}) / (y_j - y_{j-1})`.
    pub obstacle: f64,
}

impl NodeResidual {
    pub fn vi_residual(&self) -> f64 {
        self.pde.min(self.obstacle).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub max_vi_residual: f64,
    /// `(time index, y index)` of the largest residual.
    pub worst_node: Option<(usize, usize)>,
    pub monotonicity_violations: usize,
    pub convexity_violations: usize,
    /// Residuals at every interior node of every non-terminal slice,
    /// time-major then `y` ascending.
    pub nodes: Vec<NodeResidual>,
}

fn slice_pde_terms(field: &DualField, k: usize) -> Vec<f64> {
    let later = &field.slices[k + 1];
    let now = &field.slices[k];
    let dt = field.times[k + 1] - field.times[k];
    let h = hamiltonians(later, &field.model);
    h.iter()
        .zip(later.values().iter().zip(now.values()))
        .map(|(r, (v1, v0))| (v1 - v0) / dt + r.value)
        .collect()
}

/// Count of nodes where a slice increases in `y`.
pub fn monotonicity_violations(slice: &ValueSlice) -> usize {
    slice.values().windows(2).filter(|w| w[1] > w[0]).count()
}

/// Count of interior nodes where the slope decreases by more than
/// `tol * max(1, |left slope|, |right slope|)`.
pub fn convexity_violations(slice: &ValueSlice, tol: f64) -> usize {
    let (y, v) = (slice.nodes(), slice.values());
    (1..y.len() - 1)
        .filter(|&j| {
            let sl = (v[j] - v[j - 1]) / (y[j] - y[j - 1]);
            let sr = (v[j + 1] - v[j]) / (y[j + 1] - y[j]);
            sr - sl < -tol * 1f64.max(sl.abs()).max(sr.abs())
        })
        .count()
}

/// Recomputes the discrete VI residual at every interior node.
pub fn residual_check(field: &DualField) -> ResidualReport {
    let n_t = field.n_t();
    let mut nodes = Vec::new();
    for k in 0..n_t {
        let pde = slice_pde_terms(field, k);
        let slice = &field.slices[k];
        let (y, v) = (slice.nodes(), slice.values());
        for j in 1..y.len() - 1 {
            nodes.push(NodeResidual {
                time_index: k,
                y_index: j,
                pde: pde[j],
                obstacle: -(v[j] - v[j - 1]) / (y[j] - y[j - 1]),
            });
        }
    }
    let mut max_vi_residual = 0.0;
    let mut worst_node = None;
    for r in &nodes {
        let res = r.vi_residual();
        if res > max_vi_residual || (worst_node.is_none() && res.is_nan()) {
            max_vi_residual = res;
            worst_node = Some((r.time_index, r.y_index));
        }
    }
    ResidualReport {
        max_vi_residual,
        worst_node,
        monotonicity_violations: field.slices.iter().map(monotonicity_violations).sum(),
        convexity_violations: field
            .slices
            .iter()
            .map(|s| convexity_violations(s, field.grid.tol_convex))
            .sum(),
        nodes,
    }
}

/// Jump / no-jump classification of every node.
///
/// A node is in the jump region when the projection was active there or the
/// scaled slope `|y d_y v|` is below `tau_region_rel * |v|`; it is in the
/// no-jump region when the PDE residual is below `residual_factor * dt`. The
/// terminal slice carries the PDE flag by convention.
pub fn region_map(field: &DualField) -> Vec<Vec<Region>> {
    let tau_res = field.grid.residual_tolerance(field.model.horizon());
    let n_t = field.n_t();
    (0..=n_t)
        .map(|k| {
            let slice = &field.slices[k];
            let (y, v) = (slice.nodes(), slice.values());
            let pde = if k < n_t {
                slice_pde_terms(field, k)
            } else {
                vec![0.0; y.len()]
            };
            (0..y.len())
                .map(|j| {
                    let (bwd, _) = slice.node_slopes(j);
                    let flat_slope = j > 0
                        && (bwd * y[j]).abs() <= field.grid.tau_region_rel * v[j].abs();
                    let flat = field.projected[k].get(j).copied().unwrap_or(false) || flat_slope;
                    Region::from_flags(pde[j].abs() <= tau_res, flat)
                })
                .collect()
        })
        .collect()
}

/// Shape audit of a solved field against the growth and difference bounds
/// of the dual value class.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeAudit {
    pub terminal_error: f64,
    pub monotonicity_violations: usize,
    pub convexity_violations: usize,
    /// `max |v| / (y + y^{-gamma})` over all nodes.
    pub growth_constant: f64,
    pub growth_limit: f64,
    /// `max |dv| / (|dy| (1 + y_j^{-(gamma+1)} + y_{j+1}^{-(gamma+1)}))` over
    /// adjacent nodes.
    pub difference_constant: f64,
    pub difference_limit: f64,
    /// Largest excess over the constant-control bound
    /// `U~(y) + y (alpha - beta + (beta - sum delta_i pi_i)_+) (T - t)`.
    pub feasible_bound_excess: f64,
}

impl ShapeAudit {
    pub fn growth_ok(&self) -> bool {
        self.growth_constant <= self.growth_limit
    }

    pub fn difference_ok(&self) -> bool {
        self.difference_constant <= self.difference_limit
    }

    pub fn passes(&self) -> bool {
        self.terminal_error == 0.0
            && self.monotonicity_violations == 0
            && self.convexity_violations == 0
            && self.growth_ok()
            && self.difference_ok()
            && self.feasible_bound_excess <= 0.0
    }
}

/// Relative slack allowed in the constant-control bound for accumulated
/// rounding in the time sum.
pub const FEASIBLE_BOUND_RTOL: f64 = 1e-12;

pub fn shape_audit(field: &DualField) -> ShapeAudit {
    let m = &field.model;
    let u = &field.utility;
    let gamma = u.gamma();
    let horizon = m.horizon();
    let (a, b) = (m.alpha(), m.beta());
    let kappa = a - b + (b - m.expected_loss_rate()).max(0.0);

    let terminal = field.terminal();
    let terminal_error = terminal
        .nodes()
        .iter()
        .zip(terminal.values())
        .map(|(&y, &v)| (v - u.conjugate(y)).abs())
        .fold(0.0, f64::max);

    let mut growth_constant = 0.0f64;
    let mut difference_constant = 0.0f64;
    let mut feasible_bound_excess = f64::NEG_INFINITY;
    for (slice, &t) in field.slices.iter().zip(&field.times) {
        let (y, v) = (slice.nodes(), slice.values());
        for j in 0..y.len() {
            growth_constant = growth_constant.max(v[j].abs() / (y[j] + y[j].powf(-gamma)));
            let bound = u.conjugate(y[j]) + y[j] * kappa * (horizon - t);
            let slack = FEASIBLE_BOUND_RTOL * (u.conjugate(y[j]).abs() + y[j] * kappa.abs() * horizon);
            feasible_bound_excess = feasible_bound_excess.max(v[j] - bound - slack);
            if j + 1 < y.len() {
                let denom = (y[j + 1] - y[j])
                    * (1.0 + y[j].powf(-(gamma + 1.0)) + y[j + 1].powf(-(gamma + 1.0)));
                difference_constant = difference_constant.max((v[j + 1] - v[j]).abs() / denom);
            }
        }
    }
    let max_rate = a.max(b);
    ShapeAudit {
        terminal_error,
        monotonicity_violations: field.slices.iter().map(monotonicity_violations).sum(),
        convexity_violations: field
            .slices
            .iter()
            .map(|s| convexity_violations(s, field.grid.tol_convex))
            .sum(),
        growth_constant,
        growth_limit: (1.0 / gamma + max_rate * horizon) * (1.0 + 1e-9),
        difference_constant,
        difference_limit: (2f64.powf(gamma + 1.0) / gamma
            + a * horizon
            + 2.0 * (b - a).max(0.0) * horizon)
            * (1.0 + 1e-9),
        feasible_bound_excess,
    }
}
