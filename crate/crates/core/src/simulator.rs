//! Monte Carlo and dynamic-programming oracles for the primal problem.
//!
//! Paths are simulated with exact exponential claim arrivals. Every path owns
//! its own ChaCha8 stream keyed by `(seed, path index)`, and the per-path
//! results are reduced sequentially, so the report does not depend on the
//! number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dual::DualField;
use crate::model::{CrraUtility, MarketModel};
use crate::primal::candidate_strategy;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Paths written by [`simulate_traces`] at most.
pub const MAX_TRACE_PATHS: usize = 100;

pub const DP_MAX_CLAIMS: usize = 2;
pub const DP_MAX_T_STEPS: usize = 64;
pub const DP_MAX_X_NODES: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("start wealth {x0} is below the feasibility threshold {threshold} at t0 = {t0}")]
    InfeasibleStart { t0: f64, x0: f64, threshold: f64 },
    #[error("dynamic program exceeds desk scale: {0}")]
    ScaleExceeded(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub n_paths: usize,
    /// Step for drift integration and strategy lookup.
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec { n_paths: 10_000, dt: 1.0 / 64.0, seed: 0, antithetic: false }
    }
}

impl SimSpec {
    pub fn validate(&self, horizon: f64) -> Result<(), SimError> {
        if self.n_paths < 100 {
            return Err(SimError::InvalidSpec(format!(
                "n_paths = {} is below 100",
                self.n_paths
            )));
        }
        if !(self.dt > 0.0 && self.dt <= horizon) {
            return Err(SimError::InvalidSpec(format!(
                "dt = {} must lie in (0, {horizon}]",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Retention levels tabulated against time and the wealth excess over the
/// feasibility threshold, `s = x - b(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackTable {
    pub times: Vec<f64>,
    /// Increasing excess nodes of each row.
    pub excess: Vec<Vec<f64>>,
    /// `theta[k][j]` at `(times[k], excess[k][j])`, in `[0, 1]`.
    pub theta: Vec<Vec<f64>>,
}

impl FeedbackTable {
    /// Tabulates the candidate strategy of a solved field.
    pub fn from_field(field: &DualField, times: &[f64], excess: &[f64]) -> Self {
        let theta = times
            .iter()
            .map(|&t| {
                let b = field.model.feasibility_threshold(t);
                excess
                    .iter()
                    .map(|&s| {
                        candidate_strategy(field, t, b + s.max(0.0))
                            .map(|p| p.theta_hat)
                            .unwrap_or(0.0)
                    })
                    .collect()
            })
            .collect();
        FeedbackTable {
            times: times.to_vec(),
            excess: vec![excess.to_vec(); times.len()],
            theta,
        }
    }

    /// Latest row at or before `t`, linear in the excess, flat outside.
    pub fn lookup(&self, t: f64, s: f64) -> f64 {
        let k = self.times.partition_point(|&tk| tk <= t).saturating_sub(1);
        let row = &self.theta[k];
        let e = &self.excess[k];
        if s <= e[0] {
            return row[0];
        }
        if s >= e[e.len() - 1] {
            return row[row.len() - 1];
        }
        let j = e.partition_point(|&node| node <= s) - 1;
        let w = (s - e[j]) / (e[j + 1] - e[j]);
        (row[j] * (1.0 - w) + row[j + 1] * w).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Constant(f64),
    Feedback(FeedbackTable),
    /// Full reinsurance, `theta = 0`.
    Zero,
    /// No reinsurance, `theta = 1`.
    Full,
}

impl Strategy {
    pub fn raw(&self, model: &MarketModel, t: f64, x: f64) -> f64 {
        match self {
            Strategy::Constant(c) => c.clamp(0.0, 1.0),
            Strategy::Feedback(table) => table.lookup(t, x - model.feasibility_threshold(t)),
            Strategy::Zero => 0.0,
            Strategy::Full => 1.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Strategy::Constant(c) => format!("constant({c})"),
            Strategy::Feedback(_) => "feedback".to_string(),
            Strategy::Zero => "zero".to_string(),
            Strategy::Full => "full".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimReport {
    pub estimate: f64,
    pub ci_half_width: f64,
    /// Paths on which the admissibility projection lowered the strategy.
    pub ruin_count: usize,
    pub paths_used: usize,
    pub seed: u64,
    /// Smallest `X - b(u)` seen at any lookup or right after any claim.
    pub min_floor_slack: f64,
    pub min_theta: f64,
    pub max_theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Start,
    Lookup,
    Claim,
    End,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Start => "start",
            TraceEvent::Lookup => "lookup",
            TraceEvent::Claim => "claim",
            TraceEvent::End => "end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub path: usize,
    pub t: f64,
    pub x: f64,
    pub theta: f64,
    pub event: TraceEvent,
}

struct PathOutcome {
    terminal: f64,
    projected: bool,
    min_slack: f64,
    min_theta: f64,
    max_theta: f64,
}

/// Uniforms on the open interval (0, 1), mirrored for antithetic partners.
struct Uniforms {
    rng: ChaCha8Rng,
    mirror: bool,
}

impl Uniforms {
    fn new(seed: u64, stream: u64, mirror: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Uniforms { rng, mirror }
    }

    fn next(&mut self) -> f64 {
        let u = ((self.rng.gen::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        if self.mirror {
            1.0 - u
        } else {
            u
        }
    }
}

struct PathSim<'a> {
    model: &'a MarketModel,
    strategy: &'a Strategy,
    t0: f64,
    x0: f64,
    dt: f64,
    delta_max: f64,
    cumulative: Vec<f64>,
}

impl<'a> PathSim<'a> {
    fn new(model: &'a MarketModel, strategy: &'a Strategy, t0: f64, x0: f64, dt: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = model
            .claims()
            .iter()
            .map(|c| {
                acc += c.prob;
                acc
            })
            .collect();
        PathSim {
            model,
            strategy,
            t0,
            x0,
            dt,
            delta_max: model.max_claim().unwrap_or(0.0),
            cumulative,
        }
    }

    /// Projects a raw retention onto `[0, min(1, (x - b(t)) / delta_max)]`.
    fn project(&self, t: f64, x: f64, raw: f64) -> f64 {
        if self.delta_max <= 0.0 {
            return raw;
        }
        let cap = ((x - self.model.feasibility_threshold(t)) / self.delta_max).clamp(0.0, 1.0);
        raw.min(cap)
    }

    fn claim_size(&self, u: f64) -> f64 {
        let claims = self.model.claims();
        let i = self.cumulative.partition_point(|&c| c < u).min(claims.len() - 1);
        claims[i].size
    }

    fn run(&self, mut rng: Uniforms, mut trace: Option<(usize, &mut Vec<TraceRow>)>) -> PathOutcome {
        let model = self.model;
        let horizon = model.horizon();
        let rate = model.intensity();
        let mut record = |t: f64, x: f64, theta: f64, event: TraceEvent| {
            if let Some((path, rows)) = trace.as_mut() {
                rows.push(TraceRow { path: *path, t, x, theta, event });
            }
        };

        let mut out = PathOutcome {
            terminal: self.x0,
            projected: false,
            min_slack: f64::INFINITY,
            min_theta: f64::INFINITY,
            max_theta: f64::NEG_INFINITY,
        };
        let lookup = |t: f64, x: f64, out: &mut PathOutcome| {
            let raw = self.strategy.raw(model, t, x);
            let theta = self.project(t, x, raw);
            if theta < raw {
                out.projected = true;
            }
            out.min_slack = out.min_slack.min(x - model.feasibility_threshold(t));
            out.min_theta = out.min_theta.min(theta);
            out.max_theta = out.max_theta.max(theta);
            theta
        };

        let mut next_claim = if rate > 0.0 {
            self.t0 - rng.next().ln() / rate
        } else {
            f64::INFINITY
        };
        // Wealth is carried as anchor + drift * (t - anchor time) so that a
        // constant drift is integrated in a single step.
        let (mut anchor_t, mut anchor_x) = (self.t0, self.x0);
        let mut theta = lookup(self.t0, self.x0, &mut out);
        let mut drift = model.alpha() - model.beta() * (1.0 - theta);
        record(self.t0, self.x0, theta, TraceEvent::Start);

        let n_steps = ((horizon - self.t0) / self.dt).ceil().max(1.0) as usize;
        for step in 1..=n_steps {
            let t_end = if step == n_steps {
                horizon
            } else {
                (self.t0 + step as f64 * self.dt).min(horizon)
            };
            while next_claim < t_end {
                let t = next_claim;
                let x = anchor_x + drift * (t - anchor_t) - theta * self.claim_size(rng.next());
                out.min_slack = out.min_slack.min(x - model.feasibility_threshold(t));
                record(t, x, theta, TraceEvent::Claim);
                anchor_t = t;
                anchor_x = x;
                let updated = lookup(t, x, &mut out);
                if updated != theta {
                    theta = updated;
                    drift = model.alpha() - model.beta() * (1.0 - theta);
                }
                next_claim = t - rng.next().ln() / rate;
            }
            let x = anchor_x + drift * (t_end - anchor_t);
            if step == n_steps {
                out.terminal = x;
                record(t_end, x, theta, TraceEvent::End);
                break;
            }
            let updated = lookup(t_end, x, &mut out);
            if updated != theta {
                anchor_t = t_end;
                anchor_x = x;
                theta = updated;
                drift = model.alpha() - model.beta() * (1.0 - theta);
            }
            record(t_end, x, theta, TraceEvent::Lookup);
        }
        out
    }
}

fn prepare<'a>(
    model: &'a MarketModel,
    strategy: &'a Strategy,
    t0: f64,
    x0: f64,
    spec: &SimSpec,
) -> Result<PathSim<'a>, SimError> {
    spec.validate(model.horizon())?;
    if !(t0 >= 0.0 && t0 < model.horizon()) {
        return Err(SimError::InvalidSpec(format!(
            "t0 = {t0} must lie in [0, {})",
            model.horizon()
        )));
    }
    let threshold = model.feasibility_threshold(t0);
    if !(x0 >= threshold) {
        return Err(SimError::InfeasibleStart { t0, x0, threshold });
    }
    Ok(PathSim::new(model, strategy, t0, x0, spec.dt))
}

/// Estimates `E[U(X_T)]` from `(t0, x0)` under `strategy`.
///
/// With antithetic sampling, paths come in mirrored pairs and the confidence
/// interval is computed from pair means.
pub fn simulate(
    model: &MarketModel,
    utility: &CrraUtility,
    strategy: &Strategy,
    t0: f64,
    x0: f64,
    spec: &SimSpec,
) -> Result<SimReport, SimError> {
    let sim = prepare(model, strategy, t0, x0, spec)?;
    let group = if spec.antithetic { 2 } else { 1 };
    let units = spec.n_paths / group;
    let outcomes: Vec<Vec<PathOutcome>> = (0..units)
        .into_par_iter()
        .map(|unit| {
            (0..group)
                .map(|m| sim.run(Uniforms::new(spec.seed, unit as u64, m == 1), None))
                .collect()
        })
        .collect();

    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut report = SimReport {
        estimate: 0.0,
        ci_half_width: 0.0,
        ruin_count: 0,
        paths_used: units * group,
        seed: spec.seed,
        min_floor_slack: f64::INFINITY,
        min_theta: f64::INFINITY,
        max_theta: f64::NEG_INFINITY,
    };
    for (n, paths) in outcomes.iter().enumerate() {
        let sample = paths.iter().map(|p| utility.u(p.terminal)).sum::<f64>() / group as f64;
        let delta = sample - mean;
        mean += delta / (n + 1) as f64;
        m2 += delta * (sample - mean);
        for p in paths {
            report.ruin_count += p.projected as usize;
            report.min_floor_slack = report.min_floor_slack.min(p.min_slack);
            report.min_theta = report.min_theta.min(p.min_theta);
            report.max_theta = report.max_theta.max(p.max_theta);
        }
    }
    report.estimate = mean;
    if units > 1 {
        let var = m2 / (units - 1) as f64;
        report.ci_half_width = Z_95 * (var / units as f64).sqrt();
    }
    Ok(report)
}

/// Event log of the first `min(n_paths, 100)` paths, with the same streams
/// as [`simulate`].
pub fn simulate_traces(
    model: &MarketModel,
    strategy: &Strategy,
    t0: f64,
    x0: f64,
    spec: &SimSpec,
) -> Result<Vec<TraceRow>, SimError> {
    let sim = prepare(model, strategy, t0, x0, spec)?;
    let mut rows = Vec::new();
    for path in 0..spec.n_paths.min(MAX_TRACE_PATHS) {
        let (unit, mirror) = if spec.antithetic { (path / 2, path % 2 == 1) } else { (path, false) };
        sim.run(Uniforms::new(spec.seed, unit as u64, mirror), Some((path, &mut rows)));
    }
    Ok(rows)
}

/// Backward-induction table of the primal value.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTable {
    pub times: Vec<f64>,
    /// `x[k]` starts at the feasibility threshold `b(times[k])`.
    pub x: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

fn interp_extrapolate(x: &[f64], v: &[f64], q: f64) -> f64 {
    let n = x.len();
    let j = x.partition_point(|&node| node <= q).clamp(1, n - 1) - 1;
    let w = (q - x[j]) / (x[j + 1] - x[j]);
    v[j] + w * (v[j + 1] - v[j])
}

impl DpTable {
    /// Value at `(times[0], x)`, linear in `x`.
    pub fn value_at_start(&self, x: f64) -> f64 {
        interp_extrapolate(&self.x[0], &self.values[0], x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpSpec {
    pub t_steps: usize,
    pub x_nodes: usize,
    pub theta_nodes: usize,
    /// Width of the wealth grid above the feasibility threshold.
    pub x_span: f64,
}

impl Default for DpSpec {
    fn default() -> Self {
        DpSpec { t_steps: 64, x_nodes: 512, theta_nodes: 101, x_span: 10.0 }
    }
}

/// Dynamic programming on the primal problem with a Bernoulli claim per step,
/// retention restricted to a uniform grid on `[0, 1]` intersected with the
/// admissible set.
pub fn brute_force_primal_dp(
    model: &MarketModel,
    utility: &CrraUtility,
    spec: &DpSpec,
) -> Result<DpTable, SimError> {
    let d = model.n_claims();
    if d > DP_MAX_CLAIMS || spec.t_steps > DP_MAX_T_STEPS || spec.x_nodes > DP_MAX_X_NODES {
        return Err(SimError::ScaleExceeded(format!(
            "d = {d}, t_steps = {}, x_nodes = {} (limits {DP_MAX_CLAIMS}, {DP_MAX_T_STEPS}, {DP_MAX_X_NODES})",
            spec.t_steps, spec.x_nodes
        )));
    }
    if spec.t_steps == 0 || spec.x_nodes < 2 || spec.theta_nodes < 2 || !(spec.x_span > 0.0) {
        return Err(SimError::InvalidSpec(format!("degenerate dp spec {spec:?}")));
    }
    let horizon = model.horizon();
    let dt = horizon / spec.t_steps as f64;
    let jump_prob = model.intensity() * dt;
    if jump_prob > 1.0 {
        return Err(SimError::ScaleExceeded(format!(
            "intensity * dt = {jump_prob} exceeds 1"
        )));
    }
    let times: Vec<f64> = (0..=spec.t_steps).map(|k| k as f64 * dt).collect();
    let x: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            let b = model.feasibility_threshold(t);
            (0..spec.x_nodes)
                .map(|j| b + spec.x_span * j as f64 / (spec.x_nodes - 1) as f64)
                .collect()
        })
        .collect();
    let thetas: Vec<f64> = (0..spec.theta_nodes)
        .map(|j| j as f64 / (spec.theta_nodes - 1) as f64)
        .collect();
    let delta_max = model.max_claim().unwrap_or(0.0);
    let (alpha, beta) = (model.alpha(), model.beta());

    let mut values = vec![Vec::new(); times.len()];
    values[spec.t_steps] = x[spec.t_steps].iter().map(|&xi| utility.u(xi)).collect();
    for k in (0..spec.t_steps).rev() {
        let (xn, vn) = (&x[k + 1], &values[k + 1]);
        let b = model.feasibility_threshold(times[k]);
        values[k] = x[k]
            .par_iter()
            .map(|&xi| {
                let cap = if delta_max > 0.0 {
                    ((xi - b) / delta_max).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                thetas
                    .iter()
                    .take_while(|&&th| th <= cap)
                    .map(|&th| {
                        let drifted = xi + (alpha - beta * (1.0 - th)) * dt;
                        let stay = interp_extrapolate(xn, vn, drifted);
                        let jump: f64 = model
                            .claims()
                            .iter()
                            .map(|c| c.prob * interp_extrapolate(xn, vn, drifted - th * c.size))
                            .sum();
                        (1.0 - jump_prob) * stay + jump_prob * jump
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    Ok(DpTable { times, x, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityProbe {
    pub y: f64,
    pub upper_bound: f64,
    /// `upper_bound - lower_bound`.
    pub gap: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub lower_bound: f64,
    pub lower_ci: f64,
    pub best_strategy: String,
    pub probes: Vec<DualityProbe>,
    pub tightest_gap: f64,
    pub tightest_y: f64,
    pub passed: bool,
}

/// Sandwiches the primal value at `(0, x0)` between the best simulated
/// candidate strategy and the dual certificates `v~(0, y) + x0 y`.
///
/// Candidates: zero, half and full retention, plus the feedback strategy
/// tabulated from the field.
pub fn weak_duality_check(
    field: &DualField,
    x0: f64,
    y_probes: &[f64],
    spec: &SimSpec,
) -> Result<DualityReport, SimError> {
    let model = &field.model;
    let utility = &field.utility;
    let horizon = model.horizon();
    let n_table = 16;
    let times: Vec<f64> = (0..n_table).map(|k| horizon * k as f64 / n_table as f64).collect();
    let excess: Vec<f64> = (0..=64).map(|j| 1e-3 * 1e4f64.powf(j as f64 / 64.0)).collect();
    let candidates = [
        Strategy::Zero,
        Strategy::Constant(0.5),
        Strategy::Full,
        Strategy::Feedback(FeedbackTable::from_field(field, &times, &excess)),
    ];
    let mut best: Option<(SimReport, String)> = None;
    for s in &candidates {
        let r = simulate(model, utility, s, 0.0, x0, spec)?;
        if best.as_ref().map_or(true, |(b, _)| r.estimate > b.estimate) {
            best = Some((r, s.label()));
        }
    }
    let (lower, label) = best.expect("at least one candidate");
    let slack = 2.0 * lower.ci_half_width + 1e-12 * (1.0 + lower.estimate.abs());
    let probes: Vec<DualityProbe> = y_probes
        .iter()
        .map(|&y| {
            let upper = field.value(0.0, y).map_or(f64::INFINITY, |v| v + x0 * y);
            let gap = upper - lower.estimate;
            DualityProbe { y, upper_bound: upper, gap, passed: gap >= -slack }
        })
        .collect();
    let (tightest_gap, tightest_y) = probes
        .iter()
        .map(|p| (p.gap, p.y))
        .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a });
    Ok(DualityReport {
        lower_bound: lower.estimate,
        lower_ci: lower.ci_half_width,
        best_strategy: label,
        passed: probes.iter().all(|p| p.passed),
        probes,
        tightest_gap,
        tightest_y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn no_claims(alpha: f64, beta: f64) -> MarketModel {
        MarketModel::new(alpha, beta, 0.0, Vec::<(f64, f64)>::new(), 1.0).unwrap()
    }

    fn half() -> CrraUtility {
        CrraUtility::new(0.5).unwrap()
    }

    #[test]
    fn deterministic_full_retention() {
        let spec = SimSpec { n_paths: 100, ..SimSpec::default() };
        let r = simulate(&no_claims(0.3, 0.1), &half(), &Strategy::Full, 0.0, 1.0, &spec).unwrap();
        assert_eq!(r.estimate, 2.0 * 1.3f64.sqrt());
        assert_eq!(r.ci_half_width, 0.0);
        assert_eq!(r.ruin_count, 0);
    }

    #[test]
    fn deterministic_zero_retention() {
        let spec = SimSpec { n_paths: 100, ..SimSpec::default() };
        let m = no_claims(0.3, 0.1);
        let r = simulate(&m, &half(), &Strategy::Zero, 0.25, 1.0, &spec).unwrap();
        assert_eq!(r.estimate, half().u(1.0 + (0.3 - 0.1) * 0.75));
        assert_eq!(r.ci_half_width, 0.0);
    }

    #[test]
    fn infeasible_start_and_bad_spec() {
        let m = no_claims(0.2, 0.5);
        let spec = SimSpec { n_paths: 100, ..SimSpec::default() };
        assert!(matches!(
            simulate(&m, &half(), &Strategy::Zero, 0.0, 0.1, &spec),
            Err(SimError::InfeasibleStart { .. })
        ));
        let bad = SimSpec { n_paths: 10, ..spec };
        assert!(matches!(
            simulate(&m, &half(), &Strategy::Zero, 0.0, 1.0, &bad),
            Err(SimError::InvalidSpec(_))
        ));
    }

    #[test]
    fn uniforms_stay_open() {
        let mut u = Uniforms::new(7, 3, false);
        for _ in 0..10_000 {
            let x = u.next();
            assert!(x > 0.0 && x < 1.0);
        }
    }

    #[test]
    fn traces_respect_floor() {
        let m = MarketModel::new(0.2, 0.5, 3.0, [(1.0, 0.5), (2.0, 0.5)], 1.0).unwrap();
        let spec = SimSpec { n_paths: 200, dt: 0.05, seed: 11, antithetic: true };
        let rows = simulate_traces(&m, &Strategy::Full, 0.0, 1.0, &spec).unwrap();
        assert!(rows.iter().any(|r| r.event == TraceEvent::Claim));
        for r in &rows {
            assert!(r.x >= m.feasibility_threshold(r.t) - 1e-12);
            assert!((0.0..=1.0).contains(&r.theta));
        }
        assert_eq!(rows.iter().filter(|r| r.event == TraceEvent::Start).count(), 100);
    }

    #[test]
    fn dp_without_claims_picks_full_retention() {
        let m = no_claims(0.3, 0.1);
        let spec = DpSpec { t_steps: 16, x_nodes: 256, theta_nodes: 11, x_span: 10.0 };
        let table = brute_force_primal_dp(&m, &half(), &spec).unwrap();
        assert_relative_eq!(table.value_at_start(1.0), half().u(1.3), max_relative = 1e-3);
    }

    #[test]
    fn dp_scale_limits() {
        let m = MarketModel::new(0.3, 0.1, 1.0, [(1.0, 0.3), (2.0, 0.3), (3.0, 0.4)], 1.0).unwrap();
        assert!(matches!(
            brute_force_primal_dp(&m, &half(), &DpSpec::default()),
            Err(SimError::ScaleExceeded(_))
        ));
        let m = no_claims(0.3, 0.1);
        let spec = DpSpec { t_steps: 65, ..DpSpec::default() };
        assert!(matches!(
            brute_force_primal_dp(&m, &half(), &spec),
            Err(SimError::ScaleExceeded(_))
        ));
    }

    #[test]
    fn feedback_lookup_interpolates() {
        let table = FeedbackTable {
            times: vec![0.0, 0.5],
            excess: vec![vec![0.0, 1.0], vec![0.0, 2.0]],
            theta: vec![vec![0.0, 1.0], vec![1.0, 1.0]],
        };
        assert_eq!(table.lookup(0.2, 0.25), 0.25);
        assert_eq!(table.lookup(0.7, 0.25), 1.0);
        assert_eq!(table.lookup(0.2, 5.0), 1.0);
    }
}
