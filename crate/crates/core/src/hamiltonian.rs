//! The nonlocal operator `A^rho` and the finite-claim Hamiltonian
//!
//! ```text
//! H(y) = inf_rho { sum_i pi_i (v(rho_i y) - v(y) - (rho_i - 1) y v'(y))
//!                  + y (alpha - beta + (beta - sum_i rho_i delta_i pi_i)_+) }
//! ```
//!
//! evaluated on a single time slice of the dual value. Off-grid values
//! `v(rho_i y)` come from piecewise-linear interpolation with a power-law
//! tail below the grid and an affine tail above it.
//!
//! The derivative inside `A^rho` is taken upwind per claim: the forward
//! difference when `rho_i < 1` and the backward difference when `rho_i > 1`.
//! This keeps every neighbour coefficient of the explicit update nonnegative.

use thiserror::Error;

use crate::model::MarketModel;

/// Default strictly positive lower bound on each intensity distortion.
pub const DEFAULT_RHO_FLOOR: f64 = 1e-6;
/// Minimum number of log-spaced seeds per one-dimensional search.
pub const N_SEEDS: usize = 33;
/// Relative tolerance of the golden-section refinement.
pub const GOLDEN_REL_TOL: f64 = 1e-8;

const MAX_LAGRANGE_ITERS: usize = 60;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HamiltonianError {
    #[error("query point y = {y} must be positive")]
    NonpositiveQuery { y: f64 },
    #[error("degenerate slice: {0}")]
    DegenerateSlice(String),
    #[error("empty control box [{floor}, {cap}]")]
    EmptyBox { floor: f64, cap: f64 },
    #[error("node index {index} out of range for {len} nodes")]
    NodeOutOfRange { index: usize, len: usize },
}

/// One time slice of the dual value on a strictly increasing positive grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSlice {
    t: f64,
    y: Vec<f64>,
    values: Vec<f64>,
    gamma: f64,
    left_coef: f64,
    right_slope: f64,
    right_intercept: f64,
    finite: bool,
}

impl ValueSlice {
    /// Builds a slice and fits both tails. `gamma` is the exponent of the
    /// left power law `c * y^{-gamma}`.
    pub fn new(
        t: f64,
        y: Vec<f64>,
        values: Vec<f64>,
        gamma: f64,
    ) -> Result<Self, HamiltonianError> {
        if y.len() < 2 || y.len() != values.len() {
            return Err(HamiltonianError::DegenerateSlice(format!(
                "{} nodes and {} values",
                y.len(),
                values.len()
            )));
        }
        if !(y[0] > 0.0) || y.windows(2).any(|w| !(w[1] > w[0])) || !y[y.len() - 1].is_finite() {
            return Err(HamiltonianError::DegenerateSlice(
                "nodes must be positive, finite and strictly increasing".into(),
            ));
        }
        let mut s = Self {
            t,
            y,
            values,
            gamma,
            left_coef: 0.0,
            right_slope: 0.0,
            right_intercept: 0.0,
            finite: false,
        };
        s.refit();
        Ok(s)
    }

    /// Samples `f` at the given nodes.
    pub fn from_fn(
        t: f64,
        y: Vec<f64>,
        gamma: f64,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, HamiltonianError> {
        let values = y.iter().map(|&y| f(y)).collect();
        Self::new(t, y, values, gamma)
    }

    /// Same grid and time, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, HamiltonianError> {
        if values.len() != self.y.len() {
            return Err(HamiltonianError::DegenerateSlice(format!(
                "expected {} values, got {}",
                self.y.len(),
                values.len()
            )));
        }
        let mut s = Self {
            values,
            ..self.clone()
        };
        s.refit();
        Ok(s)
    }

    fn refit(&mut self) {
        let n = self.y.len();
        self.finite = self.values.iter().all(|v| v.is_finite());
        self.left_coef = self.values[0] * self.y[0].powf(self.gamma);
        self.right_slope =
            (self.values[n - 1] - self.values[n - 2]) / (self.y[n - 1] - self.y[n - 2]);
        self.right_intercept = self.values[n - 1] - self.right_slope * self.y[n - 1];
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn nodes(&self) -> &[f64] {
        &self.y
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_finite(&self) -> bool {
        self.finite
    }

    pub fn y_min(&self) -> f64 {
        self.y[0]
    }

    pub fn y_max(&self) -> f64 {
        self.y[self.y.len() - 1]
    }

    /// Coefficient `c` of the left tail `c * y^{-gamma}`.
    pub fn left_tail(&self) -> f64 {
        self.left_coef
    }

    /// `(slope, intercept)` of the right affine tail.
    pub fn right_tail(&self) -> (f64, f64) {
        (self.right_slope, self.right_intercept)
    }

    /// Index `k` of the cell `[y_k, y_{k+1}]` containing `y` (clamped).
    fn cell(&self, y: f64) -> usize {
        let n = self.y.len();
        let k = self.y.partition_point(|&node| node <= y);
        k.saturating_sub(1).min(n - 2)
    }

    /// Value and one-sided derivative at `y`. Inside the grid the derivative
    /// is the slope of the containing cell (the right cell at a node).
    pub fn interpolate(&self, y: f64) -> Result<(f64, f64), HamiltonianError> {
        if !(y > 0.0) {
            return Err(HamiltonianError::NonpositiveQuery { y });
        }
        Ok(self.eval_unchecked(y))
    }

    pub(crate) fn eval_unchecked(&self, y: f64) -> (f64, f64) {
        let n = self.y.len();
        if y < self.y[0] {
            let v = self.left_coef * y.powf(-self.gamma);
            return (v, -self.gamma * v / y);
        }
        if y > self.y[n - 1] {
            return (self.right_intercept + self.right_slope * y, self.right_slope);
        }
        let k = self.cell(y);
        let (y0, y1) = (self.y[k], self.y[k + 1]);
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        let w = (y - y0) / (y1 - y0);
        (v0 * (1.0 - w) + v1 * w, (v1 - v0) / (y1 - y0))
    }

    pub(crate) fn value_unchecked(&self, y: f64) -> f64 {
        self.eval_unchecked(y).0
    }

    /// Backward and forward difference quotients at node `j`. At the first
    /// node the backward slope is that of the left tail; at the last node the
    /// forward slope is that of the right tail.
    pub fn node_slopes(&self, j: usize) -> (f64, f64) {
        let n = self.y.len();
        let bwd = if j > 0 {
            (self.values[j] - self.values[j - 1]) / (self.y[j] - self.y[j - 1])
        } else {
            -self.gamma * self.values[0] / self.y[0]
        };
        let fwd = if j + 1 < n {
            (self.values[j + 1] - self.values[j]) / (self.y[j + 1] - self.y[j])
        } else {
            self.right_slope
        };
        (bwd, fwd)
    }

    /// Central difference at interior nodes, one-sided at the ends.
    pub fn central_slope(&self, j: usize) -> f64 {
        let n = self.y.len();
        let lo = j.saturating_sub(1);
        let hi = (j + 1).min(n - 1);
        (self.values[hi] - self.values[lo]) / (self.y[hi] - self.y[lo])
    }
}

/// Compact box `[rho_floor, rho_cap]` for every coordinate of `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBox {
    rho_floor: f64,
    rho_cap: f64,
}

impl ControlBox {
    pub fn new(rho_floor: f64, rho_cap: f64) -> Result<Self, HamiltonianError> {
        if !(rho_floor > 0.0 && rho_cap > rho_floor && rho_cap.is_finite()) {
            return Err(HamiltonianError::EmptyBox {
                floor: rho_floor,
                cap: rho_cap,
            });
        }
        Ok(Self { rho_floor, rho_cap })
    }

    /// The per-node box `[1e-6, max(rho_bar, y_max / y_j, 10)]` with
    /// `rho_bar = beta / min_i(delta_i pi_i)`.
    pub fn for_node(model: &MarketModel, slice: &ValueSlice, j: usize) -> Self {
        let rho_bar = rho_bar(model);
        let cap = rho_bar.max(slice.y_max() / slice.nodes()[j]).max(10.0);
        Self {
            rho_floor: DEFAULT_RHO_FLOOR,
            rho_cap: cap,
        }
    }

    pub fn floor(&self) -> f64 {
        self.rho_floor
    }

    pub fn cap(&self) -> f64 {
        self.rho_cap
    }
}

/// `beta / min_i(delta_i pi_i)` over claims with positive intensity, or 0
/// when there are none.
pub fn rho_bar(model: &MarketModel) -> f64 {
    let min_rate = model
        .claims()
        .iter()
        .zip(model.claim_intensities())
        .map(|(c, pi)| c.size * pi)
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min);
    if min_rate.is_finite() {
        model.beta() / min_rate
    } else {
        0.0
    }
}

/// Which branch of the positive part is active at the minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `sum_i rho_i delta_i pi_i >= beta`: the positive part vanishes.
    A,
    /// `sum_i rho_i delta_i pi_i < beta`.
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianResult {
    pub value: f64,
    pub minimizer: Vec<f64>,
    pub regime: Regime,
    pub evaluations: usize,
    /// Some coordinate sits within the golden tolerance of the floor.
    pub floor_hit: bool,
    /// Some coordinate sits within the golden tolerance of the cap.
    pub cap_hit: bool,
}

/// `sum_i pi_i (v(rho_i y) - v(y) - (rho_i - 1) y p)` with a caller-supplied
/// derivative `p`.
pub fn a_rho(
    slice: &ValueSlice,
    model: &MarketModel,
    y: f64,
    p: f64,
    rho: &[f64],
) -> Result<f64, HamiltonianError> {
    let (v, _) = slice.interpolate(y)?;
    let mut acc = 0.0;
    for (pi, &r) in model.claim_intensities().iter().zip(rho) {
        let (shifted, _) = slice.interpolate(r * y)?;
        acc += pi * (shifted - v - (r - 1.0) * y * p);
    }
    Ok(acc)
}

/// The full objective `A^rho + y * premium_term(rho)` at node `j`, with the
/// upwind derivative used by the solver.
pub fn node_objective(
    slice: &ValueSlice,
    j: usize,
    model: &MarketModel,
    rho: &[f64],
) -> Result<f64, HamiltonianError> {
    if j >= slice.len() {
        return Err(HamiltonianError::NodeOutOfRange {
            index: j,
            len: slice.len(),
        });
    }
    Ok(NodeProblem::on_slice(slice, j).objective(model, rho))
}

/// Local data of one node plus the slice supplying the shifted values.
///
/// The explicit scheme takes everything from one slice; the implicit policy
/// step mixes the current iterate (local terms) with the later slice
/// (shifted values).
#[derive(Debug, Clone, Copy)]
pub(crate) struct NodeProblem<'a> {
    pub y: f64,
    pub v_here: f64,
    pub slope_bwd: f64,
    pub slope_fwd: f64,
    pub shifted: &'a ValueSlice,
}

impl<'a> NodeProblem<'a> {
    pub fn on_slice(slice: &'a ValueSlice, j: usize) -> Self {
        let (slope_bwd, slope_fwd) = slice.node_slopes(j);
        Self {
            y: slice.nodes()[j],
            v_here: slice.values()[j],
            slope_bwd,
            slope_fwd,
            shifted: slice,
        }
    }

    /// Contribution of one claim with intensity `pi` to `A^rho`.
    #[inline]
    pub fn claim_term(&self, pi: f64, rho: f64) -> f64 {
        let p = if rho < 1.0 {
            self.slope_fwd
        } else {
            self.slope_bwd
        };
        pi * (self.shifted.value_unchecked(rho * self.y) - self.v_here - (rho - 1.0) * self.y * p)
    }

    pub fn objective(&self, model: &MarketModel, rho: &[f64]) -> f64 {
        let a: f64 = model
            .claim_intensities()
            .iter()
            .zip(rho)
            .map(|(&pi, &r)| if pi > 0.0 { self.claim_term(pi, r) } else { 0.0 })
            .sum();
        a + self.y * model.premium_term(rho)
    }
}

/// Minimizes the Hamiltonian objective at node `j` of `slice` over `bounds`.
pub fn minimize_hamiltonian(
    slice: &ValueSlice,
    j: usize,
    model: &MarketModel,
    bounds: &ControlBox,
) -> Result<HamiltonianResult, HamiltonianError> {
    if !slice.is_finite() {
        return Err(HamiltonianError::DegenerateSlice(
            "non-finite values".into(),
        ));
    }
    if j >= slice.len() {
        return Err(HamiltonianError::NodeOutOfRange {
            index: j,
            len: slice.len(),
        });
    }
    ControlBox::new(bounds.floor(), bounds.cap())?;
    Ok(minimize_node(&NodeProblem::on_slice(slice, j), model, bounds))
}

/// Seeded golden-section search of a scalar function over `[lo, hi]` in
/// log coordinates. Returns `(argmin, min, evaluations)`.
///
/// Seeds within `tie_tol` of the best value are treated as ties and resolved
/// toward `rho = 1`; the refinement only replaces the seed when it improves
/// by more than `tie_tol`.
pub(crate) fn seeded_golden(
    lo: f64,
    hi: f64,
    tie_tol: f64,
    f: impl Fn(f64) -> f64,
) -> (f64, f64, usize) {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let mut seeds: Vec<f64> = (0..N_SEEDS)
        .map(|k| llo + (lhi - llo) * k as f64 / (N_SEEDS - 1) as f64)
        .collect();
    if lo < 1.0 && hi > 1.0 {
        let at = seeds.partition_point(|&s| s < 0.0);
        seeds.insert(at, 0.0);
    }
    let mut evals = 0;
    let g = |s: f64, evals: &mut usize| {
        *evals += 1;
        f(s.exp())
    };
    let vals: Vec<f64> = seeds.iter().map(|&s| g(s, &mut evals)).collect();
    let vmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let mut k = 0;
    let mut k_dist = f64::INFINITY;
    for (i, v) in vals.iter().enumerate() {
        if *v <= vmin + tie_tol && seeds[i].abs() < k_dist {
            k = i;
            k_dist = seeds[i].abs();
        }
    }
    let (mut best_s, mut best_v) = (seeds[k], vals[k]);

    let mut a = seeds[k.saturating_sub(1)];
    let mut b = seeds[(k + 1).min(seeds.len() - 1)];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = g(c, &mut evals);
    let mut fd = g(d, &mut evals);
    while b - a > GOLDEN_REL_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = g(c, &mut evals);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = g(d, &mut evals);
        }
    }
    for (s, v) in [(c, fc), (d, fd)] {
        if v < best_v - tie_tol {
            best_s = s;
            best_v = v;
        }
    }
    (best_s.exp(), best_v, evals)
}

/// Relative size of objective differences treated as rounding ties.
const TIE_RTOL: f64 = 1e-12;

pub(crate) fn minimize_node(
    problem: &NodeProblem<'_>,
    model: &MarketModel,
    bounds: &ControlBox,
) -> HamiltonianResult {
    let d = model.n_claims();
    let pis = model.claim_intensities();
    let weights: Vec<f64> = model
        .claims()
        .iter()
        .zip(pis)
        .map(|(c, pi)| c.size * pi)
        .collect();
    let active: Vec<usize> = (0..d).filter(|&i| pis[i] > 0.0).collect();
    let beta = model.beta();
    let y = problem.y;
    let mut evaluations = 0;

    let tilted = |rho: &[f64]| -> f64 { rho.iter().zip(&weights).map(|(r, w)| r * w).sum() };
    let scale = active
        .iter()
        .map(|&i| pis[i] * (problem.v_here.abs() + y * problem.slope_bwd.abs().max(problem.slope_fwd.abs())))
        .sum::<f64>()
        + y * (model.alpha().abs() + beta.abs());
    let tie_tol = TIE_RTOL * scale;

    // Separable minimization of sum_i [A_i(rho_i) - lambda w_i rho_i].
    let separable = |lambda: f64, evaluations: &mut usize| -> Vec<f64> {
        let mut rho = vec![1.0; d];
        for &i in &active {
            let (r, _, n) = seeded_golden(bounds.floor(), bounds.cap(), tie_tol, |r| {
                problem.claim_term(pis[i], r) - lambda * weights[i] * r
            });
            rho[i] = r;
            *evaluations += n;
        }
        rho
    };

    let mut candidates = vec![vec![1.0; d]];
    if !active.is_empty() {
        let rho_a = separable(0.0, &mut evaluations);
        let rho_b = separable(y, &mut evaluations);
        let (s_a, s_b) = (tilted(&rho_a), tilted(&rho_b));
        if s_a < beta && s_b > beta && active.len() == 1 {
            // A single active claim pins the constrained point.
            let i = active[0];
            let mut rho = vec![1.0; d];
            rho[i] = (beta / weights[i]).clamp(bounds.floor(), bounds.cap());
            candidates.push(rho);
        } else if s_a < beta && s_b > beta {
            // Both unconstrained optima violate their own regime, so the
            // optimum lies on sum rho_i w_i = beta: bisect the multiplier.
            let (mut lo, mut hi) = (0.0, y);
            let (mut rho_lo, mut rho_hi) = (rho_a.clone(), rho_b.clone());
            for _ in 0..MAX_LAGRANGE_ITERS {
                if hi - lo <= 1e-12 * y {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let r = separable(mid, &mut evaluations);
                if tilted(&r) >= beta {
                    hi = mid;
                    rho_hi = r;
                } else {
                    lo = mid;
                    rho_lo = r;
                }
            }
            let (s_lo, s_hi) = (tilted(&rho_lo), tilted(&rho_hi));
            if s_hi > s_lo {
                let tau = (beta - s_lo) / (s_hi - s_lo);
                let mixed: Vec<f64> = rho_lo
                    .iter()
                    .zip(&rho_hi)
                    .map(|(l, h)| (l + tau * (h - l)).clamp(bounds.floor(), bounds.cap()))
                    .collect();
                candidates.push(mixed);
            }
            candidates.push(rho_hi);
        }
        candidates.push(rho_a);
        candidates.push(rho_b);
    }

    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for (k, rho) in candidates.iter().enumerate() {
        evaluations += 1;
        let v = problem.objective(model, rho);
        if k == 0 || v < best_value - tie_tol {
            best_value = v;
            best = k;
        }
    }
    let minimizer = candidates.swap_remove(best);
    let regime = if tilted(&minimizer) >= beta {
        Regime::A
    } else {
        Regime::B
    };
    let floor_hit = active
        .iter()
        .any(|&i| minimizer[i] <= bounds.floor() * (1.0 + 1e-6));
    let cap_hit = active
        .iter()
        .any(|&i| minimizer[i] >= bounds.cap() * (1.0 - 1e-6));
    HamiltonianResult {
        value: best_value,
        minimizer,
        regime,
        evaluations,
        floor_hit,
        cap_hit,
    }
}
