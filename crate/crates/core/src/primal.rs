//! Primal recovery by conjugate duality.
//!
//! The primal value is the lower envelope `v(t, x) = min_y [v~(t, y) + x y]`
//! of the dual slice, the optimal wealth attached to a dual state is
//! `x*(t, y) = -d_y v~(t, y)`, and a candidate retention level is read off by
//! matching the wealth jump at each claim against the dual-state jump
//! `y -> rho_i y`.
//!
//! The strategy extraction is a heuristic: it reports a consistency score
//! (the spread of the per-claim retention estimates) instead of a
//! verification certificate.

use thiserror::Error;

use crate::dual::DualField;
use crate::hamiltonian::ValueSlice;

/// Strategies whose per-claim estimates disagree by more than this are
/// reported as unreliable.
pub const CONSISTENCY_LIMIT: f64 = 0.1;

const GOLDEN_ITERS: usize = 80;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrimalError {
    #[error("wealth {x} is below the feasibility threshold {threshold} at t = {t}")]
    InfeasibleWealth { t: f64, x: f64, threshold: f64 },
}

/// Result of one Legendre evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendrePoint {
    pub v: f64,
    pub y_star: f64,
    /// The minimizer sits on the first or last grid node.
    pub boundary: bool,
    pub slice_index: usize,
    /// `t - times[slice_index]`.
    pub time_offset: f64,
}

fn check_feasible(field: &DualField, t: f64, x: f64) -> Result<(), PrimalError> {
    let threshold = field.model.feasibility_threshold(t);
    if x < threshold - 1e-12 * (1.0 + threshold) {
        return Err(PrimalError::InfeasibleWealth { t, x, threshold });
    }
    Ok(())
}

/// `min_y [v~(t, y) + x y]` on one slice: grid minimum, then golden-section
/// on the quadratic through the bracketing nodes.
pub fn legendre_on_slice(slice: &ValueSlice, x: f64) -> (f64, f64, bool) {
    let (y, v) = (slice.nodes(), slice.values());
    let n = y.len();
    let mut j = 0;
    let mut best = v[0] + x * y[0];
    for k in 1..n {
        let c = v[k] + x * y[k];
        if c < best {
            best = c;
            j = k;
        }
    }
    if j == 0 || j == n - 1 {
        return (best, y[j], true);
    }

    let (y0, y1, y2) = (y[j - 1], y[j], y[j + 1]);
    let (v0, v1, v2) = (v[j - 1], v[j], v[j + 1]);
    let quad = |s: f64| {
        v0 * (s - y1) * (s - y2) / ((y0 - y1) * (y0 - y2))
            + v1 * (s - y0) * (s - y2) / ((y1 - y0) * (y1 - y2))
            + v2 * (s - y0) * (s - y1) / ((y2 - y0) * (y2 - y1))
            + x * s
    };
    let (mut a, mut b) = (y0, y2);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (quad(c), quad(d));
    for _ in 0..GOLDEN_ITERS {
        if b - a <= 1e-12 * y1 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = quad(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = quad(d);
        }
    }
    let (s, fs) = if fc <= fd { (c, fc) } else { (d, fd) };
    if fs < best {
        (fs, s, false)
    } else {
        (best, y1, false)
    }
}

/// Primal value and minimizing dual state at `(t, x)`, using the slice
/// nearest to `t`.
pub fn legendre(field: &DualField, t: f64, x: f64) -> Result<LegendrePoint, PrimalError> {
    check_feasible(field, t, x)?;
    let k = field.nearest_slice(t);
    let (v, y_star, boundary) = legendre_on_slice(&field.slices[k], x);
    Ok(LegendrePoint {
        v,
        y_star,
        boundary,
        slice_index: k,
        time_offset: t - field.times[k],
    })
}

/// `-d_y v~` on one slice: central differences at the nodes, linear in
/// between, tail derivatives outside the grid.
pub fn wealth_on_slice(slice: &ValueSlice, y: f64) -> f64 {
    let nodes = slice.nodes();
    let n = nodes.len();
    if y < nodes[0] || y > nodes[n - 1] {
        let (_, slope) = slice
            .interpolate(y)
            .expect("wealth map queried at a positive dual state");
        return -slope;
    }
    let k = nodes.partition_point(|&node| node <= y).saturating_sub(1).min(n - 2);
    let w = (y - nodes[k]) / (nodes[k + 1] - nodes[k]);
    -(slice.central_slope(k) * (1.0 - w) + slice.central_slope(k + 1) * w)
}

/// Optimal wealth `x*(t, y) = -d_y v~(t, y)` from the nearest slice.
pub fn optimal_wealth_map(field: &DualField, t: f64, y: f64) -> f64 {
    wealth_on_slice(&field.slices[field.nearest_slice(t)], y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPoint {
    /// Retention fraction in `[0, 1]`.
    pub theta_hat: f64,
    /// `max_i |theta_i - theta_hat|`.
    pub consistency: f64,
    /// Unclamped per-claim estimates (one per claim, 0 for inactive ones).
    pub per_claim: Vec<f64>,
    pub y_star: f64,
}

impl StrategyPoint {
    pub fn reliable(&self) -> bool {
        self.consistency <= CONSISTENCY_LIMIT
    }
}

/// Candidate retention at `(t, x)` by jump matching:
/// `theta_i = (x*(y*) - x*(rho_i y*)) / delta_i`, averaged with weights
/// `pi_i` and clamped to `[0, 1]`.
pub fn candidate_strategy(
    field: &DualField,
    t: f64,
    x: f64,
) -> Result<StrategyPoint, PrimalError> {
    let point = legendre(field, t, x)?;
    let model = &field.model;
    let pis = model.claim_intensities();
    let total: f64 = pis.iter().sum();
    let d = model.n_claims();
    if total <= 0.0 {
        return Ok(StrategyPoint {
            theta_hat: 1.0,
            consistency: 0.0,
            per_claim: vec![0.0; d],
            y_star: point.y_star,
        });
    }
    let k = point.slice_index;
    let slice = &field.slices[k];
    let nodes = slice.nodes();
    let log_star = point.y_star.ln();
    let j = (0..nodes.len())
        .min_by(|&a, &b| {
            (nodes[a].ln() - log_star)
                .abs()
                .total_cmp(&(nodes[b].ln() - log_star).abs())
        })
        .expect("slice has nodes");
    let rho = &field.controls[k][j];
    let x_here = wealth_on_slice(slice, point.y_star);
    let per_claim: Vec<f64> = model
        .claims()
        .iter()
        .zip(pis)
        .zip(rho)
        .map(|((c, &pi), &r)| {
            if pi > 0.0 {
                (x_here - wealth_on_slice(slice, r * point.y_star)) / c.size
            } else {
                0.0
            }
        })
        .collect();
    let mean = per_claim.iter().zip(pis).map(|(th, pi)| th * pi).sum::<f64>() / total;
    let theta_hat = mean.clamp(0.0, 1.0);
    let consistency = per_claim
        .iter()
        .zip(pis)
        .filter(|(_, &pi)| pi > 0.0)
        .map(|(th, _)| (th - theta_hat).abs())
        .fold(0.0, f64::max);
    Ok(StrategyPoint {
        theta_hat,
        consistency,
        per_claim,
        y_star: point.y_star,
    })
}

/// The primal value, dual minimizer and candidate strategy over a wealth grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSlice {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub y_star: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub consistency: Vec<f64>,
    pub boundary: Vec<bool>,
}

impl PrimalSlice {
    /// Count of nodes where `v` decreases in `x`.
    pub fn monotonicity_violations(&self, tol: f64) -> usize {
        self.v
            .windows(2)
            .filter(|w| w[1] < w[0] - tol * (1.0 + w[0].abs()))
            .count()
    }

    /// Count of interior nodes where the slope increases (concavity breaks)
    /// beyond `tol` relative to the local slope scale.
    pub fn concavity_violations(&self, tol: f64) -> usize {
        let (x, v) = (&self.x, &self.v);
        (1..x.len().saturating_sub(1))
            .filter(|&j| {
                let sl = (v[j] - v[j - 1]) / (x[j] - x[j - 1]);
                let sr = (v[j + 1] - v[j]) / (x[j + 1] - x[j]);
                sr - sl > tol * 1f64.max(sl.abs()).max(sr.abs())
            })
            .count()
    }

    pub fn max_consistency(&self) -> f64 {
        self.consistency.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluates [`legendre`] and [`candidate_strategy`] at every wealth node.
pub fn primal_slice(field: &DualField, t: f64, x: &[f64]) -> Result<PrimalSlice, PrimalError> {
    let mut out = PrimalSlice {
        t,
        x: x.to_vec(),
        v: Vec::with_capacity(x.len()),
        y_star: Vec::with_capacity(x.len()),
        theta_hat: Vec::with_capacity(x.len()),
        consistency: Vec::with_capacity(x.len()),
        boundary: Vec::with_capacity(x.len()),
    };
    for &xi in x {
        let p = legendre(field, t, xi)?;
        let s = candidate_strategy(field, t, xi)?;
        out.v.push(p.v);
        out.y_star.push(p.y_star);
        out.boundary.push(p.boundary);
        out.theta_hat.push(s.theta_hat);
        out.consistency.push(s.consistency);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve, GridSpec};
    use crate::model::{CrraUtility, MarketModel};
    use approx::assert_relative_eq;

    fn no_claims_field() -> DualField {
        let m = MarketModel::new(0.3, 0.1, 0.0, Vec::<(f64, f64)>::new(), 1.0).unwrap();
        let u = CrraUtility::new(0.5).unwrap();
        solve(&m, &u, &GridSpec { n_t: 32, ..GridSpec::default() }).unwrap()
    }

    #[test]
    fn terminal_biconjugate_at_one() {
        let f = no_claims_field();
        let p = legendre(&f, 1.0, 1.0).unwrap();
        assert_relative_eq!(p.v, 2.0, max_relative = 1e-4);
        assert_relative_eq!(p.y_star, 1.0, max_relative = 1e-3);
        assert!(!p.boundary);
    }

    #[test]
    fn huge_wealth_pins_to_grid_edge() {
        let f = no_claims_field();
        let steepest = -f.slices[0].node_slopes(1).0;
        let p = legendre(&f, 0.0, 2.0 * steepest).unwrap();
        assert!(p.boundary);
        assert_eq!(p.y_star, f.slices[0].y_min());
    }

    #[test]
    fn infeasible_wealth_rejected() {
        let m = MarketModel::new(0.2, 0.5, 0.0, Vec::<(f64, f64)>::new(), 1.0).unwrap();
        let u = CrraUtility::new(0.5).unwrap();
        let f = solve(&m, &u, &GridSpec { n_t: 8, n_y: 64, ..GridSpec::default() }).unwrap();
        assert!(matches!(
            legendre(&f, 0.0, 0.2),
            Err(PrimalError::InfeasibleWealth { .. })
        ));
        assert!(legendre(&f, 0.0, 0.31).is_ok());
    }

    #[test]
    fn wealth_map_on_terminal_slice() {
        let f = no_claims_field();
        let u = f.utility;
        for &y in &[0.05, 0.5, 3.0] {
            let x = optimal_wealth_map(&f, 1.0, y);
            assert_relative_eq!(x, u.inverse_marginal(y), max_relative = 5e-3);
        }
    }

    #[test]
    fn wealth_map_matches_closed_form_derivative() {
        let f = no_claims_field();
        assert_relative_eq!(optimal_wealth_map(&f, 0.0, 1.0), 0.7, max_relative = 5e-3);
        for s in &f.slices {
            for &y in s.nodes() {
                assert!(wealth_on_slice(s, y) >= 0.0);
            }
        }
    }

    #[test]
    fn no_claims_defaults_to_full_retention() {
        let f = no_claims_field();
        let s = candidate_strategy(&f, 0.0, 1.0).unwrap();
        assert_eq!(s.theta_hat, 1.0);
        assert_eq!(s.consistency, 0.0);
    }

    #[test]
    fn unit_distortion_gives_zero_retention() {
        let m = MarketModel::new(0.4, 0.3, 1.0, [(1.0, 1.0)], 1.0).unwrap();
        let u = CrraUtility::new(0.5).unwrap();
        let f = solve(&m, &u, &GridSpec { n_t: 16, n_y: 128, ..GridSpec::default() }).unwrap();
        let s = candidate_strategy(&f, 0.0, 2.0).unwrap();
        let k = f.nearest_slice(0.0);
        let j = f.slices[k].nodes().partition_point(|&n| n < s.y_star);
        assert_eq!(f.controls[k][j.min(f.slices[k].len() - 1)], vec![1.0]);
        assert_eq!(s.per_claim, vec![0.0]);
        assert_eq!(s.theta_hat, 0.0);
    }
}
