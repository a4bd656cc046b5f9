//! The consolidated verification suite behind `verify`.

use reinsurance_dual::config::ProblemConfig;
use reinsurance_dual::dual::{residual_check, shape_audit, DualField};
use reinsurance_dual::primal::{legendre, legendre_on_slice};
use reinsurance_dual::simulator::{brute_force_primal_dp, weak_duality_check, SimError, DP_MAX_CLAIMS};

/// Relative tolerance of the terminal-layer biconjugacy check.
pub const BICONJUGACY_RTOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        }
    }

    fn from(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub status: Status,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckRow {
    fn upper(check: &'static str, value: f64, tolerance: f64) -> Self {
        CheckRow { check, status: Status::from(value <= tolerance), value, tolerance }
    }
}

/// Wealth probes over three decades whose conjugate points `U'(x)` sit at
/// least a decade inside the dual grid.
pub fn biconjugacy_probes(field: &DualField) -> Vec<f64> {
    let u = &field.utility;
    let (lo, hi) = (field.grid.y_min * 10.0, field.grid.y_max / 10.0);
    (0..=12)
        .map(|k| 1e-2 * 10f64.powf(k as f64 / 4.0))
        .filter(|&x| (lo..=hi).contains(&u.u_prime(x)))
        .collect()
}

/// Largest relative error of the Legendre transform of the terminal slice
/// against `U`.
pub fn biconjugacy_error(field: &DualField) -> f64 {
    let u = &field.utility;
    biconjugacy_probes(field)
        .into_iter()
        .map(|x| {
            let (v, _, _) = legendre_on_slice(field.terminal(), x);
            (v - u.u(x)).abs() / u.u(x)
        })
        .fold(0.0, f64::max)
}

pub fn run_checks(config: &ProblemConfig, field: &DualField) -> Result<Vec<CheckRow>, SimError> {
    let mut rows = Vec::new();
    let audit = shape_audit(field);
    rows.push(CheckRow::upper("terminal_exactness", audit.terminal_error, 0.0));
    rows.push(CheckRow::upper("monotonicity", audit.monotonicity_violations as f64, 0.0));
    rows.push(CheckRow::upper("convexity", audit.convexity_violations as f64, 0.0));
    rows.push(CheckRow::upper("growth", audit.growth_constant, audit.growth_limit));
    rows.push(CheckRow::upper("difference", audit.difference_constant, audit.difference_limit));
    rows.push(CheckRow::upper("feasible_bound", audit.feasible_bound_excess, 0.0));
    let residuals = residual_check(field);
    rows.push(CheckRow::upper(
        "residual",
        residuals.max_vi_residual,
        field.grid.residual_tolerance(field.model.horizon()),
    ));
    let probes = biconjugacy_probes(field);
    if probes.is_empty() {
        rows.push(CheckRow { check: "biconjugacy", status: Status::Skip, value: 0.0, tolerance: BICONJUGACY_RTOL });
    } else {
        rows.push(CheckRow::upper("biconjugacy", biconjugacy_error(field), BICONJUGACY_RTOL));
    }

    let x0 = config.x0;
    let dual_value = legendre(field, 0.0, x0).map(|p| p.v).unwrap_or(f64::NAN);
    if config.model.n_claims() <= DP_MAX_CLAIMS && x0 < config.checks.dp.x_span {
        let table = brute_force_primal_dp(&config.model, &config.utility, &config.checks.dp)?;
        let dp = table.value_at_start(x0);
        rows.push(CheckRow::upper(
            "dp_agreement",
            (dual_value - dp).abs() / dp.abs(),
            config.checks.dp_rel_tol,
        ));
    } else {
        rows.push(CheckRow {
            check: "dp_agreement",
            status: Status::Skip,
            value: 0.0,
            tolerance: config.checks.dp_rel_tol,
        });
    }

    let report = weak_duality_check(field, x0, &config.checks.y_probes, &config.sim)?;
    rows.push(CheckRow {
        check: "weak_duality",
        status: Status::from(report.passed),
        value: report.tightest_gap,
        tolerance: 0.0 - 2.0 * report.lower_ci,
    });
    let rel_gap = report.tightest_gap / report.lower_bound.abs();
    rows.push(CheckRow {
        check: "duality_gap",
        status: Status::from(report.passed && rel_gap < config.checks.duality_rel_gap),
        value: rel_gap,
        tolerance: config.checks.duality_rel_gap,
    });
    Ok(rows)
}
