//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line with the
//! measured value and the pinned tolerance before asserting.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use reins_cli::checks::{biconjugacy_error, BICONJUGACY_RTOL};
use reinsurance_dual::dual::{residual_check, shape_audit, solve, DualField, GridSpec};
use reinsurance_dual::primal::legendre;
use reinsurance_dual::simulator::{
    brute_force_primal_dp, simulate, weak_duality_check, DpSpec, SimSpec, Strategy,
};
use reinsurance_dual::{CrraUtility, MarketModel};

const CLOSED_FORM_RTOL: f64 = 0.01;
const CLOSED_FORM_MAX_SECS: f64 = 60.0;
const PRIMAL_RTOL: f64 = 0.01;
const DP_AGREEMENT_RTOL: f64 = 0.05;
const DP_MAX_SECS: f64 = 300.0;
const DUALITY_PATHS: usize = 100_000;
const DUALITY_REL_GAP: f64 = 0.10;
const FAULT_SIZE: f64 = 1.0;
const CONVERGENCE_RATIO: (f64, f64) = (1.5, 3.0);
const SERIES_CI_MULTIPLE: f64 = 3.0;

const PROBES_Y: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
const PROBES_X: [f64; 4] = [0.5, 1.0, 2.0, 5.0];

fn report(n: u32, name: &str, ok: bool, detail: String) {
    let status = if ok { "PASS" } else { "FAIL" };
    println!("criterion {n} [{name}]: {status} ({detail})");
}

fn half() -> CrraUtility {
    CrraUtility::new(0.5).unwrap()
}

fn no_claims() -> MarketModel {
    MarketModel::new(0.3, 0.1, 0.0, Vec::<(f64, f64)>::new(), 1.0).unwrap()
}

fn fixture() -> MarketModel {
    MarketModel::new(0.4, 0.3, 1.0, [(1.0, 1.0)], 1.0).unwrap()
}

fn costly_two_claims() -> MarketModel {
    MarketModel::new(0.2, 0.5, 1.5, [(0.4, 0.6), (1.0, 0.4)], 1.0).unwrap()
}

/// `min over 0 < c <= 1 of 1/(y c) + alpha tau y c`, the no-claims dual value.
fn analytic_no_claims(alpha: f64, tau: f64, y: f64) -> f64 {
    let c = (1.0 / (y * (alpha * tau).sqrt())).min(1.0);
    1.0 / (y * c) + alpha * tau * y * c
}

fn grid_search_no_claims(alpha: f64, tau: f64, y: f64) -> f64 {
    (1..=200_000)
        .map(|k| {
            let c = k as f64 / 200_000.0;
            1.0 / (y * c) + alpha * tau * y * c
        })
        .fold(f64::INFINITY, f64::min)
}

fn closed_form_error(field: &DualField) -> f64 {
    PROBES_Y
        .iter()
        .map(|&y| {
            let exact = analytic_no_claims(0.3, 1.0, y);
            (field.value(0.0, y).unwrap() - exact).abs() / exact
        })
        .fold(0.0, f64::max)
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

#[test]
fn criterion_01_no_claims_closed_form() {
    for &y in &PROBES_Y {
        let a = analytic_no_claims(0.3, 1.0, y);
        let g = grid_search_no_claims(0.3, 1.0, y);
        assert!((a - g).abs() <= 1e-6 * a, "analytic reduction at y = {y}: {a} vs {g}");
    }
    let start = Instant::now();
    let field = single_thread(|| solve(&no_claims(), &half(), &GridSpec::default()).unwrap());
    let secs = start.elapsed().as_secs_f64();
    let err = closed_form_error(&field);
    let ok = err <= CLOSED_FORM_RTOL && secs < CLOSED_FORM_MAX_SECS;
    report(
        1,
        "no-claims closed form",
        ok,
        format!("max rel err {err:.3e} <= {CLOSED_FORM_RTOL}, {secs:.2} s < {CLOSED_FORM_MAX_SECS} s"),
    );
    assert!(ok);
}

fn all_solves() -> Vec<(&'static str, DualField)> {
    let u = half();
    let eta04 = CrraUtility::new(0.4).unwrap();
    vec![
        ("no claims", solve(&no_claims(), &u, &GridSpec::default()).unwrap()),
        ("d=1 fixture", solve(&fixture(), &u, &GridSpec::default()).unwrap()),
        (
            "costly two claims",
            solve(&costly_two_claims(), &eta04, &GridSpec { n_t: 128, ..GridSpec::default() }).unwrap(),
        ),
    ]
}

#[test]
fn criterion_02_terminal_exactness() {
    let mut ok = true;
    for (name, field) in all_solves() {
        let u = field.utility;
        let t = field.terminal();
        let exact = t.nodes().iter().zip(t.values()).all(|(&y, &v)| v == u.conjugate(y));
        if !exact {
            println!("  terminal slice differs from the conjugate utility on {name}");
        }
        ok &= exact;
    }
    report(2, "terminal exactness", ok, "bitwise equality at every node of 3 solves".into());
    assert!(ok);
}

#[test]
fn criterion_03_primal_recovery() {
    let field = solve(&no_claims(), &half(), &GridSpec::default()).unwrap();
    let err = PROBES_X
        .iter()
        .map(|&x| {
            let exact = 2.0 * (x + 0.3f64).sqrt();
            (legendre(&field, 0.0, x).unwrap().v - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    let bic = biconjugacy_error(&field);
    let ok = err <= PRIMAL_RTOL && bic <= BICONJUGACY_RTOL;
    report(
        3,
        "primal recovery",
        ok,
        format!("max rel err {err:.3e} <= {PRIMAL_RTOL}, biconjugacy {bic:.3e} <= {BICONJUGACY_RTOL}"),
    );
    assert!(ok);
}

#[test]
fn criterion_04_shape_invariants() {
    let mut ok = true;
    for (name, field) in all_solves() {
        let a = shape_audit(&field);
        println!(
            "  {name}: monotonicity {}, convexity {}, growth {:.3} / {:.3}, difference {:.3} / {:.3}",
            a.monotonicity_violations,
            a.convexity_violations,
            a.growth_constant,
            a.growth_limit,
            a.difference_constant,
            a.difference_limit
        );
        ok &= a.passes();
    }
    report(4, "shape invariants", ok, "3 solves audited".into());
    assert!(ok);
}

#[test]
fn criterion_05_two_oracle_agreement() {
    let start = Instant::now();
    let field = solve(&fixture(), &half(), &GridSpec::default()).unwrap();
    let dual = legendre(&field, 0.0, 2.0).unwrap().v;
    let spec = DpSpec { t_steps: 64, x_nodes: 512, theta_nodes: 101, x_span: 10.0 };
    let dp = brute_force_primal_dp(&fixture(), &half(), &spec).unwrap().value_at_start(2.0);
    let secs = start.elapsed().as_secs_f64();
    let rel = (dual - dp).abs() / dp;
    let ok = rel <= DP_AGREEMENT_RTOL && secs < DP_MAX_SECS;
    report(
        5,
        "two-oracle agreement",
        ok,
        format!("dual {dual:.6}, dp {dp:.6}, rel diff {rel:.3e} <= {DP_AGREEMENT_RTOL}, {secs:.2} s"),
    );
    assert!(ok);
}

#[test]
fn criterion_06_weak_duality_sandwich() {
    let field = solve(&fixture(), &half(), &GridSpec::default()).unwrap();
    let spec = SimSpec { n_paths: DUALITY_PATHS, dt: 1.0 / 64.0, seed: 6, antithetic: false };
    let probes: Vec<f64> = (0..=40).map(|k| 0.05 * 100f64.powf(k as f64 / 40.0)).collect();
    let r = weak_duality_check(&field, 2.0, &probes, &spec).unwrap();
    let rel = r.tightest_gap / r.lower_bound;
    let ok = r.passed && rel < DUALITY_REL_GAP;
    report(
        6,
        "weak-duality sandwich",
        ok,
        format!(
            "lower {:.6} +/- {:.2e} ({}), tightest gap {:.3e} at y = {:.3}, relative {rel:.3e} < {DUALITY_REL_GAP}",
            r.lower_bound, r.lower_ci, r.best_strategy, r.tightest_gap, r.tightest_y
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_residual_and_fault_detection() {
    let mut ok = true;
    for (name, field) in all_solves() {
        let tol = field.grid.residual_tolerance(field.model.horizon());
        let r = residual_check(&field);
        println!("  {name}: max residual {:.3e} <= {tol:.3e}", r.max_vi_residual);
        ok &= r.max_vi_residual <= tol;

        for &(k, j) in &[(10usize, 40usize), (field.n_t() / 2, field.grid.n_y / 2), (field.n_t() - 1, 200)] {
            let mut broken = field.clone();
            let mut v = broken.slices[k].values().to_vec();
            v[j] += FAULT_SIZE;
            broken.slices[k] = broken.slices[k].with_values(v).unwrap();
            let r = residual_check(&broken);
            let located = matches!(r.worst_node, Some((kk, jj)) if jj == j && (kk == k || kk + 1 == k));
            if !(r.max_vi_residual > tol && located) {
                println!("  {name}: fault at ({k}, {j}) missed, worst {:?}", r.worst_node);
                ok = false;
            }
        }
    }
    report(7, "discrete VI residual", ok, "3 solves, 3 injected faults each".into());
    assert!(ok);
}

#[test]
fn criterion_08_grid_convergence() {
    let levels = [(256usize, 256usize), (511, 512), (1021, 1024)];
    let errors: Vec<f64> = levels
        .iter()
        .map(|&(n_y, n_t)| {
            let grid = GridSpec { n_y, n_t, ..GridSpec::default() };
            closed_form_error(&solve(&no_claims(), &half(), &grid).unwrap())
        })
        .collect();
    let ratios = [errors[0] / errors[1], errors[1] / errors[2]];
    let (lo, hi) = CONVERGENCE_RATIO;
    let ok = ratios.iter().all(|r| (lo..=hi).contains(r));
    report(
        8,
        "grid convergence",
        ok,
        format!(
            "errors {:.3e} {:.3e} {:.3e}, ratios {:.3} {:.3}, required in [{lo}, {hi}]",
            errors[0], errors[1], errors[2], ratios[0], ratios[1]
        ),
    );
    assert!(ok);
}

fn fixture_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/fixture.conf")
}

fn run_verify(threads: usize, out: &std::path::Path) -> std::process::ExitStatus {
    Command::new(env!("CARGO_BIN_EXE_reins-dual"))
        .arg("--config")
        .arg(fixture_config())
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .arg("verify")
        .output()
        .unwrap()
        .status
}

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("t1"), dir.path().join("t8"));
    let codes = (run_verify(1, &a), run_verify(8, &b));
    let mut ok = codes.0.success() && codes.1.success();
    for name in ["verify.csv", "dual_field.csv"] {
        let same = std::fs::read(a.join(name)).unwrap() == std::fs::read(b.join(name)).unwrap();
        if !same {
            println!("  {name} differs between 1 and 8 threads");
        }
        ok &= same;
    }
    report(9, "determinism", ok, "verify.csv and dual_field.csv at 1 and 8 threads".into());
    assert!(ok);
}

fn poisson_series(m: &MarketModel, u: &CrraUtility, c: f64, x0: f64) -> f64 {
    let lt = m.intensity() * m.horizon();
    let base = x0 + (m.alpha() - m.beta() + m.beta() * c) * m.horizon();
    let size = m.claims()[0].size;
    let (mut weight, mut mass, mut total) = ((-lt).exp(), 0.0, 0.0);
    for k in 0..1000 {
        if k > 0 {
            weight *= lt / k as f64;
        }
        total += weight * u.u((base - c * size * k as f64).max(0.0));
        mass += weight;
        if 1.0 - mass < 1e-12 {
            break;
        }
    }
    total
}

#[test]
fn criterion_10_monte_carlo_exactness() {
    let u = half();
    let m = no_claims();
    let spec = SimSpec { n_paths: 1000, dt: 1.0 / 64.0, seed: 10, antithetic: false };
    let mut ok = true;
    for (theta, strategy) in [(0.0, Strategy::Zero), (1.0, Strategy::Full)] {
        let r = simulate(&m, &u, &strategy, 0.0, 1.0, &spec).unwrap();
        let exact = u.u(1.0 + (m.alpha() - m.beta() + m.beta() * theta) * m.horizon());
        println!("  theta = {theta}: {} vs {exact}, ci {}", r.estimate, r.ci_half_width);
        ok &= r.estimate == exact && r.ci_half_width == 0.0;
    }
    let fx = fixture();
    for (c, seed) in [(0.25, 1u64), (0.5, 2), (0.9, 3)] {
        let spec = SimSpec { n_paths: 40_000, dt: 1.0 / 64.0, seed, antithetic: false };
        let r = simulate(&fx, &u, &Strategy::Constant(c), 0.0, 10.0, &spec).unwrap();
        let exact = poisson_series(&fx, &u, c, 10.0);
        let dev = (r.estimate - exact).abs();
        println!("  c = {c}: {:.6} vs series {exact:.6}, |diff| {dev:.2e}, ci {:.2e}, ruin {}", r.estimate, r.ci_half_width, r.ruin_count);
        ok &= r.ruin_count == 0 && dev <= SERIES_CI_MULTIPLE * r.ci_half_width;
    }
    report(10, "Monte Carlo exactness", ok, "deterministic paths exact, series within 3 CI".into());
    assert!(ok);
}
