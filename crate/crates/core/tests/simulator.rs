use reinsurance_dual::dual::{solve, GridSpec};
use reinsurance_dual::primal::legendre;
use reinsurance_dual::simulator::{
    brute_force_primal_dp, simulate, weak_duality_check, DpSpec, SimSpec, Strategy,
};
use reinsurance_dual::{CrraUtility, MarketModel};

fn fixture() -> (MarketModel, CrraUtility) {
    (
        MarketModel::new(0.4, 0.3, 1.0, [(1.0, 1.0)], 1.0).unwrap(),
        CrraUtility::new(0.5).unwrap(),
    )
}

fn poisson_series(m: &MarketModel, u: &CrraUtility, c: f64, x0: f64) -> f64 {
    let lt = m.intensity() * m.horizon();
    let base = x0 + (m.alpha() - m.beta() + m.beta() * c) * m.horizon();
    let mut weight = (-lt).exp();
    let mut mass = 0.0;
    let mut total = 0.0;
    for k in 0..200 {
        if k > 0 {
            weight *= lt / k as f64;
        }
        total += weight * u.u(base - c * m.claims()[0].size * k as f64);
        mass += weight;
        if 1.0 - mass < 1e-12 {
            break;
        }
    }
    total
}

#[test]
fn constant_retention_matches_poisson_series() {
    let m = MarketModel::new(0.5, 0.3, 2.0, [(0.5, 1.0)], 1.0).unwrap();
    let u = CrraUtility::new(0.5).unwrap();
    for (c, seed) in [(0.3, 1u64), (0.7, 2)] {
        let spec = SimSpec { n_paths: 20_000, dt: 0.01, seed, antithetic: false };
        let r = simulate(&m, &u, &Strategy::Constant(c), 0.0, 10.0, &spec).unwrap();
        assert_eq!(r.ruin_count, 0);
        let exact = poisson_series(&m, &u, c, 10.0);
        assert!(
            (r.estimate - exact).abs() <= 3.0 * r.ci_half_width,
            "c = {c}: {} vs {exact} (ci {})",
            r.estimate,
            r.ci_half_width
        );
    }
}

#[test]
fn reports_are_reproducible() {
    let (m, u) = fixture();
    let spec = SimSpec { n_paths: 2_000, dt: 0.02, seed: 42, antithetic: true };
    let a = simulate(&m, &u, &Strategy::Constant(0.5), 0.0, 2.0, &spec).unwrap();
    let b = simulate(&m, &u, &Strategy::Constant(0.5), 0.0, 2.0, &spec).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| simulate(&m, &u, &Strategy::Constant(0.5), 0.0, 2.0, &spec).unwrap());
    assert_eq!(a.estimate.to_bits(), c.estimate.to_bits());
    assert_eq!(a.ci_half_width.to_bits(), c.ci_half_width.to_bits());
}

#[test]
fn quadrupling_paths_halves_the_interval() {
    let (m, u) = fixture();
    let mut ratios = Vec::new();
    for seed in 0..5u64 {
        let small = SimSpec { n_paths: 1_000, dt: 0.05, seed, antithetic: false };
        let large = SimSpec { n_paths: 4_000, ..small };
        let a = simulate(&m, &u, &Strategy::Full, 0.0, 3.0, &small).unwrap();
        let b = simulate(&m, &u, &Strategy::Full, 0.0, 3.0, &large).unwrap();
        ratios.push(a.ci_half_width / b.ci_half_width);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 2.0).abs() <= 0.4, "ratios {ratios:?}");
}

#[test]
fn projection_keeps_wealth_above_floor() {
    let m = MarketModel::new(0.2, 0.6, 4.0, [(0.5, 0.5), (1.5, 0.5)], 1.0).unwrap();
    let u = CrraUtility::new(0.3).unwrap();
    let spec = SimSpec { n_paths: 2_000, dt: 0.05, seed: 9, antithetic: true };
    let r = simulate(&m, &u, &Strategy::Full, 0.0, 0.6, &spec).unwrap();
    assert!(r.ruin_count > 0);
    assert!(r.min_floor_slack >= -1e-12);
    assert!(r.min_theta >= 0.0 && r.max_theta <= 1.0);
}

#[test]
fn dp_dominates_fixed_policy() {
    let (m, u) = fixture();
    let table = brute_force_primal_dp(&m, &u, &DpSpec::default()).unwrap();
    let spec = SimSpec { n_paths: 4_000, dt: 0.02, seed: 3, antithetic: false };
    let r = simulate(&m, &u, &Strategy::Zero, 0.0, 2.0, &spec).unwrap();
    let dp = table.value_at_start(2.0);
    // linear interpolation of a concave value loses about h^2 |v''| / 8 per step
    let h = 10.0 / 511.0;
    let bias = 64.0 * h * h * u.u_prime(2.0) * 0.5 / 2.0 / 8.0;
    assert!(dp >= r.estimate - 2.0 * r.ci_half_width - bias, "dp {dp} sim {} ci {}", r.estimate, r.ci_half_width);
}

#[test]
fn dp_agrees_with_dual_recovery() {
    let (m, u) = fixture();
    let table = brute_force_primal_dp(&m, &u, &DpSpec::default()).unwrap();
    let field = solve(&m, &u, &GridSpec::default()).unwrap();
    let dp = table.value_at_start(2.0);
    let dual = legendre(&field, 0.0, 2.0).unwrap().v;
    assert!((dp - dual).abs() <= 0.05 * dp, "dp {dp} dual {dual}");
    // v(0, x) = U(x + (alpha - beta) T) when full reinsurance is optimal
    assert!((dual - 2.0 * 2.1f64.sqrt()).abs() <= 1e-3, "dual {dual}");
}

#[test]
fn weak_duality_holds_and_detects_faults() {
    let (m, u) = fixture();
    let field = solve(&m, &u, &GridSpec { n_t: 64, ..GridSpec::default() }).unwrap();
    let spec = SimSpec { n_paths: 2_000, dt: 0.05, seed: 5, antithetic: true };
    let probes = [0.2, 0.5, 0.69, 1.0, 2.0, 1e3];
    let report = weak_duality_check(&field, 2.0, &probes, &spec).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(report.tightest_gap < 0.01 * report.lower_bound, "{report:?}");

    let mut broken = field.clone();
    for s in broken.slices.iter_mut() {
        let lowered: Vec<f64> = s.values().iter().map(|v| v - 0.1 * v.abs()).collect();
        *s = s.with_values(lowered).unwrap();
    }
    let report = weak_duality_check(&broken, 2.0, &probes, &spec).unwrap();
    assert!(!report.passed);
    assert!(report.tightest_gap < 0.0);
}
