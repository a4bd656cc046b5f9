use reinsurance_dual::dual::{region_map, residual_check, solve, GridSpec, Region, Scheme, SolveError};
use reinsurance_dual::hamiltonian::{minimize_hamiltonian, ControlBox, Regime};
use reinsurance_dual::primal::{candidate_strategy, legendre};
use reinsurance_dual::{CrraUtility, MarketModel, ValueSlice};

fn half() -> CrraUtility {
    CrraUtility::new(0.5).unwrap()
}

fn no_claims() -> MarketModel {
    MarketModel::new(0.3, 0.1, 0.0, Vec::<(f64, f64)>::new(), 1.0).unwrap()
}

fn closed_form(alpha: f64, tau: f64, y: f64) -> f64 {
    let c = (1.0 / (y * (alpha * tau).sqrt())).min(1.0);
    1.0 / (y * c) + alpha * tau * y * c
}

#[test]
fn no_claims_matches_closed_form_on_every_slice() {
    let field = solve(&no_claims(), &half(), &GridSpec { n_t: 64, ..GridSpec::default() }).unwrap();
    for (k, &t) in field.times.iter().enumerate().step_by(8) {
        for &y in &[0.1, 0.7, 3.0] {
            let exact = closed_form(0.3, 1.0 - t, y);
            let v = field.slices[k].interpolate(y).unwrap().0;
            assert!((v - exact).abs() <= 2e-3 * exact, "t = {t}, y = {y}: {v} vs {exact}");
        }
    }
}

#[test]
fn jump_region_sits_above_the_free_boundary() {
    let field = solve(&no_claims(), &half(), &GridSpec { n_t: 64, ..GridSpec::default() }).unwrap();
    let regions = region_map(&field);
    let boundary = 1.0 / 0.3f64.sqrt();
    let k = 0;
    for (j, &y) in field.slices[k].nodes().iter().enumerate() {
        if y > 1.1 * boundary {
            assert!(regions[k][j].is_jump(), "y = {y}: {:?}", regions[k][j]);
        } else if y < 0.9 * boundary {
            assert_eq!(regions[k][j], Region::R1, "y = {y}");
        }
    }
}

#[test]
fn cheap_cover_fixture_is_exact() {
    // beta below the expected loss rate: full reinsurance, v(0, x) = U(x + alpha - beta)
    let m = MarketModel::new(0.4, 0.3, 1.0, [(1.0, 1.0)], 1.0).unwrap();
    let field = solve(&m, &half(), &GridSpec::default()).unwrap();
    for &x in &[0.5, 1.0, 2.0, 4.0] {
        let v = legendre(&field, 0.0, x).unwrap().v;
        let exact = 2.0 * (x + 0.1f64).sqrt();
        assert!((v - exact).abs() <= 1e-4 * exact, "x = {x}: {v}");
        assert_eq!(candidate_strategy(&field, 0.0, x).unwrap().theta_hat, 0.0);
    }
}

#[test]
fn costly_cover_binds_the_premium_constraint() {
    let m = MarketModel::new(0.4, 1.5, 1.0, [(1.0, 1.0)], 1.0).unwrap();
    let y: Vec<f64> = (0..64).map(|j| 10f64.powf(-2.0 + 4.0 * j as f64 / 63.0)).collect();
    let u = half();
    let slice = ValueSlice::from_fn(1.0, y, 1.0, |y| u.conjugate(y) + 0.2 * y).unwrap();
    let j = 32;
    let bounds = ControlBox::for_node(&m, &slice, j);
    let r = minimize_hamiltonian(&slice, j, &m, &bounds).unwrap();
    // the unconstrained minimizer of the local term lies above beta / (delta pi)
    assert_eq!(r.regime, Regime::A);
    assert!((r.minimizer[0] - 1.5).abs() <= 1e-9, "{:?}", r);
}

#[test]
fn policy_iteration_scheme_solves_the_fixture() {
    let m = MarketModel::new(0.4, 0.3, 1.0, [(1.0, 1.0)], 1.0).unwrap();
    let grid = GridSpec { n_t: 64, scheme: Scheme::PolicyIteration, ..GridSpec::default() };
    let field = solve(&m, &half(), &grid).unwrap();
    let v = legendre(&field, 0.0, 2.0).unwrap().v;
    assert!((v - 2.0 * 2.1f64.sqrt()).abs() <= 1e-2 * v, "{v}");
    assert!(field.stats.policy_iterations.iter().all(|&n| n > 0));
}

#[test]
fn huge_intensity_on_a_coarse_clock_is_a_cfl_violation() {
    let m = MarketModel::new(0.4, 0.3, 1e4, [(1.0, 1.0)], 1.0).unwrap();
    let err = solve(&m, &half(), &GridSpec { n_t: 4, n_y: 64, ..GridSpec::default() }).unwrap_err();
    assert!(matches!(err, SolveError::CflViolation { .. }), "{err}");
}

#[test]
fn two_claim_solve_has_small_residual() {
    let m = MarketModel::new(1.2, 1.0, 1.0, [(0.5, 0.7), (1.5, 0.3)], 1.0).unwrap();
    let u = CrraUtility::new(0.4).unwrap();
    let field = solve(&m, &u, &GridSpec { n_t: 32, n_y: 128, ..GridSpec::default() }).unwrap();
    let r = residual_check(&field);
    assert!(r.max_vi_residual <= field.grid.residual_tolerance(1.0), "{}", r.max_vi_residual);
}
