//! Problem data: premium rates, the finite claim menu, the horizon and the
//! CRRA utility together with its convex conjugate.
//!
//! Everything here is immutable once constructed. Constructors validate and
//! return the complete list of violated invariants rather than stopping at
//! the first one.

use std::fmt;

use thiserror::Error;

/// Tolerance below which a claim-weight sum is silently renormalized to 1.
pub const WEIGHT_RENORMALIZE_TOL: f64 = 1e-9;

/// A single invariant violation found while validating inputs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("negative rate: {name} = {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("claim intensity is {intensity} but the claim list is empty")]
    EmptyClaims { intensity: f64 },
    #[error("claim weights sum to {sum}, expected 1")]
    WeightsNotNormalized { sum: f64 },
    #[error("risk-aversion exponent eta = {eta} must lie in (0, 1)")]
    BadEta { eta: f64 },
    #[error("claim size {size} must be finite and positive")]
    NonpositiveClaimSize { size: f64 },
    #[error("claim weight {weight} must be finite and positive")]
    NonpositiveWeight { weight: f64 },
    #[error("claim size {size} appears more than once")]
    DuplicateClaimSize { size: f64 },
    #[error("horizon T = {horizon} must be finite and positive")]
    BadHorizon { horizon: f64 },
    #[error("grid: {0}")]
    BadGrid(String),
    #[error("simulation: {0}")]
    BadSim(String),
    #[error("start point: {0}")]
    BadStart(String),
}

/// The full list of violations produced by a failed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl ValidationErrors {
    pub fn iter(&self) -> impl Iterator<Item = &ValidationError> {
        self.0.iter()
    }

    pub fn contains(&self, pred: impl Fn(&ValidationError) -> bool) -> bool {
        self.0.iter().any(pred)
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

/// One atom of the claim-size distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Claim {
    pub size: f64,
    pub prob: f64,
}

/// Premium rates, claim arrival law and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    alpha: f64,
    beta: f64,
    intensity: f64,
    claims: Vec<Claim>,
    intensities: Vec<f64>,
    horizon: f64,
}

impl MarketModel {
    /// Validates and normalizes the inputs. Claims are sorted by size and
    /// weights within [`WEIGHT_RENORMALIZE_TOL`] of summing to one are
    /// renormalized.
    pub fn new(
        alpha: f64,
        beta: f64,
        intensity: f64,
        claims: impl IntoIterator<Item = (f64, f64)>,
        horizon: f64,
    ) -> Result<Self, ValidationErrors> {
        let mut errors = Vec::new();
        for (name, value) in [("alpha", alpha), ("beta", beta), ("intensity", intensity)] {
            if !(value >= 0.0 && value.is_finite()) {
                errors.push(ValidationError::NegativeRate { name, value });
            }
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            errors.push(ValidationError::BadHorizon { horizon });
        }

        let mut claims: Vec<Claim> = claims
            .into_iter()
            .map(|(size, prob)| Claim { size, prob })
            .collect();
        if intensity > 0.0 && claims.is_empty() {
            errors.push(ValidationError::EmptyClaims { intensity });
        }
        let mut shape_ok = true;
        for c in &claims {
            if !(c.size > 0.0 && c.size.is_finite()) {
                errors.push(ValidationError::NonpositiveClaimSize { size: c.size });
                shape_ok = false;
            }
            if !(c.prob > 0.0 && c.prob.is_finite()) {
                errors.push(ValidationError::NonpositiveWeight { weight: c.prob });
                shape_ok = false;
            }
        }
        if shape_ok && !claims.is_empty() {
            claims.sort_by(|a, b| a.size.total_cmp(&b.size));
            for w in claims.windows(2) {
                if w[0].size == w[1].size {
                    errors.push(ValidationError::DuplicateClaimSize { size: w[0].size });
                }
            }
            let sum: f64 = claims.iter().map(|c| c.prob).sum();
            if (sum - 1.0).abs() > WEIGHT_RENORMALIZE_TOL {
                errors.push(ValidationError::WeightsNotNormalized { sum });
            } else {
                for c in &mut claims {
                    c.prob /= sum;
                }
            }
        }

        if !errors.is_empty() {
            return Err(ValidationErrors(errors));
        }
        let intensities = claims.iter().map(|c| intensity * c.prob).collect();
        Ok(Self {
            alpha,
            beta,
            intensity,
            claims,
            intensities,
            horizon,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Total claim arrival rate.
    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn claims(&self) -> &[Claim] {
        &self.claims
    }

    /// Per-claim arrival intensities `intensity * p_i`.
    pub fn claim_intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of claim sizes in the menu.
    pub fn n_claims(&self) -> usize {
        self.claims.len()
    }

    pub fn max_claim(&self) -> Option<f64> {
        self.claims.last().map(|c| c.size)
    }

    /// `sum_i delta_i * pi_i`, the expected claim outflow per unit time.
    pub fn expected_loss_rate(&self) -> f64 {
        self.claims
            .iter()
            .zip(&self.intensities)
            .map(|(c, pi)| c.size * pi)
            .sum()
    }

    /// Whether the paid premium exceeds the received one, the only regime in
    /// which the feasibility threshold is positive.
    pub fn premium_regime(&self) -> PremiumRegime {
        if self.beta > self.alpha {
            PremiumRegime::CostlyCover
        } else {
            PremiumRegime::SelfFinanced
        }
    }

    /// Minimum wealth at time `t` from which an admissible strategy exists:
    /// `max(0, beta - alpha) * (T - t)`.
    pub fn feasibility_threshold(&self, t: f64) -> f64 {
        let remaining = (self.horizon - t).max(0.0);
        (self.beta - self.alpha).max(0.0) * remaining
    }

    /// Dual running cost per unit of dual state for intensity distortion `rho`:
    /// `alpha - beta + (beta - sum_i rho_i delta_i pi_i)_+`.
    pub fn premium_term(&self, rho: &[f64]) -> f64 {
        let tilted: f64 = self
            .claims
            .iter()
            .zip(&self.intensities)
            .zip(rho)
            .map(|((c, pi), r)| r * c.size * pi)
            .sum();
        self.alpha - self.beta + (self.beta - tilted).max(0.0)
    }
}

/// Sign of `beta - alpha`, surfaced in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PremiumRegime {
    /// `beta > alpha`: cover costs more than the premium received.
    CostlyCover,
    /// `alpha >= beta`: the threshold degenerates to zero.
    SelfFinanced,
}

impl fmt::Display for PremiumRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PremiumRegime::CostlyCover => f.write_str("beta>alpha"),
            PremiumRegime::SelfFinanced => f.write_str("alpha>=beta"),
        }
    }
}

/// Selector for [`CrraUtility::eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilityFn {
    U,
    UPrime,
    /// Inverse marginal utility `I = (U')^{-1}`.
    I,
    /// Convex conjugate.
    UTilde,
    UTildePrime,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("{which:?} requires a positive argument, got {arg}")]
pub struct NonpositiveArgument {
    pub which: UtilityFn,
    pub arg: f64,
}

/// `U(x) = x^eta / eta` with conjugate `U~(y) = y^{-gamma} / gamma`,
/// `gamma = eta / (1 - eta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrraUtility {
    eta: f64,
    gamma: f64,
}

impl CrraUtility {
    pub fn new(eta: f64) -> Result<Self, ValidationError> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(ValidationError::BadEta { eta });
        }
        Ok(Self {
            eta,
            gamma: eta / (1.0 - eta),
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `U(x)`, extended by `U(0) = 0` and by zero for negative wealth.
    pub fn u(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            x.powf(self.eta) / self.eta
        }
    }

    pub fn u_prime(&self, x: f64) -> f64 {
        x.powf(self.eta - 1.0)
    }

    /// `I(y) = y^{-(gamma + 1)}`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        y.powf(-(self.gamma + 1.0))
    }

    pub fn conjugate(&self, y: f64) -> f64 {
        y.powf(-self.gamma) / self.gamma
    }

    /// `U~'(y) = -I(y)`.
    pub fn conjugate_prime(&self, y: f64) -> f64 {
        -self.inverse_marginal(y)
    }

    /// Checked evaluation of one of the utility functions.
    pub fn eval(&self, which: UtilityFn, arg: f64) -> Result<f64, NonpositiveArgument> {
        let ok = match which {
            UtilityFn::U => arg >= 0.0,
            _ => arg > 0.0,
        };
        if !ok || arg.is_nan() {
            return Err(NonpositiveArgument { which, arg });
        }
        Ok(match which {
            UtilityFn::U => self.u(arg),
            UtilityFn::UPrime => self.u_prime(arg),
            UtilityFn::I => self.inverse_marginal(arg),
            UtilityFn::UTilde => self.conjugate(arg),
            UtilityFn::UTildePrime => self.conjugate_prime(arg),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base() -> MarketModel {
        MarketModel::new(0.3, 0.1, 1.0, [(1.0, 1.0)], 1.0).unwrap()
    }

    #[test]
    fn valid_single_claim() {
        let m = base();
        assert_eq!(m.claim_intensities(), &[1.0]);
        let u = CrraUtility::new(0.5).unwrap();
        assert_eq!(u.gamma(), 1.0);
    }

    #[test]
    fn bad_eta() {
        assert_eq!(
            CrraUtility::new(1.2),
            Err(ValidationError::BadEta { eta: 1.2 })
        );
        assert!(CrraUtility::new(0.0).is_err());
        assert!(CrraUtility::new(1.0).is_err());
    }

    #[test]
    fn unnormalized_weights() {
        let err = MarketModel::new(0.3, 0.1, 1.0, [(1.0, 0.5), (2.0, 0.6)], 1.0).unwrap_err();
        assert!(err.contains(|e| matches!(e, ValidationError::WeightsNotNormalized { sum } if (sum - 1.1).abs() < 1e-12)));
    }

    #[test]
    fn reports_every_violation() {
        let err = MarketModel::new(-0.3, -0.1, 2.0, Vec::<(f64, f64)>::new(), 0.0).unwrap_err();
        assert_eq!(err.0.len(), 4, "{err}");
        assert!(err.contains(|e| matches!(e, ValidationError::EmptyClaims { .. })));
    }

    #[test]
    fn zero_intensity_allows_empty_menu() {
        let m = MarketModel::new(0.3, 0.1, 0.0, Vec::<(f64, f64)>::new(), 1.0).unwrap();
        assert_eq!(m.n_claims(), 0);
        assert_eq!(m.premium_term(&[]), 0.3);
    }

    #[test]
    fn claims_are_sorted_and_renormalized() {
        let m = MarketModel::new(0.3, 0.1, 2.0, [(2.0, 0.25 + 5e-10), (1.0, 0.75)], 1.0).unwrap();
        assert_eq!(m.claims()[0].size, 1.0);
        let s: f64 = m.claims().iter().map(|c| c.prob).sum();
        assert!((s - 1.0).abs() <= 1e-12);
        let pis: f64 = m.claim_intensities().iter().sum();
        assert!((pis - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn duplicate_sizes_rejected() {
        let err = MarketModel::new(0.3, 0.1, 1.0, [(1.0, 0.5), (1.0, 0.5)], 1.0).unwrap_err();
        assert!(err.contains(|e| matches!(e, ValidationError::DuplicateClaimSize { .. })));
    }

    #[test]
    fn utility_examples() {
        let u = CrraUtility::new(0.5).unwrap();
        assert_eq!(u.eval(UtilityFn::UTilde, 2.0).unwrap(), 0.5);
        assert_eq!(u.eval(UtilityFn::I, 4.0).unwrap(), 0.0625);
        let y = 3.0;
        let i = u.inverse_marginal(y);
        assert_relative_eq!(u.u(i) - y * i, 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(u.conjugate(y), 1.0 / 3.0, max_relative = 1e-15);
        assert_eq!(u.eval(UtilityFn::UTildePrime, 4.0).unwrap(), -0.0625);
        assert_eq!(u.eval(UtilityFn::U, 0.0).unwrap(), 0.0);
        assert!(u.eval(UtilityFn::UTilde, 0.0).is_err());
        assert!(u.eval(UtilityFn::I, -1.0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let m = MarketModel::new(0.2, 0.5, 0.0, Vec::<(f64, f64)>::new(), 1.0).unwrap();
        assert_relative_eq!(m.feasibility_threshold(0.0), 0.3, max_relative = 1e-15);
        assert_eq!(m.feasibility_threshold(1.0), 0.0);
        assert_eq!(base().feasibility_threshold(0.0), 0.0);
        assert_eq!(m.premium_regime(), PremiumRegime::CostlyCover);
    }
}
