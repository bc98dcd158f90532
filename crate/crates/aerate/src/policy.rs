//! Variance-optimal assignment probabilities and the stabilized adaptive
//! policy built on them.
//!
//! For two arms the variance-minimizing assignment probabilities are
//!
//! * `pi_ipw(1|x)  = sqrt(e1) / (sqrt(e1) + sqrt(e0))` over second moments,
//! * `pi_aipw(1|x) = sqrt(v1) / (sqrt(v1) + sqrt(v0))` over conditional
//!   variances,
//!
//! each the argmin of the objective `b(q) = e1/q + e0/(1-q)` with the
//! matching numerators. The adaptive policy mixes the plug-in optimum with
//! uniform assignment,
//!
//! `pi_t(1|x) = gamma_t/2 + (1 - gamma_t) * pi_aipw(nu1_hat, nu0_hat)`,
//!
//! with `gamma_t = min(1, 1/sqrt(t))` by default, which keeps `1/pi_t`
//! bounded by `2/gamma_t` without any extra clamping.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("degenerate input: both moments are zero")]
    Degenerate,
    #[error("probability {0} outside the open unit interval")]
    Domain(f64),
    #[error("unrecognized rate rule {0:?}, expected inv_sqrt_t, inv_t, or t_pow(p)")]
    BadRule(String),
}

/// A decay schedule `t -> min(1, t^p)`, shared by the policy mixing weight
/// gamma and the estimator mixing weight zeta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateRule {
    /// `t^(-1/2)`, the default gamma schedule.
    InvSqrtT,
    /// `t^(-1)`.
    InvT,
    /// `t^p` for a configured exponent, e.g. `t_pow(-1/1.5)`.
    TPow(f64),
}

impl RateRule {
    pub fn at(self, t: usize) -> f64 {
        let t = t as f64;
        let raw = match self {
            RateRule::InvSqrtT => t.powf(-0.5),
            RateRule::InvT => t.recip(),
            RateRule::TPow(p) => t.powf(p),
        };
        raw.min(1.0)
    }
}

impl FromStr for RateRule {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, PolicyError> {
        let s = s.trim();
        match s {
            "inv_sqrt_t" => return Ok(RateRule::InvSqrtT),
            "inv_t" => return Ok(RateRule::InvT),
            _ => {}
        }
        let inner = s
            .strip_prefix("t_pow(")
            .and_then(|rest| rest.strip_suffix(')'))
            .ok_or_else(|| PolicyError::BadRule(s.to_string()))?;
        // the exponent may be written as a ratio, e.g. -1/1.5
        let p = if let Some((num, den)) = inner.split_once('/') {
            let n: f64 = num.trim().parse().map_err(|_| PolicyError::BadRule(s.to_string()))?;
            let d: f64 = den.trim().parse().map_err(|_| PolicyError::BadRule(s.to_string()))?;
            n / d
        } else {
            inner.trim().parse().map_err(|_| PolicyError::BadRule(s.to_string()))?
        };
        if !p.is_finite() {
            return Err(PolicyError::BadRule(s.to_string()));
        }
        Ok(RateRule::TPow(p))
    }
}

impl fmt::Display for RateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateRule::InvSqrtT => write!(f, "inv_sqrt_t"),
            RateRule::InvT => write!(f, "inv_t"),
            RateRule::TPow(p) => write!(f, "t_pow({p})"),
        }
    }
}

/// How an assignment probability was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySource {
    Warmup,
    Adaptive,
    Fixed,
    Oracle,
}

/// One round's assignment probability with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySnapshot {
    /// Probability of assigning action 1.
    pub pi1: f64,
    /// Mixing weight in force this round; 1.0 outside adaptive rounds.
    pub gamma_t: f64,
    pub source: PolicySource,
}

impl PolicySnapshot {
    pub fn warmup() -> Self {
        Self { pi1: 0.5, gamma_t: 1.0, source: PolicySource::Warmup }
    }

    pub fn fixed(pi1: f64) -> Self {
        Self { pi1, gamma_t: 1.0, source: PolicySource::Fixed }
    }

    pub fn oracle(pi1: f64) -> Self {
        Self { pi1, gamma_t: 1.0, source: PolicySource::Oracle }
    }
}

/// `sqrt(e1) / (sqrt(e1) + sqrt(e0))` over second moments.
pub fn optimal_pi_ipw(e1: f64, e0: f64) -> Result<f64, PolicyError> {
    debug_assert!(e1 >= 0.0 && e0 >= 0.0);
    if e1 + e0 == 0.0 {
        return Err(PolicyError::Degenerate);
    }
    let (s1, s0) = (e1.sqrt(), e0.sqrt());
    Ok(s1 / (s1 + s0))
}

/// `sqrt(v1) / (sqrt(v1) + sqrt(v0))` over conditional variances.
pub fn optimal_pi_aipw(v1: f64, v0: f64) -> Result<f64, PolicyError> {
    optimal_pi_ipw(v1, v0)
}

/// The objective `e1/q + e0/(1-q)` minimized by the optimal probabilities;
/// kept as an independent oracle for grid-searching the argmin.
pub fn variance_objective(q: f64, e1: f64, e0: f64) -> Result<f64, PolicyError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(PolicyError::Domain(q));
    }
    Ok(e1 / q + e0 / (1.0 - q))
}

/// The stabilized adaptive probability for round `t` given a pre-round
/// snapshot `(f1_hat, f0_hat, nu1_hat, nu0_hat)`. The variance estimates
/// must already be floored strictly above zero, so the inner ratio cannot
/// degenerate.
pub fn adaptive_pi(t: usize, fv: (f64, f64, f64, f64), gamma_rule: RateRule) -> PolicySnapshot {
    let (_, _, nu1, nu0) = fv;
    debug_assert!(nu1 > 0.0 && nu0 > 0.0, "variance estimates must be pre-floored");
    let gamma = gamma_rule.at(t);
    let inner = optimal_pi_aipw(nu1, nu0).expect("floored variances are positive");
    PolicySnapshot {
        pi1: gamma * 0.5 + (1.0 - gamma) * inner,
        gamma_t: gamma,
        source: PolicySource::Adaptive,
    }
}
