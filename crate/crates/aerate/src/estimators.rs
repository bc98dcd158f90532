//! Online effect estimators over one trial's observation stream.
//!
//! The central object is the doubly robust per-round increment
//!
//! `h_t = 1[A=1](Y - f1_hat)/pi_t - 1[A=0](Y - f0_hat)/(1 - pi_t)
//!        + f1_hat - f0_hat`,
//!
//! where the predictions are made strictly before round `t`'s outcome is
//! revealed. Under that measurability requirement `h_t - theta0` is a
//! martingale difference sequence, which is what every downstream test
//! relies on. The plain inverse-probability increment drops the
//! augmentation term; the mixed estimator interpolates between the two
//! with a decaying weight `zeta_t`; the direct-method estimate averages
//! post-round regression contrasts supplied by the engine.
//!
//! One state instance also maintains, per increment family, the running
//! mean, the centered second moment for the variance estimate
//! `sigma2_hat = (1/t) * sum (h_i - theta_hat)^2`, and `sum z_i^2` with
//! `z_i = h_i - mu` keyed to the configured null value `mu`.

use thiserror::Error;

use crate::dgp::{DatasetSpec, Observation};
use crate::policy::RateRule;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("assignment probability {0} outside the open unit interval")]
    DomainPi(f64),
    #[error("no rounds absorbed yet")]
    Empty,
    #[error("variance needs at least 2 rounds, have {0}")]
    InsufficientData(usize),
    #[error("unrecognized estimator {0:?}")]
    BadKind(String),
}

/// Which estimate a cell reports. `Rct` is the plain inverse-probability
/// estimator under uniform assignment and `Opt` the doubly robust
/// estimator fed with oracle regression functions; both reuse the shared
/// accumulators rather than separate formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    A2ipw,
    Adaipw,
    Ma2ipw,
    Dm,
    Opt,
    Rct,
}

impl std::str::FromStr for EstimatorKind {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, EstimatorError> {
        match s.trim() {
            "a2ipw" => Ok(EstimatorKind::A2ipw),
            "adaipw" => Ok(EstimatorKind::Adaipw),
            "ma2ipw" => Ok(EstimatorKind::Ma2ipw),
            "dm" => Ok(EstimatorKind::Dm),
            "opt" => Ok(EstimatorKind::Opt),
            "rct" => Ok(EstimatorKind::Rct),
            other => Err(EstimatorError::BadKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::A2ipw => "a2ipw",
            EstimatorKind::Adaipw => "adaipw",
            EstimatorKind::Ma2ipw => "ma2ipw",
            EstimatorKind::Dm => "dm",
            EstimatorKind::Opt => "opt",
            EstimatorKind::Rct => "rct",
        };
        f.write_str(s)
    }
}

/// The four estimates available after any absorbed round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimates {
    pub a2ipw: f64,
    pub adaipw: f64,
    pub ma2ipw: f64,
    pub dm: f64,
}

impl Estimates {
    /// The slot a reporting kind maps to. The oracle estimator lives in
    /// the doubly robust slot (same increment with oracle inputs); the
    /// uniform-assignment baseline reports the inverse-probability slot.
    pub fn value_of(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::A2ipw | EstimatorKind::Opt => self.a2ipw,
            EstimatorKind::Adaipw | EstimatorKind::Rct => self.adaipw,
            EstimatorKind::Ma2ipw => self.ma2ipw,
            EstimatorKind::Dm => self.dm,
        }
    }
}

/// Running moments for one increment family. Welford's update keeps the
/// centered second moment stable over long horizons.
#[derive(Debug, Clone, Default)]
struct Tracker {
    n: usize,
    sum: f64,
    mean: f64,
    m2: f64,
    z_sq: f64,
}

impl Tracker {
    fn push(&mut self, v: f64, null_mu: f64) {
        self.n += 1;
        self.sum += v;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
        let z = v - null_mu;
        self.z_sq += z * z;
    }

    /// `(1/n) * sum (v_i - mean)^2`.
    fn variance(&self) -> f64 {
        if self.n == 0 { 0.0 } else { self.m2 / self.n as f64 }
    }
}

/// Accumulated estimator state for one trial.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    t: usize,
    a2: Tracker,
    ipw: Tracker,
    dm: Tracker,
    zeta_rule: RateRule,
    /// Null value the `z_i` accumulators are keyed to.
    null_mu: f64,
}

/// The doubly robust increment for one observation given pre-round
/// predictions.
pub fn a2ipw_increment(obs: &Observation, f1: f64, f0: f64) -> Result<f64, EstimatorError> {
    if !(obs.pi_used > 0.0 && obs.pi_used < 1.0) {
        return Err(EstimatorError::DomainPi(obs.pi_used));
    }
    let residual = if obs.action == 1 {
        (obs.y - f1) / obs.pi_used
    } else {
        -(obs.y - f0) / (1.0 - obs.pi_used)
    };
    Ok(residual + f1 - f0)
}

/// The plain inverse-probability increment under the recorded
/// probability.
pub fn adaipw_increment(obs: &Observation) -> Result<f64, EstimatorError> {
    if !(obs.pi_used > 0.0 && obs.pi_used < 1.0) {
        return Err(EstimatorError::DomainPi(obs.pi_used));
    }
    Ok(if obs.action == 1 { obs.y / obs.pi_used } else { -obs.y / (1.0 - obs.pi_used) })
}

/// The doubly robust increment fed with the oracle regression functions
/// of `spec`; the assignment probability is whatever the observation
/// records (the oracle design assigns with the true variance-optimal
/// probability).
pub fn opt_oracle_increment(obs: &Observation, spec: &DatasetSpec) -> Result<f64, EstimatorError> {
    a2ipw_increment(obs, spec.true_f(1, &obs.x), spec.true_f(0, &obs.x))
}

impl EstimatorState {
    pub fn new(zeta_rule: RateRule, null_mu: f64) -> Self {
        Self {
            t: 0,
            a2: Tracker::default(),
            ipw: Tracker::default(),
            dm: Tracker::default(),
            zeta_rule,
            null_mu,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn null_mu(&self) -> f64 {
        self.null_mu
    }

    pub fn sum_h(&self) -> f64 {
        self.a2.sum
    }

    pub fn sum_h_ipw(&self) -> f64 {
        self.ipw.sum
    }

    /// Absorbs one round. `f1` and `f0` must be the predictions snapshot
    /// taken before this round's outcome was revealed; the engine asserts
    /// that freshness before calling.
    pub fn update(&mut self, obs: &Observation, f1: f64, f0: f64) -> Result<(), EstimatorError> {
        let h = a2ipw_increment(obs, f1, f0)?;
        let h_ipw = adaipw_increment(obs)?;
        self.t += 1;
        debug_assert_eq!(self.t, obs.t, "rounds must arrive in order");
        self.a2.push(h, self.null_mu);
        self.ipw.push(h_ipw, self.null_mu);
        Ok(())
    }

    /// Adds one post-round regression contrast `f_t(1,x) - f_t(0,x)`.
    /// Rounds where an arm is still cold contribute nothing; the
    /// direct-method divisor stays `t` regardless.
    pub fn update_dm(&mut self, contrast: f64) {
        self.dm.push(contrast, self.null_mu);
    }

    pub fn estimates(&self) -> Result<Estimates, EstimatorError> {
        if self.t == 0 {
            return Err(EstimatorError::Empty);
        }
        let t = self.t as f64;
        let a2 = self.a2.sum / t;
        let ada = self.ipw.sum / t;
        let zeta = self.zeta_rule.at(self.t);
        // written so that ma2ipw - a2ipw equals zeta * (adaipw - a2ipw)
        // up to one rounding, which downstream property checks rely on
        let ma2 = a2 + zeta * (ada - a2);
        Ok(Estimates { a2ipw: a2, adaipw: ada, ma2ipw: ma2, dm: self.dm.sum / t })
    }

    /// `(1/t) * sum (h_i - theta_hat)^2` over the doubly robust
    /// increments.
    pub fn sigma_hat_sq(&self) -> Result<f64, EstimatorError> {
        if self.t < 2 {
            return Err(EstimatorError::InsufficientData(self.t));
        }
        Ok(self.a2.variance())
    }

    /// Same variance keyed to a reporting kind; 0.0 before two rounds.
    pub fn sigma_hat_sq_of(&self, kind: EstimatorKind) -> f64 {
        self.tracker_of(kind).variance()
    }

    /// Running `sum z_i^2` for a reporting kind.
    pub fn z_sq_of(&self, kind: EstimatorKind) -> f64 {
        self.tracker_of(kind).z_sq
    }

    /// Running increment sum for a reporting kind, the statistic the
    /// anytime boundary is compared against.
    pub fn sum_of(&self, kind: EstimatorKind) -> f64 {
        self.tracker_of(kind).sum
    }

    /// The mixture and oracle kinds test with the doubly robust
    /// increments: the mixture's weight on the other component vanishes,
    /// and the oracle shares the increment formula outright. The
    /// direct-method trackers exist for completeness but carry no
    /// martingale guarantee.
    fn tracker_of(&self, kind: EstimatorKind) -> &Tracker {
        match kind {
            EstimatorKind::A2ipw | EstimatorKind::Ma2ipw | EstimatorKind::Opt => &self.a2,
            EstimatorKind::Adaipw | EstimatorKind::Rct => &self.ipw,
            EstimatorKind::Dm => &self.dm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::make_synthetic;
    use crate::rng::TrialRng;
    use proptest::prelude::*;
    use rand::Rng;

    fn obs(t: usize, action: usize, y: f64, pi: f64) -> Observation {
        Observation { t, x: vec![0.0], action, y, pi_used: pi, xi: 0.0 }
    }

    #[test]
    fn a2ipw_increment_examples() {
        // zero residual leaves only the contrast
        let h = a2ipw_increment(&obs(1, 1, 0.8, 0.37), 0.8, 0.3).unwrap();
        assert!((h - 0.5).abs() < 1e-15);

        let h = a2ipw_increment(&obs(1, 1, 1.0, 0.5), 0.0, 0.0).unwrap();
        assert_eq!(h, 2.0);

        let h = a2ipw_increment(&obs(1, 0, 1.0, 0.6), 0.8, 0.3).unwrap();
        assert!((h - (-1.25)).abs() < 1e-12);

        assert_eq!(
            a2ipw_increment(&obs(1, 1, 1.0, 0.0), 0.0, 0.0),
            Err(EstimatorError::DomainPi(0.0))
        );
        assert_eq!(
            a2ipw_increment(&obs(1, 1, 1.0, 1.0), 0.0, 0.0),
            Err(EstimatorError::DomainPi(1.0))
        );
    }

    #[test]
    fn adaipw_increment_examples() {
        assert_eq!(adaipw_increment(&obs(1, 1, 0.0, 0.5)).unwrap(), 0.0);
        assert_eq!(adaipw_increment(&obs(1, 1, 1.0, 0.25)).unwrap(), 4.0);
        assert_eq!(adaipw_increment(&obs(1, 0, 2.0, 0.5)).unwrap(), -4.0);
    }

    #[test]
    fn update_accumulates_means_and_z_sq() {
        let mut st = EstimatorState::new(RateRule::TPow(-1.0 / 1.5), 0.0);
        assert_eq!(st.estimates(), Err(EstimatorError::Empty));
        let mut hs = Vec::new();
        for (i, (a, y, pi)) in [(1, 1.0, 0.5), (0, 0.5, 0.4), (1, -0.2, 0.7)].iter().enumerate() {
            let o = obs(i + 1, *a, *y, *pi);
            st.update(&o, 0.0, 0.0).unwrap();
            hs.push(a2ipw_increment(&o, 0.0, 0.0).unwrap());
        }
        let est = st.estimates().unwrap();
        let sum: f64 = hs.iter().sum();
        assert_eq!(est.a2ipw, sum / 3.0);
        // with null mu = 0, sum z^2 is just sum h^2
        let sum_sq: f64 = hs.iter().map(|h| h * h).sum();
        assert!((st.z_sq_of(EstimatorKind::A2ipw) - sum_sq).abs() < 1e-12);
    }

    #[test]
    fn zero_predictions_collapse_to_ipw() {
        let rows = [(1usize, 0.7, 0.55), (0, 1.3, 0.61), (1, -2.0, 0.33), (0, 0.0, 0.5)];
        for (i, (a, y, pi)) in rows.iter().enumerate() {
            let o = obs(i + 1, *a, *y, *pi);
            assert_eq!(
                a2ipw_increment(&o, 0.0, 0.0).unwrap(),
                adaipw_increment(&o).unwrap()
            );
        }
    }

    #[test]
    fn sigma_hat_examples() {
        let mut st = EstimatorState::new(RateRule::InvSqrtT, 0.0);
        // h = 0 then h = 2 under zero predictions
        st.update(&obs(1, 1, 0.0, 0.5), 0.0, 0.0).unwrap();
        assert_eq!(st.sigma_hat_sq(), Err(EstimatorError::InsufficientData(1)));
        st.update(&obs(2, 1, 1.0, 0.5), 0.0, 0.0).unwrap();
        assert_eq!(st.sigma_hat_sq().unwrap(), 1.0);

        let mut flat = EstimatorState::new(RateRule::InvSqrtT, 0.0);
        for t in 1..=5 {
            // constant increments: y = f1, contrast 1.5 every round
            flat.update(&obs(t, 1, 2.0, 0.5), 2.0, 0.5).unwrap();
        }
        assert_eq!(flat.sigma_hat_sq().unwrap(), 0.0);
        assert_eq!(flat.estimates().unwrap().a2ipw, 1.5);
    }

    #[test]
    fn mixture_weights() {
        // t = 4 with the inverse-sqrt rule gives zeta = 1/2
        let mut st = EstimatorState::new(RateRule::InvSqrtT, 0.0);
        for t in 1..=4 {
            // h = 2(y - f1) + f1 = 4, ipw increment = 2y = 2
            st.update(&obs(t, 1, 1.0, 0.5), -2.0, 0.0).unwrap();
        }
        let est = st.estimates().unwrap();
        assert_eq!(est.a2ipw, 4.0);
        assert_eq!(est.adaipw, 2.0);
        assert_eq!(est.ma2ipw, 3.0);

        // an effectively zero weight leaves the doubly robust value
        let mut frozen = EstimatorState::new(RateRule::TPow(-400.0), 0.0);
        for t in 1..=4 {
            frozen.update(&obs(t, 1, 1.0, 0.5), -2.0, 0.0).unwrap();
        }
        let est = frozen.estimates().unwrap();
        assert_eq!(est.ma2ipw, est.a2ipw);
    }

    #[test]
    fn dm_average_uses_round_count() {
        let mut st = EstimatorState::new(RateRule::InvSqrtT, 0.0);
        st.update(&obs(1, 1, 1.0, 0.5), 0.0, 0.0).unwrap();
        st.update(&obs(2, 0, 1.0, 0.5), 0.0, 0.0).unwrap();
        // first round's contrast was unavailable (cold arm), only one lands
        st.update_dm(0.9);
        assert!((st.estimates().unwrap().dm - 0.45).abs() < 1e-15);
    }

    #[test]
    fn oracle_increment_zero_residual_gives_contrast() {
        let spec = make_synthetic(1).unwrap();
        let x = vec![0.1, -0.2, 0.3, 0.0, 0.5];
        let pi = 0.8 / 1.1;
        let y = spec.true_f(1, &x);
        let o = Observation { t: 1, x: x.clone(), action: 1, y, pi_used: pi, xi: 0.0 };
        let h = opt_oracle_increment(&o, &spec).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
    }

    #[test]
    fn frozen_history_increments_center_on_the_effect() {
        // fixed predictions and probability: fresh draws make the
        // increment mean the true effect
        let spec = make_synthetic(1).unwrap();
        let mut rng = TrialRng::from_seed(11);
        let (f1, f0, pi) = (0.6, 0.1, 0.45);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for t in 1..=n {
            let (x, y0, y1) = spec.sample_round(&mut rng);
            let xi: f64 = rng.assignment.random();
            let action = usize::from(xi <= pi);
            let y = if action == 1 { y1 } else { y0 };
            let o = Observation { t, x, action, y, pi_used: pi, xi };
            let h = a2ipw_increment(&o, f1, f0).unwrap();
            sum += h;
            sum_sq += h * h;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - spec.true_ate()).abs() < 4.0 * se,
            "mean {mean} target 0.5 se {se}"
        );
    }

    #[test]
    fn variance_estimate_converges_under_oracle_inputs() {
        // constant-variance process: the limit is
        // v1/pi + v0/(1-pi) + 0 = 0.64/(8/11) + 0.09/(3/11) = 1.21
        let spec = make_synthetic(1).unwrap();
        let mut rng = TrialRng::from_seed(5);
        let pi = 0.8 / 1.1;
        let mut st = EstimatorState::new(RateRule::InvSqrtT, 0.0);
        for t in 1..=10_000usize {
            let (x, y0, y1) = spec.sample_round(&mut rng);
            let xi: f64 = rng.assignment.random();
            let action = usize::from(xi <= pi);
            let y = if action == 1 { y1 } else { y0 };
            let o = Observation {
                t,
                x: x.clone(),
                action,
                y,
                pi_used: pi,
                xi,
            };
            let f1 = spec.true_f(1, &x);
            let f0 = spec.true_f(0, &x);
            st.update(&o, f1, f0).unwrap();
        }
        let s2 = st.sigma_hat_sq().unwrap();
        assert!((s2 - 1.21).abs() < 0.121, "sigma2 {s2}");
    }

    proptest! {
        #[test]
        fn mixture_gap_is_exactly_scaled(
            ys in prop::collection::vec((-3.0f64..3.0, 0.2f64..0.8), 1..40),
        ) {
            let mut st = EstimatorState::new(RateRule::TPow(-1.0 / 1.5), 0.0);
            for (i, (y, pi)) in ys.iter().enumerate() {
                let action = usize::from(i % 2 == 0);
                st.update(&obs(i + 1, action, *y, *pi), 0.4, -0.1).unwrap();
            }
            let est = st.estimates().unwrap();
            let zeta = RateRule::TPow(-1.0 / 1.5).at(ys.len());
            let lhs = (est.ma2ipw - est.a2ipw).abs();
            let rhs = zeta * (est.adaipw - est.a2ipw).abs();
            // identical up to the one rounding in the final addition
            let slack = f64::EPSILON * est.a2ipw.abs().max(1.0);
            prop_assert!(lhs <= rhs + slack, "lhs {lhs} rhs {rhs}");
        }

        #[test]
        fn z_sq_is_nondecreasing(
            rows in prop::collection::vec((-4.0f64..4.0, 0.1f64..0.9), 2..30),
            mu in -1.0f64..1.0,
        ) {
            let mut st = EstimatorState::new(RateRule::InvSqrtT, mu);
            let mut last = 0.0;
            for (i, (y, pi)) in rows.iter().enumerate() {
                st.update(&obs(i + 1, usize::from(*y > 0.0), *y, *pi), 0.0, 0.0).unwrap();
                let z = st.z_sq_of(EstimatorKind::A2ipw);
                prop_assert!(z >= last);
                last = z;
            }
        }
    }
}
