//! Hypothesis testing for the null `theta0 = mu`: fixed-horizon z-test,
//! Bonferroni-corrected batch looks, and an anytime boundary of iterated-
//! logarithm shape, plus the finite-sample concentration bound and the
//! minimum-sample-size formula.
//!
//! The anytime boundary over the running `S_t = sum z_i^2` is
//!
//! `q_t = c * (ln(1/alpha) + sqrt(2 S_t ln(ln(S_t) / alpha)))`
//!
//! with `c = 1.1` by default, inactive while `S_t <= e`; the null is
//! rejected at the first `t` with `|sum h_i - t mu| > q_t`.
//!
//! Normal numerics are self-contained: the CDF uses rational Chebyshev
//! approximations of the error function (absolute error well under
//! 1e-10), and the quantile uses a rational approximation refined by one
//! Newton step against that CDF (absolute error under 1e-8).

use std::f64::consts::{E, PI, SQRT_2};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TestError {
    #[error("probability {0} outside the open unit interval")]
    Probability(f64),
    #[error("effect size {0} must be positive")]
    Effect(f64),
    #[error("looks must be a nonempty strictly increasing list of rounds >= 2")]
    Looks,
    #[error("unrecognized test mode {0:?}, expected fixed, bf, or lil")]
    BadMode(String),
}

/// Which testing regime governs a trial's reported decision and early
/// stopping. The trial loop still evaluates every regime for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMode {
    /// Single z-test at the horizon.
    Fixed,
    /// z-tests at the scheduled looks with a fixed-m Bonferroni split.
    Bonferroni,
    /// Anytime boundary checked every round.
    Lil,
}

impl std::str::FromStr for TestMode {
    type Err = TestError;

    fn from_str(s: &str) -> Result<Self, TestError> {
        match s.trim() {
            "fixed" => Ok(TestMode::Fixed),
            "bf" => Ok(TestMode::Bonferroni),
            "lil" => Ok(TestMode::Lil),
            other => Err(TestError::BadMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub alpha: f64,
    /// Null value being tested.
    pub mu: f64,
    pub mode: TestMode,
    /// Scheduled batch-test rounds.
    pub looks: Vec<usize>,
    pub lil_constant: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            mu: 0.0,
            mode: TestMode::Fixed,
            looks: vec![150, 250, 350, 450],
            lil_constant: 1.1,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<(), TestError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TestError::Probability(self.alpha));
        }
        if self.looks.is_empty() {
            if self.mode == TestMode::Bonferroni {
                return Err(TestError::Looks);
            }
        } else if self.looks[0] < 2 || self.looks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TestError::Looks);
        }
        Ok(())
    }
}

/// Outcome of one test evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestDecision {
    pub rejected: bool,
    /// Round of rejection, when rejected.
    pub at_round: Option<usize>,
    pub statistic: f64,
    /// Two-sided p-value for z-tests; the boundary value for anytime
    /// checks.
    pub boundary_or_pvalue: f64,
}

// Rational Chebyshev approximation of erf/erfc, double-precision
// coefficients. Three regimes by |x|; the exp(-x^2) factor is split as
// exp(-q^2) * exp(-(x-q)(x+q)) with q = x truncated to 1/16ths, which
// preserves relative accuracy far into the tail.

const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const ERF_THRESH: f64 = 0.46875;
const ERFC_XBIG: f64 = 26.543;
const INV_SQRT_PI: f64 = 5.6418958354775628695e-1;

/// erf(x) on the central interval |x| <= 0.46875.
fn erf_core(x: f64) -> f64 {
    let z = x * x;
    let mut num = ERF_A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + ERF_A[i]) * z;
        den = (den + ERF_B[i]) * z;
    }
    x * (num + ERF_A[3]) / (den + ERF_B[3])
}

/// erfc(y) for y > 0.46875.
fn erfc_tail(y: f64) -> f64 {
    if y >= ERFC_XBIG {
        return 0.0;
    }
    let raw = if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        (num + ERF_C[7]) / (den + ERF_D[7])
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        (INV_SQRT_PI - r) / y
    };
    let ysq = (y * 16.0).floor() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * raw
}

fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let pos = if y <= ERF_THRESH { 1.0 - erf_core(y) } else { erfc_tail(y) };
    if x < 0.0 { 2.0 - pos } else { pos }
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

// Rational approximation of the inverse normal CDF (central and tail
// branches) before refinement.

const INV_A: [f64; 6] = [
    -3.969683028665376e1,
    2.209460984245205e2,
    -2.759285104469687e2,
    1.383577518672690e2,
    -3.066479806614716e1,
    2.506628277459239e0,
];
const INV_B: [f64; 5] = [
    -5.447609879822406e1,
    1.615858368580409e2,
    -1.556989798598866e2,
    6.680131188771972e1,
    -1.328068155288572e1,
];
const INV_C: [f64; 6] = [
    -7.784894002430293e-3,
    -3.223964580411365e-1,
    -2.400758277161838e0,
    -2.549732539343734e0,
    4.374664141464968e0,
    2.938163982698783e0,
];
const INV_D: [f64; 4] = [
    7.784695709041462e-3,
    3.224671290700398e-1,
    2.445134137142996e0,
    3.754408661907416e0,
];
const INV_P_LOW: f64 = 0.02425;

fn inv_tail(q: f64) -> f64 {
    (((((INV_C[0] * q + INV_C[1]) * q + INV_C[2]) * q + INV_C[3]) * q + INV_C[4]) * q + INV_C[5])
        / ((((INV_D[0] * q + INV_D[1]) * q + INV_D[2]) * q + INV_D[3]) * q + 1.0)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64, TestError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(TestError::Probability(p));
    }
    let x = if p < INV_P_LOW {
        inv_tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - INV_P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((INV_A[0] * r + INV_A[1]) * r + INV_A[2]) * r + INV_A[3]) * r + INV_A[4]) * r
            + INV_A[5])
            * q
            / (((((INV_B[0] * r + INV_B[1]) * r + INV_B[2]) * r + INV_B[3]) * r + INV_B[4]) * r
                + 1.0)
    } else {
        -inv_tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    // one Newton step against the implemented CDF
    let err = normal_cdf(x) - p;
    let pdf = normal_pdf(x);
    Ok(if pdf > 0.0 { x - err / pdf } else { x })
}

/// Two-sided z-test of `theta_hat` against `mu` at level `alpha` using
/// the increment-variance estimate: reject when
/// `|sqrt(t) (theta_hat - mu)| > sqrt(sigma_hat_sq) z_{1-alpha/2}`.
pub fn z_test(theta_hat: f64, mu: f64, sigma_hat_sq: f64, t: usize, alpha: f64) -> TestDecision {
    debug_assert!(t >= 2);
    debug_assert!(sigma_hat_sq >= 0.0);
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    if sigma_hat_sq == 0.0 {
        // degenerate variance: any deviation is unambiguous
        return if theta_hat == mu {
            TestDecision { rejected: false, at_round: None, statistic: 0.0, boundary_or_pvalue: 1.0 }
        } else {
            TestDecision {
                rejected: true,
                at_round: Some(t),
                statistic: f64::INFINITY,
                boundary_or_pvalue: 0.0,
            }
        };
    }
    let z = (t as f64).sqrt() * (theta_hat - mu) / sigma_hat_sq.sqrt();
    let p = 2.0 * (1.0 - normal_cdf(z.abs()));
    let crit = normal_quantile(1.0 - alpha / 2.0).expect("level already validated");
    TestDecision {
        rejected: z.abs() > crit,
        at_round: (z.abs() > crit).then_some(t),
        statistic: z,
        boundary_or_pvalue: p,
    }
}

/// Fixed-m Bonferroni decision at one scheduled look: reject when the
/// look's p-value beats `alpha / m` with `m` the total number of looks.
pub fn bonferroni_step(look_index: usize, total_looks: usize, p_value: f64, alpha: f64) -> bool {
    debug_assert!(look_index >= 1 && look_index <= total_looks);
    p_value < alpha / total_looks as f64
}

/// The anytime boundary at the current `sum_z_sq`. Returns `None` while
/// `sum_z_sq <= e`, where the iterated logarithm is not yet meaningful
/// and no rejection is possible.
pub fn lil_boundary(alpha: f64, sum_z_sq: f64, constant: f64) -> Option<f64> {
    debug_assert!(sum_z_sq >= 0.0);
    if sum_z_sq <= E {
        return None;
    }
    let inner = (sum_z_sq.ln() / alpha).ln();
    Some(constant * ((1.0 / alpha).ln() + (2.0 * sum_z_sq * inner).sqrt()))
}

/// One anytime check: reject iff `|sum_h - t mu|` strictly exceeds the
/// active boundary.
pub fn lil_step(t: usize, sum_h: f64, mu: f64, boundary: Option<f64>) -> bool {
    match boundary {
        None => false,
        Some(q) => (sum_h - t as f64 * mu).abs() > q,
    }
}

/// `3(e-2) + 2 sqrt(173 / (2(e-2))) ln(4/delta)`.
pub fn concentration_c0(delta: f64) -> Result<f64, TestError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TestError::Probability(delta));
    }
    let em2 = E - 2.0;
    Ok(3.0 * em2 + 2.0 * (173.0 / (2.0 * em2)).sqrt() * (4.0 / delta).ln())
}

/// `6(e-2)`.
pub fn concentration_c1() -> f64 {
    6.0 * (E - 2.0)
}

/// Finite-sample concentration envelope for `|sum z_i|` at confidence
/// `1 - delta`:
///
/// `(2C/e^2) (C0 + sqrt(2 C1 V (loglog V + ln(4/delta))))` with
/// `V = c3_abs (e^4/(4C^2) sum z_i^2 + 2 C0 C4 / e^2)`.
///
/// `c` must dominate `max |z_i|` and `c4` the conditional-variance
/// fluctuation of the squares; both are caller-supplied envelopes. The
/// absolute constant `c3_abs` defaults to 1 in callers; validation is by
/// coverage, not tightness. The iterated logarithm is floored at zero
/// as a small-V burn-in guard.
pub fn variance_upper_bound(
    delta: f64,
    z_history: &[f64],
    c: f64,
    c4: f64,
    c3_abs: f64,
) -> Result<f64, TestError> {
    let c0 = concentration_c0(delta)?;
    let c1 = concentration_c1();
    debug_assert!(z_history.iter().all(|z| z.abs() <= c), "c must bound |z_i|");
    let sum_z_sq: f64 = z_history.iter().map(|z| z * z).sum();
    let e_sq = E * E;
    let v = c3_abs * (e_sq * e_sq / (4.0 * c * c) * sum_z_sq + 2.0 * c0 * c4 / e_sq);
    let loglog = v.ln().max(1.0).ln();
    Ok(2.0 * c / e_sq * (c0 + (2.0 * c1 * v * (loglog + (4.0 / delta).ln())).sqrt()))
}

/// Minimum rounds for detecting an effect of size `delta_effect` at
/// levels `(alpha, beta)` under increment variance `sigma_sq`:
/// `ceil(sigma_sq / delta^2 (z_{1-alpha/2} - z_beta)^2)`.
pub fn min_sample_size(
    delta_effect: f64,
    alpha: f64,
    beta: f64,
    sigma_sq: f64,
) -> Result<u64, TestError> {
    if delta_effect <= 0.0 {
        return Err(TestError::Effect(delta_effect));
    }
    let za = normal_quantile(1.0 - alpha / 2.0)?;
    let zb = normal_quantile(beta)?;
    let spread = za - zb;
    Ok((sigma_sq / (delta_effect * delta_effect) * spread * spread).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-10);
        assert!((normal_cdf(2.0) - 0.9772498680518208).abs() < 1e-10);
        assert!((normal_cdf(3.0) - 0.9986501019683699).abs() < 1e-10);
        assert!((normal_cdf(-1.0) - 0.1586552539314571).abs() < 1e-10);
        assert!((normal_cdf(1.96) - 0.97500210).abs() < 1e-7);
        // deep tail stays within [0,1] and is monotone
        assert!(normal_cdf(-40.0) >= 0.0);
        assert!(normal_cdf(40.0) <= 1.0);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        assert!((normal_quantile(0.2).unwrap() + 0.8416212).abs() < 1e-6);
        assert_eq!(normal_quantile(0.0), Err(TestError::Probability(0.0)));
        assert_eq!(normal_quantile(1.0), Err(TestError::Probability(1.0)));
    }

    #[test]
    fn quantile_cdf_round_trip() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let x = normal_quantile(p).unwrap();
            assert!(
                (normal_cdf(x) - p).abs() < 1e-8,
                "p={p}: quantile {x}, cdf back {}",
                normal_cdf(x)
            );
        }
        // deeper tails than the grid
        for &p in &[1e-6, 1e-4, 0.9999, 0.999999] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() < 1e-9, "p={p}");
        }
    }

    #[test]
    fn z_test_examples() {
        let null = z_test(0.5, 0.5, 2.0, 100, 0.05);
        assert!(!null.rejected);
        assert_eq!(null.statistic, 0.0);

        // |z| = 2.5: theta - mu = 2.5 / sqrt(100) with unit variance
        let hit = z_test(0.25, 0.0, 1.0, 100, 0.05);
        assert!(hit.rejected);
        assert_eq!(hit.at_round, Some(100));
        assert!((hit.statistic - 2.5).abs() < 1e-12);

        let miss = z_test(0.1, 0.0, 1.0, 100, 0.05);
        assert!(!miss.rejected);
        assert!((miss.statistic - 1.0).abs() < 1e-12);

        // degenerate variance
        assert!(z_test(0.3, 0.0, 0.0, 50, 0.05).rejected);
        assert!(!z_test(0.0, 0.0, 0.0, 50, 0.05).rejected);
    }

    #[test]
    fn bonferroni_examples() {
        assert!(bonferroni_step(1, 4, 0.01, 0.05));
        assert!(!bonferroni_step(2, 4, 0.02, 0.05));
        // single look reduces to the plain threshold
        assert!(bonferroni_step(1, 1, 0.049, 0.05));
        assert!(!bonferroni_step(1, 1, 0.051, 0.05));
    }

    #[test]
    fn lil_boundary_examples() {
        assert_eq!(lil_boundary(0.05, 0.0, 1.1), None);
        assert_eq!(lil_boundary(0.05, std::f64::consts::E, 1.1), None);
        let q = lil_boundary(0.05, 100.0, 1.1).unwrap();
        assert!((q - 36.3792).abs() < 5e-3, "q {q}");
        let q200 = lil_boundary(0.05, 200.0, 1.1).unwrap();
        assert!(q200 > q);
    }

    #[test]
    fn lil_step_examples() {
        assert!(!lil_step(10, 100.0, 0.0, None));
        // boundary hit exactly: strict comparison accepts
        assert!(!lil_step(10, 36.0, 0.0, Some(36.0)));
        assert!(lil_step(10, 36.0001, 0.0, Some(36.0)));
        assert!(lil_step(10, -36.0001, 0.0, Some(36.0)));
        // mu shifts the center
        assert!(!lil_step(10, 5.0, 0.5, Some(36.0)));
    }

    #[test]
    fn concentration_constants() {
        assert!((concentration_c0(0.05).unwrap() - 98.3305).abs() < 1e-3);
        assert!((concentration_c1() - 4.309691).abs() < 1e-6);
        assert_eq!(concentration_c0(0.0), Err(TestError::Probability(0.0)));
    }

    #[test]
    fn min_sample_size_examples() {
        assert_eq!(min_sample_size(1.0, 0.05, 0.2, 1.0).unwrap(), 8);
        assert_eq!(min_sample_size(0.5, 0.05, 0.2, 1.0).unwrap(), 32);
        assert_eq!(min_sample_size(2.0, 0.05, 0.2, 1.0).unwrap(), 2);
        assert_eq!(min_sample_size(0.0, 0.05, 0.2, 1.0), Err(TestError::Effect(0.0)));
    }

    #[test]
    fn config_validation() {
        assert!(TestConfig::default().validate().is_ok());
        let bad_alpha = TestConfig { alpha: 0.0, ..Default::default() };
        assert!(bad_alpha.validate().is_err());
        let looks_ok = TestConfig { mode: TestMode::Bonferroni, ..Default::default() };
        assert!(looks_ok.validate().is_ok());
        let looks_bad = TestConfig { looks: vec![150, 150], ..Default::default() };
        assert_eq!(looks_bad.validate(), Err(TestError::Looks));
        let looks_missing =
            TestConfig { mode: TestMode::Bonferroni, looks: vec![], ..Default::default() };
        assert_eq!(looks_missing.validate(), Err(TestError::Looks));
        assert_eq!("bf".parse::<TestMode>().unwrap(), TestMode::Bonferroni);
        assert!("wald".parse::<TestMode>().is_err());
    }

    proptest! {
        #[test]
        fn cdf_symmetry_and_monotonicity(x in -8.0f64..8.0, dx in 0.001f64..2.0) {
            prop_assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-14);
            // Monotone everywhere; strictly so only while a dx-step still
            // moves the cdf by more than one ulp of 1.0 (the upper tail
            // saturates near x ~ 7.5 for the smallest dx).
            prop_assert!(normal_cdf(x + dx) >= normal_cdf(x));
            if x + dx <= 7.0 {
                prop_assert!(normal_cdf(x + dx) > normal_cdf(x));
            }
        }

        #[test]
        fn boundary_monotone_in_sum(s in 3.0f64..1e6, extra in 1.0f64..100.0) {
            let a = lil_boundary(0.05, s, 1.1).unwrap();
            let b = lil_boundary(0.05, s + extra, 1.1).unwrap();
            prop_assert!(b > a);
            // sublinear growth: the boundary falls behind S itself
            if s > 100.0 {
                prop_assert!(a / s < 1.0);
            }
        }

        #[test]
        fn bonferroni_matches_plain_threshold(
            p in 0.0f64..1.0,
            m in 1usize..10,
            alpha in 0.01f64..0.2,
        ) {
            let k = 1 + (m - 1) / 2;
            prop_assert_eq!(bonferroni_step(k, m, p, alpha), p < alpha / m as f64);
        }

        #[test]
        fn variance_bound_monotone_in_history(
            zs in prop::collection::vec(-2.0f64..2.0, 2..50),
        ) {
            let shorter = variance_upper_bound(0.05, &zs[..zs.len() - 1], 2.0, 4.0, 1.0).unwrap();
            let longer = variance_upper_bound(0.05, &zs, 2.0, 4.0, 1.0).unwrap();
            prop_assert!(longer >= shorter);
        }
    }
}
