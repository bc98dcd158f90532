//! The per-trial simulation loop shared by the adaptive design and its
//! baselines.
//!
//! One round proceeds as: draw the covariate and both potential outcomes,
//! take a prediction snapshot from everything observed so far, choose the
//! assignment probability for the round, realize the action from a
//! uniform draw, reveal the assigned outcome, feed the increment built
//! from the PRE-round snapshot to the estimators, refit the regressors
//! with the new observation, and evaluate the sequential tests.
//!
//! Initialization follows the adaptive algorithm's convention: round 1
//! assigns action 0 and round 2 action 1, both with recorded probability
//! one half, which guarantees both arms hold a sample before any
//! prediction is requested. Designs without regressors (the oracle
//! baseline) skip the forcing. Every design draws the assignment uniform
//! every round, so the four random substreams stay aligned across designs
//! under a shared seed and regret comparisons are matched pathwise.

use std::str::FromStr;

use thiserror::Error;

use crate::dgp::{DatasetConfig, DgpError, Observation};
use crate::estimators::{EstimatorError, EstimatorKind, EstimatorState, Estimates};
use crate::policy::{adaptive_pi, optimal_pi_aipw, PolicySnapshot, RateRule};
use crate::regressors::{Method, MomentKind, RegressorError, RegressorSettings, RegressorState};
use crate::rng::TrialRng;
use crate::testing::{
    bonferroni_step, lil_boundary, lil_step, z_test, TestConfig, TestError, TestMode,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("horizon {0} too short for forced initialization")]
    ShortHorizon(usize),
    #[error("warm-up length {rho} outside 2..={horizon}")]
    BadRho { rho: usize, horizon: usize },
    #[error("first stage {n0} must satisfy 2 <= n0 < horizon {horizon}")]
    BadN0 { n0: usize, horizon: usize },
    #[error("fixed assignment probability {0} outside the open unit interval")]
    BadFixedPi(f64),
    #[error("unrecognized design {0:?}")]
    BadDesign(String),
    #[error(transparent)]
    Test(#[from] TestError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
}

/// Assignment mechanism of a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    /// Warm-up then the stabilized variance-adaptive policy.
    Aerate,
    /// Uniform assignment throughout.
    Rct,
    /// Two-stage: uniform for `n0` rounds, then the plug-in optimal
    /// policy and predictions frozen at `n0`.
    Hahn { n0: usize },
    /// Oracle policy and oracle regression functions.
    Opt,
    /// Constant assignment probability.
    Fixed { pi: f64 },
}

impl FromStr for Design {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, EngineError> {
        let s = s.trim();
        match s {
            "aerate" => return Ok(Design::Aerate),
            "rct" => return Ok(Design::Rct),
            "opt" => return Ok(Design::Opt),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix("hahn(").and_then(|r| r.strip_suffix(')')) {
            let n0 = inner.trim().parse().map_err(|_| EngineError::BadDesign(s.to_string()))?;
            return Ok(Design::Hahn { n0 });
        }
        if let Some(inner) = s.strip_prefix("fixed(").and_then(|r| r.strip_suffix(')')) {
            let pi = inner.trim().parse().map_err(|_| EngineError::BadDesign(s.to_string()))?;
            return Ok(Design::Fixed { pi });
        }
        Err(EngineError::BadDesign(s.to_string()))
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Design::Aerate => write!(f, "aerate"),
            Design::Rct => write!(f, "rct"),
            Design::Hahn { n0 } => write!(f, "hahn({n0})"),
            Design::Opt => write!(f, "opt"),
            Design::Fixed { pi } => write!(f, "fixed({pi})"),
        }
    }
}

/// Everything one trial needs besides the dataset.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub horizon: usize,
    /// Warm-up rounds with uniform assignment before the adaptive policy
    /// takes over.
    pub rho: usize,
    pub design: Design,
    /// Which estimate the cell reports and tests.
    pub estimator: EstimatorKind,
    pub regressor: Method,
    pub regressor_settings: RegressorSettings,
    pub gamma_rule: RateRule,
    pub zeta_rule: RateRule,
    pub test: TestConfig,
    /// Truncate the trial at the governing test's first rejection.
    pub stop_on_reject: bool,
    /// Let the two-stage baseline keep refitting predictions after the
    /// freeze point (its policy stays frozen either way).
    pub hahn_refit_f: bool,
    pub seed: u64,
}

impl TrialConfig {
    /// The standard configuration: ten warm-up rounds, doubly robust
    /// reporting, kernel regression, inverse-square-root mixing.
    pub fn standard(horizon: usize, design: Design, seed: u64) -> Self {
        Self {
            horizon,
            rho: 10,
            design,
            estimator: EstimatorKind::A2ipw,
            regressor: Method::Nw,
            regressor_settings: RegressorSettings::default(),
            gamma_rule: RateRule::InvSqrtT,
            zeta_rule: RateRule::TPow(-1.0 / 1.5),
            test: TestConfig::default(),
            stop_on_reject: false,
            hahn_refit_f: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let t = self.horizon;
        match self.design {
            Design::Opt => {
                if t < 1 {
                    return Err(EngineError::ShortHorizon(t));
                }
            }
            _ => {
                if t < 2 {
                    return Err(EngineError::ShortHorizon(t));
                }
            }
        }
        if let Design::Aerate = self.design {
            if self.rho < 2 || self.rho > t {
                return Err(EngineError::BadRho { rho: self.rho, horizon: t });
            }
        }
        if let Design::Hahn { n0 } = self.design {
            if n0 < 2 || n0 >= t {
                return Err(EngineError::BadN0 { n0, horizon: t });
            }
        }
        if let Design::Fixed { pi } = self.design {
            if !(pi > 0.0 && pi < 1.0) {
                return Err(EngineError::BadFixedPi(pi));
            }
        }
        self.test.validate()?;
        Ok(())
    }
}

/// Prediction snapshot with a freshness token: `based_on` counts the
/// rounds absorbed when the snapshot was taken, so `based_on < t` is the
/// measurability requirement for round `t`'s increment.
#[derive(Debug, Clone, Copy)]
struct FvSnapshot {
    f1: f64,
    f0: f64,
    nu1: f64,
    nu0: f64,
    based_on: usize,
}

/// One round of the recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundRecord {
    /// Reported estimate after this round.
    pub theta: f64,
    /// Assignment probability recorded for the round.
    pub pi1: f64,
    /// Increment-variance estimate after this round (0 before round 2).
    pub sigma_sq: f64,
    /// Anytime boundary in force, when active.
    pub lil_boundary: Option<f64>,
    pub action: u8,
}

/// Decision at one scheduled batch look.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookDecision {
    pub round: usize,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// The instantiated process's true effect (surfaces redraw
    /// coefficients per trial).
    pub true_ate: f64,
    pub final_estimates: Estimates,
    /// Increment variance of the reported estimator at the last round.
    pub sigma_hat_sq: f64,
    pub trajectory: Vec<RoundRecord>,
    pub lil_rejected: bool,
    /// First anytime rejection, or the horizon when none occurred.
    pub lil_stopping_time: usize,
    pub bf_looks: Vec<LookDecision>,
    pub bf_rejected: bool,
    /// First rejecting look, or the horizon when none rejected.
    pub bf_stopping_time: usize,
}

/// `1[xi <= pi1]`, the assignment rule given the round's uniform draw.
pub fn decide_assignment(pi1: f64, xi: f64) -> usize {
    usize::from(xi <= pi1)
}

/// Draws the round's uniform and realizes the action; both are returned
/// so the observation can record them.
pub fn assignment_draw(pi1: f64, rng: &mut TrialRng) -> (usize, f64) {
    use rand::Rng;
    let xi: f64 = rng.assignment.random();
    (decide_assignment(pi1, xi), xi)
}

/// Runs one trial to the horizon (or the governing test's first
/// rejection when early stopping is on). The result is a pure function
/// of `(cfg, dataset)`: the generator is rebuilt from `cfg.seed`.
pub fn run_trial(cfg: &TrialConfig, dataset: &DatasetConfig) -> Result<TrialResult, EngineError> {
    cfg.validate()?;
    let mut rng = TrialRng::from_seed(cfg.seed);
    let spec = dataset.instantiate(&mut rng)?;
    let uses_regressor = !matches!(cfg.design, Design::Opt);
    let mut reg = uses_regressor
        .then(|| RegressorState::new(cfg.regressor, spec.dim(), cfg.regressor_settings));
    let mut frozen: Option<RegressorState> = None;
    let mut est = EstimatorState::new(cfg.zeta_rule, cfg.test.mu);
    let nu_floor = cfg.regressor_settings.nu_floor;
    let kind = cfg.estimator;
    let m_looks = cfg.test.looks.len();

    let mut trajectory = Vec::with_capacity(cfg.horizon);
    let mut bf_looks = Vec::with_capacity(m_looks);
    let mut lil_rejected = false;
    let mut lil_stop = cfg.horizon;
    let mut bf_rejected = false;
    let mut bf_stop = cfg.horizon;

    for t in 1..=cfg.horizon {
        let (x, y0, y1) = spec.sample_round(&mut rng);
        let (_, xi) = assignment_draw(0.5, &mut rng);

        let snap = if let Some(r) = reg.as_ref() {
            if t <= 2 {
                // nothing to predict from yet; the zero snapshot keeps
                // the increments plain inverse-probability terms
                FvSnapshot { f1: 0.0, f0: 0.0, nu1: nu_floor, nu0: nu_floor, based_on: t - 1 }
            } else {
                let source = match (&cfg.design, &frozen) {
                    (Design::Hahn { .. }, Some(f)) if !cfg.hahn_refit_f => f,
                    _ => r,
                };
                let (f1, f0, nu1, nu0) = source
                    .predict_fv(&x)
                    .expect("both arms hold samples after forced initialization");
                FvSnapshot { f1, f0, nu1, nu0, based_on: source.rounds() }
            }
        } else {
            // oracle inputs are fixed functions, measurable from the start
            FvSnapshot {
                f1: spec.true_f(1, &x),
                f0: spec.true_f(0, &x),
                nu1: spec.true_var(1, &x),
                nu0: spec.true_var(0, &x),
                based_on: 0,
            }
        };

        let pol = match cfg.design {
            Design::Opt => PolicySnapshot::oracle(
                optimal_pi_aipw(snap.nu1, snap.nu0).expect("true variances are positive"),
            ),
            Design::Rct => PolicySnapshot::fixed(0.5),
            Design::Fixed { pi } => PolicySnapshot::fixed(pi),
            Design::Hahn { n0 } => {
                if t <= n0 {
                    PolicySnapshot::warmup()
                } else {
                    // frozen plug-in optimum, no uniform mixing
                    let f = frozen.as_ref().expect("freeze point passed");
                    let (_, _, nu1, nu0) =
                        f.predict_fv(&x).expect("frozen stage saw both arms");
                    PolicySnapshot::fixed(
                        optimal_pi_aipw(nu1, nu0).expect("floored variances are positive"),
                    )
                }
            }
            Design::Aerate => {
                if t < cfg.rho {
                    PolicySnapshot::warmup()
                } else {
                    adaptive_pi(t, (snap.f1, snap.f0, snap.nu1, snap.nu0), cfg.gamma_rule)
                }
            }
        };

        // forced initialization puts one sample on each arm
        let (action, pi_recorded) = if uses_regressor && t <= 2 {
            (t - 1, 0.5)
        } else {
            (decide_assignment(pol.pi1, xi), pol.pi1)
        };

        let y = if action == 1 { y1 } else { y0 };
        let obs = Observation { t, x, action, y, pi_used: pi_recorded, xi };

        assert!(snap.based_on < obs.t, "prediction snapshot must predate the round");
        est.update(&obs, snap.f1, snap.f0)?;

        if let Some(r) = reg.as_mut() {
            r.observe(&obs.x, obs.action, obs.y)?;
            if let Design::Hahn { n0 } = cfg.design {
                if t == n0 {
                    frozen = Some(r.clone());
                }
            }
            if r.count(0) > 0 && r.count(1) > 0 {
                let c1 = r.predict(1, &obs.x, MomentKind::First)?;
                let c0 = r.predict(0, &obs.x, MomentKind::First)?;
                est.update_dm(c1 - c0);
            }
        }

        let theta = est.estimates()?.value_of(kind);
        let sigma_sq = est.sigma_hat_sq_of(kind);
        let boundary = lil_boundary(cfg.test.alpha, est.z_sq_of(kind), cfg.test.lil_constant);
        if !lil_rejected && lil_step(t, est.sum_of(kind), cfg.test.mu, boundary) {
            lil_rejected = true;
            lil_stop = t;
        }
        if let Some(pos) = cfg.test.looks.iter().position(|&l| l == t) {
            let d = z_test(theta, cfg.test.mu, sigma_sq, t, cfg.test.alpha);
            let rejected = bonferroni_step(pos + 1, m_looks, d.boundary_or_pvalue, cfg.test.alpha);
            bf_looks.push(LookDecision { round: t, p_value: d.boundary_or_pvalue, rejected });
            if !bf_rejected && rejected {
                bf_rejected = true;
                bf_stop = t;
            }
        }

        trajectory.push(RoundRecord {
            theta,
            pi1: pi_recorded,
            sigma_sq,
            lil_boundary: boundary,
            action: action as u8,
        });

        if cfg.stop_on_reject {
            let governing = match cfg.test.mode {
                TestMode::Fixed => false,
                TestMode::Bonferroni => bf_rejected,
                TestMode::Lil => lil_rejected,
            };
            if governing {
                break;
            }
        }
    }

    Ok(TrialResult {
        true_ate: spec.true_ate(),
        final_estimates: est.estimates()?,
        sigma_hat_sq: est.sigma_hat_sq_of(kind),
        trajectory,
        lil_rejected,
        lil_stopping_time: lil_stop,
        bf_looks,
        bf_rejected,
        bf_stopping_time: bf_stop,
    })
}
