//! Per-arm nonparametric regression of the conditional first and second
//! outcome moments, `f(k, x) = E[Y(k) | x]` and `e(k, x) = E[Y(k)^2 | x]`,
//! from adaptively collected samples.
//!
//! Two methods are provided:
//!
//! * k-nearest-neighbor with schedule `k_n = max(1, floor(sqrt(N)))` over
//!   the arm's sample count, Euclidean distance, ties broken by earlier
//!   arrival;
//! * Nadaraya-Watson with a Gaussian kernel and Scott-style bandwidth
//!   `h = s_bar * N^(-1/(d+4))` where `s_bar` is the mean per-coordinate
//!   sample standard deviation of the arm's covariates.
//!
//! All predictions are clipped: first moments to `[-C3, C3]`, second
//! moments to `[0, C3^2]`. The bound defaults to `10 * max(1, max |y|)`
//! over everything observed so far, so it stays loose enough to never bias
//! predictions while keeping the downstream increments bounded.

use thiserror::Error;

/// Fallback threshold: a kernel weight sum below this means every stored
/// point is effectively at infinite distance.
const WEIGHT_SUM_FLOOR: f64 = 1e-12;
/// Minimum bandwidth, guards degenerate (constant) covariate stores.
const BANDWIDTH_FLOOR: f64 = 1e-6;
/// Default variance floor.
pub const DEFAULT_NU_FLOOR: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum RegressorError {
    #[error("arm {0} has no samples yet")]
    ColdArm(usize),
    #[error("covariate has {got} coordinates, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("unrecognized regressor {0:?}, expected knn or nw")]
    BadMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Knn,
    Nw,
}

impl std::str::FromStr for Method {
    type Err = RegressorError;

    fn from_str(s: &str) -> Result<Self, RegressorError> {
        match s.trim() {
            "knn" => Ok(Method::Knn),
            "nw" => Ok(Method::Nw),
            other => Err(RegressorError::BadMethod(other.to_string())),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Knn => write!(f, "knn"),
            Method::Nw => write!(f, "nw"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    First,
    Second,
}

/// Tunables beyond the method choice; defaults follow the simulator's
/// standard configuration.
#[derive(Debug, Clone, Copy)]
pub struct RegressorSettings {
    pub nu_floor: f64,
    /// Fixed clip bound; `None` tracks `10 * max(1, max |y|)` adaptively.
    pub clip_c3: Option<f64>,
    pub bandwidth_override: Option<f64>,
    pub k_override: Option<usize>,
}

impl Default for RegressorSettings {
    fn default() -> Self {
        Self { nu_floor: DEFAULT_NU_FLOOR, clip_c3: None, bandwidth_override: None, k_override: None }
    }
}

/// `max(floor, e_hat - f_hat^2)`, the floored conditional-variance
/// plug-in.
pub fn nu_from(e_hat: f64, f_hat: f64, nu_floor: f64) -> f64 {
    (e_hat - f_hat * f_hat).max(nu_floor)
}

#[derive(Debug, Clone, Default)]
struct ArmStore {
    /// Row-major covariates in arrival order.
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl ArmStore {
    fn len(&self) -> usize {
        self.ys.len()
    }

    fn x_row(&self, i: usize, dim: usize) -> &[f64] {
        &self.xs[i * dim..(i + 1) * dim]
    }
}

/// Per-arm sample stores plus the prediction machinery over them. One
/// state is owned by one trial; mutation and prediction are both
/// single-threaded within that trial.
#[derive(Debug, Clone)]
pub struct RegressorState {
    method: Method,
    dim: usize,
    arms: [ArmStore; 2],
    settings: RegressorSettings,
    max_abs_y: f64,
}

impl RegressorState {
    pub fn new(method: Method, dim: usize, settings: RegressorSettings) -> Self {
        assert!(settings.nu_floor > 0.0);
        Self { method, dim, arms: Default::default(), settings, max_abs_y: 0.0 }
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn nu_floor(&self) -> f64 {
        self.settings.nu_floor
    }

    /// Samples stored for one arm.
    pub fn count(&self, arm: usize) -> usize {
        self.arms[arm].len()
    }

    /// Total rounds absorbed (both arms).
    pub fn rounds(&self) -> usize {
        self.arms[0].len() + self.arms[1].len()
    }

    /// Clip bound in force right now.
    pub fn c3(&self) -> f64 {
        self.settings.clip_c3.unwrap_or_else(|| 10.0 * self.max_abs_y.max(1.0))
    }

    pub fn observe(&mut self, x: &[f64], a: usize, y: f64) -> Result<(), RegressorError> {
        assert!(a <= 1);
        if x.len() != self.dim {
            return Err(RegressorError::Shape { expected: self.dim, got: x.len() });
        }
        let store = &mut self.arms[a];
        store.xs.extend_from_slice(x);
        store.ys.push(y);
        self.max_abs_y = self.max_abs_y.max(y.abs());
        Ok(())
    }

    fn check_arm(&self, arm: usize, x: &[f64]) -> Result<(), RegressorError> {
        if x.len() != self.dim {
            return Err(RegressorError::Shape { expected: self.dim, got: x.len() });
        }
        if self.arms[arm].len() == 0 {
            return Err(RegressorError::ColdArm(arm));
        }
        Ok(())
    }

    fn clip_first(&self, v: f64) -> f64 {
        let c3 = self.c3();
        v.clamp(-c3, c3)
    }

    fn clip_second(&self, v: f64) -> f64 {
        let c3 = self.c3();
        v.clamp(0.0, c3 * c3)
    }

    /// Raw (unclipped) KNN moments, both at once since the neighbor set is
    /// shared. Neighbors are the `k_n` smallest by `(distance^2, arrival
    /// index)`; summation runs in that order so the result matches a full
    /// sort bit for bit.
    fn knn_moments(&self, arm: usize, x: &[f64]) -> (f64, f64) {
        let store = &self.arms[arm];
        let n = store.len();
        let k = self
            .settings
            .k_override
            .unwrap_or_else(|| (n as f64).sqrt().floor() as usize)
            .clamp(1, n);
        let mut order: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let row = store.x_row(i, self.dim);
                let d2: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        if k < n {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &(_, i) in &order {
            let y = store.ys[i];
            sum += y;
            sum_sq += y * y;
        }
        (sum / k as f64, sum_sq / k as f64)
    }

    /// Raw NW moments under the shared Gaussian weights. Returns `None`
    /// when the weight sum underflows, in which case the caller falls back
    /// to the plain arm means.
    fn nw_moments(&self, arm: usize, x: &[f64]) -> Option<(f64, f64)> {
        let store = &self.arms[arm];
        let n = store.len();
        let h = self.settings.bandwidth_override.unwrap_or_else(|| {
            let s_bar = self.mean_coord_std(arm);
            s_bar * (n as f64).powf(-1.0 / (self.dim as f64 + 4.0))
        });
        let h = h.max(BANDWIDTH_FLOOR);
        let mut w_sum = 0.0;
        let mut g_sum = 0.0;
        let mut g2_sum = 0.0;
        for i in 0..n {
            let row = store.x_row(i, self.dim);
            let d2: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            let w = (-d2 / (2.0 * h * h)).exp();
            let y = store.ys[i];
            w_sum += w;
            g_sum += w * y;
            g2_sum += w * y * y;
        }
        if w_sum < WEIGHT_SUM_FLOOR {
            return None;
        }
        Some((g_sum / w_sum, g2_sum / w_sum))
    }

    /// Mean per-coordinate sample standard deviation of an arm's store;
    /// zero for a single sample.
    fn mean_coord_std(&self, arm: usize) -> f64 {
        let store = &self.arms[arm];
        let n = store.len();
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for c in 0..self.dim {
            let mean: f64 = (0..n).map(|i| store.x_row(i, self.dim)[c]).sum::<f64>() / n as f64;
            let var: f64 = (0..n)
                .map(|i| {
                    let d = store.x_row(i, self.dim)[c] - mean;
                    d * d
                })
                .sum::<f64>()
                / (n - 1) as f64;
            total += var.sqrt();
        }
        total / self.dim as f64
    }

    fn arm_means(&self, arm: usize) -> (f64, f64) {
        let store = &self.arms[arm];
        let n = store.len() as f64;
        let sum: f64 = store.ys.iter().sum();
        let sum_sq: f64 = store.ys.iter().map(|y| y * y).sum();
        (sum / n, sum_sq / n)
    }

    pub fn knn_predict(
        &self,
        arm: usize,
        x: &[f64],
        moment: MomentKind,
    ) -> Result<f64, RegressorError> {
        self.check_arm(arm, x)?;
        let (f, e) = self.knn_moments(arm, x);
        Ok(match moment {
            MomentKind::First => self.clip_first(f),
            MomentKind::Second => self.clip_second(e),
        })
    }

    pub fn nw_predict(
        &self,
        arm: usize,
        x: &[f64],
        moment: MomentKind,
    ) -> Result<f64, RegressorError> {
        self.check_arm(arm, x)?;
        let (f, e) = self.nw_moments(arm, x).unwrap_or_else(|| self.arm_means(arm));
        Ok(match moment {
            MomentKind::First => self.clip_first(f),
            MomentKind::Second => self.clip_second(e),
        })
    }

    /// Prediction under the configured method.
    pub fn predict(
        &self,
        arm: usize,
        x: &[f64],
        moment: MomentKind,
    ) -> Result<f64, RegressorError> {
        match self.method {
            Method::Knn => self.knn_predict(arm, x, moment),
            Method::Nw => self.nw_predict(arm, x, moment),
        }
    }

    /// The policy-facing bundle `(f1_hat, f0_hat, nu1_hat, nu0_hat)`, with
    /// the variance plug-ins floored at `nu_floor`.
    pub fn predict_fv(&self, x: &[f64]) -> Result<(f64, f64, f64, f64), RegressorError> {
        let f1 = self.predict(1, x, MomentKind::First)?;
        let e1 = self.predict(1, x, MomentKind::Second)?;
        let f0 = self.predict(0, x, MomentKind::First)?;
        let e0 = self.predict(0, x, MomentKind::Second)?;
        let floor = self.settings.nu_floor;
        Ok((f1, f0, nu_from(e1, f1, floor), nu_from(e0, f0, floor)))
    }
}
