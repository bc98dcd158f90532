//! Data-generating processes for the simulator.
//!
//! Two families are supported:
//!
//! * four synthetic datasets with outcome model
//!   `Y(d) = mu_d + sum_k x_k + e_d`, `e_d ~ N(0, std_d^2)`,
//!   covariates iid standard normal in 5 dimensions;
//! * two semi-synthetic response surfaces over a 25-column covariate
//!   matrix (6 continuous + 19 binary columns), surface A with a constant
//!   additive effect of 4 and surface B with an exponential control arm.
//!
//! Every process exposes its oracle quantities — the true conditional means
//! `f*(k, x)`, conditional variances `v*(k, x)`, and the true effect — so
//! baselines and convergence checks never have to re-derive them.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::TrialRng;

/// Covariate dimension of the synthetic datasets.
pub const SYNTHETIC_DIM: usize = 5;
/// Covariate dimension of the semi-synthetic surfaces.
pub const IHDP_DIM: usize = 25;
/// Rows generated by the schema-compatible fallback matrix.
pub const IHDP_ROWS: usize = 747;
/// Offset added to every covariate entry in the surface-B control arm.
const SURFACE_B_OFFSET: f64 = 0.5;
/// Target effect size both surfaces are normalized to.
const SURFACE_EFFECT: f64 = 4.0;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid synthetic dataset id {0}, expected 1..=4")]
    InvalidDatasetId(u8),
    #[error("covariate matrix has {got} columns, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("reading covariates: {0}")]
    Io(#[from] std::io::Error),
}

/// One round's record as the estimators see it. Only the realized outcome
/// is stored; the counterfactual never leaves the simulator.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Round index, starting at 1.
    pub t: usize,
    pub x: Vec<f64>,
    /// Assigned action, 0 or 1.
    pub action: usize,
    /// Realized outcome `y(action)`.
    pub y: f64,
    /// Probability with which action 1 was assigned this round.
    pub pi_used: f64,
    /// The uniform draw that realized the action.
    pub xi: f64,
}

/// Dense covariate matrix with an inferred binary-column mask.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    rows: usize,
    cols: usize,
    /// Row-major values.
    values: Vec<f64>,
    binary_mask: Vec<bool>,
}

impl CovariateMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols);
        let binary_mask = infer_binary_mask(rows, cols, &values);
        Self { rows, cols, values, binary_mask }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn binary_mask(&self) -> &[bool] {
        &self.binary_mask
    }

    /// Parses a comma-separated numeric file with `IHDP_DIM` columns.
    /// Parse failures report the 1-based line number of the offending row.
    pub fn from_csv(path: &Path, has_header: bool) -> Result<Self, DgpError> {
        let text = std::fs::read_to_string(path)?;
        let mut values = Vec::new();
        let mut rows = 0usize;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if idx == 0 && has_header {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != IHDP_DIM {
                return Err(DgpError::Parse {
                    line: line_no,
                    message: format!("expected {} columns, found {}", IHDP_DIM, fields.len()),
                });
            }
            for field in fields {
                let v: f64 = field.trim().parse().map_err(|_| DgpError::Parse {
                    line: line_no,
                    message: format!("non-numeric cell {:?}", field.trim()),
                })?;
                values.push(v);
            }
            rows += 1;
        }
        Ok(Self::new(rows, IHDP_DIM, values))
    }

    /// Schema-compatible stand-in for the real study covariates:
    /// 747 rows of 6 standard-normal columns followed by 19 Bernoulli(0.5)
    /// columns. Deterministic for a given generator state.
    pub fn synthetic_ihdp(rng: &mut ChaCha8Rng) -> Self {
        let mut values = Vec::with_capacity(IHDP_ROWS * IHDP_DIM);
        for _ in 0..IHDP_ROWS {
            for c in 0..IHDP_DIM {
                if c < 6 {
                    values.push(rng.sample::<f64, _>(StandardNormal));
                } else {
                    values.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
                }
            }
        }
        Self::new(IHDP_ROWS, IHDP_DIM, values)
    }

    /// Z-scores the continuous (non-binary) columns in place. Binary
    /// columns are left untouched so the mask stays meaningful.
    pub fn standardize(&mut self) {
        for c in 0..self.cols {
            if self.binary_mask[c] || self.rows < 2 {
                continue;
            }
            let mean = (0..self.rows).map(|r| self.values[r * self.cols + c]).sum::<f64>()
                / self.rows as f64;
            let var = (0..self.rows)
                .map(|r| {
                    let d = self.values[r * self.cols + c] - mean;
                    d * d
                })
                .sum::<f64>()
                / (self.rows - 1) as f64;
            let sd = var.sqrt();
            if sd < 1e-12 {
                continue;
            }
            for r in 0..self.rows {
                let v = &mut self.values[r * self.cols + c];
                *v = (*v - mean) / sd;
            }
        }
    }
}

fn infer_binary_mask(rows: usize, cols: usize, values: &[f64]) -> Vec<bool> {
    (0..cols)
        .map(|c| (0..rows).all(|r| {
            let v = values[r * cols + c];
            v == 0.0 || v == 1.0
        }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    A,
    B,
}

/// A reusable recipe for building the per-trial [`DatasetSpec`]. The
/// synthetic processes are fixed; the surfaces redraw their coefficient
/// vector from the trial's own stream, so every replication sees a fresh
/// surface over the shared covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetConfig {
    Synthetic(u8),
    Surface { which: SurfaceKind, covariates: Arc<CovariateMatrix> },
}

impl DatasetConfig {
    pub fn instantiate(&self, rng: &mut TrialRng) -> Result<DatasetSpec, DgpError> {
        match self {
            DatasetConfig::Synthetic(id) => make_synthetic(*id),
            DatasetConfig::Surface { which, covariates } => {
                make_surface(*which, Arc::clone(covariates), &mut rng.coefficients)
            }
        }
    }

    /// Covariate dimension of the processes this config produces.
    pub fn dim(&self) -> usize {
        match self {
            DatasetConfig::Synthetic(_) => SYNTHETIC_DIM,
            DatasetConfig::Surface { .. } => IHDP_DIM,
        }
    }
}

#[derive(Debug, Clone)]
enum SpecKind {
    Synthetic { id: u8, mu1: f64, mu0: f64, std1: f64, std0: f64 },
    Surface {
        which: SurfaceKind,
        covariates: Arc<CovariateMatrix>,
        beta: Vec<f64>,
        /// Surface-B normalizer; zero for surface A.
        offset_q: f64,
        theta0: f64,
    },
}

/// A fully specified data-generating process with closed-form oracles.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    kind: SpecKind,
}

/// The fixed parameterizations of the four synthetic datasets.
pub fn make_synthetic(id: u8) -> Result<DatasetSpec, DgpError> {
    let (mu1, mu0, std1, std0) = match id {
        1 => (0.8, 0.3, 0.8, 0.3),
        2 => (0.5, 0.5, 0.8, 0.3),
        3 => (0.8, 0.3, 0.6, 0.4),
        4 => (0.5, 0.5, 0.6, 0.4),
        other => return Err(DgpError::InvalidDatasetId(other)),
    };
    Ok(DatasetSpec { kind: SpecKind::Synthetic { id, mu1, mu0, std1, std0 } })
}

/// Builds a semi-synthetic response surface over `covariates`, drawing the
/// coefficient vector from the surface's discrete law.
///
/// Surface A: `Y(0) ~ N(x·beta, 1)`, `Y(1) ~ N(x·beta + 4, 1)` with beta
/// entries from {0,1,2,3,4} w.p. (0.5, 0.2, 0.15, 0.1, 0.05).
///
/// Surface B: `Y(0) ~ N(exp((x + 0.5)·beta), 1)`, `Y(1) ~ N(x·beta - q, 1)`
/// with beta entries from {0, 0.1, 0.2, 0.3, 0.4} w.p. (0.6, 0.1, 0.1, 0.1,
/// 0.1) and `q` chosen empirically over the loaded rows so the average
/// effect is exactly 4.
pub fn make_surface(
    which: SurfaceKind,
    covariates: Arc<CovariateMatrix>,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetSpec, DgpError> {
    if covariates.cols() != IHDP_DIM {
        return Err(DgpError::Shape { expected: IHDP_DIM, got: covariates.cols() });
    }
    let (values, probs): (&[f64], &[f64]) = match which {
        SurfaceKind::A => (&[0.0, 1.0, 2.0, 3.0, 4.0], &[0.5, 0.2, 0.15, 0.1, 0.05]),
        SurfaceKind::B => (&[0.0, 0.1, 0.2, 0.3, 0.4], &[0.6, 0.1, 0.1, 0.1, 0.1]),
    };
    let beta: Vec<f64> = (0..IHDP_DIM).map(|_| weighted_pick(rng, values, probs)).collect();

    let (offset_q, theta0) = match which {
        SurfaceKind::A => (0.0, SURFACE_EFFECT),
        SurfaceKind::B => {
            // q shifts the treated arm so the row-averaged effect hits the
            // target: mean(x·beta - exp((x+w)·beta)) - q = 4.
            let n = covariates.rows() as f64;
            let mut gap = 0.0;
            for r in 0..covariates.rows() {
                let x = covariates.row(r);
                gap += dot(x, &beta) - shifted_exp(x, &beta);
            }
            let q = gap / n - SURFACE_EFFECT;
            let mut theta = 0.0;
            for r in 0..covariates.rows() {
                let x = covariates.row(r);
                theta += (dot(x, &beta) - q) - shifted_exp(x, &beta);
            }
            (q, theta / n)
        }
    };
    Ok(DatasetSpec {
        kind: SpecKind::Surface { which, covariates, beta, offset_q, theta0 },
    })
}

fn weighted_pick(rng: &mut ChaCha8Rng, values: &[f64], probs: &[f64]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in values.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *v;
        }
    }
    *values.last().unwrap()
}

fn dot(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}

fn shifted_exp(x: &[f64], beta: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(beta).map(|(a, b)| (a + SURFACE_B_OFFSET) * b).sum();
    s.exp()
}

impl DatasetSpec {
    pub fn dim(&self) -> usize {
        match &self.kind {
            SpecKind::Synthetic { .. } => SYNTHETIC_DIM,
            SpecKind::Surface { .. } => IHDP_DIM,
        }
    }

    /// Synthetic dataset id, if this process is one of the synthetic family.
    pub fn synthetic_id(&self) -> Option<u8> {
        match &self.kind {
            SpecKind::Synthetic { id, .. } => Some(*id),
            SpecKind::Surface { .. } => None,
        }
    }

    pub fn surface(&self) -> Option<SurfaceKind> {
        match &self.kind {
            SpecKind::Synthetic { .. } => None,
            SpecKind::Surface { which, .. } => Some(*which),
        }
    }

    /// The estimand: `E[Y(1) - Y(0)]`.
    pub fn true_ate(&self) -> f64 {
        match &self.kind {
            SpecKind::Synthetic { mu1, mu0, .. } => mu1 - mu0,
            SpecKind::Surface { theta0, .. } => *theta0,
        }
    }

    /// Oracle conditional mean `f*(arm, x)`.
    pub fn true_f(&self, arm: usize, x: &[f64]) -> f64 {
        debug_assert!(arm <= 1);
        match &self.kind {
            SpecKind::Synthetic { mu1, mu0, .. } => {
                let mu = if arm == 1 { *mu1 } else { *mu0 };
                mu + x.iter().sum::<f64>()
            }
            SpecKind::Surface { which: SurfaceKind::A, beta, .. } => {
                let base = dot(x, beta);
                if arm == 1 { base + SURFACE_EFFECT } else { base }
            }
            SpecKind::Surface { which: SurfaceKind::B, beta, offset_q, .. } => {
                if arm == 1 {
                    dot(x, beta) - offset_q
                } else {
                    shifted_exp(x, beta)
                }
            }
        }
    }

    /// Oracle conditional variance `v*(arm, x)`; constant in `x` for every
    /// supported process.
    pub fn true_var(&self, arm: usize, _x: &[f64]) -> f64 {
        debug_assert!(arm <= 1);
        match &self.kind {
            SpecKind::Synthetic { std1, std0, .. } => {
                let sd = if arm == 1 { *std1 } else { *std0 };
                sd * sd
            }
            SpecKind::Surface { .. } => 1.0,
        }
    }

    /// Surface-B normalizing constant, zero elsewhere.
    pub fn offset_q(&self) -> f64 {
        match &self.kind {
            SpecKind::Synthetic { .. } => 0.0,
            SpecKind::Surface { offset_q, .. } => *offset_q,
        }
    }

    /// Draws one round's covariate and both potential outcomes. The
    /// covariate and noise substreams each consume a fixed number of draws
    /// per round, so trajectories with the same seed stay aligned across
    /// designs regardless of which arm gets assigned.
    pub fn sample_round(&self, rng: &mut TrialRng) -> (Vec<f64>, f64, f64) {
        match &self.kind {
            SpecKind::Synthetic { mu1, mu0, std1, std0, .. } => {
                let x: Vec<f64> =
                    (0..SYNTHETIC_DIM).map(|_| rng.covariates.sample(StandardNormal)).collect();
                let s: f64 = x.iter().sum();
                let e0: f64 = rng.noise.sample(StandardNormal);
                let e1: f64 = rng.noise.sample(StandardNormal);
                let y0 = mu0 + s + std0 * e0;
                let y1 = mu1 + s + std1 * e1;
                (x, y0, y1)
            }
            SpecKind::Surface { which, covariates, beta, offset_q, .. } => {
                let row = rng.covariates.random_range(0..covariates.rows());
                let x = covariates.row(row).to_vec();
                let e0: f64 = rng.noise.sample(StandardNormal);
                let e1: f64 = rng.noise.sample(StandardNormal);
                let (m0, m1) = match which {
                    SurfaceKind::A => {
                        let base = dot(&x, beta);
                        (base, base + SURFACE_EFFECT)
                    }
                    SurfaceKind::B => (shifted_exp(&x, beta), dot(&x, beta) - offset_q),
                };
                (x, m0 + e0, m1 + e1)
            }
        }
    }
}
