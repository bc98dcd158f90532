//! TOML configuration for the CLI: `[trial]`, `[dataset]`,
//! `[estimator]`, `[regressor]`, `[policy]`, `[test]` sections mirror
//! the library modules; `[bench]` adds the replication setup. Unknown
//! keys are rejected so typos surface as configuration errors.
//!
//! The synthetic covariate table used when `synthetic_ihdp` is set is
//! generated from a fixed internal seed: it plays the role of a fixed
//! semi-synthetic dataset, identical across runs and trial seeds.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::dgp::{CovariateMatrix, DatasetConfig, DgpError, SurfaceKind};
use crate::engine::{Design, EngineError, TrialConfig};
use crate::harness::{BenchConfig, CellSpec, HarnessError, SweepGrid};
use crate::policy::RateRule;
use crate::regressors::RegressorSettings;
use crate::testing::TestConfig;

/// Seed of the stand-in covariate table; one fixed table, like real
/// observational data.
const IHDP_TABLE_SEED: u64 = 747;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("bad value for {key}: {message}")]
    Key { key: &'static str, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
}

fn key_err<E: std::fmt::Display>(key: &'static str) -> impl FnOnce(E) -> ConfigError {
    move |e| ConfigError::Key { key, message: e.to_string() }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    trial: TrialSection,
    #[serde(default)]
    dataset: DatasetSection,
    #[serde(default)]
    estimator: EstimatorSection,
    #[serde(default)]
    regressor: RegressorSection,
    #[serde(default)]
    policy: PolicySection,
    #[serde(default)]
    test: TestSection,
    bench: Option<BenchSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrialSection {
    #[serde(rename = "T")]
    t: Option<usize>,
    rho: Option<usize>,
    design: Option<String>,
    seed: Option<u64>,
    stop_on_reject: Option<bool>,
    hahn_refit_f: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    name: Option<String>,
    covariates: Option<PathBuf>,
    covariates_header: Option<bool>,
    synthetic_ihdp: Option<bool>,
    standardize: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorSection {
    estimator: Option<String>,
    zeta_rule: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegressorSection {
    method: Option<String>,
    nu_floor: Option<f64>,
    clip_c3: Option<f64>,
    bandwidth_override: Option<f64>,
    k_override: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    gamma_rule: Option<String>,
    fixed_pi: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TestSection {
    mode: Option<String>,
    alpha: Option<f64>,
    mu: Option<f64>,
    looks: Option<Vec<usize>>,
    lil_constant: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchSection {
    reps: Option<usize>,
    cells: Option<Vec<String>>,
    horizons: Option<Vec<usize>>,
    t_cap: Option<usize>,
    base_seed: Option<u64>,
    workers: Option<usize>,
    per_trial_dir: Option<PathBuf>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub workers: Option<usize>,
    /// Use the generated covariate table instead of a CSV.
    pub synthetic_ihdp: bool,
}

/// A resolved single-trial setup.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub trial: TrialConfig,
    pub dataset: DatasetConfig,
}

pub fn load_file(path: &Path) -> Result<ConfigFile, ConfigError> {
    Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
}

/// `fixed` and `hahn` without arguments pick up their defaults
/// (`fixed_pi`, first-stage 50) so cells can name bare designs.
fn sugar_design(raw: &str, fixed_pi: Option<f64>) -> String {
    match raw.trim() {
        "fixed" => format!("fixed({})", fixed_pi.unwrap_or(0.5)),
        "hahn" => "hahn(50)".to_string(),
        other => other.to_string(),
    }
}

impl ConfigFile {
    fn resolve_design(&self) -> Result<Design, ConfigError> {
        let raw = self.trial.design.as_deref().unwrap_or("aerate");
        sugar_design(raw, self.policy.fixed_pi).parse().map_err(key_err("trial.design"))
    }

    fn resolve_dataset(&self, ov: &Overrides) -> Result<DatasetConfig, ConfigError> {
        let name = self.dataset.name.as_deref().unwrap_or("synthetic1");
        if let Some(id) = name.strip_prefix("synthetic") {
            let id: u8 = id.parse().map_err(key_err("dataset.name"))?;
            if !(1..=4).contains(&id) {
                return Err(ConfigError::Key {
                    key: "dataset.name",
                    message: format!("synthetic id {id} outside 1..=4"),
                });
            }
            return Ok(DatasetConfig::Synthetic(id));
        }
        let which = match name {
            "surfaceA" => SurfaceKind::A,
            "surfaceB" => SurfaceKind::B,
            other => {
                return Err(ConfigError::Key {
                    key: "dataset.name",
                    message: format!("unknown dataset {other:?}"),
                })
            }
        };
        let mut matrix = if ov.synthetic_ihdp || self.dataset.synthetic_ihdp.unwrap_or(false) {
            CovariateMatrix::synthetic_ihdp(&mut ChaCha8Rng::seed_from_u64(IHDP_TABLE_SEED))
        } else if let Some(path) = &self.dataset.covariates {
            load_covariates(path, self.dataset.covariates_header)?
        } else {
            return Err(ConfigError::Missing("dataset.covariates (or synthetic_ihdp)"));
        };
        if self.dataset.standardize.unwrap_or(true) {
            matrix.standardize();
        }
        Ok(DatasetConfig::Surface { which, covariates: Arc::new(matrix) })
    }

    fn resolve_settings(&self) -> Result<RegressorSettings, ConfigError> {
        let mut s = RegressorSettings::default();
        if let Some(nu) = self.regressor.nu_floor {
            if nu <= 0.0 {
                return Err(ConfigError::Key {
                    key: "regressor.nu_floor",
                    message: "must be positive".into(),
                });
            }
            s.nu_floor = nu;
        }
        s.clip_c3 = self.regressor.clip_c3;
        s.bandwidth_override = self.regressor.bandwidth_override;
        s.k_override = self.regressor.k_override;
        Ok(s)
    }

    fn resolve_test(&self) -> Result<TestConfig, ConfigError> {
        let mut t = TestConfig::default();
        if let Some(mode) = &self.test.mode {
            t.mode = mode.parse().map_err(key_err("test.mode"))?;
        }
        if let Some(alpha) = self.test.alpha {
            t.alpha = alpha;
        }
        if let Some(mu) = self.test.mu {
            t.mu = mu;
        }
        if let Some(looks) = &self.test.looks {
            t.looks = looks.clone();
        }
        if let Some(c) = self.test.lil_constant {
            t.lil_constant = c;
        }
        Ok(t)
    }

    /// Resolves everything a single `run` needs. The horizon key is the
    /// only one without a default.
    pub fn resolve_trial(&self, ov: &Overrides) -> Result<RunSetup, ConfigError> {
        let horizon = self.trial.t.ok_or(ConfigError::Missing("trial.T"))?;
        let trial = self.resolve_trial_with_horizon(horizon, ov)?;
        trial.validate()?;
        Ok(RunSetup { trial, dataset: self.resolve_dataset(ov)? })
    }

    /// Resolves the `[bench]` section on top of the trial template. The
    /// template's horizon is ignored; cells run to `t_cap`.
    pub fn resolve_bench(&self, ov: &Overrides) -> Result<BenchConfig, ConfigError> {
        let bench = self.bench.as_ref().ok_or(ConfigError::Missing("bench"))?;
        let cells_raw = match &bench.cells {
            Some(c) if !c.is_empty() => c,
            _ => return Err(ConfigError::Missing("bench.cells")),
        };
        let mut cells = Vec::with_capacity(cells_raw.len());
        for raw in cells_raw {
            let full = match raw.split_once(':') {
                Some((d, rest)) => format!("{}:{rest}", sugar_design(d, self.policy.fixed_pi)),
                None => raw.clone(),
            };
            cells.push(full.parse::<CellSpec>().map_err(key_err("bench.cells"))?);
        }
        let t_cap = bench.t_cap.unwrap_or(500);
        // per-cell validity (warm-up vs t_cap etc.) is judged inside the
        // bench so one bad cell cannot sink the others
        let base = self.resolve_trial_with_horizon(t_cap, ov)?;
        let cfg = BenchConfig {
            reps: ov.reps.or(bench.reps).unwrap_or(200),
            cells,
            dataset: self.resolve_dataset(ov)?,
            horizons: bench.horizons.clone().unwrap_or_else(|| vec![150, 300]),
            t_cap,
            base_seed: bench.base_seed.unwrap_or(base.seed),
            workers: ov.workers.or(bench.workers).unwrap_or(0),
            base,
            per_trial_dir: bench.per_trial_dir.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_trial_with_horizon(
        &self,
        horizon: usize,
        ov: &Overrides,
    ) -> Result<TrialConfig, ConfigError> {
        Ok(TrialConfig {
            horizon,
            rho: self.trial.rho.unwrap_or(10),
            design: self.resolve_design()?,
            estimator: self
                .estimator
                .estimator
                .as_deref()
                .unwrap_or("a2ipw")
                .parse()
                .map_err(key_err("estimator.estimator"))?,
            regressor: self
                .regressor
                .method
                .as_deref()
                .unwrap_or("nw")
                .parse()
                .map_err(key_err("regressor.method"))?,
            regressor_settings: self.resolve_settings()?,
            gamma_rule: self
                .policy
                .gamma_rule
                .as_deref()
                .unwrap_or("inv_sqrt_t")
                .parse()
                .map_err(key_err("policy.gamma_rule"))?,
            zeta_rule: self
                .estimator
                .zeta_rule
                .as_deref()
                .unwrap_or("t_pow(-1/1.5)")
                .parse()
                .map_err(key_err("estimator.zeta_rule"))?,
            test: self.resolve_test()?,
            stop_on_reject: self.trial.stop_on_reject.unwrap_or(false),
            hahn_refit_f: self.trial.hahn_refit_f.unwrap_or(false),
            seed: ov.seed.or(self.trial.seed).unwrap_or(0),
        })
    }
}

fn load_covariates(path: &Path, header: Option<bool>) -> Result<CovariateMatrix, ConfigError> {
    let matrix = match header {
        Some(h) => CovariateMatrix::from_csv(path, h)?,
        // optional header: parse as headerless, fall back on a line-1
        // parse failure
        None => match CovariateMatrix::from_csv(path, false) {
            Ok(m) => m,
            Err(DgpError::Parse { line: 1, message }) => {
                match CovariateMatrix::from_csv(path, true) {
                    Ok(m) if m.rows() > 0 => m,
                    // a lone unparseable line is not a header
                    _ => return Err(DgpError::Parse { line: 1, message }.into()),
                }
            }
            Err(e) => return Err(e.into()),
        },
    };
    if matrix.rows() == 0 {
        return Err(ConfigError::Key {
            key: "dataset.covariates",
            message: "no data rows".to_string(),
        });
    }
    Ok(matrix)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    gamma_rules: Option<Vec<String>>,
    zeta_rules: Option<Vec<String>>,
    rhos: Option<Vec<usize>>,
}

pub fn load_grid(path: &Path) -> Result<GridFile, ConfigError> {
    Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
}

/// Missing axes collapse to the base configuration's value, so a grid
/// file can vary one hyperparameter at a time.
pub fn resolve_grid(file: &GridFile, base: &TrialConfig) -> Result<SweepGrid, ConfigError> {
    let parse_rules = |raw: &Option<Vec<String>>,
                       key: &'static str,
                       fallback: RateRule|
     -> Result<Vec<RateRule>, ConfigError> {
        match raw {
            None => Ok(vec![fallback]),
            Some(rs) if rs.is_empty() => Ok(vec![fallback]),
            Some(rs) => rs
                .iter()
                .map(|r| r.parse().map_err(key_err(key)))
                .collect(),
        }
    };
    Ok(SweepGrid {
        gamma_rules: parse_rules(&file.gamma_rules, "gamma_rules", base.gamma_rule)?,
        zeta_rules: parse_rules(&file.zeta_rules, "zeta_rules", base.zeta_rule)?,
        rhos: file.rhos.clone().filter(|r| !r.is_empty()).unwrap_or_else(|| vec![base.rho]),
    })
}
