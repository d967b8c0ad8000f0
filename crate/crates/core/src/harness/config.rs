//! Experiment configuration: one JSON document with the top-level keys
//! `model`, `optimizer`, `diagnostics` and `output`. Unknown keys anywhere are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::optimizers::Algorithm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Prior `N(0, Σ)`: either an isotropic variance or a full covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            variance: Some(1.0),
            covariance: None,
        }
    }
}

/// Regression data. Designs are `d × N`: one row per feature, one column per data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressionData {
    Inline {
        design: Vec<Vec<f64>>,
        responses: Vec<f64>,
    },
    Csv {
        design: PathBuf,
        responses: PathBuf,
    },
    Synthetic {
        seed: u64,
        dim: usize,
        n: usize,
        #[serde(default = "one")]
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineGroup {
    pub design: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvGroup {
    pub design: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupsConfig {
    Inline { groups: Vec<InlineGroup> },
    Csv { groups: Vec<CsvGroup> },
    Synthetic {
        seed: u64,
        count: usize,
        per_group: usize,
        #[serde(default = "one")]
        scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian {
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    },
    LinearRegression {
        data: RegressionData,
        noise_std: f64,
        #[serde(default)]
        prior: PriorConfig,
    },
    LogisticRegression {
        data: RegressionData,
        #[serde(default)]
        prior: PriorConfig,
    },
    HierarchicalLogistic {
        theta_dim: usize,
        groups: GroupsConfig,
        #[serde(default)]
        prior: PriorConfig,
        #[serde(default)]
        group_prior: PriorConfig,
    },
}

/// How the stepsize is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// A fixed stepsize.
    Constant { gamma: f64 },
    /// The anytime decaying rule for the algorithm, tuned with `μ` and `a`.
    Anytime {},
    /// `1/√(aT)` (Prox-SGD) or `√2/√(aT)` (Proj-SGD), for the convex averaged guarantee.
    TheoryConstant {},
    /// The largest constant stepsize allowed by the strongly convex guarantee.
    StrongConstant {},
    /// `A log T / T`.
    LogTOverT { scale: f64 },
}

/// Starting point `w⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    /// `(m, I)`; `m` defaults to zero.
    Standard {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
    },
    /// `(z̄, I)` with `z̄` the MAP point.
    Map {},
    /// The Laplace approximation at the MAP point.
    Laplace {},
    Explicit { mean: Vec<f64>, factor: Vec<Vec<f64>> },
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Standard { mean: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub estimator: EstimatorKind,
    pub schedule: ScheduleConfig,
    pub iterations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub minibatch: usize,
    /// Average iterates with the weights of the convex guarantee.
    #[serde(default)]
    pub averaging: bool,
    #[serde(default = "one_usize")]
    pub replications: usize,
    /// Non-degeneracy level for Proj-SGD; defaults to the smoothness constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default)]
    pub init: InitConfig,
}

/// The long run that stands in for `w*` when it is not known analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Reference budget as a multiple of the experiment's iteration count.
    #[serde(default = "ten")]
    pub budget_factor: u64,
    /// Absolute budget; overrides `budget_factor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    /// Constant stepsize of the reference run; defaults to `0.1/M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stepsize: Option<f64>,
    #[serde(default = "one_usize")]
    pub minibatch: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            budget_factor: 10,
            iterations: None,
            stepsize: None,
            minibatch: 1,
            seed: 0,
        }
    }
}

/// Grid for the noise-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "fifty")]
    pub points: usize,
    #[serde(default = "twenty_thousand")]
    pub samples: usize,
    #[serde(default = "one_u64")]
    pub seed: u64,
    /// Multiplies both `a` and `b`; values below 1 give a negative control.
    #[serde(default = "one")]
    pub envelope_scale: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            points: 50,
            samples: 20_000,
            seed: 1,
            envelope_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Monte-Carlo samples for the per-iteration ELBO column (0 disables it).
    #[serde(default)]
    pub elbo_samples: usize,
    /// Defaults to 1 for `T ≤ 10⁴`, else `⌈T/10⁴⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<u64>,
    /// Samples for the final ELBO gap (common random numbers across runs).
    #[serde(default = "ten_thousand")]
    pub final_elbo_samples: usize,
    #[serde(default = "elbo_seed")]
    pub elbo_seed: u64,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub bound_grid: GridConfig,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            elbo_samples: 0,
            record_every: None,
            final_elbo_samples: 10_000,
            elbo_seed: elbo_seed(),
            reference: ReferenceConfig::default(),
            bound_grid: GridConfig::default(),
        }
    }
}

impl DiagnosticsConfig {
    pub fn record_every_for(&self, iterations: u64) -> u64 {
        self.record_every
            .unwrap_or_else(|| if iterations <= 10_000 { 1 } else { iterations.div_ceil(10_000) })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn ten() -> u64 {
    10
}
fn fifty() -> usize {
    50
}
fn ten_thousand() -> usize {
    10_000
}
fn twenty_thousand() -> usize {
    20_000
}
fn elbo_seed() -> u64 {
    0x5eed_e1b0
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    /// Read a config file; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.model {
            ModelConfig::LinearRegression { data: RegressionData::Csv { design, responses }, .. }
            | ModelConfig::LogisticRegression { data: RegressionData::Csv { design, responses }, .. } => {
                fix(design);
                fix(responses);
            }
            ModelConfig::HierarchicalLogistic { groups: GroupsConfig::Csv { groups }, .. } => {
                for g in groups {
                    fix(&mut g.design);
                    fix(&mut g.labels);
                }
            }
            _ => {}
        }
    }

    /// SHA-256 of the canonical JSON form (keys sorted, output section excluded).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output");
        }
        // serde_json's default map is ordered by key, so this is canonical
        let text = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Structural checks that do not require building the model.
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if o.iterations == 0 {
            return Err(Error::config("optimizer.iterations must be positive"));
        }
        if o.replications == 0 {
            return Err(Error::config("optimizer.replications must be positive"));
        }
        if o.minibatch == 0 {
            return Err(Error::config("optimizer.minibatch must be positive"));
        }
        match (o.algorithm, o.estimator) {
            (Algorithm::ProxSgd, EstimatorKind::Energy) => {}
            (Algorithm::ProjSgd, EstimatorKind::Entropy | EstimatorKind::Stl) => {}
            (alg, est) => {
                return Err(Error::config(format!(
                    "{alg:?} cannot be paired with the {} estimator (Prox-SGD uses energy; Proj-SGD uses entropy or stl)",
                    est.name()
                )))
            }
        }
        if o.averaging && matches!(o.schedule, ScheduleConfig::Anytime {}) {
            return Err(Error::config("averaging requires a constant stepsize schedule"));
        }
        if let Some(l) = o.level {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::config("optimizer.level must be positive"));
            }
        }
        if self.diagnostics.bound_grid.points == 0 || self.diagnostics.bound_grid.samples < 2 {
            return Err(Error::config("bound_grid needs at least one point and two samples"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"kind": "gaussian", "mean": [0, 0], "covariance": [[1, 0], [0, 1]]},
        "optimizer": {"algorithm": "proj_sgd", "estimator": "stl",
                      "schedule": {"kind": "strong_constant"}, "iterations": 10}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(c.optimizer.replications, 1);
        assert_eq!(c.optimizer.minibatch, 1);
        assert_eq!(c.optimizer.init, InitConfig::Standard { mean: None });
        assert_eq!(c.diagnostics.bound_grid.points, 50);
        assert_eq!(c.diagnostics.reference.budget_factor, 10);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = MINIMAL.replace("\"iterations\"", "\"iteratoins\"");
        assert!(ExperimentConfig::from_json_str(&typo).is_err());
        let extra = MINIMAL.replace("\"model\"", "\"extra\": 1, \"model\"");
        assert!(ExperimentConfig::from_json_str(&extra).is_err());
        let nested = MINIMAL.replace("\"strong_constant\"", "\"strong_constant\", \"gamma\": 1");
        assert!(ExperimentConfig::from_json_str(&nested).is_err());
    }

    #[test]
    fn bad_pairing_is_a_config_error() {
        let c = ExperimentConfig::from_json_str(&MINIMAL.replace("\"stl\"", "\"energy\"")).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn record_every_default() {
        let d = DiagnosticsConfig::default();
        assert_eq!(d.record_every_for(10_000), 1);
        assert_eq!(d.record_every_for(10_001), 2);
        assert_eq!(d.record_every_for(1_000_000), 100);
    }

    #[test]
    fn hash_ignores_output_and_tracks_seed() {
        let a = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output.dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.optimizer.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn relative_csv_paths_resolve_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"model": {"kind": "logistic_regression",
                          "data": {"source": "csv", "design": "a.csv", "responses": "x.csv"}},
                "optimizer": {"algorithm": "prox_sgd", "estimator": "energy",
                              "schedule": {"kind": "anytime"}, "iterations": 5}}"#,
        )
        .unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        match c.model {
            ModelConfig::LogisticRegression { data: RegressionData::Csv { design, .. }, .. } => {
                assert_eq!(design, dir.path().join("a.csv"))
            }
            other => panic!("{other:?}"),
        }
    }
}
