//! Experiment configuration file.
//!
//! A single TOML file with flat sections; every key has a default, so an
//! empty file is a valid configuration. The top-level `seed` is the only
//! seed that matters: section seeds are derived from it on resolution.
//!
//! ```toml
//! seed = 3
//! out_dir = "runs/a"
//!
//! [env]
//! tau = 0.5
//!
//! [data]
//! draws_per_context = 10
//!
//! [train]
//! learning_rate = 1.0
//! weighting = { kind = "uips", lambda = 10.0, gamma = 1.0 }
//!
//! [[sweep.methods]]
//! name = "uips"
//! kind = "uips"
//! lambda = [1.0, 10.0]
//! gamma = [0.5, 1.0]
//!
//! [ope]
//! n_seeds = 20
//! [[ope.estimators]]
//! name = "bips"
//! kind = "bips"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::estimators::{NamedEstimator, OpeConfig, PropensityWeighting};
use crate::learning::TrainConfig;
use crate::logging::FitConfig;
use crate::rng::child_seed;
use crate::weights::UipsHyperParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Logged actions drawn per training context.
    pub draws_per_context: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { draws_per_context: 10 }
    }
}

/// A weighting rule with list-valued hyper-parameters; expands to the
/// Cartesian product of the lists that the rule uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodGrid {
    pub name: String,
    /// One of the weighting kinds (`bips`, `bips_cap`, `uips`, ...).
    pub kind: String,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    /// Shared `η₁ = η₂` values; ignored when `eta1`/`eta2` are given.
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub eta1: Vec<f64>,
    #[serde(default)]
    pub eta2: Vec<f64>,
    #[serde(default)]
    pub cap: Vec<f64>,
}

fn or_default(v: &[f64], d: f64) -> Vec<f64> {
    if v.is_empty() {
        vec![d]
    } else {
        v.to_vec()
    }
}

impl MethodGrid {
    pub fn simple(name: &str, kind: &str) -> Self {
        MethodGrid {
            name: name.into(),
            kind: kind.into(),
            lambda: vec![],
            gamma: vec![],
            eta: vec![],
            eta1: vec![],
            eta2: vec![],
            cap: vec![],
        }
    }

    pub fn expand(&self) -> Result<Vec<PropensityWeighting>> {
        let hp = UipsHyperParams::default();
        let out: Vec<PropensityWeighting> = match self.kind.as_str() {
            "ips_true" => vec![PropensityWeighting::IpsTrue],
            "bips" => vec![PropensityWeighting::Bips],
            "snips" => vec![PropensityWeighting::Snips],
            "minvar" => vec![PropensityWeighting::MinVar],
            "stablevar" => vec![PropensityWeighting::StableVar],
            "bips_cap" => or_default(&self.cap, 10.0)
                .into_iter()
                .map(|cap| PropensityWeighting::BipsCap { cap })
                .collect(),
            "dice_s" => or_default(&self.cap, 10.0)
                .into_iter()
                .map(|cap| PropensityWeighting::DiceS { cap })
                .collect(),
            "shrinkage" => or_default(&self.lambda, hp.lambda)
                .into_iter()
                .map(|lambda| PropensityWeighting::Shrinkage { lambda })
                .collect(),
            "uips_p" => or_default(&self.gamma, hp.gamma)
                .into_iter()
                .map(|gamma| PropensityWeighting::UipsP { gamma })
                .collect(),
            "uips_o" => or_default(&self.gamma, hp.gamma)
                .into_iter()
                .map(|gamma| PropensityWeighting::UipsO { gamma })
                .collect(),
            "uips" => {
                let etas: Vec<(f64, f64)> = if self.eta1.is_empty() && self.eta2.is_empty() {
                    or_default(&self.eta, 1.0).into_iter().map(|e| (e, e)).collect()
                } else {
                    let e2 = or_default(&self.eta2, 1.0);
                    or_default(&self.eta1, 1.0)
                        .into_iter()
                        .flat_map(|a| e2.iter().map(move |&b| (a, b)))
                        .collect()
                };
                let mut v = Vec::new();
                for &lambda in &or_default(&self.lambda, hp.lambda) {
                    for &gamma in &or_default(&self.gamma, hp.gamma) {
                        for &(eta1, eta2) in &etas {
                            v.push(PropensityWeighting::Uips(UipsHyperParams {
                                lambda,
                                gamma,
                                eta1,
                                eta2,
                                ..hp
                            }));
                        }
                    }
                }
                v
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown weighting kind `{other}` in method `{}`",
                    self.name
                )))
            }
        };
        for w in &out {
            w.validate()
                .map_err(|e| Error::Config(format!("method `{}`: {e}", self.name)))?;
        }
        Ok(out)
    }

    /// Grid points as estimators named `<name>[<label>]`.
    pub fn estimators(&self) -> Result<Vec<NamedEstimator>> {
        Ok(self
            .expand()?
            .into_iter()
            .map(|w| NamedEstimator {
                name: format!("{}[{}]", self.name, w.label()),
                weighting: w,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub learning_rates: Vec<f64>,
    pub methods: Vec<MethodGrid>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let mut uips = MethodGrid::simple("uips", "uips");
        uips.lambda = vec![0.1, 1.0, 10.0];
        uips.gamma = vec![0.5, 1.0, 2.0];
        let mut cap = MethodGrid::simple("bips_cap", "bips_cap");
        cap.cap = vec![1.0, 2.0, 5.0, 10.0, 100.0];
        SweepConfig {
            learning_rates: vec![0.1, 1.0, 10.0],
            methods: vec![uips, cap],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeSection {
    /// Exploration rate of the ε-greedy target over the test contexts.
    pub epsilon: f64,
    pub samples_per_context: usize,
    pub n_seeds: usize,
    pub estimators: Vec<MethodGrid>,
}

impl Default for OpeSection {
    fn default() -> Self {
        let grid = vec![0.1, 1.0, 10.0, 100.0, 1000.0];
        let mut shrink = MethodGrid::simple("shrinkage", "shrinkage");
        shrink.lambda = grid.clone();
        let mut uips = MethodGrid::simple("uips", "uips");
        uips.lambda = grid;
        uips.gamma = vec![0.1, 0.5, 1.0, 2.0, 5.0];
        uips.eta = vec![0.5, 1.0, 2.0];
        let run = OpeConfig::default();
        OpeSection {
            epsilon: run.epsilon,
            samples_per_context: run.samples_per_context,
            n_seeds: run.n_seeds,
            estimators: vec![
                MethodGrid::simple("ips_true", "ips_true"),
                MethodGrid::simple("bips", "bips"),
                MethodGrid::simple("snips", "snips"),
                MethodGrid::simple("minvar", "minvar"),
                MethodGrid::simple("stablevar", "stablevar"),
                shrink,
                uips,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectConfig {
    /// Exploration rate of the ε-greedy target over the training contexts.
    pub epsilon: f64,
    pub hyper_params: UipsHyperParams,
    /// Number of action-frequency bins in the summary.
    pub bins: usize,
}

impl Default for InspectConfig {
    fn default() -> Self {
        InspectConfig {
            epsilon: 0.2,
            hyper_params: UipsHyperParams::default(),
            bins: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub fit: FitConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub ope: OpeSection,
    pub inspect: InspectConfig,
}

fn config_err(section: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(m) => Error::Config(format!("[{section}] {m}")),
        other => Error::Config(format!("[{section}] {other}")),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies the seed override, derives section seeds and validates.
    pub fn resolve(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.env.seed = child_seed(self.seed, 1);
        self.fit.seed = child_seed(self.seed, 2);
        self.train.seed = child_seed(self.seed, 3);
        self.train.refit.seed = child_seed(self.seed, 4);
        self.env.validate().map_err(config_err("env"))?;
        if self.data.draws_per_context == 0 {
            return Err(Error::Config("[data] draws_per_context must be positive".into()));
        }
        if self.fit.epochs == 0 || self.fit.batch_size == 0 || !(self.fit.learning_rate >= 0.0) {
            return Err(Error::Config(
                "[fit] needs positive epochs, batch_size and a nonnegative learning_rate".into(),
            ));
        }
        self.train.validate().map_err(config_err("train"))?;
        self.ope_config().validate().map_err(config_err("ope"))?;
        self.inspect.hyper_params.validate().map_err(config_err("inspect"))?;
        if self.inspect.bins == 0 || !(0.0..=1.0).contains(&self.inspect.epsilon) {
            return Err(Error::Config("[inspect] needs bins ≥ 1 and epsilon in [0, 1]".into()));
        }
        Ok(self)
    }

    /// Run settings of the OPE experiment; logging fits reuse `[fit]`.
    pub fn ope_config(&self) -> OpeConfig {
        OpeConfig {
            epsilon: self.ope.epsilon,
            samples_per_context: self.ope.samples_per_context,
            n_seeds: self.ope.n_seeds,
            seed: child_seed(self.seed, 5),
            fit: self.fit.clone(),
        }
    }

    pub fn validate_sweep(&self) -> Result<()> {
        if self.sweep.methods.is_empty() || self.sweep.learning_rates.is_empty() {
            return Err(Error::Config("[sweep] grid is empty".into()));
        }
        if self.sweep.learning_rates.iter().any(|lr| !(*lr >= 0.0)) {
            return Err(Error::Config("[sweep] learning rates must be nonnegative".into()));
        }
        for m in &self.sweep.methods {
            m.expand()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
