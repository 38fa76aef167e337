use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalTable, PropensityWeighting};
use crate::bandit::Policy;
use crate::env::{generate_log_per_instance, true_policy_value, BanditEnv};
use crate::error::{Error, Result};
use crate::logging::{fit_logging_policy, FitConfig};
use crate::{parallel, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeConfig {
    /// Exploration rate of the ε-greedy target policy.
    pub epsilon: f64,
    /// Logged actions drawn per test context.
    pub samples_per_context: usize,
    pub n_seeds: usize,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for OpeConfig {
    fn default() -> Self {
        OpeConfig {
            epsilon: 0.2,
            samples_per_context: 100,
            n_seeds: 10,
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

impl OpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.samples_per_context == 0 || self.n_seeds == 0 {
            return Err(Error::Config("samples_per_context and n_seeds must be positive".into()));
        }
        Ok(())
    }

    /// Seed of the `i`-th regenerated log.
    pub fn run_seed(&self, i: usize) -> u64 {
        rng::child_seed(self.seed, i as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimator {
    pub name: String,
    pub weighting: PropensityWeighting,
}

impl NamedEstimator {
    pub fn new(weighting: PropensityWeighting) -> Self {
        NamedEstimator {
            name: weighting.label(),
            weighting,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeRow {
    pub estimator: String,
    pub seed: usize,
    pub estimate: f64,
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeSummaryRow {
    pub estimator: String,
    pub mse: f64,
    /// Standard deviation of the squared error across seeds.
    pub mse_std: f64,
    pub mean_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeResult {
    pub true_value: f64,
    /// Ordered by seed, then estimator list order.
    pub rows: Vec<OpeRow>,
    pub summary: Vec<OpeSummaryRow>,
}

impl OpeResult {
    /// Squared errors of one estimator, by seed.
    pub fn squared_errors(&self, estimator: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .map(|r| r.squared_error)
            .collect()
    }

    pub fn summary_for(&self, estimator: &str) -> Option<&OpeSummaryRow> {
        self.summary.iter().find(|s| s.estimator == estimator)
    }

    /// Lowest-MSE estimator among those whose name starts with `prefix`.
    pub fn best_with_prefix(&self, prefix: &str) -> Option<&OpeSummaryRow> {
        self.summary
            .iter()
            .filter(|s| s.estimator.starts_with(prefix))
            .min_by(|a, b| a.mse.total_cmp(&b.mse))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "estimator,seed,estimate,squared_error")?;
        for r in &self.rows {
            writeln!(out, "\"{}\",{},{},{}", r.estimator, r.seed, r.estimate, r.squared_error)?;
        }
        Ok(())
    }
}

/// Mean squared error of each estimator over `n_seeds` regenerated logs.
///
/// Each run draws `samples_per_context` actions from the true logging policy
/// for every test context, refits the logging model on that log, and scores
/// every estimator against the exact value of `target` on the test split.
pub fn ope_mse_experiment<P: Policy + ?Sized>(
    env: &BanditEnv,
    target: &P,
    estimators: &[NamedEstimator],
    config: &OpeConfig,
) -> Result<OpeResult> {
    config.validate()?;
    if estimators.is_empty() {
        return Err(Error::Config("no estimators requested".into()));
    }
    for e in estimators {
        e.weighting.validate()?;
    }
    let truth = true_policy_value(env, target)?;
    let per_seed = parallel::try_map_indexed(config.n_seeds, |i| -> Result<Vec<OpeRow>> {
        let seed = config.run_seed(i);
        let mut log_rng = rng::stream(seed, 1);
        let data = generate_log_per_instance(env, &env.test, config.samples_per_context, &mut log_rng)?;
        let fit = FitConfig {
            seed: rng::child_seed(seed, 2),
            ..config.fit.clone()
        };
        let model = fit_logging_policy(&data, &fit)?;
        let table = EvalTable::build(&data, target, Some(&model))?;
        estimators
            .iter()
            .map(|e| {
                let estimate = table.estimate(&e.weighting)?.value;
                Ok(OpeRow {
                    estimator: e.name.clone(),
                    seed: i,
                    estimate,
                    squared_error: (estimate - truth).powi(2),
                })
            })
            .collect()
    })?;
    let rows: Vec<OpeRow> = per_seed.into_iter().flatten().collect();
    let summary = estimators
        .iter()
        .map(|e| {
            let errs: Vec<&OpeRow> = rows.iter().filter(|r| r.estimator == e.name).collect();
            let n = errs.len() as f64;
            let mse = errs.iter().map(|r| r.squared_error).sum::<f64>() / n;
            let var = errs.iter().map(|r| (r.squared_error - mse).powi(2)).sum::<f64>() / n;
            OpeSummaryRow {
                estimator: e.name.clone(),
                mse,
                mse_std: var.sqrt(),
                mean_estimate: errs.iter().map(|r| r.estimate).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(OpeResult {
        true_value: truth,
        rows,
        summary,
    })
}
