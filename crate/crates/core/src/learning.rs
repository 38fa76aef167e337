//! REINFORCE policy learning from logged feedback.
//!
//! The update direction for a batch `B` is `(1/|B|) Σ w · r · ∇log π(a|x)`,
//! where `w` is the total propensity weight of the chosen rule evaluated at
//! the current policy and then held fixed for the step. For the UIPS rule the
//! per-sample `β̂` and `U` come from a pre-pass over the training log, and
//! only `φ*` is recomputed from the current `π` at every step.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bandit::{add_log_prob_grad, ActionId, Context, LoggedDataset, ParamMatrix, Policy, SoftmaxLinearPolicy};
use crate::env::MultilabelInstance;
use crate::error::{Error, Result};
use crate::estimators::{cell_weight, CellView, ImputationModel, PropensityWeighting};
use crate::logging::{fit_logging_policy, FitConfig, LoggingModel, DEFAULT_BETA_FLOOR};
use crate::metrics::{evaluate_scores, RankingMetrics};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weighting: PropensityWeighting,
    pub seed: u64,
    /// Validation metrics are computed every `eval_every` epochs and on the last.
    pub eval_every: usize,
    /// Cut-off K of the validation ranking metrics.
    pub k: usize,
    pub tau: f64,
    /// Refit `β̂` and `U` on the training log before every epoch.
    pub refit_logging_per_epoch: bool,
    /// Fit settings used when refitting.
    pub refit: FitConfig,
    /// Record the squared true-gradient norm after every step (needs `β*`).
    pub track_step_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 64,
            weighting: PropensityWeighting::Bips,
            seed: 0,
            eval_every: 1,
            k: 5,
            tau: 1.0,
            refit_logging_per_epoch: false,
            refit: FitConfig::default(),
            track_step_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} must be nonnegative",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 || self.k == 0 {
            return Err(Error::Config(
                "epochs, batch_size, eval_every and k must be positive".into(),
            ));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        self.weighting.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Estimated value of the policy on the training log under the weighting.
    pub value: f64,
    /// `None` on epochs without evaluation.
    pub validation: Option<RankingMetrics>,
    /// Norm of the exact-propensity gradient, `NaN` when `β*` is missing.
    pub grad_norm: f64,
    pub max_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub initial_validation: RankingMetrics,
    /// Squared true-gradient norms after each step, when tracked.
    pub step_grad_sq: Vec<f64>,
}

impl TrainTrace {
    pub fn final_validation(&self) -> Option<RankingMetrics> {
        self.epochs.iter().rev().find_map(|e| e.validation)
    }

    /// `(1/K) Σ_{k<K} ‖∇V(π_k)‖²`.
    pub fn running_mean_grad_sq(&self, k: usize) -> Option<f64> {
        (k > 0 && k <= self.step_grad_sq.len()).then(|| self.step_grad_sq[..k].iter().sum::<f64>() / k as f64)
    }
}

/// A logged record with its logging-model quantities precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub context: Context,
    pub action: ActionId,
    pub reward: f64,
    pub beta_hat: f64,
    pub beta_star: Option<f64>,
    pub u: f64,
    pub beta_hat_dist: Vec<f64>,
    /// `N_{x,a} / N_x` in the source log.
    pub empirical: f64,
}

/// One pass over the log computing `β̂`, `U` and the empirical propensities.
pub fn prepare_samples(dataset: &LoggedDataset, model: &LoggingModel) -> Result<Vec<PreparedSample>> {
    dataset.require_non_empty()?;
    let solver = model.solver()?;
    let mut counts: std::collections::HashMap<_, (f64, Vec<f64>)> = Default::default();
    for s in &dataset.samples {
        let e = counts
            .entry(s.context.key())
            .or_insert_with(|| (0.0, vec![0.0; dataset.action_count]));
        e.0 += 1.0;
        e.1[s.action.0] += 1.0;
    }
    dataset
        .samples
        .iter()
        .map(|s| {
            let beta_hat_dist = model.policy.distribution(&s.context)?;
            let (n_x, per) = &counts[&s.context.key()];
            Ok(PreparedSample {
                context: s.context.clone(),
                action: s.action,
                reward: s.reward,
                beta_hat: beta_hat_dist[s.action.0],
                beta_star: s.true_logging_prob,
                u: solver.uncertainty(model, &s.context, s.action)?,
                beta_hat_dist,
                empirical: per[s.action.0] / n_x,
            })
        })
        .collect()
}

fn sample_weight(kind: &PropensityWeighting, s: &PreparedSample, pi_dist: &[f64]) -> Result<f64> {
    let pi = pi_dist[s.action.0];
    match *kind {
        PropensityWeighting::DiceS { cap } => Ok((pi / s.empirical).min(cap)),
        _ => {
            let cell = CellView {
                action: s.action.0,
                pi,
                beta_hat: s.beta_hat,
                beta_star: s.beta_star,
                u: s.u,
                pi_dist,
                beta_hat_dist: &s.beta_hat_dist,
            };
            cell_weight(kind, &cell, DEFAULT_BETA_FLOOR)
        }
    }
}

/// Total propensity weights of `batch` at the current policy.
pub fn sample_weights(
    policy: &SoftmaxLinearPolicy,
    batch: &[PreparedSample],
    kind: &PropensityWeighting,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| sample_weight(kind, s, &policy.distribution(&s.context)?))
        .collect()
}

fn check_batch(policy: &SoftmaxLinearPolicy, batch: &[PreparedSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(s) = batch.iter().find(|s| s.context.dim() != policy.dim()) {
        return Err(Error::DimensionMismatch {
            expected: policy.dim(),
            got: s.context.dim(),
        });
    }
    Ok(())
}

/// Batch weights with SNIPS self-normalization folded in.
fn effective_weights(
    policy: &SoftmaxLinearPolicy,
    batch: &[PreparedSample],
    kind: &PropensityWeighting,
) -> Result<Vec<f64>> {
    let mut w = sample_weights(policy, batch, kind)?;
    if matches!(kind, PropensityWeighting::Snips) {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("SNIPS weight sum is zero"));
        }
        let scale = batch.len() as f64 / total;
        w.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(w)
}

/// `(1/B) Σ w · r · ∇log π(a|x)` with `w` held fixed.
pub fn weighted_gradient(
    policy: &SoftmaxLinearPolicy,
    batch: &[PreparedSample],
    kind: &PropensityWeighting,
) -> Result<ParamMatrix> {
    check_batch(policy, batch)?;
    let weights = effective_weights(policy, batch, kind)?;
    let b = batch.len() as f64;
    let mut grad = ParamMatrix::zeros(policy.action_count(), policy.dim());
    for (s, w) in batch.iter().zip(&weights) {
        let dist = policy.distribution(&s.context)?;
        add_log_prob_grad(
            &mut grad,
            s.context.as_slice(),
            &dist,
            s.action.0,
            policy.tau,
            w * s.reward / b,
        );
    }
    Ok(grad)
}

/// Gradient of the doubly robust estimate: the direct-method term over all
/// actions plus the weighted residual term on the logged actions.
pub fn dr_gradient<I: ImputationModel + ?Sized>(
    policy: &SoftmaxLinearPolicy,
    batch: &[PreparedSample],
    imputation: &I,
    kind: &PropensityWeighting,
) -> Result<ParamMatrix> {
    check_batch(policy, batch)?;
    let weights = effective_weights(policy, batch, kind)?;
    let b = batch.len() as f64;
    let mut grad = ParamMatrix::zeros(policy.action_count(), policy.dim());
    for (s, w) in batch.iter().zip(&weights) {
        let x = s.context.as_slice();
        let dist = policy.distribution(&s.context)?;
        for (a, &p) in dist.iter().enumerate() {
            let eta = imputation.predict(&s.context, ActionId(a));
            if eta != 0.0 {
                add_log_prob_grad(&mut grad, x, &dist, a, policy.tau, eta * p / b);
            }
        }
        let residual = s.reward - imputation.predict(&s.context, s.action);
        add_log_prob_grad(&mut grad, x, &dist, s.action.0, policy.tau, w * residual / b);
    }
    Ok(grad)
}

/// Exact-propensity gradient `(1/N) Σ (π/β*) r ∇log π` over `pool`.
pub fn true_gradient<P: AsRef<[PreparedSample]>>(policy: &SoftmaxLinearPolicy, pool: P) -> Result<ParamMatrix> {
    let pool = pool.as_ref();
    check_batch(policy, pool)?;
    let n = pool.len() as f64;
    let mut grad = ParamMatrix::zeros(policy.action_count(), policy.dim());
    for (i, s) in pool.iter().enumerate() {
        let bs = s.beta_star.ok_or(Error::MissingPropensity(i))?;
        let dist = policy.distribution(&s.context)?;
        let pi = dist[s.action.0];
        add_log_prob_grad(
            &mut grad,
            s.context.as_slice(),
            &dist,
            s.action.0,
            policy.tau,
            pi / bs * s.reward / n,
        );
    }
    Ok(grad)
}

/// Frobenius norm of [`true_gradient`] over a logged pool.
pub fn true_gradient_norm(policy: &SoftmaxLinearPolicy, pool: &LoggedDataset) -> Result<f64> {
    pool.require_non_empty()?;
    let prepared: Vec<PreparedSample> = pool
        .samples
        .iter()
        .map(|s| PreparedSample {
            context: s.context.clone(),
            action: s.action,
            reward: s.reward,
            beta_hat: f64::NAN,
            beta_star: s.true_logging_prob,
            u: 0.0,
            beta_hat_dist: Vec::new(),
            empirical: f64::NAN,
        })
        .collect();
    Ok(true_gradient(policy, &prepared)?.frobenius_norm())
}

/// Weighted estimate of the policy value on the prepared log, plus the
/// largest per-sample weight.
fn log_value(
    policy: &SoftmaxLinearPolicy,
    samples: &[PreparedSample],
    kind: &PropensityWeighting,
) -> Result<(f64, f64)> {
    let w = effective_weights(policy, samples, kind)?;
    let value = w.iter().zip(samples).map(|(w, s)| w * s.reward).sum::<f64>() / samples.len() as f64;
    Ok((value, w.iter().copied().fold(0.0, f64::max)))
}

fn validation_metrics(
    policy: &SoftmaxLinearPolicy,
    validation: &[MultilabelInstance],
    k: usize,
) -> Result<RankingMetrics> {
    evaluate_scores(validation, k, |x| policy.scores(x))
}

/// Minibatch gradient ascent on the weighted value estimate, starting from
/// the all-zero policy.
pub fn train(
    dataset: &LoggedDataset,
    model: &LoggingModel,
    validation: &[MultilabelInstance],
    config: &TrainConfig,
) -> Result<(SoftmaxLinearPolicy, TrainTrace)> {
    config.validate()?;
    let mut policy = SoftmaxLinearPolicy::zeros(dataset.action_count, dataset.dim, config.tau)?;
    let mut samples = prepare_samples(dataset, model)?;
    let has_truth = samples.iter().all(|s| s.beta_star.is_some());
    if config.track_step_gradients && !has_truth {
        return Err(Error::MissingPropensity(
            samples.iter().position(|s| s.beta_star.is_none()).unwrap_or(0),
        ));
    }
    let initial_validation = validation_metrics(&policy, validation, config.k)?;
    let mut rng = rng::stream(config.seed, 0x7a1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut step_grad_sq = Vec::new();
    for epoch in 0..config.epochs {
        if config.refit_logging_per_epoch {
            let fit = FitConfig {
                seed: rng::child_seed(config.refit.seed, epoch as u64),
                ..config.refit.clone()
            };
            samples = prepare_samples(dataset, &fit_logging_policy(dataset, &fit)?)?;
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<PreparedSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let grad = weighted_gradient(&policy, &batch, &config.weighting)?;
            policy.theta.add_scaled(&grad, config.learning_rate);
            if !policy.theta.is_finite() {
                return Err(Error::Numeric(format!(
                    "policy parameters diverged at epoch {epoch} (learning rate {})",
                    config.learning_rate
                )));
            }
            if config.track_step_gradients {
                step_grad_sq.push(true_gradient(&policy, &samples)?.frobenius_norm().powi(2));
            }
        }
        let (value, max_weight) = log_value(&policy, &samples, &config.weighting)?;
        let last = epoch + 1 == config.epochs;
        let validation = if last || (epoch + 1) % config.eval_every == 0 {
            Some(validation_metrics(&policy, validation, config.k)?)
        } else {
            None
        };
        let grad_norm = if has_truth {
            true_gradient(&policy, &samples)?.frobenius_norm()
        } else {
            f64::NAN
        };
        records.push(EpochRecord {
            epoch: epoch + 1,
            value,
            validation,
            grad_norm,
            max_weight,
        });
    }
    Ok((
        policy,
        TrainTrace {
            epochs: records,
            initial_validation,
            step_grad_sq,
        },
    ))
}
