//! Estimated logging policy and its per-sample uncertainty.
//!
//! The logging model is softmax-linear, `β̂(a|x) ∝ exp(f_θ(x,a))` with
//! `f_θ(x,a) = xᵀθ_a / τ`. Scores are trained with a binary objective: every
//! logged `(x, a)` is a positive and `k` uniformly drawn non-chosen actions
//! are negatives. A single intercept shared by all actions absorbs the
//! negative-sampling base rate; it cancels inside the softmax and is dropped.
//!
//! Uncertainty is `U(x,a) = sqrt(gᵀ M_a⁻¹ g)` with `g = ∂f/∂θ_a = x/τ` and
//! `M_a = I + Σ g gᵀ` over the records that logged `a`. The last-layer
//! gradient vanishes outside the logged action's block, so one `d×d` Gram
//! matrix per action is the full block-diagonal `M_D`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{dot, ActionId, Context, LoggedDataset, ParamMatrix, Policy, SoftmaxLinearPolicy};
use crate::env::sigmoid;
use crate::error::{Error, Result};
use crate::rng;

/// Denominator floor for estimated propensities.
pub const DEFAULT_BETA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Negative actions sampled per logged record.
    pub negatives: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 0.5,
            epochs: 30,
            negatives: 5,
            batch_size: 64,
            l2: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub final_loss: f64,
    pub epochs: usize,
    /// Share of records whose logged action scores above the per-context median.
    pub above_median_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggingModel {
    pub policy: SoftmaxLinearPolicy,
    /// One symmetric positive-definite `d×d` matrix per action, row-major.
    #[serde(with = "gram_serde")]
    pub grams: Vec<DMatrix<f64>>,
    pub fit_diagnostics: FitDiagnostics,
}

mod gram_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(grams: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> = grams
            .iter()
            .map(|m| (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let rows = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        rows.into_iter()
            .map(|m| {
                let n = m.len();
                if m.iter().any(|r| r.len() != n) {
                    return Err(serde::de::Error::custom("gram matrix must be square"));
                }
                Ok(DMatrix::from_row_iterator(n, n, m.into_iter().flatten()))
            })
            .collect()
    }
}

/// Confidence interval `[B⁻, B⁺]` on the true logging probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub u: f64,
    pub interval_low: f64,
    pub interval_high: f64,
}

/// `B∓ = e^{∓γu} β̂ / η`, where `η = Z*/Ẑ`.
pub fn confidence_interval(beta_hat: f64, u: f64, gamma: f64, eta: f64) -> Result<UncertaintyRecord> {
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    if !(beta_hat > 0.0 && beta_hat <= 1.0) {
        return Err(Error::invalid(format!("beta_hat {beta_hat} outside (0, 1]")));
    }
    if u < 0.0 || gamma < 0.0 {
        return Err(Error::invalid("uncertainty and gamma must be nonnegative"));
    }
    let width = gamma * u;
    Ok(UncertaintyRecord {
        u,
        interval_low: (-width).exp() * beta_hat / eta,
        interval_high: width.exp() * beta_hat / eta,
    })
}

fn identity_grams(actions: usize, dim: usize) -> Vec<DMatrix<f64>> {
    vec![DMatrix::identity(dim, dim); actions]
}

/// Trains the estimated logging policy and accumulates its Gram matrices.
pub fn fit_logging_policy(dataset: &LoggedDataset, config: &FitConfig) -> Result<LoggingModel> {
    dataset.require_non_empty()?;
    if config.batch_size == 0 || config.epochs == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::invalid("fit config needs positive epochs and batch size"));
    }
    let (m, d) = (dataset.action_count, dataset.dim);
    let mut theta = ParamMatrix::zeros(m, d);
    let mut bias = 0.0;
    let mut rng = rng::stream(config.seed, 0x10_66);
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = f64::NAN;

    for _ in 0..config.epochs {
        // Fisher-Yates with the fit stream
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = ParamMatrix::zeros(m, d);
            let mut grad_bias = 0.0;
            let mut terms = 0usize;
            for &i in batch {
                let s = &dataset.samples[i];
                let x = s.context.as_slice();
                let mut update = |a: usize, label: f64, grad: &mut ParamMatrix| {
                    let z = dot(theta.row(a), x) + bias;
                    let p = sigmoid(z);
                    epoch_loss += if label > 0.5 { softplus(-z) } else { softplus(z) };
                    let err = p - label;
                    for (g, xi) in grad.row_mut(a).iter_mut().zip(x) {
                        *g += err * xi;
                    }
                    grad_bias += err;
                    terms += 1;
                };
                update(s.action.0, 1.0, &mut grad);
                if m > 1 {
                    for _ in 0..config.negatives {
                        // uniform over the m-1 non-chosen actions
                        let mut b = rng.gen_range(0..m - 1);
                        if b >= s.action.0 {
                            b += 1;
                        }
                        update(b, 0.0, &mut grad);
                    }
                }
            }
            let scale = config.learning_rate / terms as f64;
            for (w, g) in theta.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *w -= scale * g + config.learning_rate * config.l2 * *w;
            }
            bias -= scale * grad_bias;
        }
        final_loss = epoch_loss / (n * (1 + if m > 1 { config.negatives } else { 0 })) as f64;
        if !final_loss.is_finite() || !theta.is_finite() {
            return Err(Error::Fit(format!("loss diverged to {final_loss}")));
        }
    }

    let policy = SoftmaxLinearPolicy::new(theta, 1.0)?;
    let above = dataset
        .samples
        .iter()
        .filter(|s| {
            let scores = policy.scores(&s.context).expect("dimension checked by dataset");
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            let median = if m % 2 == 1 {
                sorted[m / 2]
            } else {
                0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
            };
            scores[s.action.0] > median
        })
        .count();
    let model = LoggingModel {
        policy,
        grams: identity_grams(m, d),
        fit_diagnostics: FitDiagnostics {
            final_loss,
            epochs: config.epochs,
            above_median_rate: above as f64 / n as f64,
        },
    };
    model.accumulate_grams(dataset)
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

impl LoggingModel {
    /// Wraps a known policy with identity Gram matrices.
    pub fn from_policy(policy: SoftmaxLinearPolicy) -> Self {
        let grams = identity_grams(policy.action_count(), policy.dim());
        LoggingModel {
            policy,
            grams,
            fit_diagnostics: FitDiagnostics {
                final_loss: 0.0,
                epochs: 0,
                above_median_rate: 0.0,
            },
        }
    }

    pub fn action_count(&self) -> usize {
        self.policy.action_count()
    }

    pub fn dim(&self) -> usize {
        self.policy.dim()
    }

    /// Last-layer gradient `g = ∂f_θ(x,a)/∂θ_a = x/τ`.
    pub fn score_gradient(&self, x: &Context) -> DVector<f64> {
        DVector::from_iterator(x.dim(), x.as_slice().iter().map(|v| v / self.policy.tau))
    }

    /// Adds `g gᵀ` to the Gram matrix of each record's logged action.
    pub fn accumulate_grams(mut self, dataset: &LoggedDataset) -> Result<Self> {
        if dataset.dim != self.dim() && !dataset.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: dataset.dim,
            });
        }
        if dataset.action_count > self.action_count() {
            return Err(Error::invalid("dataset has more actions than the model"));
        }
        for s in &dataset.samples {
            let g = self.score_gradient(&s.context);
            self.grams[s.action.0].ger(1.0, &g, &g, 1.0);
        }
        Ok(self)
    }

    pub fn beta_hat(&self, x: &Context, a: ActionId) -> Result<f64> {
        self.policy.prob(x, a)
    }

    /// `sqrt(gᵀ M_a⁻¹ g)` through a Cholesky solve.
    pub fn uncertainty(&self, x: &Context, a: ActionId) -> Result<f64> {
        self.solver()?.uncertainty(self, x, a)
    }

    /// Factorizes every Gram matrix once for repeated queries.
    pub fn solver(&self) -> Result<UncertaintySolver> {
        let factors = self
            .grams
            .iter()
            .map(|m| {
                Cholesky::new(m.clone()).ok_or_else(|| Error::Numeric("gram matrix is not positive definite".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UncertaintySolver { factors })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Cached Cholesky factors of the per-action Gram matrices.
pub struct UncertaintySolver {
    factors: Vec<Cholesky<f64, Dyn>>,
}

impl UncertaintySolver {
    pub fn uncertainty(&self, model: &LoggingModel, x: &Context, a: ActionId) -> Result<f64> {
        if x.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: x.dim(),
            });
        }
        let factor = self.factors.get(a.0).ok_or(Error::ActionOutOfRange {
            action: a.0,
            action_count: self.factors.len(),
        })?;
        let g = model.score_gradient(x);
        let solved = factor.solve(&g);
        Ok(g.dot(&solved).max(0.0).sqrt())
    }
}

/// Mean uncertainty of a group of actions with similar logged frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBin {
    pub bin: usize,
    pub actions: Vec<usize>,
    pub min_count: usize,
    pub max_count: usize,
    /// Mean of `U(x, a)` over the bin's actions and the given contexts.
    pub mean_u: f64,
    pub mean_beta_hat: f64,
}

/// Groups actions by how often `dataset` logged them (ascending, ties by
/// action id) into `bins` near-equal groups and averages `U` and `β̂` over
/// `contexts`.
pub fn uncertainty_by_frequency(
    model: &LoggingModel,
    dataset: &LoggedDataset,
    contexts: &[Context],
    bins: usize,
) -> Result<Vec<FrequencyBin>> {
    let m = model.action_count();
    if bins == 0 || bins > m {
        return Err(Error::invalid(format!("need between 1 and {m} bins, got {bins}")));
    }
    if contexts.is_empty() {
        return Err(Error::invalid("no contexts"));
    }
    let mut counts = vec![0usize; m];
    for s in &dataset.samples {
        counts[s.action.0] += 1;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&a| (counts[a], a));
    let solver = model.solver()?;
    let mut per_action = vec![(0.0, 0.0); m];
    for x in contexts {
        let dist = model.policy.distribution(x)?;
        for a in 0..m {
            per_action[a].0 += solver.uncertainty(model, x, ActionId(a))?;
            per_action[a].1 += dist[a];
        }
    }
    let n = contexts.len() as f64;
    Ok((0..bins)
        .map(|b| {
            let actions: Vec<usize> = order[b * m / bins..(b + 1) * m / bins].to_vec();
            let k = actions.len() as f64;
            FrequencyBin {
                bin: b,
                min_count: actions.iter().map(|&a| counts[a]).min().unwrap_or(0),
                max_count: actions.iter().map(|&a| counts[a]).max().unwrap_or(0),
                mean_u: actions.iter().map(|&a| per_action[a].0).sum::<f64>() / (k * n),
                mean_beta_hat: actions.iter().map(|&a| per_action[a].1).sum::<f64>() / (k * n),
                actions,
            }
        })
        .collect())
}

/// `ln Σ_a exp(s_a)`, stable.
pub fn log_partition(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}
