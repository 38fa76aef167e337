//! Off-policy value estimators.
//!
//! Every estimator here is a weighted mean of logged rewards. Most of them
//! share the form `(1/N) Σ (π/β̂) · φ · r` and differ only in the per-sample
//! factor `φ`; [`PropensityWeighting`] names the rule and
//! [`EvalTable`] holds the per-sample quantities (target probability,
//! estimated and true logging probability, uncertainty) so that many rules
//! can be evaluated against one logged dataset cheaply.

mod exact;
mod imputation;
mod ope;

pub use exact::{exact_bias_variance, mse_upper_bound, worst_case_bound, BiasVariance, SmallProblem};
pub use imputation::{ConstantImputation, ImputationModel, LinearImputation, TabularImputation};
pub use ope::{ope_mse_experiment, NamedEstimator, OpeConfig, OpeResult, OpeRow, OpeSummaryRow};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bandit::{Context, LoggedDataset, Policy};
use crate::error::{Error, Result};
use crate::logging::{LoggingModel, DEFAULT_BETA_FLOOR};
use crate::weights::{phi_star, shrinkage_weight, variant_weight, UipsHyperParams, VariantKind, WeightInput};

/// Reweighting rule applied to each logged sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityWeighting {
    /// `π/β*` with the true logging probability.
    IpsTrue,
    /// `π/β̂`.
    Bips,
    /// `min(c, π/β̂)`.
    BipsCap { cap: f64 },
    /// Self-normalized `π/β̂`.
    Snips,
    /// `(π/β̂) · h/Σh`, `h = β̂/π²`.
    MinVar,
    /// `(π/β̂) · h/Σh`, `h = √β̂/π`.
    StableVar,
    /// `(π/β̂) · λ/(λ + (π/β̂)²)`.
    Shrinkage { lambda: f64 },
    /// `(π/β̂) · φ*`.
    Uips(UipsHyperParams),
    /// `(π/β̂) · e^{−γU}`.
    UipsP { gamma: f64 },
    /// `(π/β̂) · e^{γU}`.
    UipsO { gamma: f64 },
    /// `min(c, π / (N_{x,a}/N_x))` with empirical count propensities.
    DiceS { cap: f64 },
}

impl PropensityWeighting {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PropensityWeighting::BipsCap { cap } | PropensityWeighting::DiceS { cap } if !(cap > 0.0) => {
                Err(Error::invalid(format!("cap must be positive, got {cap}")))
            }
            PropensityWeighting::Shrinkage { lambda } if !(lambda >= 0.0) => {
                Err(Error::invalid("shrinkage lambda must be nonnegative"))
            }
            PropensityWeighting::UipsP { gamma } | PropensityWeighting::UipsO { gamma } if !(gamma >= 0.0) => {
                Err(Error::invalid("gamma must be nonnegative"))
            }
            PropensityWeighting::Uips(hp) => hp.validate(),
            _ => Ok(()),
        }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match self {
            PropensityWeighting::IpsTrue => "ips_true".into(),
            PropensityWeighting::Bips => "bips".into(),
            PropensityWeighting::BipsCap { cap } => format!("bips_cap(c={cap})"),
            PropensityWeighting::Snips => "snips".into(),
            PropensityWeighting::MinVar => "minvar".into(),
            PropensityWeighting::StableVar => "stablevar".into(),
            PropensityWeighting::Shrinkage { lambda } => format!("shrinkage(lambda={lambda})"),
            PropensityWeighting::Uips(hp) => format!(
                "uips(lambda={},gamma={},eta1={},eta2={})",
                hp.lambda, hp.gamma, hp.eta1, hp.eta2
            ),
            PropensityWeighting::UipsP { gamma } => format!("uips_p(gamma={gamma})"),
            PropensityWeighting::UipsO { gamma } => format!("uips_o(gamma={gamma})"),
            PropensityWeighting::DiceS { cap } => format!("dice_s(c={cap})"),
        }
    }

    fn needs_uncertainty(&self) -> bool {
        matches!(
            self,
            PropensityWeighting::Uips(_) | PropensityWeighting::UipsP { .. } | PropensityWeighting::UipsO { .. }
        )
    }

    /// True when the estimate is a plain mean of independent per-sample terms.
    pub fn is_per_sample(&self) -> bool {
        !matches!(self, PropensityWeighting::Snips | PropensityWeighting::DiceS { .. })
    }
}

/// Quantities needed to weight one logged `(x, a)`.
#[derive(Debug, Clone, Copy)]
pub struct CellView<'a> {
    pub action: usize,
    pub pi: f64,
    pub beta_hat: f64,
    pub beta_star: Option<f64>,
    pub u: f64,
    /// Target and estimated logging distributions over all actions at `x`.
    pub pi_dist: &'a [f64],
    pub beta_hat_dist: &'a [f64],
}

/// Total propensity weight `w` such that the sample contributes `w · r`.
/// Self-normalized and count-based rules are handled by the caller.
pub fn cell_weight(kind: &PropensityWeighting, cell: &CellView<'_>, beta_floor: f64) -> Result<f64> {
    let bh = cell.beta_hat.max(beta_floor);
    let ratio = cell.pi / bh;
    let w = match *kind {
        PropensityWeighting::IpsTrue => {
            let bs = cell
                .beta_star
                .ok_or_else(|| Error::invalid("ips_true needs the true logging probability"))?;
            cell.pi / bs
        }
        PropensityWeighting::Bips | PropensityWeighting::Snips => ratio,
        PropensityWeighting::BipsCap { cap } => ratio.min(cap),
        PropensityWeighting::MinVar | PropensityWeighting::StableVar => {
            let h = |p: f64, b: f64| {
                let p = p.max(beta_floor);
                let b = b.max(beta_floor);
                if matches!(kind, PropensityWeighting::MinVar) {
                    b / (p * p)
                } else {
                    b.sqrt() / p
                }
            };
            let total: f64 = cell
                .pi_dist
                .iter()
                .zip(cell.beta_hat_dist)
                .map(|(&p, &b)| h(p, b))
                .sum();
            ratio * h(cell.pi, cell.beta_hat) / total
        }
        PropensityWeighting::Shrinkage { lambda } => ratio * shrinkage_weight(cell.pi, bh, lambda),
        PropensityWeighting::Uips(hp) => {
            let input = WeightInput {
                pi: cell.pi,
                beta_hat: bh,
                u: cell.u,
            };
            ratio * phi_star(&input, &UipsHyperParams { beta_floor, ..hp })
        }
        PropensityWeighting::UipsP { gamma } | PropensityWeighting::UipsO { gamma } => {
            let input = WeightInput {
                pi: cell.pi,
                beta_hat: bh,
                u: cell.u,
            };
            let variant = if matches!(kind, PropensityWeighting::UipsP { .. }) {
                VariantKind::Penalize
            } else {
                VariantKind::Optimistic
            };
            let hp = UipsHyperParams {
                gamma,
                ..UipsHyperParams::default()
            };
            ratio * variant_weight(variant, &input, &hp)
        }
        PropensityWeighting::DiceS { .. } => {
            return Err(Error::Unsupported("dice_s weights depend on the whole dataset".into()))
        }
    };
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub value: f64,
    pub per_sample_weights: Vec<f64>,
    pub effective_sample_size: f64,
    pub max_weight: f64,
}

impl EstimateReport {
    fn from_weights(value: f64, weights: Vec<f64>) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("estimate is not finite ({value})")));
        }
        let sum: f64 = weights.iter().sum();
        let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
        let effective_sample_size = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
        let max_weight = weights.iter().copied().fold(0.0, f64::max);
        Ok(EstimateReport {
            value,
            per_sample_weights: weights,
            effective_sample_size,
            max_weight,
        })
    }
}

#[derive(Debug, Clone)]
struct Row {
    action: usize,
    reward: f64,
    pi: f64,
    beta_hat: f64,
    beta_star: Option<f64>,
    u: f64,
    empirical: f64,
    dist_slot: usize,
}

/// Per-sample quantities for one (dataset, target policy, logging model).
#[derive(Debug, Clone)]
pub struct EvalTable {
    rows: Vec<Row>,
    /// Distinct contexts: (π distribution, β̂ distribution).
    dists: Vec<(Vec<f64>, Vec<f64>)>,
    contexts: Vec<Context>,
    pub beta_floor: f64,
}

impl EvalTable {
    /// Builds the table. Without a logging model, `β̂` is unavailable and only
    /// `ips_true` and `dice_s` can be evaluated; `β̂` then defaults to NaN.
    pub fn build<P: Policy + ?Sized>(
        dataset: &LoggedDataset,
        policy: &P,
        model: Option<&LoggingModel>,
    ) -> Result<Self> {
        dataset.require_non_empty()?;
        if policy.action_count() != dataset.action_count {
            return Err(Error::invalid(format!(
                "policy has {} actions, dataset {}",
                policy.action_count(),
                dataset.action_count
            )));
        }
        let solver = model.map(|m| m.solver()).transpose()?;
        let mut slots: HashMap<_, usize> = HashMap::new();
        let mut dists = Vec::new();
        let mut contexts = Vec::new();
        let mut counts: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut rows = Vec::with_capacity(dataset.len());
        for s in &dataset.samples {
            let slot = match slots.get(&s.context.key()) {
                Some(&slot) => slot,
                None => {
                    let pi_dist = policy.distribution(&s.context)?;
                    let bh_dist = match model {
                        Some(m) => m.policy.distribution(&s.context)?,
                        None => vec![f64::NAN; dataset.action_count],
                    };
                    dists.push((pi_dist, bh_dist));
                    contexts.push(s.context.clone());
                    counts.push((0.0, vec![0.0; dataset.action_count]));
                    slots.insert(s.context.key(), dists.len() - 1);
                    dists.len() - 1
                }
            };
            counts[slot].0 += 1.0;
            counts[slot].1[s.action.0] += 1.0;
            let u = match (model, &solver) {
                (Some(m), Some(sv)) => sv.uncertainty(m, &s.context, s.action)?,
                _ => 0.0,
            };
            rows.push(Row {
                action: s.action.0,
                reward: s.reward,
                pi: dists[slot].0[s.action.0],
                beta_hat: dists[slot].1[s.action.0],
                beta_star: s.true_logging_prob,
                u,
                empirical: 0.0,
                dist_slot: slot,
            });
        }
        for r in &mut rows {
            let (n_x, per_action) = &counts[r.dist_slot];
            r.empirical = per_action[r.action] / n_x;
        }
        Ok(EvalTable {
            rows,
            dists,
            contexts,
            beta_floor: DEFAULT_BETA_FLOOR,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct contexts in first-seen order.
    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn uncertainties(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.u).collect()
    }

    fn cell(&self, r: &Row) -> CellView<'_> {
        let (pi_dist, bh_dist) = &self.dists[r.dist_slot];
        CellView {
            action: r.action,
            pi: r.pi,
            beta_hat: r.beta_hat,
            beta_star: r.beta_star,
            u: r.u,
            pi_dist,
            beta_hat_dist: bh_dist,
        }
    }

    fn check_model(&self, kind: &PropensityWeighting) -> Result<()> {
        let needs_model = !matches!(kind, PropensityWeighting::IpsTrue | PropensityWeighting::DiceS { .. });
        if needs_model && self.rows.iter().any(|r| r.beta_hat.is_nan()) {
            return Err(Error::invalid(format!("{} needs a fitted logging model", kind.label())));
        }
        if kind.needs_uncertainty() && self.rows.is_empty() {
            return Err(Error::invalid("no samples"));
        }
        Ok(())
    }

    /// Per-sample total weights `w` (the sample contributes `w · r / N`),
    /// except for SNIPS where the raw `π/β̂` are returned.
    pub fn weights(&self, kind: &PropensityWeighting) -> Result<Vec<f64>> {
        kind.validate()?;
        self.check_model(kind)?;
        match *kind {
            PropensityWeighting::IpsTrue => self
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| r.beta_star.map(|b| r.pi / b).ok_or(Error::MissingPropensity(i)))
                .collect(),
            PropensityWeighting::DiceS { cap } => Ok(self.rows.iter().map(|r| (r.pi / r.empirical).min(cap)).collect()),
            _ => self
                .rows
                .iter()
                .map(|r| cell_weight(kind, &self.cell(r), self.beta_floor))
                .collect(),
        }
    }

    pub fn estimate(&self, kind: &PropensityWeighting) -> Result<EstimateReport> {
        let weights = self.weights(kind)?;
        let value = if matches!(kind, PropensityWeighting::Snips) {
            let rewards: Vec<f64> = self.rows.iter().map(|r| r.reward).collect();
            self_normalized_mean(&weights, &rewards)?
        } else {
            weights.iter().zip(&self.rows).map(|(w, r)| w * r.reward).sum::<f64>() / self.rows.len() as f64
        };
        EstimateReport::from_weights(value, weights)
    }

    /// `V̂_DM`: mean over logged records of `Σ_a π(a|x) η̂(x,a)`.
    pub fn direct_method<I: ImputationModel + ?Sized>(&self, imputation: &I) -> f64 {
        let per_context: Vec<f64> = self
            .contexts
            .iter()
            .zip(&self.dists)
            .map(|(x, (pi, _))| {
                pi.iter()
                    .enumerate()
                    .map(|(a, p)| p * imputation.predict(x, crate::bandit::ActionId(a)))
                    .sum()
            })
            .collect();
        self.rows.iter().map(|r| per_context[r.dist_slot]).sum::<f64>() / self.rows.len() as f64
    }

    /// `V̂_DM + (1/N) Σ w (r − η̂(x, a))`.
    pub fn doubly_robust<I: ImputationModel + ?Sized>(
        &self,
        imputation: &I,
        kind: &PropensityWeighting,
    ) -> Result<EstimateReport> {
        if !kind.is_per_sample() {
            return Err(Error::Unsupported(format!("doubly robust with {}", kind.label())));
        }
        let weights = self.weights(kind)?;
        let correction: f64 = weights
            .iter()
            .zip(&self.rows)
            .map(|(w, r)| {
                let x = &self.contexts[r.dist_slot];
                w * (r.reward - imputation.predict(x, crate::bandit::ActionId(r.action)))
            })
            .sum::<f64>()
            / self.rows.len() as f64;
        EstimateReport::from_weights(self.direct_method(imputation) + correction, weights)
    }
}

/// `Σ wᵢ rᵢ / Σ wᵢ`.
pub fn self_normalized_mean(weights: &[f64], rewards: &[f64]) -> Result<f64> {
    if weights.len() != rewards.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            got: rewards.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("self-normalized weight sum is zero"));
    }
    Ok(weights.iter().zip(rewards).map(|(w, r)| w * r).sum::<f64>() / total)
}

/// `(1/N) Σ (π/β*) r`.
pub fn v_ips<P: Policy + ?Sized>(dataset: &LoggedDataset, policy: &P) -> Result<f64> {
    Ok(EvalTable::build(dataset, policy, None)?
        .estimate(&PropensityWeighting::IpsTrue)?
        .value)
}

/// `(1/N) Σ (π/β̂) r`.
pub fn v_bips<P: Policy + ?Sized>(dataset: &LoggedDataset, policy: &P, model: &LoggingModel) -> Result<f64> {
    Ok(EvalTable::build(dataset, policy, Some(model))?
        .estimate(&PropensityWeighting::Bips)?
        .value)
}

pub fn v_bips_cap<P: Policy + ?Sized>(
    dataset: &LoggedDataset,
    policy: &P,
    model: &LoggingModel,
    cap: f64,
) -> Result<f64> {
    Ok(EvalTable::build(dataset, policy, Some(model))?
        .estimate(&PropensityWeighting::BipsCap { cap })?
        .value)
}

pub fn v_snips<P: Policy + ?Sized>(dataset: &LoggedDataset, policy: &P, model: &LoggingModel) -> Result<f64> {
    Ok(EvalTable::build(dataset, policy, Some(model))?
        .estimate(&PropensityWeighting::Snips)?
        .value)
}

/// Per-sample reweighted estimate for the shrink-factor family.
pub fn reweighted_value<P: Policy + ?Sized>(
    dataset: &LoggedDataset,
    policy: &P,
    model: &LoggingModel,
    kind: &PropensityWeighting,
) -> Result<EstimateReport> {
    match kind {
        PropensityWeighting::MinVar
        | PropensityWeighting::StableVar
        | PropensityWeighting::Shrinkage { .. }
        | PropensityWeighting::Uips(_)
        | PropensityWeighting::UipsP { .. }
        | PropensityWeighting::UipsO { .. } => EvalTable::build(dataset, policy, Some(model))?.estimate(kind),
        other => Err(Error::invalid(format!("{} is not a reweighting rule", other.label()))),
    }
}

/// `(1/N) Σ_n Σ_a π(a|x_n) η̂(x_n, a)` over the given contexts.
pub fn v_dm<P: Policy + ?Sized, I: ImputationModel + ?Sized>(
    contexts: &[Context],
    policy: &P,
    imputation: &I,
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::invalid("no contexts"));
    }
    let mut total = 0.0;
    for x in contexts {
        let dist = policy.distribution(x)?;
        total += dist
            .iter()
            .enumerate()
            .map(|(a, p)| p * imputation.predict(x, crate::bandit::ActionId(a)))
            .sum::<f64>();
    }
    Ok(total / contexts.len() as f64)
}

/// Doubly robust estimate with the weighting `kind` (DR, MinVarDR,
/// ShrinkageDR, UIPSDR for bips, minvar, shrinkage, uips).
pub fn v_dr<P: Policy + ?Sized, I: ImputationModel + ?Sized>(
    dataset: &LoggedDataset,
    policy: &P,
    model: &LoggingModel,
    imputation: &I,
    kind: &PropensityWeighting,
) -> Result<f64> {
    Ok(EvalTable::build(dataset, policy, Some(model))?
        .doubly_robust(imputation, kind)?
        .value)
}

/// IPS with empirical count propensities `N_{x,a}/N_x`, weights capped at `cap`.
pub fn v_dice_s<P: Policy + ?Sized>(dataset: &LoggedDataset, policy: &P, cap: f64) -> Result<f64> {
    Ok(EvalTable::build(dataset, policy, None)?
        .estimate(&PropensityWeighting::DiceS { cap })?
        .value)
}
