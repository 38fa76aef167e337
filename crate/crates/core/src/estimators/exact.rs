//! Exact bias, variance and MSE of per-sample estimators on problems small
//! enough to enumerate every `(context, action)` outcome of one logged draw.
//!
//! A logged dataset is `N` i.i.d. draws of `x ∼ p(x)`, `a ∼ β*(·|x)`. For a
//! per-sample estimator `V̂ = (1/N) Σ w(x,a) r(x,a)`, `E[V̂]` equals the
//! one-draw expectation and `Var[V̂]` is the one-draw variance over `N`.

use serde::{Deserialize, Serialize};

use super::{cell_weight, CellView, PropensityWeighting};
use crate::bandit::Policy;
use crate::env::MultilabelInstance;
use crate::error::{Error, Result};
use crate::logging::{confidence_interval, LoggingModel, DEFAULT_BETA_FLOOR};
use crate::weights::{worst_case_objective, WeightInput};

/// Largest number of `(context, action)` cells enumerated.
pub const MAX_CELLS: usize = 10_000;

/// Fully tabulated one-draw distribution. All tables are `[context][action]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallProblem {
    pub context_probs: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub beta_star: Vec<Vec<f64>>,
    pub beta_hat: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
    pub uncertainty: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    pub expectation: f64,
    pub truth: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

impl SmallProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.context_probs.len();
        if n == 0 {
            return Err(Error::invalid("problem has no contexts"));
        }
        let m = self.pi[0].len();
        let cells = n.saturating_mul(m);
        if cells > MAX_CELLS {
            return Err(Error::EnumerationTooLarge(cells, MAX_CELLS));
        }
        let tables = [
            &self.pi,
            &self.beta_star,
            &self.beta_hat,
            &self.reward,
            &self.uncertainty,
        ];
        if tables
            .iter()
            .any(|t| t.len() != n || t.iter().any(|row| row.len() != m))
        {
            return Err(Error::invalid("ragged problem tables"));
        }
        Ok(())
    }

    pub fn contexts(&self) -> usize {
        self.context_probs.len()
    }

    pub fn actions(&self) -> usize {
        self.pi[0].len()
    }

    /// Uniform distribution over `instances`, with `β*` from `truth`, `β̂`
    /// and `U` from `model`, and rewards from the labels.
    pub fn from_instances<P: Policy + ?Sized, Q: Policy + ?Sized>(
        instances: &[MultilabelInstance],
        target: &P,
        truth: &Q,
        model: &LoggingModel,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::invalid("no instances"));
        }
        let m = target.action_count();
        if instances.len().saturating_mul(m) > MAX_CELLS {
            return Err(Error::EnumerationTooLarge(instances.len() * m, MAX_CELLS));
        }
        let solver = model.solver()?;
        let mut p = SmallProblem {
            context_probs: vec![1.0 / instances.len() as f64; instances.len()],
            pi: vec![],
            beta_star: vec![],
            beta_hat: vec![],
            reward: vec![],
            uncertainty: vec![],
        };
        for inst in instances {
            let x = &inst.features;
            p.pi.push(target.distribution(x)?);
            p.beta_star.push(truth.distribution(x)?);
            p.beta_hat.push(model.policy.distribution(x)?);
            p.reward
                .push((0..m).map(|a| inst.reward(crate::bandit::ActionId(a))).collect());
            p.uncertainty.push(
                (0..m)
                    .map(|a| solver.uncertainty(model, x, crate::bandit::ActionId(a)))
                    .collect::<Result<_>>()?,
            );
        }
        p.validate()?;
        Ok(p)
    }

    fn cell<'a>(&'a self, x: usize, a: usize) -> CellView<'a> {
        CellView {
            action: a,
            pi: self.pi[x][a],
            beta_hat: self.beta_hat[x][a],
            beta_star: Some(self.beta_star[x][a]),
            u: self.uncertainty[x][a],
            pi_dist: &self.pi[x],
            beta_hat_dist: &self.beta_hat[x],
        }
    }

    /// `V(π) = Σ_x p(x) Σ_a π(a|x) r(x,a)`.
    pub fn true_value(&self) -> f64 {
        (0..self.contexts())
            .map(|x| {
                self.context_probs[x]
                    * (0..self.actions())
                        .map(|a| self.pi[x][a] * self.reward[x][a])
                        .sum::<f64>()
            })
            .sum()
    }

    /// Per-cell total weights `w(x,a)`.
    pub fn weight_table(&self, kind: &PropensityWeighting) -> Result<Vec<Vec<f64>>> {
        kind.validate()?;
        if !kind.is_per_sample() {
            return Err(Error::Unsupported(format!("exact enumeration of {}", kind.label())));
        }
        (0..self.contexts())
            .map(|x| {
                (0..self.actions())
                    .map(|a| cell_weight(kind, &self.cell(x, a), DEFAULT_BETA_FLOOR))
                    .collect()
            })
            .collect()
    }
}

/// Exact moments of a per-sample estimator over `n_logged` i.i.d. draws.
pub fn exact_bias_variance(
    problem: &SmallProblem,
    kind: &PropensityWeighting,
    n_logged: usize,
) -> Result<BiasVariance> {
    problem.validate()?;
    if n_logged == 0 {
        return Err(Error::invalid("n_logged must be positive"));
    }
    let weights = problem.weight_table(kind)?;
    let (mut m1, mut m2) = (0.0, 0.0);
    for x in 0..problem.contexts() {
        for a in 0..problem.actions() {
            let p = problem.context_probs[x] * problem.beta_star[x][a];
            let y = weights[x][a] * problem.reward[x][a];
            m1 += p * y;
            m2 += p * y * y;
        }
    }
    let truth = problem.true_value();
    let bias = m1 - truth;
    let variance = (m2 - m1 * m1).max(0.0) / n_logged as f64;
    Ok(BiasVariance {
        expectation: m1,
        truth,
        bias,
        variance,
        mse: bias * bias + variance,
    })
}

/// MSE upper bound for the per-cell instance weights `phi[x][a]`:
/// `λ* E_{β*}[(β* φ/β̂ − 1)²] + E_{β*}[(π/β̂)² φ²]`, `λ* = E_π[r² π/β*]`.
pub fn mse_upper_bound(problem: &SmallProblem, phi: &[Vec<f64>]) -> f64 {
    let (mut lambda, mut bias_term, mut var_term) = (0.0, 0.0, 0.0);
    for x in 0..problem.contexts() {
        let px = problem.context_probs[x];
        for a in 0..problem.actions() {
            let (pi, bs, bh) = (problem.pi[x][a], problem.beta_star[x][a], problem.beta_hat[x][a]);
            let r = problem.reward[x][a];
            let f = phi[x][a];
            lambda += px * pi * r * r * pi / bs;
            bias_term += px * bs * (bs * f / bh - 1.0).powi(2);
            var_term += px * bs * (pi / bh).powi(2) * f * f;
        }
    }
    lambda * bias_term + var_term
}

/// `E_{β*}[ max_{β ∈ B(x,a)} T(φ(x,a), β) ]`, the bound with each cell's
/// logging probability replaced by its worst case in the confidence interval
/// `B∓ = e^{∓γU} β̂ / η`.
pub fn worst_case_bound(problem: &SmallProblem, phi: &[Vec<f64>], lambda: f64, gamma: f64, eta: f64) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..problem.contexts() {
        for a in 0..problem.actions() {
            let bh = problem.beta_hat[x][a];
            let input = WeightInput {
                pi: problem.pi[x][a],
                beta_hat: bh,
                u: problem.uncertainty[x][a],
            };
            let rec = confidence_interval(bh, input.u, gamma, eta)?;
            let p = problem.context_probs[x] * problem.beta_star[x][a];
            total += p * worst_case_objective(phi[x][a], &rec, &input, lambda);
        }
    }
    Ok(total)
}
