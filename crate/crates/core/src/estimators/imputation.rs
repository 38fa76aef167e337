use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::bandit::{ActionId, Context, ContextKey, LoggedDataset};
use crate::env::MultilabelInstance;
use crate::error::{Error, Result};

/// Reward model `η̂(x, a)` used by the direct method and doubly robust
/// estimators. Predictions lie in `[0, 1]`.
pub trait ImputationModel: Sync {
    fn predict(&self, x: &Context, a: ActionId) -> f64;
}

impl<F> ImputationModel for F
where
    F: Fn(&Context, ActionId) -> f64 + Sync,
{
    fn predict(&self, x: &Context, a: ActionId) -> f64 {
        self(x, a)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantImputation(pub f64);

impl ImputationModel for ConstantImputation {
    fn predict(&self, _x: &Context, _a: ActionId) -> f64 {
        self.0
    }
}

/// Per-context reward table; unknown contexts predict `default`.
#[derive(Debug, Clone)]
pub struct TabularImputation {
    table: HashMap<ContextKey, Vec<f64>>,
    default: f64,
}

impl TabularImputation {
    pub fn new(default: f64) -> Self {
        TabularImputation {
            table: HashMap::new(),
            default,
        }
    }

    pub fn insert(&mut self, x: &Context, rewards: Vec<f64>) {
        self.table.insert(x.key(), rewards);
    }

    /// Exact reward table of a labelled instance list.
    pub fn from_instances(instances: &[MultilabelInstance], action_count: usize) -> Self {
        let mut t = TabularImputation::new(0.0);
        for inst in instances {
            let rewards = (0..action_count).map(|a| inst.reward(ActionId(a))).collect();
            t.insert(&inst.features, rewards);
        }
        t
    }
}

impl ImputationModel for TabularImputation {
    fn predict(&self, x: &Context, a: ActionId) -> f64 {
        self.table.get(&x.key()).map(|r| r[a.0]).unwrap_or(self.default)
    }
}

/// Per-action ridge regression of reward on context, clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct LinearImputation {
    weights: Vec<DVector<f64>>,
    intercepts: Vec<f64>,
}

impl LinearImputation {
    pub fn fit(dataset: &LoggedDataset, l2: f64) -> Result<Self> {
        if !(l2 > 0.0) {
            return Err(Error::invalid("ridge penalty must be positive"));
        }
        let d = dataset.dim;
        let mut weights = Vec::with_capacity(dataset.action_count);
        let mut intercepts = Vec::with_capacity(dataset.action_count);
        let global_mean = if dataset.is_empty() {
            0.0
        } else {
            dataset.samples.iter().map(|s| s.reward).sum::<f64>() / dataset.len() as f64
        };
        for a in 0..dataset.action_count {
            let rows: Vec<_> = dataset.samples.iter().filter(|s| s.action.0 == a).collect();
            if rows.is_empty() {
                weights.push(DVector::zeros(d));
                intercepts.push(global_mean);
                continue;
            }
            // centred ridge: intercept is the action's mean reward
            let n = rows.len() as f64;
            let mean_r = rows.iter().map(|s| s.reward).sum::<f64>() / n;
            let mut mean_x = DVector::zeros(d);
            for s in &rows {
                mean_x += DVector::from_column_slice(s.context.as_slice());
            }
            mean_x /= n;
            let mut gram = DMatrix::identity(d, d) * l2;
            let mut rhs = DVector::zeros(d);
            for s in &rows {
                let xc = DVector::from_column_slice(s.context.as_slice()) - &mean_x;
                gram.ger(1.0, &xc, &xc, 1.0);
                rhs += &xc * (s.reward - mean_r);
            }
            let w = gram
                .cholesky()
                .ok_or_else(|| Error::Numeric("ridge system not positive definite".into()))?
                .solve(&rhs);
            intercepts.push(mean_r - w.dot(&mean_x));
            weights.push(w);
        }
        Ok(LinearImputation { weights, intercepts })
    }
}

impl ImputationModel for LinearImputation {
    fn predict(&self, x: &Context, a: ActionId) -> f64 {
        let w = &self.weights[a.0];
        let raw = self.intercepts[a.0] + w.iter().zip(x.as_slice()).map(|(w, x)| w * x).sum::<f64>();
        raw.clamp(0.0, 1.0)
    }
}
