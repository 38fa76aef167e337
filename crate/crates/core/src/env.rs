//! Supervise-to-bandit simulator.
//!
//! A planted linear scorer assigns each random context its relevant actions
//! (top-k of the planted scores). The ground-truth logging policy is a
//! softmax over one-vs-all logistic scores fitted to the train split, with a
//! temperature controlling its skew. Logged feedback reveals only whether
//! the sampled action is relevant.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::{
    dot, ActionId, Context, ContextKey, LoggedDataset, LoggedSample, ParamMatrix, Policy, SoftmaxLinearPolicy,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub dim: usize,
    pub action_count: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub min_labels: usize,
    pub max_labels: usize,
    /// Std-dev of Gaussian noise added to planted scores before top-k selection.
    pub label_noise: f64,
    pub tau: f64,
    /// Full-batch gradient steps for the one-vs-all logistic fit of θ*.
    pub logistic_epochs: usize,
    pub logistic_lr: f64,
    pub logistic_l2: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dim: 16,
            action_count: 50,
            train_size: 200,
            validation_size: 50,
            test_size: 100,
            min_labels: 1,
            max_labels: 3,
            label_noise: 0.0,
            tau: 1.0,
            logistic_epochs: 300,
            logistic_lr: 2.0,
            logistic_l2: 1e-3,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("action_count", self.action_count),
            ("train_size", self.train_size),
            ("validation_size", self.validation_size),
            ("test_size", self.test_size),
            ("min_labels", self.min_labels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.max_labels < self.min_labels {
            return Err(Error::invalid("max_labels < min_labels"));
        }
        if self.max_labels > self.action_count {
            return Err(Error::invalid(format!(
                "cannot assign {} labels with {} actions",
                self.max_labels, self.action_count
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if self.label_noise < 0.0 || !self.logistic_lr.is_finite() || self.logistic_l2 < 0.0 {
            return Err(Error::invalid("label_noise, logistic_lr and logistic_l2 must be sane"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilabelInstance {
    pub features: Context,
    /// Sorted, non-empty.
    pub relevant_actions: Vec<ActionId>,
}

impl MultilabelInstance {
    pub fn is_relevant(&self, a: ActionId) -> bool {
        self.relevant_actions.binary_search(&a).is_ok()
    }

    pub fn reward(&self, a: ActionId) -> f64 {
        if self.is_relevant(a) {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditEnv {
    pub train: Vec<MultilabelInstance>,
    pub validation: Vec<MultilabelInstance>,
    pub test: Vec<MultilabelInstance>,
    pub logging_policy: SoftmaxLinearPolicy,
    pub action_count: usize,
    pub dim: usize,
}

fn unit_context<R: Rng>(rng: &mut R, dim: usize) -> Context {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return Context(v.into_iter().map(|x| x / n).collect());
        }
    }
}

pub fn build_env(config: &EnvConfig) -> Result<BanditEnv> {
    config.validate()?;
    let (d, m) = (config.dim, config.action_count);
    let mut rng = rng::stream(config.seed, 0);

    let planted: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let mut make_split = |n: usize| -> Vec<MultilabelInstance> {
        (0..n)
            .map(|_| {
                let x = unit_context(&mut rng, d);
                let k = rng.gen_range(config.min_labels..=config.max_labels);
                let mut scored: Vec<(f64, usize)> = planted
                    .iter()
                    .enumerate()
                    .map(|(a, w)| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        (dot(w, x.as_slice()) + config.label_noise * noise, a)
                    })
                    .collect();
                scored.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
                let mut relevant: Vec<ActionId> = scored.iter().take(k).map(|&(_, a)| ActionId(a)).collect();
                relevant.sort();
                MultilabelInstance {
                    features: x,
                    relevant_actions: relevant,
                }
            })
            .collect()
    };
    let train = make_split(config.train_size);
    let validation = make_split(config.validation_size);
    let test = make_split(config.test_size);

    let theta = fit_one_vs_all(&train, m, d, config);
    let logging_policy = SoftmaxLinearPolicy::new(theta, config.tau)?;
    Ok(BanditEnv {
        train,
        validation,
        test,
        logging_policy,
        action_count: m,
        dim: d,
    })
}

/// One-vs-all logistic regression on the multilabel train split. Each action
/// gets its own intercept during fitting; only the weight rows are kept as θ*.
fn fit_one_vs_all(train: &[MultilabelInstance], actions: usize, dim: usize, config: &EnvConfig) -> ParamMatrix {
    let mut theta = ParamMatrix::zeros(actions, dim);
    let mut bias = vec![0.0; actions];
    let n = train.len() as f64;
    let mut grad = vec![0.0; dim];
    for a in 0..actions {
        let action = ActionId(a);
        for _ in 0..config.logistic_epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for inst in train {
                let x = inst.features.as_slice();
                let z = dot(theta.row(a), x) + bias[a];
                let err = sigmoid(z) - inst.reward(action);
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += err * xi;
                }
                gb += err;
            }
            let row = theta.row_mut(a);
            for (w, g) in row.iter_mut().zip(&grad) {
                *w -= config.logistic_lr * (g / n + config.logistic_l2 * *w);
            }
            bias[a] -= config.logistic_lr * gb / n;
        }
    }
    theta
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logged_record<R: Rng>(env: &BanditEnv, inst: &MultilabelInstance, rng: &mut R) -> Result<LoggedSample> {
    let dist = env.logging_policy.distribution(&inst.features)?;
    let a = crate::bandit::sample_from(&dist, rng);
    Ok(LoggedSample {
        context: inst.features.clone(),
        action: a,
        reward: inst.reward(a),
        true_logging_prob: Some(dist[a.0]),
    })
}

/// Draws `n_samples` records: a uniform train instance, then a ∼ β*(·|x).
pub fn generate_log<R: Rng>(env: &BanditEnv, n_samples: usize, rng: &mut R) -> Result<LoggedDataset> {
    if env.train.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let samples = (0..n_samples)
        .map(|_| {
            let inst = &env.train[rng.gen_range(0..env.train.len())];
            logged_record(env, inst, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    LoggedDataset::new(samples, env.action_count, env.dim)
}

/// Draws `per_instance` logged actions for every instance, in order.
pub fn generate_log_per_instance<R: Rng>(
    env: &BanditEnv,
    instances: &[MultilabelInstance],
    per_instance: usize,
    rng: &mut R,
) -> Result<LoggedDataset> {
    if instances.is_empty() || per_instance == 0 {
        return Err(Error::invalid("need at least one instance and one draw per instance"));
    }
    let mut samples = Vec::with_capacity(instances.len() * per_instance);
    for inst in instances {
        for _ in 0..per_instance {
            samples.push(logged_record(env, inst, rng)?);
        }
    }
    LoggedDataset::new(samples, env.action_count, env.dim)
}

/// Tabular evaluation policy: (1−ε)/|M_x| on relevant actions plus ε/|A|.
#[derive(Debug, Clone)]
pub struct EpsilonGreedyPolicy {
    action_count: usize,
    epsilon: f64,
    table: HashMap<ContextKey, Vec<f64>>,
}

impl EpsilonGreedyPolicy {
    pub fn from_instances(instances: &[MultilabelInstance], action_count: usize, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let mut table = HashMap::with_capacity(instances.len());
        for inst in instances {
            if inst.relevant_actions.is_empty() {
                return Err(Error::invalid("instance has an empty relevant set"));
            }
            let base = epsilon / action_count as f64;
            let mut dist = vec![base; action_count];
            let share = (1.0 - epsilon) / inst.relevant_actions.len() as f64;
            for a in &inst.relevant_actions {
                dist[a.0] += share;
            }
            table.insert(inst.features.key(), dist);
        }
        Ok(EpsilonGreedyPolicy {
            action_count,
            epsilon,
            table,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Policy for EpsilonGreedyPolicy {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn distribution(&self, x: &Context) -> Result<Vec<f64>> {
        self.table
            .get(&x.key())
            .cloned()
            .ok_or_else(|| Error::invalid("context not covered by the tabular policy"))
    }
}

/// ε-greedy evaluation policy over the test split.
pub fn epsilon_greedy_policy(env: &BanditEnv, epsilon: f64) -> Result<EpsilonGreedyPolicy> {
    EpsilonGreedyPolicy::from_instances(&env.test, env.action_count, epsilon)
}

/// Exact value of `policy` on a list of instances.
pub fn policy_value_on<P: Policy + ?Sized>(instances: &[MultilabelInstance], policy: &P) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::invalid("no instances"));
    }
    let mut total = 0.0;
    for inst in instances {
        let dist = policy.distribution(&inst.features)?;
        total += inst.relevant_actions.iter().map(|a| dist[a.0]).sum::<f64>();
    }
    Ok(total / instances.len() as f64)
}

/// V(π) on the test split by exact enumeration over actions.
pub fn true_policy_value<P: Policy + ?Sized>(env: &BanditEnv, policy: &P) -> Result<f64> {
    policy_value_on(&env.test, policy)
}

impl BanditEnv {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
