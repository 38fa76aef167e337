//! Core bandit types and the softmax-linear policy family.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature vector of one context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context(pub Vec<f64>);

impl Context {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("context contains non-finite entries"));
        }
        Ok(Context(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Exact-match key built from the IEEE bit patterns of the features.
    pub fn key(&self) -> ContextKey {
        ContextKey(self.0.iter().map(|v| v.to_bits()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContextKey(Vec<u64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One bandit-feedback record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    #[serde(rename = "x")]
    pub context: Context,
    #[serde(rename = "a")]
    pub action: ActionId,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "beta_star", default, skip_serializing_if = "Option::is_none")]
    pub true_logging_prob: Option<f64>,
}

impl LoggedSample {
    fn validate(&self, action_count: usize, dim: usize) -> Result<()> {
        if self.context.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.context.dim(),
            });
        }
        if self.action.0 >= action_count {
            return Err(Error::ActionOutOfRange {
                action: self.action.0,
                action_count,
            });
        }
        if !(0.0..=1.0).contains(&self.reward) {
            return Err(Error::invalid(format!("reward {} outside [0, 1]", self.reward)));
        }
        if let Some(p) = self.true_logging_prob {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("logging probability {p} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    pub samples: Vec<LoggedSample>,
    pub action_count: usize,
    pub dim: usize,
}

impl LoggedDataset {
    pub fn new(samples: Vec<LoggedSample>, action_count: usize, dim: usize) -> Result<Self> {
        if action_count == 0 {
            return Err(Error::invalid("action_count must be positive"));
        }
        for s in &samples {
            s.validate(action_count, dim)?;
        }
        Ok(LoggedDataset {
            samples,
            action_count,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::invalid("dataset is empty"))
        } else {
            Ok(())
        }
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads JSON lines. When `action_count` is `None` it is inferred as the
    /// largest logged action plus one.
    pub fn read_jsonl<R: BufRead>(input: R, action_count: Option<usize>) -> Result<Self> {
        let mut samples = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str::<LoggedSample>(&line)?);
        }
        let dim = samples.first().map(|s| s.context.dim()).unwrap_or(0);
        let inferred = samples.iter().map(|s| s.action.0 + 1).max().unwrap_or(1);
        LoggedDataset::new(samples, action_count.unwrap_or(inferred), dim)
    }
}

/// Dense row-major matrix of policy parameters, one row per action.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ParamMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ParamMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged parameter matrix"));
        }
        let n = rows.len();
        Ok(ParamMatrix {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks(self.cols.max(1))
            .map(<[f64]>::to_vec)
            .take(self.rows)
            .collect()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamMatrix, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ParamMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Serialize for ParamMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        ParamMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Anything that maps a context to a distribution over actions.
pub trait Policy: Sync {
    fn action_count(&self) -> usize;

    fn distribution(&self, x: &Context) -> Result<Vec<f64>>;

    fn prob(&self, x: &Context, a: ActionId) -> Result<f64> {
        let n = self.action_count();
        if a.0 >= n {
            return Err(Error::ActionOutOfRange {
                action: a.0,
                action_count: n,
            });
        }
        Ok(self.distribution(x)?[a.0])
    }
}

/// π(a|x) ∝ exp(xᵀθ_a / τ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxLinearPolicy {
    pub theta: ParamMatrix,
    pub tau: f64,
}

impl SoftmaxLinearPolicy {
    pub fn new(theta: ParamMatrix, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        if theta.rows() == 0 {
            return Err(Error::invalid("policy needs at least one action"));
        }
        if !theta.is_finite() {
            return Err(Error::invalid("policy parameters are not finite"));
        }
        Ok(SoftmaxLinearPolicy { theta, tau })
    }

    pub fn zeros(action_count: usize, dim: usize, tau: f64) -> Result<Self> {
        Self::new(ParamMatrix::zeros(action_count, dim), tau)
    }

    pub fn dim(&self) -> usize {
        self.theta.cols()
    }

    fn check_dim(&self, x: &Context) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Tempered scores xᵀθ_a / τ.
    pub fn scores(&self, x: &Context) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok((0..self.theta.rows())
            .map(|a| dot(self.theta.row(a), x.as_slice()) / self.tau)
            .collect())
    }

    /// Draws an action by inverse-CDF sampling on one uniform variate.
    pub fn sample_action<R: Rng + ?Sized>(&self, x: &Context, rng: &mut R) -> Result<ActionId> {
        let dist = self.distribution(x)?;
        Ok(sample_from(&dist, rng))
    }

    /// ∇_θ log π(a|x); row a′ is x/τ · (1{a′=a} − π(a′|x)).
    pub fn log_prob_grad(&self, x: &Context, a: ActionId) -> Result<ParamMatrix> {
        let dist = self.distribution(x)?;
        if a.0 >= dist.len() {
            return Err(Error::ActionOutOfRange {
                action: a.0,
                action_count: dist.len(),
            });
        }
        let mut g = ParamMatrix::zeros(self.theta.rows(), self.dim());
        add_log_prob_grad(&mut g, x.as_slice(), &dist, a.0, self.tau, 1.0);
        Ok(g)
    }
}

impl Policy for SoftmaxLinearPolicy {
    fn action_count(&self) -> usize {
        self.theta.rows()
    }

    fn distribution(&self, x: &Context) -> Result<Vec<f64>> {
        Ok(softmax(&self.scores(x)?))
    }
}

/// `grad += scale · ∇_θ log π(a|x)` given the already computed distribution.
pub(crate) fn add_log_prob_grad(grad: &mut ParamMatrix, x: &[f64], dist: &[f64], a: usize, tau: f64, scale: f64) {
    for (b, &p) in dist.iter().enumerate() {
        let coef = scale * (if b == a { 1.0 } else { 0.0 } - p) / tau;
        if coef == 0.0 {
            continue;
        }
        for (g, xi) in grad.row_mut(b).iter_mut().zip(x) {
            *g += coef * xi;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub(crate) fn sample_from<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> ActionId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return ActionId(a);
        }
    }
    // rounding left u above the accumulated mass: last action with support
    ActionId(dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1))
}
