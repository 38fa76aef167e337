//! Top-K ranking metrics on labelled instances.

use serde::{Deserialize, Serialize};

use crate::bandit::{ActionId, Context, Policy};
use crate::env::MultilabelInstance;
use crate::error::{Error, Result};

/// Actions by descending score; equal scores keep ascending action id.
pub fn ranked_actions(scores: &[f64]) -> Vec<ActionId> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().map(ActionId).collect()
}

fn check(ranked: &[ActionId], relevant: &[ActionId], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if relevant.is_empty() {
        return Err(Error::invalid("relevant set is empty"));
    }
    Ok(k.min(ranked.len()))
}

fn hits(ranked: &[ActionId], relevant: &[ActionId], k: usize) -> usize {
    ranked[..k].iter().filter(|a| relevant.contains(a)).count()
}

pub fn precision_at_k(ranked: &[ActionId], relevant: &[ActionId], k: usize) -> Result<f64> {
    let k = check(ranked, relevant, k)?;
    Ok(hits(ranked, relevant, k) as f64 / k as f64)
}

pub fn recall_at_k(ranked: &[ActionId], relevant: &[ActionId], k: usize) -> Result<f64> {
    let k = check(ranked, relevant, k)?;
    Ok(hits(ranked, relevant, k) as f64 / relevant.len() as f64)
}

/// Binary-gain NDCG with discount `1/log₂(rank + 1)`, ranks from 1.
pub fn ndcg_at_k(ranked: &[ActionId], relevant: &[ActionId], k: usize) -> Result<f64> {
    let k = check(ranked, relevant, k)?;
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked[..k]
        .iter()
        .enumerate()
        .filter(|(_, a)| relevant.contains(a))
        .map(|(i, _)| discount(i))
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(discount).sum();
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

/// Mean metrics over `instances`, ranking by `score(x)`.
pub fn evaluate_scores<F>(instances: &[MultilabelInstance], k: usize, score: F) -> Result<RankingMetrics>
where
    F: Fn(&Context) -> Result<Vec<f64>>,
{
    if instances.is_empty() {
        return Err(Error::invalid("no instances to evaluate"));
    }
    let mut total = RankingMetrics::default();
    for inst in instances {
        let ranked = ranked_actions(&score(&inst.features)?);
        let rel = &inst.relevant_actions;
        total.precision += precision_at_k(&ranked, rel, k)?;
        total.recall += recall_at_k(&ranked, rel, k)?;
        total.ndcg += ndcg_at_k(&ranked, rel, k)?;
    }
    let n = instances.len() as f64;
    Ok(RankingMetrics {
        precision: total.precision / n,
        recall: total.recall / n,
        ndcg: total.ndcg / n,
    })
}

/// Mean metrics ranking by the policy's action probabilities.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &P,
    instances: &[MultilabelInstance],
    k: usize,
) -> Result<RankingMetrics> {
    evaluate_scores(instances, k, |x| policy.distribution(x))
}
