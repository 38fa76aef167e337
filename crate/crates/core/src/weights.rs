//! Per-sample weights that account for uncertainty in the estimated logging policy.
//!
//! For one logged `(x, a)` with target probability `π`, estimated logging
//! probability `β̂` and uncertainty `u`, the weight `φ` multiplies the
//! propensity ratio `π/β̂`. The optimal weight minimizes the worst case, over
//! the confidence interval `[B⁻, B⁺]`, of
//!
//! ```text
//! T(φ, β) = λ (β φ / β̂ − 1)² + (π / β̂)² φ²
//! ```
//!
//! and has the closed form
//!
//! ```text
//! φ* = min( λ / [ (λ/η₁) e^{−γu} + η₁ (π/β̂)² e^{γu} ],  2η₂ / (e^{γu} + e^{−γu}) )
//! ```
//!
//! With `η₁ = η₂ = η` this is the exact minimax solution for the interval
//! `B∓ = e^{∓γu} β̂ / η`. Keeping the two `η`s separate decouples the scale of
//! the first branch (which moves with `λ`) from the cap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logging::{UncertaintyRecord, DEFAULT_BETA_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UipsHyperParams {
    pub lambda: f64,
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub beta_floor: f64,
}

impl Default for UipsHyperParams {
    fn default() -> Self {
        UipsHyperParams {
            lambda: 1.0,
            gamma: 1.0,
            eta1: 1.0,
            eta2: 1.0,
            beta_floor: DEFAULT_BETA_FLOOR,
        }
    }
}

impl UipsHyperParams {
    pub fn new(lambda: f64, gamma: f64, eta1: f64, eta2: f64) -> Result<Self> {
        let hp = UipsHyperParams {
            lambda,
            gamma,
            eta1,
            eta2,
            beta_floor: DEFAULT_BETA_FLOOR,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0
            && self.gamma >= 0.0
            && self.eta1 > 0.0
            && self.eta2 > 0.0
            && self.beta_floor > 0.0
            && [self.lambda, self.gamma, self.eta1, self.eta2, self.beta_floor]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid UIPS hyper-parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightInput {
    pub pi: f64,
    pub beta_hat: f64,
    pub u: f64,
}

impl WeightInput {
    pub fn new(pi: f64, beta_hat: f64, u: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi) || !(beta_hat > 0.0 && beta_hat <= 1.0) || !(u >= 0.0) {
            return Err(Error::invalid(format!(
                "weight input out of range: pi={pi}, beta_hat={beta_hat}, u={u}"
            )));
        }
        Ok(WeightInput { pi, beta_hat, u })
    }

    pub fn ratio(&self) -> f64 {
        self.pi / self.beta_hat
    }
}

/// Which branch of the closed form is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBranch {
    FirstTerm,
    Cap,
}

impl WeightBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            WeightBranch::FirstTerm => "first_term",
            WeightBranch::Cap => "cap",
        }
    }
}

/// Closed-form optimal weight together with its active branch.
pub fn phi_star_with_branch(input: &WeightInput, hp: &UipsHyperParams) -> (f64, WeightBranch) {
    let beta_hat = input.beta_hat.max(hp.beta_floor);
    let rho = input.pi / beta_hat;
    let s = hp.gamma * input.u;
    let (ep, em) = (s.exp(), (-s).exp());
    let cap = 2.0 * hp.eta2 / (ep + em);
    let denom = hp.lambda / hp.eta1 * em + hp.eta1 * rho * rho * ep;
    // λ = 0 leaves only the variance term, minimized at φ = 0
    let first = if hp.lambda == 0.0 { 0.0 } else { hp.lambda / denom };
    if first <= cap {
        (first, WeightBranch::FirstTerm)
    } else {
        (cap, WeightBranch::Cap)
    }
}

pub fn phi_star(input: &WeightInput, hp: &UipsHyperParams) -> f64 {
    phi_star_with_branch(input, hp).0
}

/// Shrinkage weight `λ / (λ + (π/β̂)²)`.
pub fn shrinkage_weight(pi: f64, beta_hat: f64, lambda: f64) -> f64 {
    let rho = pi / beta_hat;
    if lambda == 0.0 {
        return 0.0;
    }
    lambda / (lambda + rho * rho)
}

/// Per-sample objective `T(φ, β)`.
pub fn minmax_objective(phi: f64, beta: f64, input: &WeightInput, lambda: f64) -> f64 {
    let bias = beta * phi / input.beta_hat - 1.0;
    let rho = input.ratio();
    lambda * bias * bias + rho * rho * phi * phi
}

/// Interval endpoint maximizing `T(φ, ·)`: the endpoint farther from `β̂/φ`;
/// ties go to `B⁺`.
pub fn worst_case_beta(phi: f64, interval: &UncertaintyRecord, input: &WeightInput, _lambda: f64) -> f64 {
    let (lo, hi) = (interval.interval_low, interval.interval_high);
    let mid = 0.5 * (lo + hi);
    let target = input.beta_hat / phi;
    if target > mid {
        lo
    } else {
        hi
    }
}

/// `max_{β ∈ [B⁻, B⁺]} T(φ, β)`.
pub fn worst_case_objective(phi: f64, interval: &UncertaintyRecord, input: &WeightInput, lambda: f64) -> f64 {
    let lo = minmax_objective(phi, interval.interval_low, input, lambda);
    let hi = minmax_objective(phi, interval.interval_high, input, lambda);
    lo.max(hi)
}

/// Brute-force minimizer of the worst-case objective over the grid
/// `{ upper · i / n : i = 1..=n }`.
pub fn oracle_phi(
    interval: &UncertaintyRecord,
    input: &WeightInput,
    lambda: f64,
    upper: f64,
    grid_resolution: usize,
) -> f64 {
    let n = grid_resolution.max(1);
    let mut best = (f64::INFINITY, upper);
    for i in 1..=n {
        let phi = upper * i as f64 / n as f64;
        let v = worst_case_objective(phi, interval, input, lambda);
        if v < best.0 {
            best = (v, phi);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// `φ = e^{−γu}`
    Penalize,
    /// `φ = e^{γu}`
    Optimistic,
}

pub fn variant_weight(kind: VariantKind, input: &WeightInput, hp: &UipsHyperParams) -> f64 {
    let s = hp.gamma * input.u;
    match kind {
        VariantKind::Penalize => (-s).exp(),
        VariantKind::Optimistic => s.exp(),
    }
}

/// Smallest `π/β̂` at which the first branch is active, for `η₁ = η₂ = η`:
/// the branches cross where `(π/β̂)² = λ (1 − e^{−2γu}) / (2η²)`.
pub fn branch_switch_ratio(lambda: f64, gamma_u: f64, eta: f64) -> f64 {
    (lambda * (1.0 - (-2.0 * gamma_u).exp()) / (2.0 * eta * eta))
        .max(0.0)
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logging::confidence_interval;
    use proptest::prelude::*;

    fn hp(lambda: f64, gamma: f64, eta1: f64, eta2: f64) -> UipsHyperParams {
        UipsHyperParams::new(lambda, gamma, eta1, eta2).unwrap()
    }

    #[test]
    fn zero_uncertainty_matches_shrinkage() {
        let w = WeightInput::new(0.3, 0.3, 0.0).unwrap();
        let v = phi_star(&w, &hp(1.0, 1.0, 1.0, 1.0));
        assert!((v - 0.5).abs() < 1e-15);
        assert!((v - shrinkage_weight(0.3, 0.3, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_target_probability_hits_cap() {
        let w = WeightInput::new(0.0, 0.5, 2f64.ln()).unwrap();
        let (v, branch) = phi_star_with_branch(&w, &hp(1.0, 1.0, 1.0, 1.0));
        assert!((v - 0.8).abs() < 1e-15);
        assert_eq!(branch, WeightBranch::Cap);
    }

    #[test]
    fn disentangled_etas_hand_value() {
        let w = WeightInput::new(0.4, 0.2, 0.0).unwrap();
        let (v, branch) = phi_star_with_branch(&w, &hp(4.0, 0.0, 1.0, 10.0));
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(branch, WeightBranch::FirstTerm);
    }

    #[test]
    fn objective_hand_values() {
        let w = WeightInput::new(0.0, 0.2, 0.0).unwrap();
        assert_eq!(minmax_objective(0.2 / 0.1, 0.1, &w, 3.0), 0.0);
        let w = WeightInput::new(0.1, 0.2, 0.0).unwrap();
        assert!((minmax_objective(1.0, 0.2, &w, 7.0) - 0.25).abs() < 1e-15);
        let w = WeightInput::new(0.2, 0.2, 0.0).unwrap();
        assert!((minmax_objective(1.0, 0.1, &w, 1.0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn worst_case_endpoint_rules() {
        let w = WeightInput::new(0.1, 0.2, 0.0).unwrap();
        let rec = UncertaintyRecord {
            u: 0.0,
            interval_low: 0.1,
            interval_high: 0.25,
        };
        assert_eq!(worst_case_beta(1.0, &rec, &w, 1.0), 0.1);
        let point = UncertaintyRecord {
            u: 0.0,
            interval_low: 0.2,
            interval_high: 0.2,
        };
        assert_eq!(worst_case_beta(1.3, &point, &w, 1.0), 0.2);
        // β̂/φ = 0.2 equals the midpoint of [0.1, 0.3]
        let tie = UncertaintyRecord {
            u: 0.0,
            interval_low: 0.1,
            interval_high: 0.3,
        };
        assert_eq!(worst_case_beta(1.0, &tie, &w, 1.0), 0.3);
    }

    #[test]
    fn oracle_agrees_with_closed_form_examples() {
        let w = WeightInput::new(0.0, 0.5, 2f64.ln()).unwrap();
        let rec = confidence_interval(0.5, w.u, 1.0, 1.0).unwrap();
        let grid = 20_000;
        let phi = oracle_phi(&rec, &w, 1.0, 2.0, grid);
        assert!((phi - 0.8).abs() <= 2.0 / grid as f64);

        for &(pi, bh, lambda) in &[(0.3, 0.1, 2.0), (0.05, 0.4, 0.5), (0.9, 0.02, 20.0)] {
            let w = WeightInput::new(pi, bh, 0.0).unwrap();
            let rec = confidence_interval(bh, 0.0, 0.0, 1.0).unwrap();
            let phi = oracle_phi(&rec, &w, lambda, 2.0, grid);
            assert!((phi - shrinkage_weight(pi, bh, lambda)).abs() <= 2.0 / grid as f64);
        }
    }

    #[test]
    fn variants() {
        let w = WeightInput::new(0.2, 0.1, 0.0).unwrap();
        let h = hp(1.0, 2.0, 1.0, 1.0);
        assert_eq!(variant_weight(VariantKind::Penalize, &w, &h), 1.0);
        assert_eq!(variant_weight(VariantKind::Optimistic, &w, &h), 1.0);
        let w = WeightInput::new(0.2, 0.1, 3f64.ln()).unwrap();
        let h = hp(1.0, 1.0, 1.0, 1.0);
        assert!((variant_weight(VariantKind::Penalize, &w, &h) - 1.0 / 3.0).abs() < 1e-15);
        let prod = variant_weight(VariantKind::Penalize, &w, &h) * variant_weight(VariantKind::Optimistic, &w, &h);
        assert!((prod - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(UipsHyperParams::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(UipsHyperParams::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(WeightInput::new(1.2, 0.5, 0.0).is_err());
        assert!(WeightInput::new(0.2, 0.0, 0.0).is_err());
        assert!(WeightInput::new(0.2, 0.5, -1.0).is_err());
    }

    #[test]
    fn beta_floor_guards_the_ratio() {
        let w = WeightInput {
            pi: 0.5,
            beta_hat: 0.0,
            u: 0.1,
        };
        let v = phi_star(&w, &UipsHyperParams::default());
        assert!(v.is_finite() && v > 0.0);
    }

    proptest! {
        #[test]
        fn phi_star_within_cap(
            pi in 0.0f64..=1.0, beta_hat in 1e-6f64..=1.0, u in 0.0f64..5.0,
            lambda in 0.01f64..100.0, gamma in 0.0f64..5.0, eta1 in 0.05f64..50.0, eta2 in 0.05f64..1000.0,
        ) {
            let w = WeightInput::new(pi, beta_hat, u).unwrap();
            let v = phi_star(&w, &hp(lambda, gamma, eta1, eta2));
            prop_assert!(v > 0.0);
            prop_assert!(v <= 2.0 * eta2);
        }

        #[test]
        fn closed_form_beats_grid(
            log_ratio in -3.0f64..3.0, beta_hat in 1e-3f64..1.0, u in 0.0f64..3.0,
            lambda in 0.1f64..50.0, gamma in 0.0f64..2.0, eta in 0.3f64..3.0,
        ) {
            let pi = (beta_hat * 10f64.powf(log_ratio)).min(1.0);
            let w = WeightInput::new(pi, beta_hat, u).unwrap();
            let h = hp(lambda, gamma, eta, eta);
            let rec = confidence_interval(beta_hat, u, gamma, eta).unwrap();
            let star = phi_star(&w, &h);
            let grid = oracle_phi(&rec, &w, lambda, 2.0 * eta, 10_000);
            let a = worst_case_objective(star, &rec, &w, lambda);
            let b = worst_case_objective(grid, &rec, &w, lambda);
            prop_assert!(a <= b + 1e-6);
        }

        #[test]
        fn switch_ratio_separates_branches(
            log_ratio in -3.0f64..3.0, gamma_u in 0.0f64..4.0, lambda in 0.1f64..50.0, eta in 0.2f64..5.0,
        ) {
            let rho = 10f64.powf(log_ratio);
            let beta_hat = 1e-3;
            let w = WeightInput { pi: rho * beta_hat, beta_hat, u: gamma_u };
            let (_, branch) = phi_star_with_branch(&w, &hp(lambda, 1.0, eta, eta));
            let alpha = branch_switch_ratio(lambda, gamma_u, eta);
            let margin = 1e-9 * alpha.max(1e-300);
            if rho > alpha + margin {
                prop_assert_eq!(branch, WeightBranch::FirstTerm);
            } else if rho < alpha - margin {
                prop_assert_eq!(branch, WeightBranch::Cap);
            }
        }
    }
}
