//! Group-relative policy optimization: advantages, rewards, clipped
//! surrogates, KL estimation, the three losses and AdamW.

pub mod adamw;
pub mod loss;

pub use adamw::{AdamW, AdamWConfig};
pub use loss::{extractor_loss, joint_loss, solver_loss, Group, GroupKind, LossReport, LossSettings, Member};

use crate::error::{self, Result};
use crate::scalar::Scalar;

/// `(r_i - mean) / std` with the population standard deviation; all zeros
/// when the rewards are constant.
pub fn group_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return error::usage(format!("a comparison group needs at least 2 members, got {}", rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // relative cutoff so shifted copies of a constant row stay degenerate
    let scale = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if std <= 1e-12 * scale.max(1.0) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    /// Terminal outcomes, one per evaluation task.
    MeanOfOutcomes,
    /// Per-task step-reward sums, one per evaluation task.
    MeanOfTrajectorySums,
}

pub fn skill_reward(row: &[f64], _mode: RewardMode) -> Result<f64> {
    if row.is_empty() {
        return error::usage("skill reward of an empty evaluation row");
    }
    Ok(row.iter().sum::<f64>() / row.len() as f64)
}

/// Sums each task's step rewards; the input for
/// [`RewardMode::MeanOfTrajectorySums`].
pub fn trajectory_sums(steps: &[Vec<f64>]) -> Vec<f64> {
    steps.iter().map(|s| s.iter().sum()).collect()
}

pub fn clip<T: Scalar>(ratio: T, eps_low: T, eps_high: T) -> T {
    ratio.max(T::one() - eps_low).min(T::one() + eps_high)
}

/// `min(rA, clip(r, 1 - eps_low, 1 + eps_high) A)`.
pub fn clipped_surrogate<T: Scalar>(ratio: T, advantage: T, eps_low: T, eps_high: T) -> Result<T> {
    if !(ratio > T::zero()) || !ratio.is_finite() {
        return Err(crate::Error::Numerical(format!("importance ratio {ratio} is not positive and finite")));
    }
    Ok((ratio * advantage).min(clip(ratio, eps_low, eps_high) * advantage))
}

/// `r - ln r - 1` with `r = exp(logp_ref - logp_theta)`.
pub fn kl_low_variance<T: Scalar>(logp_theta: T, logp_ref: T) -> T {
    let d = logp_ref - logp_theta;
    // exp_m1 keeps the small-d case exact: (e^d - 1) - d
    (d.exp_m1() - d).max(T::zero())
}
