//! How reliably a single-rollout-per-task evaluation ranks two skills.
//!
//! With `K` evaluation tasks and independent rewards, the estimated gap
//! `R̂_a - R̂_b` is approximately normal with mean `Δ` and variance
//! `σ² = Σ (v_ai + v_bi) / K²`, so the probability of ranking the better
//! skill first is about `Φ(Δ/σ)`. Bounded rewards give `σ² ≤ (M-m)²/(2K)`
//! and with it the lower bound `Φ(Δ √(2K) / (M-m))`.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{self, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillEvalModel {
    pub means_a: Vec<f64>,
    pub means_b: Vec<f64>,
    pub vars_a: Vec<f64>,
    pub vars_b: Vec<f64>,
    pub bounds: (f64, f64),
}

impl SkillEvalModel {
    /// Success probabilities per task; rewards are 0 or 1.
    pub fn bernoulli(pa: &[f64], pb: &[f64]) -> Result<SkillEvalModel> {
        let m = SkillEvalModel {
            means_a: pa.to_vec(),
            means_b: pb.to_vec(),
            vars_a: pa.iter().map(|p| p * (1.0 - p)).collect(),
            vars_b: pb.iter().map(|p| p * (1.0 - p)).collect(),
            bounds: (0.0, 1.0),
        };
        m.validate()?;
        Ok(m)
    }

    /// The same pair of success probabilities on all `k` tasks.
    pub fn bernoulli_uniform(pa: f64, pb: f64, k: usize) -> Result<SkillEvalModel> {
        SkillEvalModel::bernoulli(&vec![pa; k], &vec![pb; k])
    }

    pub fn k(&self) -> usize {
        self.means_a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means_a.len();
        if k == 0 {
            return error::input("need at least one evaluation task");
        }
        if [self.means_b.len(), self.vars_a.len(), self.vars_b.len()].iter().any(|&n| n != k) {
            return error::input("means and variances must all have length K");
        }
        let (lo, hi) = self.bounds;
        if !(hi > lo) {
            return error::input(format!("reward bounds ({lo}, {hi}) are empty"));
        }
        let vmax = (hi - lo).powi(2) / 4.0;
        for &u in self.means_a.iter().chain(&self.means_b) {
            if !(lo..=hi).contains(&u) {
                return error::input(format!("mean {u} outside the reward bounds"));
            }
        }
        for &v in self.vars_a.iter().chain(&self.vars_b) {
            if !(0.0..=vmax + 1e-15).contains(&v) {
                return error::input(format!("variance {v} outside [0, {vmax}]"));
            }
        }
        Ok(())
    }
}

/// `(Δ, σ)` of the estimated gap.
pub fn gap_and_sigma(model: &SkillEvalModel) -> (f64, f64) {
    let k = model.k() as f64;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / k;
    let delta = mean(&model.means_a) - mean(&model.means_b);
    let total: f64 = model.vars_a.iter().chain(&model.vars_b).sum();
    (delta, (total / (k * k)).sqrt())
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn ranking_probability(delta: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return match delta.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    phi(delta / sigma)
}

/// `Φ(Δ √(2K) / (M - m))`.
pub fn ranking_bound(delta: f64, k: usize, m: f64, big_m: f64) -> Result<f64> {
    if !(big_m > m) {
        return error::input(format!("reward bounds require M > m, got m = {m}, M = {big_m}"));
    }
    if k == 0 {
        return error::input("K must be at least 1");
    }
    Ok(phi(delta * (2.0 * k as f64).sqrt() / (big_m - m)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardLaw {
    Bernoulli,
    /// Uniform on `[u - w, u + w]` with `w = sqrt(3 v)`.
    BoundedUniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub probability: f64,
    pub std_error: f64,
    pub trials: u64,
}

const CHUNK: u64 = 1 << 15;

/// Simulates `trials` single-rollout evaluations of both skills and counts
/// how often `R̂_a > R̂_b`; ties score one half.
pub fn monte_carlo_rank(model: &SkillEvalModel, law: RewardLaw, trials: u64, seed: u64) -> Result<McEstimate> {
    model.validate()?;
    if trials == 0 {
        return error::input("need at least one trial");
    }
    let k = model.k();
    let (lo, hi) = model.bounds;
    let mut draw_a = Vec::with_capacity(k);
    let mut draw_b = Vec::with_capacity(k);
    for i in 0..k {
        for (u, v, out) in [
            (model.means_a[i], model.vars_a[i], &mut draw_a),
            (model.means_b[i], model.vars_b[i], &mut draw_b),
        ] {
            match law {
                RewardLaw::Bernoulli => {
                    if lo != 0.0 || hi != 1.0 || (v - u * (1.0 - u)).abs() > 1e-12 {
                        return error::input(format!(
                            "Bernoulli law needs bounds (0, 1) and v = u(1-u); got u = {u}, v = {v}"
                        ));
                    }
                    out.push((u, 0.0));
                }
                RewardLaw::BoundedUniform => {
                    let w = (3.0 * v).sqrt();
                    if u - w < lo - 1e-12 || u + w > hi + 1e-12 {
                        return error::input(format!("uniform law with mean {u} and variance {v} leaves the bounds"));
                    }
                    out.push((u, w));
                }
            }
        }
    }
    let sample = |rng: &mut seed::Rng, law_params: &[(f64, f64)]| -> f64 {
        law_params
            .iter()
            .map(|&(u, w)| match law {
                RewardLaw::Bernoulli => f64::from(u8::from(rng.random::<f64>() < u)),
                RewardLaw::BoundedUniform => u + w * (2.0 * rng.random::<f64>() - 1.0),
            })
            .sum()
    };
    let chunks = trials.div_ceil(CHUNK);
    let (score, sq): (f64, f64) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::rng(seed, &[c]);
            let n = CHUNK.min(trials - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                // sums compare the same way as means
                let a = sample(&mut rng, &draw_a);
                let b = sample(&mut rng, &draw_b);
                let x = if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
                s += x;
                s2 += x * x;
            }
            (s, s2)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let n = trials as f64;
    let p = score / n;
    let var = (sq / n - p * p).max(0.0);
    Ok(McEstimate {
        probability: p,
        std_error: (var / n).sqrt(),
        trials,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub p_a: f64,
    pub p_b: f64,
    pub k: usize,
    pub delta: f64,
    pub sigma: f64,
    pub normal_approx: f64,
    pub bound: f64,
    pub monte_carlo: f64,
    pub std_error: f64,
}

/// Bernoulli rows over every `(p_a, p_b)` pair and every `K`.
pub fn reliability_table(pairs: &[(f64, f64)], ks: &[usize], trials: u64, seed: u64) -> Result<Vec<ReliabilityRow>> {
    if pairs.is_empty() || ks.is_empty() {
        return error::input("reliability grid is empty");
    }
    let mut rows = Vec::new();
    for (i, &(pa, pb)) in pairs.iter().enumerate() {
        for &k in ks {
            let model = SkillEvalModel::bernoulli_uniform(pa, pb, k)?;
            let (delta, sigma) = gap_and_sigma(&model);
            let mc = monte_carlo_rank(&model, RewardLaw::Bernoulli, trials, seed::derive(seed, &[i as u64, k as u64]))?;
            rows.push(ReliabilityRow {
                p_a: pa,
                p_b: pb,
                k,
                delta,
                sigma,
                normal_approx: ranking_probability(delta, sigma),
                bound: ranking_bound(delta, k, 0.0, 1.0)?,
                monte_carlo: mc.probability,
                std_error: mc.std_error,
            });
        }
    }
    Ok(rows)
}

pub fn table_tsv(rows: &[ReliabilityRow]) -> String {
    let mut s = String::from("p_a\tp_b\tK\tdelta\tsigma\tnormal_approx\tbound\tmonte_carlo\tstd_error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.p_a, r.p_b, r.k, r.delta, r.sigma, r.normal_approx, r.bound, r.monte_carlo, r.std_error
        );
    }
    s
}
