use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clip, group_advantage, kl_low_variance};
use crate::error::{self, Result};
use crate::policy::{Context, Params, Policy, Sequence, Snapshot};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    Extractor,
    Solver,
}

/// One sample of a comparison group. `old_logp` is aligned with
/// `seq.tokens` and holds the sampling policy's log-probabilities.
#[derive(Clone, Debug)]
pub struct Member<T> {
    pub ctx: Arc<Context>,
    pub seq: Sequence,
    pub old_logp: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct Group<T> {
    pub kind: GroupKind,
    pub members: Vec<Member<T>>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Version of the snapshot the members were sampled from.
    pub version: u64,
}

impl<T: Scalar> Group<T> {
    pub fn new(kind: GroupKind, members: Vec<Member<T>>, rewards: Vec<f64>, version: u64) -> Result<Group<T>> {
        if members.len() != rewards.len() {
            return error::usage(format!("{} members but {} rewards", members.len(), rewards.len()));
        }
        for m in &members {
            if m.old_logp.len() != m.seq.len() || m.seq.loss_mask.len() != m.seq.len() {
                return error::usage("member tokens, mask and log-probs differ in length");
            }
        }
        let advantages = group_advantage(&rewards)?;
        Ok(Group {
            kind,
            members,
            rewards,
            advantages,
            version,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub eps_low: f64,
    pub eps_high: f64,
    /// KL coefficient.
    pub beta: f64,
    /// Entropy coefficient; the loss subtracts `eta * H`.
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub surrogate: f64,
    pub kl_term: f64,
    pub entropy_term: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub gradient: Vec<T>,
    pub version: u64,
    pub members: usize,
    pub tokens: usize,
}

impl<T: Scalar> LossReport<T> {
    pub fn empty(n: usize, version: u64) -> LossReport<T> {
        LossReport {
            surrogate: 0.0,
            kl_term: 0.0,
            entropy_term: 0.0,
            total: 0.0,
            clip_fraction: 0.0,
            gradient: vec![T::zero(); n],
            version,
            members: 0,
            tokens: 0,
        }
    }
}

struct Terms<T> {
    surr: f64,
    kl: f64,
    ent: f64,
    clipped: usize,
    tokens: usize,
    grad: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn member_terms<T: Scalar>(
    policy: &Policy,
    params: &Params<T>,
    reference: &Params<T>,
    m: &Member<T>,
    adv: f64,
    s: &LossSettings,
    with_entropy_grad: bool,
) -> Result<Terms<T>> {
    let steps = policy.steps(params, &m.ctx, &m.seq)?;
    let mut t = Terms {
        surr: 0.0,
        kl: 0.0,
        ent: 0.0,
        clipped: 0,
        tokens: steps.len(),
        grad: vec![T::zero(); policy.num_params()],
    };
    if steps.is_empty() {
        return Ok(t);
    }
    let inv_n = T::of(1.0 / steps.len() as f64);
    let a = T::of(adv);
    let (lo, hi) = (T::of(s.eps_low), T::of(s.eps_high));
    let (mut surr, mut kl, mut ent) = (T::zero(), T::zero(), T::zero());
    for st in &steps {
        let lp = st.token_logp();
        let ratio = (lp - m.old_logp[st.pos]).exp();
        let lr = policy.logp_under(reference, st);
        let unclipped = ratio * a;
        let clipped = clip(ratio, lo, hi) * a;
        // d(-surr)/dlp is -A r on the unclipped branch and zero when clipped
        let mut coef = T::zero();
        if clipped < unclipped {
            t.clipped += 1;
            surr = surr + clipped;
        } else {
            surr = surr + unclipped;
            coef = coef - unclipped;
        }
        kl = kl + kl_low_variance(lp, lr);
        coef = coef + T::of(s.beta) * (T::one() - (lr - lp).exp());
        st.add_grad_logp(&mut t.grad, coef * inv_n);
        let h = st.entropy();
        ent = ent + h;
        if with_entropy_grad {
            st.add_grad_entropy(&mut t.grad, -T::of(s.eta) * inv_n);
        }
    }
    t.surr = (surr * inv_n).f64();
    t.kl = (kl * inv_n).f64();
    t.ent = (ent * inv_n).f64();
    Ok(t)
}

fn group_loss<T: Scalar>(
    policy: &Policy,
    groups: &[Group<T>],
    params: &Params<T>,
    old: &Snapshot<T>,
    reference: &Snapshot<T>,
    s: &LossSettings,
    with_entropy: bool,
) -> Result<LossReport<T>> {
    for g in groups {
        if g.version != old.version {
            return error::usage(format!(
                "group sampled from version {} but the old snapshot is version {}",
                g.version, old.version
            ));
        }
    }
    let work: Vec<(&Member<T>, f64)> = groups
        .iter()
        .flat_map(|g| g.members.iter().zip(g.advantages.iter().copied()))
        .collect();
    let mut report = LossReport::empty(policy.num_params(), params.version);
    if work.is_empty() {
        return Ok(report);
    }
    let terms: Vec<Terms<T>> = work
        .par_iter()
        .map(|(m, a)| member_terms(policy, params, reference, m, *a, s, with_entropy && s.eta != 0.0))
        .collect::<Result<_>>()?;
    let count = terms.len() as f64;
    let inv = T::of(1.0 / count);
    let mut clipped = 0;
    for t in &terms {
        report.surrogate -= t.surr;
        report.kl_term += t.kl;
        report.entropy_term += t.ent;
        report.tokens += t.tokens;
        clipped += t.clipped;
        for (g, x) in report.gradient.iter_mut().zip(&t.grad) {
            *g = *g + *x * inv;
        }
    }
    report.surrogate /= count;
    report.kl_term /= count;
    report.entropy_term /= count;
    report.members = terms.len();
    report.clip_fraction = if report.tokens == 0 {
        0.0
    } else {
        clipped as f64 / report.tokens as f64
    };
    let eta = if with_entropy { s.eta } else { 0.0 };
    report.total = report.surrogate + s.beta * report.kl_term - eta * report.entropy_term;
    Ok(report)
}

/// Mean over members of the negated token-mean clipped surrogate, plus
/// `beta * KL`, minus `eta * entropy`.
pub fn extractor_loss<T: Scalar>(
    policy: &Policy,
    groups: &[Group<T>],
    params: &Params<T>,
    old: &Snapshot<T>,
    reference: &Snapshot<T>,
    settings: &LossSettings,
) -> Result<LossReport<T>> {
    group_loss(policy, groups, params, old, reference, settings, true)
}

/// Like [`extractor_loss`] without an entropy term in the objective. The
/// report still carries the mean entropy. Groups under two members are
/// skipped.
pub fn solver_loss<T: Scalar>(
    policy: &Policy,
    groups: &[Group<T>],
    params: &Params<T>,
    old: &Snapshot<T>,
    reference: &Snapshot<T>,
    settings: &LossSettings,
) -> Result<LossReport<T>> {
    let kept: Vec<Group<T>> = groups
        .iter()
        .filter(|g| {
            if g.members.len() < 2 {
                log::warn!("skipping a solver group with {} member(s)", g.members.len());
            }
            g.members.len() >= 2
        })
        .cloned()
        .collect();
    group_loss(policy, &kept, params, old, reference, settings, false)
}

/// `lambda_e * L_e + lambda_s * L_s`, gradients combined the same way.
pub fn joint_loss<T: Scalar>(
    e: &LossReport<T>,
    s: &LossReport<T>,
    lambda_e: f64,
    lambda_s: f64,
) -> Result<LossReport<T>> {
    if e.version != s.version {
        return error::usage(format!("extractor report at version {}, solver at {}", e.version, s.version));
    }
    if e.gradient.len() != s.gradient.len() {
        return error::usage("reports have different parameter counts");
    }
    let (le, ls) = (T::of(lambda_e), T::of(lambda_s));
    let tokens = e.tokens + s.tokens;
    Ok(LossReport {
        surrogate: lambda_e * e.surrogate + lambda_s * s.surrogate,
        kl_term: lambda_e * e.kl_term + lambda_s * s.kl_term,
        entropy_term: lambda_e * e.entropy_term,
        total: lambda_e * e.total + lambda_s * s.total,
        clip_fraction: if tokens == 0 {
            0.0
        } else {
            (e.clip_fraction * e.tokens as f64 + s.clip_fraction * s.tokens as f64) / tokens as f64
        },
        gradient: e.gradient.iter().zip(&s.gradient).map(|(&a, &b)| le * a + ls * b).collect(),
        version: e.version,
        members: e.members + s.members,
        tokens,
    })
}
