#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng as _;

use evorl::env::{generate_task, Family, Task};
use evorl::grpo::{Group, GroupKind, Member};
use evorl::policy::{Params, Policy, PolicyConfig, Prior, SampleOptions, Sequence};
use evorl::seed;
use evorl::trainer::rollout;

pub fn policy() -> Policy {
    Policy::new(PolicyConfig::default()).unwrap()
}

/// Base prior plus uniform noise of half-width `spread`.
pub fn noisy_params(policy: &Policy, s: u64, spread: f64) -> Params<f64> {
    let mut p = policy.init::<f64>(&Prior::default());
    let mut rng = seed::rng(s, &[0xAA]);
    for x in &mut p.theta {
        *x += spread * (2.0 * rng.random::<f64>() - 1.0);
    }
    p
}

pub fn perturbed(p: &Params<f64>, s: u64, spread: f64) -> Params<f64> {
    let mut q = p.clone();
    let mut rng = seed::rng(s, &[0xBB]);
    for x in &mut q.theta {
        *x += spread * (2.0 * rng.random::<f64>() - 1.0);
    }
    q
}

pub fn task(family: Family, s: u64) -> Task {
    generate_task(family, s).unwrap()
}

fn opts() -> SampleOptions {
    SampleOptions::new(1.0, 1.0)
}

/// `n` skills extracted from one sampled source rollout. Old log-probs are
/// taken under `old`.
pub fn extractor_group(policy: &Policy, old: &Params<f64>, s: u64, n: usize) -> Group<f64> {
    let t = task(Family::Heat, s);
    let ctx = policy.solve_context(&t.description, None);
    let ep = rollout(policy, old, &t, &ctx, &opts(), 30, &mut seed::rng(s, &[1])).unwrap();
    let ectx = Arc::new(policy.extract_context(&t.description, ep.trajectory_tokens()));
    let mut rng = seed::rng(s, &[2]);
    let members: Vec<Member<f64>> = (0..n)
        .map(|_| {
            let em = policy.sample_skill(old, &ectx, &opts(), &mut rng).unwrap();
            Member {
                ctx: ectx.clone(),
                seq: Sequence::emitted(em.tokens),
                old_logp: em.logp,
            }
        })
        .collect();
    let rewards = (0..n).map(|i| (i % 3) as f64 * 2.5 + rng.random::<f64>()).collect();
    Group::new(GroupKind::Extractor, members, rewards, old.version).unwrap()
}

/// `k` downstream tasks, each solved under `n` different skills.
pub fn solver_groups(policy: &Policy, old: &Params<f64>, s: u64, k: usize, n: usize) -> Vec<Group<f64>> {
    let skills = extractor_group(policy, old, s ^ 0x55, n);
    let fams = [Family::Pick, Family::Cool, Family::Clean, Family::Look];
    (0..k)
        .map(|j| {
            let t = task(fams[j % fams.len()], s + j as u64);
            let mut members = vec![];
            let mut rewards = vec![];
            for (i, m) in skills.members.iter().enumerate() {
                let ctx = Arc::new(policy.solve_context(&t.description, Some(&m.seq.tokens)));
                let mut rng = seed::rng(s, &[3, j as u64, i as u64]);
                let ep = rollout(policy, old, &t, &ctx, &opts(), 12, &mut rng).unwrap();
                rewards.push(ep.ret() + i as f64);
                members.push(Member {
                    ctx,
                    seq: ep.seq,
                    old_logp: ep.logp,
                });
            }
            Group::new(GroupKind::Solver, members, rewards, old.version).unwrap()
        })
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
