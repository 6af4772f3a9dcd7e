//! The training loop: solve a source task, extract candidate skills, score
//! each skill on the source plus retrieved tasks, and update the shared
//! policy on both sample families at once.

pub mod checkpoint;
pub mod eval;
pub mod rollout;
pub mod watchdog;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use eval::{evaluate, extraction_pass, EvalReport, EvalSettings, ExtractSettings, Tally};
pub use rollout::{rollout, Episode};
pub use watchdog::{entropy_watchdog, Advisory, WatchdogConfig};

use crate::config::{BaselineKind, RunConfig};
use crate::env::{build_task_pool_from, EnvKind, Task, TaskPool};
use crate::error::{self, Error, Result};
use crate::grpo::{
    extractor_loss, joint_loss, skill_reward, solver_loss, AdamW, Group, GroupKind, LossReport, LossSettings, Member,
    RewardMode,
};
use crate::library::SkillLibrary;
use crate::policy::{Context, Params, Policy, SampleOptions, Sequence, Snapshot};
use crate::retrieval::RetrievalIndex;
use crate::seed;
use crate::skill::{rule_filter, Skill};
use crate::vocab::token_names;

/// Id ranges keep the three pools disjoint.
pub const TRAIN_IDS: u64 = 0;
pub const EVAL_IDS: u64 = 1_000_000;
pub const LIBRARY_IDS: u64 = 2_000_000;

/// The loss report without its gradient, as logged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub members: usize,
    pub tokens: usize,
}

impl From<&LossReport<f64>> for LossSummary {
    fn from(r: &LossReport<f64>) -> Self {
        LossSummary {
            surrogate: r.surrogate,
            kl: r.kl_term,
            entropy: r.entropy_term,
            total: r.total,
            clip_fraction: r.clip_fraction,
            members: r.members,
            tokens: r.tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub kind: BaselineKind,
    /// Parameter version the rollouts were sampled from.
    pub params_version: u64,
    pub source_task_ids: Vec<u64>,
    /// Per source: the source followed by its retrieved tasks.
    pub eval_task_ids: Vec<Vec<u64>>,
    /// B x N skills, as token names.
    pub skills: Vec<Vec<Vec<String>>>,
    pub skill_valid: Vec<Vec<bool>>,
    /// B x N x (K+1); rows of filtered skills are zeros and were not run.
    pub eval_rewards: Vec<Vec<Vec<f64>>>,
    pub skill_rewards: Vec<Vec<f64>>,
    /// Returns of the skill-free rollouts of the plain baseline, B x (N K).
    pub baseline_returns: Vec<Vec<f64>>,
    pub extractor: LossSummary,
    pub solver: LossSummary,
    pub joint: LossSummary,
    pub extractor_entropy: f64,
    pub skill_reward_mean: f64,
    pub skill_reward_std: f64,
    pub success_rates: BTreeMap<String, f64>,
    pub rollouts: usize,
    pub expected_rollouts: usize,
    pub n_valid: usize,
    pub skipped_groups: usize,
    pub advisory: Option<Advisory>,
}

/// Source-task context shared by all candidate skills of one source.
struct Source {
    task: Task,
    episode: Episode,
    ctx: Arc<Context>,
    eval_ids: Vec<u64>,
}

struct Candidate {
    skill: Skill,
    seq: Sequence,
    logp: Vec<f64>,
    /// Counted as valid for evaluation (filter passed, or filter disabled).
    evaluated: bool,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub policy: Policy,
    pub params: Params<f64>,
    pub reference: Snapshot<f64>,
    pub optimizer: AdamW<f64>,
    pub train_pool: TaskPool,
    pub index: RetrievalIndex,
    pub library: SkillLibrary,
    pub iteration: u64,
    pub entropy_trace: Vec<f64>,
}

/// Loss weights after the run kind is applied.
pub fn loss_weights(cfg: &RunConfig) -> (f64, f64) {
    let g = &cfg.grpo;
    match cfg.run.kind {
        BaselineKind::CoEvolution => (g.lambda_e, g.lambda_s),
        BaselineKind::ExtractorOnly => (g.lambda_e, 0.0),
        BaselineKind::SolverOnly | BaselineKind::Grpo => (0.0, g.lambda_s),
    }
}

pub fn build_pools(cfg: &RunConfig) -> Result<(TaskPool, TaskPool, TaskPool)> {
    let s = cfg.env.pool_seed;
    let train = build_task_pool_from(&cfg.env.train_pool, seed::derive(s, &[1]), TRAIN_IDS)?.seen();
    let eval = build_task_pool_from(&cfg.env.eval_pool, seed::derive(s, &[2]), EVAL_IDS)?;
    let library = build_task_pool_from(&cfg.env.library_pool, seed::derive(s, &[3]), LIBRARY_IDS)?;
    Ok((train, eval, library))
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Trainer> {
        cfg.validate()?;
        let policy = Policy::new(cfg.policy.clone())?;
        let params = policy.init::<f64>(&cfg.prior);
        let (train_pool, _, _) = build_pools(&cfg)?;
        let needed = cfg.grpo.batch_size.max(cfg.grpo.num_retrieved + 1);
        if train_pool.len() < needed {
            return error::config(format!(
                "training pool has {} seen tasks; batch size and K need at least {needed}",
                train_pool.len()
            ));
        }
        let index = RetrievalIndex::build(&train_pool)?;
        Ok(Trainer {
            reference: params.snapshot(),
            optimizer: AdamW::new(cfg.optimizer.clone(), policy.num_params()),
            cfg,
            policy,
            params,
            train_pool,
            index,
            library: SkillLibrary::new(),
            iteration: 0,
            entropy_trace: vec![],
        })
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.cfg.run.iterations as u64
    }

    fn sample_opts(&self) -> SampleOptions {
        SampleOptions::new(self.cfg.grpo.temperature, self.cfg.grpo.top_p)
    }

    fn settings(&self, extractor: bool) -> LossSettings {
        let g = &self.cfg.grpo;
        LossSettings {
            eps_low: g.eps_low,
            eps_high: g.eps_high,
            beta: if extractor { g.beta_e } else { g.beta_s },
            eta: if extractor { g.eta_e } else { 0.0 },
        }
    }

    fn seed(&self, path: &[u64]) -> seed::Rng {
        let mut p = vec![self.iteration];
        p.extend_from_slice(path);
        seed::rng(self.cfg.run.seed, &p)
    }

    /// Source tasks for this iteration; depends only on the run seed and the
    /// iteration, never on the run kind.
    pub fn source_tasks(&self) -> Vec<Task> {
        let mut rng = self.seed(&[0]);
        sample(&mut rng, self.train_pool.len(), self.cfg.grpo.batch_size)
            .into_iter()
            .map(|i| self.train_pool.tasks[i].clone())
            .collect()
    }

    fn run_episode(&self, params: &Params<f64>, task: &Task, skill: Option<&Skill>, path: &[u64]) -> Result<(Episode, Arc<Context>)> {
        let ctx = Arc::new(self.policy.solve_context(&task.description, skill.map(|s| s.tokens.as_slice())));
        let mut rng = self.seed(path);
        let ep = rollout(&self.policy, params, task, &ctx, &self.sample_opts(), self.cfg.env.step_limit, &mut rng)?;
        Ok((ep, ctx))
    }

    /// One rollout/update cycle. On error the parameters and optimizer are
    /// left exactly as they were.
    pub fn run_iteration(&mut self) -> Result<IterationRecord> {
        let old = self.params.snapshot();
        let sources = self.source_tasks();
        let mut rec = match self.cfg.run.kind {
            BaselineKind::Grpo => self.grpo_phase(&old, &sources)?,
            _ => self.skill_phase(&old, &sources)?,
        };
        self.entropy_trace.push(rec.extractor_entropy);
        let wd = WatchdogConfig {
            ceiling: self.cfg.stability.entropy_ceiling,
            window: self.cfg.stability.entropy_window,
        };
        rec.advisory = entropy_watchdog(&self.entropy_trace, &wd);
        if let Some(a) = &rec.advisory {
            log::warn!("iteration {}: {}", self.iteration, a.reason);
        }
        self.iteration += 1;
        Ok(rec)
    }

    fn update(&mut self, old: &Snapshot<f64>, extractor_groups: &[Group<f64>], solver_groups: &[Group<f64>]) -> Result<[LossReport<f64>; 3]> {
        let (le, ls) = loss_weights(&self.cfg);
        let mut first = None;
        let mut params = self.params.clone();
        let mut opt = self.optimizer.clone();
        for _ in 0..self.cfg.grpo.epochs {
            let e = extractor_loss(&self.policy, extractor_groups, &params, old, &self.reference, &self.settings(true))?;
            let s = solver_loss(&self.policy, solver_groups, &params, old, &self.reference, &self.settings(false))?;
            let j = joint_loss(&e, &s, le, ls)?;
            if !j.total.is_finite() {
                return Err(Error::Numerical(format!("non-finite joint loss at iteration {}", self.iteration)));
            }
            opt.step(&mut params, &j.gradient)?;
            first.get_or_insert([e, s, j]);
        }
        self.params = params;
        self.optimizer = opt;
        Ok(first.unwrap())
    }

    fn solver_groups(&self, eps: &[(Arc<Context>, &Episode)], version: u64, skipped: &mut usize) -> Result<Vec<Group<f64>>> {
        if eps.len() < 2 {
            if !eps.is_empty() {
                log::warn!("solver group with a single member skipped");
                *skipped += 1;
            }
            return Ok(vec![]);
        }
        let member = |ctx: &Arc<Context>, ep: &Episode, seq: Sequence| Member {
            ctx: ctx.clone(),
            seq,
            old_logp: ep.logp.clone(),
        };
        match self.cfg.env.kind {
            EnvKind::GridHouse => {
                let members = eps.iter().map(|(c, e)| member(c, e, e.seq.clone())).collect();
                let rewards = eps.iter().map(|(_, e)| e.ret()).collect();
                Ok(vec![Group::new(GroupKind::Solver, members, rewards, version)?])
            }
            // turn-wise: step t of every trajectory that reached it
            EnvKind::StepWeb => {
                let longest = eps.iter().map(|(_, e)| e.steps()).max().unwrap_or(0);
                let mut out = vec![];
                for t in 0..longest {
                    let alive: Vec<_> = eps.iter().filter(|(_, e)| e.steps() > t).collect();
                    if alive.len() < 2 {
                        *skipped += 1;
                        continue;
                    }
                    let members = alive
                        .iter()
                        .map(|(c, e)| member(c, e, e.seq.with_mask_only(&[e.decision_positions()[t]])))
                        .collect();
                    let rewards = alive.iter().map(|(_, e)| e.step_rewards[t]).collect();
                    out.push(Group::new(GroupKind::Solver, members, rewards, version)?);
                }
                Ok(out)
            }
        }
    }

    fn skill_phase(&mut self, old: &Snapshot<f64>, tasks: &[Task]) -> Result<IterationRecord> {
        let g = self.cfg.grpo.clone();
        let (n, k) = (g.num_skills, g.num_retrieved);
        let max_len = self.cfg.policy.max_skill_len;
        let filter = self.cfg.stability.rule_filter;

        // 1. skill-free source rollouts
        let sources: Vec<Source> = tasks
            .par_iter()
            .enumerate()
            .map(|(b, task)| {
                let (episode, _) = self.run_episode(old, task, None, &[1, b as u64])?;
                let ctx = Arc::new(self.policy.extract_context(&task.description, episode.trajectory_tokens()));
                let eval_ids = self.index.retrieve_topk(task, k)?;
                Ok(Source {
                    task: task.clone(),
                    episode,
                    ctx,
                    eval_ids,
                })
            })
            .collect::<Result<_>>()?;

        // 2. N candidate skills per source
        let mut opts = self.sample_opts();
        opts.noise = self.cfg.stability.noise_injection;
        let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|b| (0..n).map(move |i| (b, i))).collect();
        let cands: Vec<Candidate> = jobs
            .par_iter()
            .map(|&(b, i)| {
                let src = &sources[b];
                let mut rng = self.seed(&[2, b as u64, i as u64]);
                let em = self.policy.sample_skill(old, &src.ctx, &opts, &mut rng)?;
                let skill = Skill::new(em.tokens.clone(), src.task.id, max_len);
                let evaluated = !filter || rule_filter(&em.tokens, max_len);
                Ok(Candidate {
                    skill,
                    seq: Sequence::emitted(em.tokens),
                    logp: em.logp,
                    evaluated,
                })
            })
            .collect::<Result<_>>()?;

        // 3. every evaluated skill on its source's task list
        let eval_jobs: Vec<(usize, usize, usize)> = jobs
            .iter()
            .filter(|&&(b, i)| cands[b * n + i].evaluated)
            .flat_map(|&(b, i)| (0..=k).map(move |j| (b, i, j)))
            .collect();
        let evals: Vec<(Episode, Arc<Context>)> = eval_jobs
            .par_iter()
            .map(|&(b, i, j)| {
                let task = self.train_pool.get(sources[b].eval_ids[j]).expect("retrieved id in pool");
                self.run_episode(old, task, Some(&cands[b * n + i].skill), &[3, b as u64, i as u64, j as u64])
            })
            .collect::<Result<_>>()?;
        let mut eval_at: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
        for (slot, &key) in eval_jobs.iter().enumerate() {
            eval_at.insert(key, slot);
        }

        // 4. rewards
        let mode = match self.cfg.env.kind {
            EnvKind::GridHouse => RewardMode::MeanOfOutcomes,
            EnvKind::StepWeb => RewardMode::MeanOfTrajectorySums,
        };
        let mut eval_rewards = vec![vec![vec![0.0; k + 1]; n]; tasks.len()];
        let mut skill_rewards = vec![vec![0.0; n]; tasks.len()];
        for &(b, i) in &jobs {
            if cands[b * n + i].evaluated {
                for j in 0..=k {
                    eval_rewards[b][i][j] = evals[eval_at[&(b, i, j)]].0.ret();
                }
                skill_rewards[b][i] = skill_reward(&eval_rewards[b][i], mode)?;
            }
        }

        // 5. groups
        let mut extractor_groups = vec![];
        for (b, src) in sources.iter().enumerate() {
            let members = (0..n)
                .map(|i| {
                    let c = &cands[b * n + i];
                    Member {
                        ctx: src.ctx.clone(),
                        seq: c.seq.clone(),
                        old_logp: c.logp.clone(),
                    }
                })
                .collect();
            extractor_groups.push(Group::new(GroupKind::Extractor, members, skill_rewards[b].clone(), old.version)?);
        }
        let mut skipped = 0;
        let mut solver_groups = vec![];
        for b in 0..tasks.len() {
            for j in 0..=k {
                let eps: Vec<(Arc<Context>, &Episode)> = (0..n)
                    .filter_map(|i| eval_at.get(&(b, i, j)).map(|&s| (evals[s].1.clone(), &evals[s].0)))
                    .collect();
                solver_groups.extend(self.solver_groups(&eps, old.version, &mut skipped)?);
            }
        }

        // 6. update
        let [e, s, j] = self.update(old, &extractor_groups, &solver_groups)?;

        for &(b, i) in &jobs {
            let c = &cands[b * n + i];
            if c.skill.valid {
                let mut skill = c.skill.clone();
                skill.reward = Some(skill_rewards[b][i]);
                self.library.push(skill, &sources[b].task.description, skill_rewards[b][i], self.iteration)?;
            }
        }

        let n_valid = cands.iter().filter(|c| c.evaluated).count();
        let rollouts = sources.len() + evals.len();
        let expected = tasks.len() + n_valid * (k + 1);
        if rollouts != expected {
            return error::usage(format!("rollout count {rollouts} differs from budget {expected}"));
        }
        let flat: Vec<f64> = skill_rewards.iter().flatten().copied().collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let std = (flat.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / flat.len() as f64).sqrt();
        let mut success_rates = BTreeMap::new();
        let rate = |xs: &mut dyn Iterator<Item = bool>| {
            let v: Vec<bool> = xs.collect();
            if v.is_empty() {
                0.0
            } else {
                v.iter().filter(|&&x| x).count() as f64 / v.len() as f64
            }
        };
        success_rates.insert("source".into(), rate(&mut sources.iter().map(|s| s.episode.success)));
        success_rates.insert("downstream".into(), rate(&mut evals.iter().map(|e| e.0.success)));
        let names = token_names();
        Ok(IterationRecord {
            iteration: self.iteration,
            kind: self.cfg.run.kind,
            params_version: old.version,
            source_task_ids: tasks.iter().map(|t| t.id).collect(),
            eval_task_ids: sources.iter().map(|s| s.eval_ids.clone()).collect(),
            skills: (0..tasks.len())
                .map(|b| {
                    (0..n)
                        .map(|i| cands[b * n + i].skill.tokens.iter().map(|t| names[t.0 as usize].clone()).collect())
                        .collect()
                })
                .collect(),
            skill_valid: (0..tasks.len()).map(|b| (0..n).map(|i| cands[b * n + i].skill.valid).collect()).collect(),
            eval_rewards,
            skill_rewards,
            baseline_returns: vec![],
            extractor_entropy: e.entropy_term,
            extractor: (&e).into(),
            solver: (&s).into(),
            joint: (&j).into(),
            skill_reward_mean: mean,
            skill_reward_std: std,
            success_rates,
            rollouts,
            expected_rollouts: expected,
            n_valid,
            skipped_groups: skipped,
            advisory: None,
        })
    }

    fn grpo_phase(&mut self, old: &Snapshot<f64>, tasks: &[Task]) -> Result<IterationRecord> {
        let m = self.cfg.grpo.num_skills * self.cfg.grpo.num_retrieved;
        let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|b| (0..m).map(move |r| (b, r))).collect();
        let eps: Vec<(Episode, Arc<Context>)> = jobs
            .par_iter()
            .map(|&(b, r)| self.run_episode(old, &tasks[b], None, &[4, b as u64, r as u64]))
            .collect::<Result<_>>()?;
        let mut skipped = 0;
        let mut groups = vec![];
        for b in 0..tasks.len() {
            let mine: Vec<(Arc<Context>, &Episode)> = eps[b * m..(b + 1) * m].iter().map(|(e, c)| (c.clone(), e)).collect();
            groups.extend(self.solver_groups(&mine, old.version, &mut skipped)?);
        }
        let [_, s, j] = self.update(old, &[], &groups)?;
        let returns: Vec<Vec<f64>> = (0..tasks.len()).map(|b| eps[b * m..(b + 1) * m].iter().map(|e| e.0.ret()).collect()).collect();
        let succ = eps.iter().filter(|e| e.0.success).count() as f64 / eps.len() as f64;
        let mut success_rates = BTreeMap::new();
        success_rates.insert("source".into(), succ);
        Ok(IterationRecord {
            iteration: self.iteration,
            kind: self.cfg.run.kind,
            params_version: old.version,
            source_task_ids: tasks.iter().map(|t| t.id).collect(),
            eval_task_ids: vec![],
            skills: vec![],
            skill_valid: vec![],
            eval_rewards: vec![],
            skill_rewards: vec![],
            baseline_returns: returns,
            extractor: LossSummary::default(),
            solver: (&s).into(),
            joint: (&j).into(),
            extractor_entropy: 0.0,
            skill_reward_mean: 0.0,
            skill_reward_std: 0.0,
            success_rates,
            rollouts: eps.len(),
            expected_rollouts: tasks.len() * m,
            n_valid: 0,
            skipped_groups: skipped,
            advisory: None,
        })
    }

    /// Runs the remaining iterations, handing each record to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&Trainer, &IterationRecord) -> Result<()>) -> Result<()> {
        while !self.finished() {
            let rec = self.run_iteration()?;
            sink(self, &rec)?;
            if rec.advisory.is_some() && self.cfg.stability.halt_on_flag {
                log::warn!("halting on entropy advisory");
                break;
            }
        }
        Ok(())
    }
}
