//! Success-rate evaluation and the test-time skill extraction pass.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::rollout;
use crate::config::RunConfig;
use crate::env::{Split, TaskPool};
use crate::error::{self, Result};
use crate::library::{Relevance, SkillLibrary};
use crate::policy::{Params, Policy, SampleOptions};
use crate::seed;
use crate::skill::{rule_filter, Skill};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub episodes: usize,
    pub seed: u64,
    pub temperature: f64,
    pub top_p: f64,
    pub step_limit: usize,
}

impl EvalSettings {
    pub fn from_config(cfg: &RunConfig) -> EvalSettings {
        EvalSettings {
            episodes: cfg.eval.episodes,
            seed: cfg.eval.seed,
            temperature: cfg.grpo.temperature,
            top_p: cfg.grpo.top_p,
            step_limit: cfg.env.step_limit,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub episodes: usize,
    pub successes: usize,
    pub success_steps: usize,
}

impl Tally {
    fn add(&mut self, success: bool, steps: usize) {
        self.episodes += 1;
        if success {
            self.successes += 1;
            self.success_steps += steps;
        }
    }

    pub fn rate(&self) -> f64 {
        if self.episodes == 0 {
            return 0.0;
        }
        self.successes as f64 / self.episodes as f64
    }

    /// Mean episode length over successful episodes only.
    pub fn mean_steps(&self) -> Option<f64> {
        (self.successes > 0).then(|| self.success_steps as f64 / self.successes as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: u64,
    pub family: String,
    pub split: Split,
    pub episode: usize,
    pub success: bool,
    pub steps: usize,
    /// Library entry injected, if any.
    pub skill_entry: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub by_family: BTreeMap<String, Tally>,
    pub by_split: BTreeMap<String, Tally>,
    pub overall: Tally,
    pub episodes: Vec<EpisodeRecord>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Seen => "seen",
        Split::Unseen => "unseen",
    }
}

impl EvalReport {
    pub fn split_rate(&self, split: Split) -> f64 {
        self.by_split.get(split_name(split)).map_or(0.0, Tally::rate)
    }

    /// Success rates keyed `family/<name>`, `split/<name>` and `overall`.
    pub fn rates(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, t) in &self.by_family {
            m.insert(format!("family/{k}"), t.rate());
        }
        for (k, t) in &self.by_split {
            m.insert(format!("split/{k}"), t.rate());
        }
        m.insert("overall".into(), self.overall.rate());
        m
    }

    /// Tab-separated table: group, episodes, success rate, mean steps.
    pub fn table(&self) -> String {
        let mut s = String::from("group\tepisodes\tsuccess_rate\tmean_success_steps\n");
        let rows = self
            .by_family
            .iter()
            .map(|(k, t)| (format!("family/{k}"), t))
            .chain(self.by_split.iter().map(|(k, t)| (format!("split/{k}"), t)))
            .chain([("overall".to_string(), &self.overall)]);
        for (k, t) in rows {
            let steps = t.mean_steps().map_or("-".into(), |x| format!("{x:.3}"));
            let _ = writeln!(s, "{k}\t{}\t{:.4}\t{steps}", t.episodes, t.rate());
        }
        s
    }
}

/// Averages the rates of several reports (one per seed).
pub fn mean_rates(reports: &[EvalReport]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for r in reports {
        for (k, v) in r.rates() {
            *acc.entry(k).or_default() += v;
        }
    }
    for v in acc.values_mut() {
        *v /= reports.len() as f64;
    }
    acc
}

/// Runs `episodes` episodes per task. Episode seeds depend only on the
/// evaluation seed, task id and episode number, so different skill
/// conditions see common random numbers.
pub fn evaluate(
    policy: &Policy,
    params: &Params<f64>,
    tasks: &TaskPool,
    skills: Option<(&SkillLibrary, Relevance)>,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return error::config("evaluation task set is empty");
    }
    if let Some((lib, _)) = skills {
        if lib.is_empty() {
            return error::usage("skill injection requested with an empty library");
        }
    }
    let opts = SampleOptions::new(settings.temperature, settings.top_p);
    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..settings.episodes).map(move |e| (t, e)))
        .collect();
    let picks: Vec<Option<usize>> = tasks
        .tasks
        .iter()
        .map(|t| match skills {
            Some((lib, rel)) => lib.select(&t.description, rel),
            None => Ok(None),
        })
        .collect::<Result<_>>()?;
    let episodes: Vec<EpisodeRecord> = jobs
        .par_iter()
        .map(|&(ti, e)| {
            let task = &tasks.tasks[ti];
            let skill = picks[ti].map(|i| skills.unwrap().0.entries[i].skill.tokens.as_slice());
            let ctx = policy.solve_context(&task.description, skill);
            let mut rng = seed::rng(settings.seed, &[task.id, e as u64]);
            let ep = rollout(policy, params, task, &ctx, &opts, settings.step_limit, &mut rng)?;
            Ok(EpisodeRecord {
                task_id: task.id,
                family: task.family.name().into(),
                split: task.split,
                episode: e,
                success: ep.success,
                steps: ep.steps(),
                skill_entry: picks[ti],
            })
        })
        .collect::<Result<_>>()?;
    let mut report = EvalReport::default();
    for r in &episodes {
        report.by_family.entry(r.family.clone()).or_default().add(r.success, r.steps);
        report.by_split.entry(split_name(r.split).into()).or_default().add(r.success, r.steps);
        report.overall.add(r.success, r.steps);
    }
    report.episodes = episodes;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractSettings {
    pub seed: u64,
    /// Source attempts per task; the pass stops at the first success.
    pub attempts: usize,
    /// Condition attempts on the most relevant skill collected so far.
    pub accumulate: bool,
    pub temperature: f64,
    pub top_p: f64,
    pub step_limit: usize,
    pub rule_filter: bool,
}

impl ExtractSettings {
    /// Seeded apart from evaluation so the two never share a stream.
    pub fn from_config(cfg: &RunConfig) -> ExtractSettings {
        ExtractSettings {
            seed: seed::derive(cfg.eval.seed, &[1]),
            attempts: cfg.eval.attempts,
            accumulate: cfg.eval.accumulate,
            temperature: cfg.grpo.temperature,
            top_p: cfg.grpo.top_p,
            step_limit: cfg.env.step_limit,
            rule_filter: cfg.stability.rule_filter,
        }
    }
}

/// Walks `pool` in order, solving each task and extracting one skill from
/// the final attempt. Valid skills join the library immediately.
pub fn extraction_pass(
    policy: &Policy,
    params: &Params<f64>,
    pool: &TaskPool,
    settings: &ExtractSettings,
) -> Result<SkillLibrary> {
    let opts = SampleOptions::new(settings.temperature, settings.top_p);
    let max_len = policy.cfg.max_skill_len;
    let mut lib = SkillLibrary::new();
    for task in &pool.tasks {
        let guide = if settings.accumulate {
            lib.select(&task.description, Relevance::Relevant)?
        } else {
            None
        };
        let skill = guide.map(|i| lib.entries[i].skill.tokens.clone());
        let ctx = policy.solve_context(&task.description, skill.as_deref());
        let mut last = None;
        for a in 0..settings.attempts.max(1) {
            let mut rng = seed::rng(settings.seed, &[task.id, 0, a as u64]);
            let ep = rollout(policy, params, task, &ctx, &opts, settings.step_limit, &mut rng)?;
            let done = ep.success;
            last = Some(ep);
            if done {
                break;
            }
        }
        let ep = last.unwrap();
        let ectx = policy.extract_context(&task.description, ep.trajectory_tokens());
        let mut rng = seed::rng(settings.seed, &[task.id, 1]);
        let em = policy.sample_skill(params, &ectx, &opts, &mut rng)?;
        let keep = !settings.rule_filter || rule_filter(&em.tokens, max_len);
        let skill = Skill::new(em.tokens, task.id, max_len);
        if keep && !skill.rules.is_empty() {
            let r = ep.ret();
            lib.push(skill, &task.description, r, 0)?;
        }
    }
    Ok(lib)
}
