use crate::env::{make_env, Task, Transition};
use crate::error::Result;
use crate::policy::{Context, Params, Policy, SampleOptions, Sequence};
use crate::seed::Rng;
use crate::vocab::{Token, FAIL, SUCCESS};

/// One solver episode as a token stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub task_id: u64,
    pub seq: Sequence,
    /// Aligned with `seq.tokens`; zero on observation tokens.
    pub logp: Vec<f64>,
    pub step_rewards: Vec<f64>,
    pub success: bool,
}

impl Episode {
    /// Trajectory-level reward: the sum of step rewards.
    pub fn ret(&self) -> f64 {
        self.step_rewards.iter().sum()
    }

    pub fn steps(&self) -> usize {
        self.step_rewards.len()
    }

    /// Positions of the policy's emissions, one per step.
    pub fn decision_positions(&self) -> Vec<usize> {
        self.seq.masked_positions().collect()
    }

    /// The stream followed by its outcome token, as the extractor reads it.
    pub fn trajectory_tokens(&self) -> Vec<Token> {
        let mut t = self.seq.tokens.clone();
        t.push(if self.success { SUCCESS } else { FAIL });
        t
    }
}

pub fn rollout(
    policy: &Policy,
    params: &Params<f64>,
    task: &Task,
    ctx: &Context,
    opts: &SampleOptions,
    step_limit: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    let mut env = make_env(task.env(), step_limit);
    let mut obs = env.reset(task)?;
    let mut ep = Episode {
        task_id: task.id,
        seq: Sequence::new(),
        logp: vec![],
        step_rewards: vec![],
        success: false,
    };
    loop {
        let block = obs.tokens();
        ep.logp.extend(std::iter::repeat_n(0.0, block.len()));
        ep.seq.extend_observed(&block);
        let (tok, lp) = policy.sample_next(params, ctx, &ep.seq, opts, rng)?;
        ep.seq.push(tok, true);
        ep.logp.push(lp);
        let (tr, r) = env.step(tok)?;
        ep.step_rewards.push(r);
        match tr {
            Transition::Continue(o) => obs = o,
            Transition::Terminal { success } => {
                ep.success = success;
                return Ok(ep);
            }
        }
    }
}
