//! The shared log-linear token policy.
//!
//! One parameter vector serves both roles. In solve mode the policy emits one
//! token per environment decision; in extract mode it emits a skill token by
//! token until the end token or the length cap.

pub mod context;
pub mod features;

use std::fs;
use std::ops::Deref;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use context::{Context, Mode, Sequence};
pub use features::{Layout, PolicyConfig, Rows, Scalar as Feature};

use crate::env::gridhouse::scripted_action;
use crate::error::{self, Result};
use crate::scalar::{log_sum_exp, Scalar};
use crate::seed::Rng;
use crate::vocab::{self, PhaseClass, Token, END, NUM_NOISE, VOCAB_SIZE};

/// Trainable parameters plus an update counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    pub theta: Vec<T>,
    pub version: u64,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(n: usize) -> Params<T> {
        Params {
            theta: vec![T::zero(); n],
            version: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn snapshot(&self) -> Snapshot<T> {
        Snapshot(Arc::new(self.clone()))
    }
}

/// Immutable, cheaply shareable copy of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T>(Arc<Params<T>>);

impl<T> Deref for Snapshot<T> {
    type Target = Params<T>;
    fn deref(&self) -> &Params<T> {
        &self.0
    }
}

/// Initial weights standing in for a pretrained base model: it already
/// prefers admissible actions, has a rough idea of household procedures
/// (weaker for phases only unseen families reach), follows injected rules a
/// little and writes grammatical skills that copy from the source without
/// judging progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prior {
    pub action_bias: f64,
    pub admissible: f64,
    /// Weight on the expert action in phases every household family shares.
    pub common_phase: f64,
    /// Same, for the appliance phases of the seen families.
    pub family_phase: f64,
    /// Same, for phases only unseen families reach.
    pub novel_phase: f64,
    pub follow: f64,
    pub slot_ok: f64,
    pub copy_cond: f64,
    pub copy_pair: f64,
    pub copy_progress: f64,
    pub cond_dup: f64,
    pub end_per_rule: f64,
    pub noise_bias: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Prior {
            action_bias: 1.0,
            admissible: 2.0,
            common_phase: 5.0,
            family_phase: 0.0,
            novel_phase: 0.0,
            follow: 2.0,
            slot_ok: 3.0,
            copy_cond: 3.0,
            copy_pair: 2.5,
            copy_progress: 0.0,
            cond_dup: -1.0,
            end_per_rule: 3.0,
            noise_bias: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Zero means greedy decoding.
    pub temperature: f64,
    pub top_p: f64,
    /// Per-token probability of replacing the sampled token with a noise
    /// token (stress testing of the skill grammar).
    pub noise: f64,
}

impl SampleOptions {
    pub fn new(temperature: f64, top_p: f64) -> SampleOptions {
        SampleOptions {
            temperature,
            top_p,
            noise: 0.0,
        }
    }

    pub fn greedy() -> SampleOptions {
        SampleOptions::new(0.0, 1.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return error::usage(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return error::usage(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return error::usage(format!("noise must be in [0, 1], got {}", self.noise));
        }
        Ok(())
    }
}

/// An extract-mode emission.
#[derive(Clone, Debug, PartialEq)]
pub struct Emission<T> {
    pub tokens: Vec<Token>,
    pub logp: Vec<T>,
    /// Length cap reached without an end token.
    pub truncated: bool,
}

/// Next-token distribution at one masked position.
#[derive(Clone, Debug)]
pub struct Step<T> {
    pub pos: usize,
    pub token: usize,
    pub logp: Vec<T>,
    pub rows: Rows,
}

impl<T: Scalar> Step<T> {
    pub fn token_logp(&self) -> T {
        self.logp[self.token]
    }

    pub fn entropy(&self) -> T {
        self.logp.iter().map(|&l| -(l.exp() * l)).sum()
    }

    /// `out += scale * d log p(token) / d theta`.
    pub fn add_grad_logp(&self, out: &mut [T], scale: T) {
        for (i, x) in self.rows.row(self.token) {
            out[i] = out[i] + scale * T::of(x);
        }
        for (v, &l) in self.logp.iter().enumerate() {
            let w = scale * l.exp();
            for (i, x) in self.rows.row(v) {
                out[i] = out[i] - w * T::of(x);
            }
        }
    }

    /// `out += scale * d H / d theta`, where `dH/dz_v = -p_v (log p_v + H)`.
    pub fn add_grad_entropy(&self, out: &mut [T], scale: T) {
        let h = self.entropy();
        for (v, &l) in self.logp.iter().enumerate() {
            let w = -scale * l.exp() * (l + h);
            for (i, x) in self.rows.row(v) {
                out[i] = out[i] + w * T::of(x);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub layout: Layout,
}

impl Policy {
    pub fn new(cfg: PolicyConfig) -> Result<Policy> {
        cfg.validate()?;
        let layout = Layout::new(cfg.clone());
        Ok(Policy { cfg, layout })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn zeros<T: Scalar>(&self) -> Params<T> {
        Params::zeros(self.num_params())
    }

    pub fn init<T: Scalar>(&self, prior: &Prior) -> Params<T> {
        let l = &self.layout;
        let mut p = self.zeros::<T>();
        let mut set = |i: usize, x: f64| p.theta[i] = T::of(x);
        for a in vocab::Action::ALL {
            set(l.solve_bias + a.token().0 as usize, prior.action_bias);
        }
        for i in 0..NUM_NOISE {
            set(l.extract_bias + Token::noise(i).0 as usize, prior.noise_bias);
        }
        for &c in vocab::Cond::HOUSE {
            let w = match c.phase_class() {
                PhaseClass::Common => prior.common_phase,
                PhaseClass::Family => prior.family_phase,
                _ => prior.novel_phase,
            };
            set(l.phase_action(c, scripted_action(c).index()), w);
        }
        let rs = self.cfg.relational_scale;
        set(l.scalar(Feature::Admissible), prior.admissible / rs);
        set(l.scalar(Feature::Follow), prior.follow / rs);
        set(l.scalar(Feature::SlotOk), prior.slot_ok / rs);
        set(l.scalar(Feature::CopyCond), prior.copy_cond / rs);
        set(l.scalar(Feature::CopyPair), prior.copy_pair / rs);
        set(l.scalar(Feature::CopyProgress), prior.copy_progress / rs);
        set(l.scalar(Feature::CondDup), prior.cond_dup / rs);
        set(l.scalar(Feature::EndPerRule), prior.end_per_rule / rs);
        p
    }

    pub fn solve_context(&self, task_tokens: &[String], skill: Option<&[Token]>) -> Context {
        Context::solve(task_tokens, skill.map(<[Token]>::to_vec), self.cfg.hash_dim)
    }

    pub fn extract_context(&self, task_tokens: &[String], trajectory_tokens: Vec<Token>) -> Context {
        Context::extract(task_tokens, trajectory_tokens, self.cfg.hash_dim)
    }

    fn check<T>(&self, params: &Params<T>) -> Result<()> {
        if params.theta.len() != self.num_params() {
            return error::usage(format!(
                "parameter vector has {} entries, policy expects {}",
                params.theta.len(),
                self.num_params()
            ));
        }
        Ok(())
    }

    fn distribution<T: Scalar>(&self, params: &Params<T>, rows: &Rows) -> Vec<T> {
        let z: Vec<T> = (0..VOCAB_SIZE)
            .map(|v| rows.row(v).map(|(i, x)| params.theta[i] * T::of(x)).sum())
            .collect();
        let lse = log_sum_exp(&z);
        z.into_iter().map(|x| x - lse).collect()
    }

    /// Log-distribution over the vocabulary for the token following `prefix`.
    pub fn next_logp<T: Scalar>(&self, params: &Params<T>, ctx: &Context, prefix: &Sequence) -> Vec<T> {
        let mut enc = features::Encoder::new(&self.layout, ctx);
        for (&t, &m) in prefix.tokens.iter().zip(&prefix.loss_mask) {
            enc.advance(t, m);
        }
        self.distribution(params, &enc.rows())
    }

    /// Samples the token following `prefix`. Returns the token and its
    /// untempered log-probability.
    pub fn sample_next<T: Scalar>(
        &self,
        params: &Params<T>,
        ctx: &Context,
        prefix: &Sequence,
        opts: &SampleOptions,
        rng: &mut Rng,
    ) -> Result<(Token, T)> {
        opts.validate()?;
        self.check(params)?;
        let logp = self.next_logp(params, ctx, prefix);
        let v = if opts.noise > 0.0 && rng.random::<f64>() < opts.noise {
            Token::noise(rng.random_range(0..NUM_NOISE)).0 as usize
        } else {
            pick(&logp, opts, rng)
        };
        Ok((Token(v as u16), logp[v]))
    }

    /// Samples a skill in extract mode until the end token or the length cap.
    pub fn sample_skill<T: Scalar>(
        &self,
        params: &Params<T>,
        ctx: &Context,
        opts: &SampleOptions,
        rng: &mut Rng,
    ) -> Result<Emission<T>> {
        if ctx.mode != Mode::Extract {
            return error::usage("sample_skill needs an extract-mode context");
        }
        opts.validate()?;
        self.check(params)?;
        let mut enc = features::Encoder::new(&self.layout, ctx);
        let mut out = Emission {
            tokens: vec![],
            logp: vec![],
            truncated: false,
        };
        loop {
            let logp = self.distribution(params, &enc.rows());
            let v = if opts.noise > 0.0 && rng.random::<f64>() < opts.noise {
                Token::noise(rng.random_range(0..NUM_NOISE)).0 as usize
            } else {
                pick(&logp, opts, rng)
            };
            let t = Token(v as u16);
            out.tokens.push(t);
            out.logp.push(logp[v]);
            enc.advance(t, true);
            if t == END {
                break;
            }
            if out.tokens.len() >= self.cfg.max_skill_len {
                out.truncated = true;
                break;
            }
        }
        Ok(out)
    }

    /// Distributions at every masked position.
    pub fn steps<T: Scalar>(&self, params: &Params<T>, ctx: &Context, seq: &Sequence) -> Result<Vec<Step<T>>> {
        self.check(params)?;
        if seq.tokens.len() != seq.loss_mask.len() {
            return error::usage("tokens and loss mask differ in length");
        }
        if let Some(t) = seq.tokens.iter().find(|t| t.0 as usize >= VOCAB_SIZE) {
            return error::usage(format!("token {} outside the vocabulary", t.0));
        }
        Ok(features::encode_masked(&self.layout, ctx, seq)
            .into_iter()
            .map(|(pos, rows)| {
                let logp = self.distribution(params, &rows);
                Step {
                    pos,
                    token: seq.tokens[pos].0 as usize,
                    logp,
                    rows,
                }
            })
            .collect())
    }

    /// Log-probability of `step.token` under other parameters, reusing the
    /// step's feature rows.
    pub fn logp_under<T: Scalar>(&self, params: &Params<T>, step: &Step<T>) -> T {
        self.distribution(params, &step.rows)[step.token]
    }

    /// Per-token log-probabilities aligned with `seq.tokens`; unmasked
    /// positions hold zero.
    pub fn log_prob<T: Scalar>(&self, params: &Params<T>, ctx: &Context, seq: &Sequence) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); seq.len()];
        for s in self.steps(params, ctx, seq)? {
            out[s.pos] = s.token_logp();
        }
        Ok(out)
    }

    /// Gradient of the masked sum of log-probabilities.
    pub fn grad_log_prob<T: Scalar>(&self, params: &Params<T>, ctx: &Context, seq: &Sequence) -> Result<Vec<T>> {
        let mut g = vec![T::zero(); self.num_params()];
        for s in self.steps(params, ctx, seq)? {
            s.add_grad_logp(&mut g, T::one());
        }
        Ok(g)
    }

    /// Mean next-token entropy over masked positions (zero when none).
    pub fn entropy<T: Scalar>(&self, params: &Params<T>, ctx: &Context, seq: &Sequence) -> Result<T> {
        let steps = self.steps(params, ctx, seq)?;
        if steps.is_empty() {
            return Ok(T::zero());
        }
        let n = T::of(steps.len() as f64);
        Ok(steps.iter().map(Step::entropy).sum::<T>() / n)
    }

    pub fn save<T: Scalar>(&self, params: &Params<T>, path: &Path) -> Result<()> {
        let file = PolicyFile::new(self, params);
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load<T: Scalar>(path: &Path) -> Result<(Policy, Params<T>)> {
        let file: PolicyFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.restore()
    }
}

/// Inverse-CDF draw from the tempered, nucleus-truncated distribution.
fn pick<T: Scalar>(logp: &[T], opts: &SampleOptions, rng: &mut Rng) -> usize {
    let lp: Vec<f64> = logp.iter().map(|l| l.f64()).collect();
    if opts.temperature == 0.0 {
        return argmax(&lp);
    }
    let scaled: Vec<f64> = lp.iter().map(|l| l / opts.temperature).collect();
    let lse = log_sum_exp(&scaled);
    let mut order: Vec<(usize, f64)> = scaled.iter().map(|&s| (s - lse).exp()).enumerate().collect();
    let u: f64 = rng.random();
    if opts.top_p >= 1.0 {
        return draw(&order, u);
    }
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mass = 0.0;
    let mut keep = 0;
    for (_, p) in &order {
        mass += p;
        keep += 1;
        if mass >= opts.top_p {
            break;
        }
    }
    order.truncate(keep);
    let total: f64 = order.iter().map(|x| x.1).sum();
    draw(&order, u * total)
}

fn draw(items: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(v, p) in items {
        acc += p;
        if u < acc {
            return v;
        }
    }
    // rounding left u just above the cumulative sum
    items.iter().rev().find(|x| x.1 > 0.0).map_or(items[0].0, |x| x.0)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

const POLICY_FORMAT: &str = "evorl-policy/1";

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    vocabulary: Vec<String>,
    config: PolicyConfig,
    version: u64,
    theta: Vec<f64>,
}

impl PolicyFile {
    fn new<T: Scalar>(policy: &Policy, params: &Params<T>) -> PolicyFile {
        PolicyFile {
            format: POLICY_FORMAT.into(),
            vocabulary: vocab::token_names(),
            config: policy.cfg.clone(),
            version: params.version,
            theta: params.theta.iter().map(|x| x.f64()).collect(),
        }
    }

    fn restore<T: Scalar>(self) -> Result<(Policy, Params<T>)> {
        if self.format != POLICY_FORMAT {
            return error::input(format!("unknown policy format {:?}", self.format));
        }
        if self.vocabulary != vocab::token_names() {
            return error::input("checkpoint vocabulary differs from this build");
        }
        let policy = Policy::new(self.config)?;
        if self.theta.len() != policy.num_params() {
            return error::input(format!(
                "checkpoint holds {} parameters, its config implies {}",
                self.theta.len(),
                policy.num_params()
            ));
        }
        let params = Params {
            theta: self.theta.into_iter().map(T::of).collect(),
            version: self.version,
        };
        Ok((policy, params))
    }
}

/// Serializable policy state for embedding in larger checkpoints.
pub fn to_value<T: Scalar>(policy: &Policy, params: &Params<T>) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(PolicyFile::new(policy, params))?)
}

pub fn from_value<T: Scalar>(v: serde_json::Value) -> Result<(Policy, Params<T>)> {
    serde_json::from_value::<PolicyFile>(v)?.restore()
}
