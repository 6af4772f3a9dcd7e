//! Sparse action-dependent features of the log-linear policy.
//!
//! For each decoding position the encoder produces one sparse row per
//! vocabulary token; the logit of token `v` is `<theta, row_v>`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::context::{Context, Mode, Sequence};
use crate::error::{self, Result};
use crate::vocab::{Cond, Kind, Token, NUM_ACTIONS, NUM_CONDS, OBS, VOCAB_SIZE};

/// Relational features with one weight each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum Scalar {
    /// Solve: an injected rule for the current phase names this action.
    Follow,
    Admissible,
    /// Solve: repeats the previous action after it failed to change phase.
    RepeatStall,
    /// Extract: token kind fits the grammar slot.
    SlotOk,
    CopyCond,
    CopyProgressCond,
    CopyCondSuccess,
    CondDup,
    /// Extract: end token once every progressing phase has a rule.
    EndCovered,
    EndPerRule,
    CopyPair,
    CopyProgress,
    CopyProgressSuccess,
}

pub const NUM_SCALARS: usize = 13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Buckets for the hashed task-description features.
    pub hash_dim: usize,
    /// Position buckets per mode.
    pub pos_buckets: usize,
    /// Decisions (solve) or emitted tokens (extract) per position bucket.
    pub bucket_width: usize,
    /// Longest skill, end token included.
    pub max_skill_len: usize,
    /// Magnitude of the relational scalar features. Larger values let
    /// their weights move the logits faster under a per-parameter step
    /// size.
    pub relational_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hash_dim: 32,
            pos_buckets: 4,
            bucket_width: 4,
            max_skill_len: 16,
            relational_scale: 8.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4096).contains(&self.hash_dim) {
            return error::config(format!("policy.hash_dim must be in 1..=4096, got {}", self.hash_dim));
        }
        if !(1..=64).contains(&self.pos_buckets) {
            return error::config(format!("policy.pos_buckets must be in 1..=64, got {}", self.pos_buckets));
        }
        if self.bucket_width == 0 {
            return error::config("policy.bucket_width must be positive");
        }
        if !(3..=64).contains(&self.max_skill_len) {
            return error::config(format!("policy.max_skill_len must be in 3..=64, got {}", self.max_skill_len));
        }
        if !(self.relational_scale > 0.0 && self.relational_scale.is_finite()) {
            return error::config(format!("policy.relational_scale must be positive, got {}", self.relational_scale));
        }
        Ok(())
    }
}

/// Offsets of each parameter block in the flat theta vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub cfg: PolicyConfig,
    pub solve_bias: usize,
    pub extract_bias: usize,
    pub phase_action: usize,
    pub task_action: usize,
    pub task_cond: usize,
    pub prev_action: usize,
    pub pos_token: usize,
    pub scalars: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: PolicyConfig) -> Layout {
        let (v, a, c, h, p) = (VOCAB_SIZE, NUM_ACTIONS, NUM_CONDS, cfg.hash_dim, cfg.pos_buckets);
        let solve_bias = 0;
        let extract_bias = solve_bias + v;
        let phase_action = extract_bias + v;
        let task_action = phase_action + c * a;
        let task_cond = task_action + h * a;
        let prev_action = task_cond + h * c;
        let pos_token = prev_action + (a + 1) * a;
        let scalars = pos_token + 2 * p * v;
        let total = scalars + NUM_SCALARS;
        Layout {
            cfg,
            solve_bias,
            extract_bias,
            phase_action,
            task_action,
            task_cond,
            prev_action,
            pos_token,
            scalars,
            total,
        }
    }

    pub fn scalar(&self, s: Scalar) -> usize {
        self.scalars + s as usize
    }

    pub fn phase_action(&self, c: Cond, a: usize) -> usize {
        self.phase_action + c.index() * NUM_ACTIONS + a
    }

    fn bucket(&self, n: usize) -> usize {
        (n / self.cfg.bucket_width).min(self.cfg.pos_buckets - 1)
    }

    fn pos_token(&self, mode: Mode, n: usize, v: usize) -> usize {
        let m = match mode {
            Mode::Solve => 0,
            Mode::Extract => 1,
        };
        self.pos_token + (m * self.cfg.pos_buckets + self.bucket(n)) * VOCAB_SIZE + v
    }
}

/// Sparse feature rows for all vocabulary tokens at one position.
#[derive(Clone, Debug, Default)]
pub struct Rows {
    off: Vec<u32>,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl Rows {
    pub fn row(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.off[v] as usize, self.off[v + 1] as usize);
        self.idx[a..b].iter().zip(&self.val[a..b]).map(|(&i, &x)| (i as usize, x))
    }

    pub fn len(&self) -> usize {
        self.off.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct RowBuilder {
    rows: Rows,
}

impl RowBuilder {
    fn new() -> RowBuilder {
        let mut rows = Rows::default();
        rows.off.push(0);
        RowBuilder { rows }
    }

    #[inline]
    fn push(&mut self, i: usize, x: f64) {
        self.rows.idx.push(i as u32);
        self.rows.val.push(x);
    }

    fn finish_row(&mut self) {
        self.rows.off.push(self.rows.idx.len() as u32);
    }
}

/// Prefix state of a solve-mode stream.
#[derive(Clone, Debug, Default)]
struct SolveState {
    decisions: usize,
    phase: Option<Cond>,
    admissible: Vec<usize>,
    prev_action: Option<usize>,
    prev_phase: Option<Cond>,
    last_emit: Option<Token>,
    stalled: bool,
    expect_phase: bool,
}

impl SolveState {
    fn advance(&mut self, t: Token, emitted: bool) {
        if emitted {
            self.last_emit = Some(t);
            return;
        }
        if t == OBS {
            if self.phase.is_some() {
                self.decisions += 1;
                self.prev_phase = self.phase;
                self.prev_action = self.last_emit.and_then(|e| e.action()).map(|a| a.index());
            }
            self.last_emit = None;
            self.admissible.clear();
            self.expect_phase = true;
            return;
        }
        if self.expect_phase {
            self.expect_phase = false;
            if let Some(c) = t.cond() {
                self.phase = Some(c);
                self.stalled = self.prev_phase == Some(c);
                return;
            }
        }
        if let Some(a) = t.action() {
            self.admissible.push(a.index());
        }
    }
}

/// Prefix state of an extract-mode (skill) stream.
#[derive(Clone, Debug, Default)]
struct ExtractState {
    emitted: usize,
    prev: Option<Token>,
    conds: BTreeSet<Cond>,
    rules: usize,
}

impl ExtractState {
    fn advance(&mut self, t: Token) {
        let odd = self.emitted % 2 == 1;
        if let Some(c) = t.cond() {
            if !odd {
                self.conds.insert(c);
            }
        }
        if odd && t.action().is_some() && self.prev.and_then(|p| p.cond()).is_some() {
            self.rules += 1;
        }
        self.prev = Some(t);
        self.emitted += 1;
    }
}

enum State {
    Solve(SolveState),
    Extract(ExtractState),
}

/// Walks a sequence and yields the feature rows at each masked position.
pub struct Encoder<'a> {
    layout: &'a Layout,
    ctx: &'a Context,
    state: State,
}

impl<'a> Encoder<'a> {
    pub fn new(layout: &'a Layout, ctx: &'a Context) -> Encoder<'a> {
        let state = match ctx.mode {
            Mode::Solve => State::Solve(SolveState::default()),
            Mode::Extract => State::Extract(ExtractState::default()),
        };
        Encoder { layout, ctx, state }
    }

    pub fn advance(&mut self, t: Token, emitted: bool) {
        match &mut self.state {
            State::Solve(s) => s.advance(t, emitted),
            State::Extract(s) => s.advance(t),
        }
    }

    /// Rows for the next position given everything consumed so far.
    pub fn rows(&self) -> Rows {
        match &self.state {
            State::Solve(s) => self.solve_rows(s),
            State::Extract(s) => self.extract_rows(s),
        }
    }

    fn solve_rows(&self, s: &SolveState) -> Rows {
        let l = self.layout;
        let mut b = RowBuilder::new();
        let prev = s.prev_action.unwrap_or(NUM_ACTIONS);
        for v in 0..VOCAB_SIZE {
            b.push(l.solve_bias + v, 1.0);
            b.push(l.pos_token(Mode::Solve, s.decisions, v), 1.0);
            if let Some(a) = Token(v as u16).action() {
                let ai = a.index();
                if let Some(c) = s.phase {
                    b.push(l.phase_action(c, ai), 1.0);
                    if self.ctx.rules.iter().any(|&(rc, ra)| rc == c && ra == a) {
                        b.push(l.scalar(Scalar::Follow), l.cfg.relational_scale);
                    }
                }
                for &(h, x) in &self.ctx.feature_vector {
                    b.push(l.task_action + h * NUM_ACTIONS + ai, x);
                }
                b.push(l.prev_action + prev * NUM_ACTIONS + ai, 1.0);
                if s.admissible.contains(&ai) {
                    b.push(l.scalar(Scalar::Admissible), l.cfg.relational_scale);
                }
                if s.stalled && s.prev_action == Some(ai) {
                    b.push(l.scalar(Scalar::RepeatStall), l.cfg.relational_scale);
                }
            }
            b.finish_row();
        }
        b.rows
    }

    fn extract_rows(&self, s: &ExtractState) -> Rows {
        let l = self.layout;
        let sum = &self.ctx.summary;
        let cond_slot = s.emitted.is_multiple_of(2);
        let mut b = RowBuilder::new();
        for v in 0..VOCAB_SIZE {
            b.push(l.extract_bias + v, 1.0);
            b.push(l.pos_token(Mode::Extract, s.emitted, v), 1.0);
            let tok = Token(v as u16);
            match tok.kind() {
                Kind::Cond(c) if cond_slot => {
                    b.push(l.scalar(Scalar::SlotOk), l.cfg.relational_scale);
                    for &(h, x) in &self.ctx.feature_vector {
                        b.push(l.task_cond + h * NUM_CONDS + c.index(), x);
                    }
                    if sum.conds.contains(&c) {
                        b.push(l.scalar(Scalar::CopyCond), l.cfg.relational_scale);
                        if sum.success {
                            b.push(l.scalar(Scalar::CopyCondSuccess), l.cfg.relational_scale);
                        }
                    }
                    if sum.progress_conds.contains(&c) {
                        b.push(l.scalar(Scalar::CopyProgressCond), l.cfg.relational_scale);
                    }
                    if s.conds.contains(&c) {
                        b.push(l.scalar(Scalar::CondDup), l.cfg.relational_scale);
                    }
                }
                Kind::End if cond_slot && s.rules > 0 => {
                    b.push(l.scalar(Scalar::SlotOk), l.cfg.relational_scale);
                    b.push(l.scalar(Scalar::EndPerRule), s.rules as f64 / 4.0 * l.cfg.relational_scale);
                    if sum.progress_conds.is_subset(&s.conds) {
                        b.push(l.scalar(Scalar::EndCovered), l.cfg.relational_scale);
                    }
                }
                Kind::Action(a) if !cond_slot => {
                    let ai = a.index();
                    b.push(l.scalar(Scalar::SlotOk), l.cfg.relational_scale);
                    for &(h, x) in &self.ctx.feature_vector {
                        b.push(l.task_action + h * NUM_ACTIONS + ai, x);
                    }
                    if let Some(c) = s.prev.and_then(|p| p.cond()) {
                        b.push(l.phase_action(c, ai), 1.0);
                        if sum.pairs.contains(&(c, tok)) {
                            b.push(l.scalar(Scalar::CopyPair), l.cfg.relational_scale);
                        }
                        if sum.progress.contains(&(c, tok)) {
                            b.push(l.scalar(Scalar::CopyProgress), l.cfg.relational_scale);
                            if sum.success {
                                b.push(l.scalar(Scalar::CopyProgressSuccess), l.cfg.relational_scale);
                            }
                        }
                    }
                }
                _ => {}
            }
            b.finish_row();
        }
        b.rows
    }
}

/// Rows at every masked position of `seq`, in order.
pub fn encode_masked(layout: &Layout, ctx: &Context, seq: &Sequence) -> Vec<(usize, Rows)> {
    let mut enc = Encoder::new(layout, ctx);
    let mut out = Vec::new();
    for (i, (&t, &m)) in seq.tokens.iter().zip(&seq.loss_mask).enumerate() {
        if m {
            out.push((i, enc.rows()));
        }
        enc.advance(t, m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{Action, END};

    #[test]
    fn layout_blocks_are_contiguous() {
        let l = Layout::new(PolicyConfig::default());
        assert_eq!(l.extract_bias, VOCAB_SIZE);
        assert_eq!(l.total, l.scalars + NUM_SCALARS);
        assert!(l.total < 5000);
    }

    #[test]
    fn follow_fires_only_for_matching_phase() {
        let l = Layout::new(PolicyConfig::default());
        let skill = vec![Cond::Take.token(), Action::Take.token(), END];
        let ctx = Context::solve(&["put".into()], Some(skill), 32);
        let mut enc = Encoder::new(&l, &ctx);
        for t in [OBS, Cond::Take.token(), Action::Take.token(), Action::Search.token()] {
            enc.advance(t, false);
        }
        let rows = enc.rows();
        let follow = l.scalar(Scalar::Follow);
        let has = |v: Token| rows.row(v.0 as usize).any(|(i, _)| i == follow);
        assert!(has(Action::Take.token()));
        assert!(!has(Action::Search.token()));
    }

    #[test]
    fn extract_slots_alternate() {
        let l = Layout::new(PolicyConfig::default());
        let ctx = Context::extract(&["put".into()], vec![], 32);
        let mut enc = Encoder::new(&l, &ctx);
        let ok = l.scalar(Scalar::SlotOk);
        let has = |r: &Rows, v: Token| r.row(v.0 as usize).any(|(i, _)| i == ok);
        let r = enc.rows();
        assert!(has(&r, Cond::Take.token()));
        assert!(!has(&r, Action::Take.token()));
        assert!(!has(&r, END));
        enc.advance(Cond::Take.token(), true);
        let r = enc.rows();
        assert!(has(&r, Action::Take.token()));
        enc.advance(Action::Take.token(), true);
        assert!(has(&enc.rows(), END));
    }
}
