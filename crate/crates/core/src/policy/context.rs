use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::seed::fnv1a;
use crate::vocab::{Action, Cond, Kind, Token, FAIL, OBS, SUCCESS};

/// Hash seed for the context bag-of-words encoding.
pub const CONTEXT_HASH_SEED: u64 = 0xC0_47E7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Extract,
    Solve,
}

/// A token stream with its loss mask. `loss_mask[i]` is true exactly when
/// token `i` was emitted by the policy.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sequence {
    pub tokens: Vec<Token>,
    pub loss_mask: Vec<bool>,
}

impl Sequence {
    pub fn new() -> Sequence {
        Sequence::default()
    }

    /// All tokens emitted by the policy.
    pub fn emitted(tokens: Vec<Token>) -> Sequence {
        let loss_mask = vec![true; tokens.len()];
        Sequence { tokens, loss_mask }
    }

    pub fn push(&mut self, t: Token, emitted: bool) {
        self.tokens.push(t);
        self.loss_mask.push(emitted);
    }

    pub fn extend_observed(&mut self, ts: &[Token]) {
        for &t in ts {
            self.push(t, false);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.loss_mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i)
    }

    /// Same tokens, with the mask restricted to `keep`.
    pub fn with_mask_only(&self, keep: &[usize]) -> Sequence {
        let mut loss_mask = vec![false; self.len()];
        for &i in keep {
            debug_assert!(self.loss_mask[i]);
            loss_mask[i] = true;
        }
        Sequence {
            tokens: self.tokens.clone(),
            loss_mask,
        }
    }
}

/// One decision read back out of a solve-mode token stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecisionStep {
    pub phase: Cond,
    pub action: Token,
}

/// Splits a trajectory stream into `(phase, emitted token)` decisions. Each
/// block is `<obs> phase admissible... emitted`; the emitted token is always
/// the last token of its block.
pub fn decisions(tokens: &[Token]) -> Vec<DecisionStep> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] != OBS {
            i += 1;
            continue;
        }
        let Some(phase) = tokens.get(i + 1).and_then(|t| t.cond()) else {
            i += 1;
            continue;
        };
        let mut j = i + 2;
        while j < tokens.len() && tokens[j] != OBS && tokens[j] != SUCCESS && tokens[j] != FAIL {
            j += 1;
        }
        if j > i + 2 {
            out.push(DecisionStep {
                phase,
                action: tokens[j - 1],
            });
        }
        i = j;
    }
    out
}

/// What the extractor can read off its source interaction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceSummary {
    pub success: bool,
    pub conds: BTreeSet<Cond>,
    pub pairs: BTreeSet<(Cond, Token)>,
    pub progress: BTreeSet<(Cond, Token)>,
    pub progress_conds: BTreeSet<Cond>,
}

impl SourceSummary {
    pub fn from_tokens(tokens: &[Token]) -> SourceSummary {
        let success = tokens.last() == Some(&SUCCESS);
        let steps = decisions(tokens);
        let mut s = SourceSummary {
            success,
            ..Default::default()
        };
        for (i, d) in steps.iter().enumerate() {
            s.conds.insert(d.phase);
            s.pairs.insert((d.phase, d.action));
            let advanced = match steps.get(i + 1) {
                Some(next) => d.phase.advances_to(next.phase),
                None => success,
            };
            if advanced {
                s.progress.insert((d.phase, d.action));
                s.progress_conds.insert(d.phase);
            }
        }
        s
    }
}

/// Lenient rule reading: every cond token immediately followed by an action
/// token forms a rule; anything else is skipped.
pub fn lenient_rules(tokens: &[Token]) -> Vec<(Cond, Action)> {
    tokens
        .windows(2)
        .filter_map(|w| match (w[0].kind(), w[1].kind()) {
            (Kind::Cond(c), Kind::Action(a)) => Some((c, a)),
            _ => None,
        })
        .collect()
}

/// Conditioning input for one rollout or one extraction.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub mode: Mode,
    pub task_tokens: Vec<String>,
    pub skill_tokens: Option<Vec<Token>>,
    pub trajectory_tokens: Vec<Token>,
    /// Sparse L2-normalised hashed bag of task tokens.
    pub feature_vector: Vec<(usize, f64)>,
    pub(crate) rules: Vec<(Cond, Action)>,
    pub(crate) summary: SourceSummary,
}

impl Context {
    pub fn solve(task_tokens: &[String], skill_tokens: Option<Vec<Token>>, hash_dim: usize) -> Context {
        let rules = skill_tokens.as_deref().map(lenient_rules).unwrap_or_default();
        Context {
            mode: Mode::Solve,
            task_tokens: task_tokens.to_vec(),
            skill_tokens,
            trajectory_tokens: vec![],
            feature_vector: hashed_bag(task_tokens, hash_dim),
            rules,
            summary: SourceSummary::default(),
        }
    }

    /// `trajectory_tokens` is the source stream followed by its reward token.
    pub fn extract(task_tokens: &[String], trajectory_tokens: Vec<Token>, hash_dim: usize) -> Context {
        let summary = SourceSummary::from_tokens(&trajectory_tokens);
        Context {
            mode: Mode::Extract,
            task_tokens: task_tokens.to_vec(),
            skill_tokens: None,
            feature_vector: hashed_bag(task_tokens, hash_dim),
            trajectory_tokens,
            rules: vec![],
            summary,
        }
    }

    pub fn summary(&self) -> &SourceSummary {
        &self.summary
    }

    pub fn rules(&self) -> &[(Cond, Action)] {
        &self.rules
    }
}

pub fn hashed_bag(words: &[String], dim: usize) -> Vec<(usize, f64)> {
    let mut v = vec![0.0; dim];
    for w in words {
        v[(fnv1a(CONTEXT_HASH_SEED, w.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter()
        .enumerate()
        .filter(|(_, x)| *x != 0.0)
        .map(|(i, x)| (i, x / norm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(phase: Cond, adm: &[Action], act: Token) -> Vec<Token> {
        let mut v = vec![OBS, phase.token()];
        v.extend(adm.iter().map(|a| a.token()));
        v.push(act);
        v
    }

    #[test]
    fn decisions_and_progress() {
        let mut t = block(Cond::Search, &[Action::Search, Action::Look], Action::Look.token());
        t.extend(block(Cond::Search, &[Action::Search], Action::Search.token()));
        t.extend(block(Cond::Take, &[Action::Take], Action::Take.token()));
        t.extend(block(Cond::Carry, &[Action::GotoTarget], Action::GotoTarget.token()));
        t.extend(block(Cond::Place, &[Action::Put], Action::Put.token()));
        t.push(SUCCESS);
        let d = decisions(&t);
        assert_eq!(d.len(), 5);
        assert_eq!(d[0].action, Action::Look.token());
        let s = SourceSummary::from_tokens(&t);
        assert!(s.success);
        assert!(s.pairs.contains(&(Cond::Search, Action::Look.token())));
        assert!(!s.progress.contains(&(Cond::Search, Action::Look.token())));
        assert!(s.progress.contains(&(Cond::Search, Action::Search.token())));
        assert!(s.progress.contains(&(Cond::Place, Action::Put.token())));
        assert_eq!(s.progress.len(), 4);
    }

    #[test]
    fn lenient_skips_noise() {
        let toks = vec![
            Cond::Take.token(),
            Token::noise(2),
            Cond::Carry.token(),
            Action::GotoTarget.token(),
            Action::Put.token(),
        ];
        assert_eq!(lenient_rules(&toks), vec![(Cond::Carry, Action::GotoTarget)]);
    }

    #[test]
    fn hashed_bag_is_unit() {
        let words: Vec<String> = ["put", "a", "mug", "in", "the", "desk"].iter().map(|s| s.to_string()).collect();
        let v = hashed_bag(&words, 32);
        let n: f64 = v.iter().map(|(_, x)| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}
