//! Skills: short rule lists written by the policy in extract mode.
//!
//! Grammar: `(cond action)+ <end>`, at most `max_len` tokens including the
//! end token.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::policy::context::lenient_rules;
use crate::vocab::{Action, Cond, Kind, Token};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub tokens: Vec<Token>,
    pub rules: Vec<(Cond, Action)>,
    pub valid: bool,
    pub source_task_id: u64,
    pub reward: Option<f64>,
}

impl Skill {
    /// Parses `tokens`. Valid skills carry their strict parse; invalid ones
    /// keep whatever rules a lenient reading recovers.
    pub fn new(tokens: Vec<Token>, source_task_id: u64, max_len: usize) -> Skill {
        let (valid, rules) = match parse_strict(&tokens, max_len) {
            Some(r) => (true, r),
            None => (false, lenient_rules(&tokens)),
        };
        Skill {
            tokens,
            rules,
            valid,
            source_task_id,
            reward: None,
        }
    }

    /// Rebuilds a skill from explicit rules.
    pub fn from_rules(rules: &[(Cond, Action)], source_task_id: u64, max_len: usize) -> Skill {
        let mut tokens: Vec<Token> = rules.iter().flat_map(|(c, a)| [c.token(), a.token()]).collect();
        tokens.push(crate::vocab::END);
        Skill::new(tokens, source_task_id, max_len)
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rules: Vec<String> = self.rules.iter().map(|(c, a)| format!("{} -> {}", c.name(), a.name())).collect();
        write!(f, "{}", rules.join("; "))
    }
}

pub fn parse_strict(tokens: &[Token], max_len: usize) -> Option<Vec<(Cond, Action)>> {
    if tokens.len() < 3 || tokens.len() > max_len || tokens.len().is_multiple_of(2) {
        return None;
    }
    let (end, body) = tokens.split_last()?;
    if end.kind() != Kind::End {
        return None;
    }
    body.chunks(2)
        .map(|p| match (p[0].kind(), p[1].kind()) {
            (Kind::Cond(c), Kind::Action(a)) => Some((c, a)),
            _ => None,
        })
        .collect()
}

/// Accepts exactly the strings of the skill grammar.
pub fn rule_filter(tokens: &[Token], max_len: usize) -> bool {
    parse_strict(tokens, max_len).is_some()
}
