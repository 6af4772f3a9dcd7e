//! Simulated environments and task generation.

pub mod gridhouse;
pub mod stepweb;
pub mod task;
pub mod words;

use std::fmt;

use crate::error::Result;
use crate::vocab::{Action, Cond, Token, OBS};

pub use gridhouse::{GridHouse, HouseLoc};
pub use stepweb::StepWeb;
pub use task::{
    build_task_pool, build_task_pool_from, generate_task, EnvKind, Family, Goal, Operation,
    PoolConfig, Split, Task, TaskPool,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Location {
    House(HouseLoc),
    Page(Cond),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::House(l) => write!(f, "{} ({})", l.name(), l.room()),
            Location::Page(c) => f.write_str(c.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectView {
    pub instance: usize,
    pub object: String,
    pub held: bool,
    pub heated: bool,
    pub cooled: bool,
    pub cleaned: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub location: Location,
    pub visible_objects: Vec<ObjectView>,
    pub admissible_actions: Vec<Action>,
    pub step_index: usize,
    /// Goal-aware state predicate summarising where the agent stands.
    pub phase: Cond,
}

impl Observation {
    /// Token block inserted into the trajectory stream ahead of each
    /// decision: `<obs> phase admissible...`.
    pub fn tokens(&self) -> Vec<Token> {
        let mut t = Vec::with_capacity(2 + self.admissible_actions.len());
        t.push(OBS);
        t.push(self.phase.token());
        t.extend(self.admissible_actions.iter().map(|a| a.token()));
        t
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transition {
    Continue(Observation),
    Terminal { success: bool },
}

/// Single-owner episode state machine.
pub trait Environment: Send {
    fn reset(&mut self, task: &Task) -> Result<Observation>;
    fn step(&mut self, action: Token) -> Result<(Transition, f64)>;
    fn step_limit(&self) -> usize;
}

pub fn make_env(kind: EnvKind, step_limit: usize) -> Box<dyn Environment> {
    match kind {
        EnvKind::GridHouse => Box::new(GridHouse::new(step_limit)),
        EnvKind::StepWeb => Box::new(StepWeb::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_task(Family::Pick, 7).unwrap(), generate_task(Family::Pick, 7).unwrap());
        assert_eq!(
            generate_task(Family::StepTask, 7).unwrap(),
            generate_task(Family::StepTask, 7).unwrap()
        );
    }

    #[test]
    fn split_follows_family() {
        for seed in 0..10 {
            assert_eq!(generate_task(Family::Look, seed).unwrap().split, Split::Unseen);
            assert_eq!(generate_task(Family::Pick2, seed).unwrap().split, Split::Unseen);
            assert_eq!(generate_task(Family::Clean, seed).unwrap().split, Split::Seen);
        }
    }

    #[test]
    fn descriptions_use_task_vocabulary() {
        for f in Family::HOUSE.iter().chain([&Family::StepTask]) {
            for seed in 0..10 {
                let t = generate_task(*f, seed).unwrap();
                assert!(!t.description.is_empty());
                assert!(t.description.iter().all(|w| words::is_word(w)), "{:?}", t.description);
            }
        }
    }
}
