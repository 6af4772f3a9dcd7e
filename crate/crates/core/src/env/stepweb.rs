//! StepWeb: a step-supervised navigation task. Each task carries a reference
//! action sequence over a sequence of page kinds; a wrong action ends the
//! episode at once, a correct one earns 1 and advances to the next page.

use rand::Rng as _;

use super::task::{Goal, Split, Task};
use super::{Environment, Location, Observation, Transition};
use crate::error::{self, Result};
use crate::vocab::{Action, Cond, Token};

pub const SITES: [&str; 4] = ["shop", "travel", "mail", "forum"];
pub const INTENTS: [&[&str]; 4] = [
    &["buy", "cart", "order"],
    &["book", "flight", "hotel"],
    &["send", "inbox", "reply"],
    &["post", "thread", "topic"],
];

pub const MIN_LEN: usize = 4;
pub const MAX_LEN: usize = 10;

/// Correct action for each (site, page kind). Rows are sites, columns follow
/// `Cond::WEB` order. Not additively separable over site and page.
const TABLE: [[Action; 6]; 4] = [
    [Action::OpenMenu, Action::TypeText, Action::ClickLink, Action::SelectOption, Action::ClickButton, Action::Submit],
    [Action::ClickLink, Action::SelectOption, Action::Scroll, Action::TypeText, Action::Submit, Action::ClickButton],
    [Action::TypeText, Action::ClickButton, Action::OpenMenu, Action::Submit, Action::Scroll, Action::GoBack],
    [Action::Scroll, Action::ClickLink, Action::TypeText, Action::ClickButton, Action::GoBack, Action::Submit],
];

pub fn reference_action(site: usize, page: Cond) -> Action {
    let col = Cond::WEB.iter().position(|&c| c == page).expect("web page kind");
    TABLE[site][col]
}

pub fn split_of_site(site: usize) -> Split {
    if site == SITES.len() - 1 {
        Split::Unseen
    } else {
        Split::Seen
    }
}

pub fn generate_goal(seed: u64) -> Goal {
    let mut rng = crate::seed::rng(seed, &[0x3eb]);
    let site = rng.random_range(0..SITES.len());
    let len = rng.random_range(MIN_LEN..=MAX_LEN);
    let mut pages = vec![Cond::WebHome];
    while pages.len() < len {
        let last = *pages.last().unwrap();
        let next = Cond::WEB[rng.random_range(0..Cond::WEB.len())];
        if next != last {
            pages.push(next);
        }
    }
    let reference = pages.iter().map(|&p| reference_action(site, p)).collect();
    Goal::Web {
        site,
        pages,
        reference,
    }
}

#[derive(Clone, Debug, Default)]
pub struct StepWeb {
    pages: Vec<Cond>,
    reference: Vec<Action>,
    cursor: usize,
    done: bool,
    started: bool,
}

impl StepWeb {
    pub fn new() -> StepWeb {
        StepWeb::default()
    }

    fn observe(&self) -> Observation {
        let page = self.pages[self.cursor];
        Observation {
            location: Location::Page(page),
            visible_objects: vec![],
            admissible_actions: Action::WEB.to_vec(),
            step_index: self.cursor,
            phase: page,
        }
    }
}

impl Environment for StepWeb {
    fn reset(&mut self, task: &Task) -> Result<Observation> {
        let Goal::Web {
            pages, reference, ..
        } = &task.goal
        else {
            return error::usage("StepWeb cannot run a house task");
        };
        *self = StepWeb {
            pages: pages.clone(),
            reference: reference.clone(),
            cursor: 0,
            done: false,
            started: true,
        };
        Ok(self.observe())
    }

    fn step(&mut self, action: Token) -> Result<(Transition, f64)> {
        if !self.started {
            return error::usage("step before reset");
        }
        if self.done {
            return error::usage("step on a terminated episode");
        }
        if action.action() != Some(self.reference[self.cursor]) {
            self.done = true;
            return Ok((Transition::Terminal { success: false }, 0.0));
        }
        self.cursor += 1;
        if self.cursor == self.reference.len() {
            self.done = true;
            return Ok((Transition::Terminal { success: true }, 1.0));
        }
        Ok((Transition::Continue(self.observe()), 1.0))
    }

    fn step_limit(&self) -> usize {
        self.reference.len()
    }
}
