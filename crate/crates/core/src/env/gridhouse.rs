//! GridHouse: a small household text world with a trajectory-level reward.
//!
//! Four rooms hold six receptacles and four appliances. The agent moves with
//! `goto_*` and `search` (which walks the receptacles in a fixed order),
//! picks up and puts down target-object instances, and uses appliances.
//! Inadmissible emissions burn a step and change nothing.

use rand::Rng as _;

use super::task::{Family, Goal, Operation, Task};
use super::{Environment, Location, ObjectView, Observation, Transition};
use crate::error::{self, Result};
use crate::vocab::{Action, Cond, Token};

pub const OBJECTS: [&str; 6] = ["apple", "mug", "plate", "egg", "vase", "book"];
pub const RECEPTACLES: [&str; 6] = ["countertop", "cabinet", "shelf", "sidetable", "desk", "drawer"];
pub const ROOMS: [&str; 4] = ["kitchen", "livingroom", "bedroom", "bathroom"];

pub const DEFAULT_STEP_LIMIT: usize = 30;
pub const SUCCESS_REWARD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HouseLoc {
    Start,
    Receptacle(usize),
    Microwave,
    Fridge,
    Sink,
    Lamp,
}

impl HouseLoc {
    pub fn room(self) -> &'static str {
        match self {
            HouseLoc::Receptacle(0 | 1) | HouseLoc::Microwave | HouseLoc::Fridge => ROOMS[0],
            HouseLoc::Start | HouseLoc::Receptacle(2 | 3) => ROOMS[1],
            HouseLoc::Receptacle(_) | HouseLoc::Lamp => ROOMS[2],
            HouseLoc::Sink => ROOMS[3],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HouseLoc::Start => "hallway",
            HouseLoc::Receptacle(r) => RECEPTACLES[r],
            HouseLoc::Microwave => "microwave",
            HouseLoc::Fridge => "fridge",
            HouseLoc::Sink => "sink",
            HouseLoc::Lamp => "desklamp",
        }
    }
}

fn appliance(op: Operation) -> HouseLoc {
    match op {
        Operation::Heat => HouseLoc::Microwave,
        Operation::Cool => HouseLoc::Fridge,
        Operation::Clean => HouseLoc::Sink,
        Operation::Light => HouseLoc::Lamp,
    }
}

pub fn generate_goal(family: Family, seed: u64) -> Result<Goal> {
    let operation = match family {
        Family::Pick | Family::Pick2 => None,
        Family::Heat => Some(Operation::Heat),
        Family::Cool => Some(Operation::Cool),
        Family::Clean => Some(Operation::Clean),
        Family::Look => Some(Operation::Light),
        Family::StepTask => return error::config("StepTask is not a GridHouse family"),
    };
    let count = if family == Family::Pick2 { 2 } else { 1 };
    // Rejection loop: redraw until the scripted oracle solves the layout.
    for attempt in 0..64u64 {
        let mut rng = crate::seed::rng(seed, &[0x6011, attempt]);
        let object = rng.random_range(0..OBJECTS.len());
        let receptacle = (family != Family::Look).then(|| rng.random_range(0..RECEPTACLES.len()));
        let mut placements = Vec::new();
        while placements.len() < count as usize {
            let r = rng.random_range(0..RECEPTACLES.len());
            if Some(r) != receptacle && !placements.contains(&r) {
                placements.push(r);
            }
        }
        let goal = Goal::House {
            object,
            receptacle,
            operation,
            count,
            placements,
        };
        if oracle_solves(family, &goal, DEFAULT_STEP_LIMIT) {
            return Ok(goal);
        }
    }
    error::config(format!("no solvable {} layout for seed {seed}", family.name()))
}

/// The action a scripted expert takes in each phase.
pub fn scripted_action(phase: Cond) -> Action {
    match phase {
        Cond::Search | Cond::More => Action::Search,
        Cond::Take => Action::Take,
        Cond::NeedHeat => Action::GotoMicrowave,
        Cond::AtHeat => Action::Heat,
        Cond::NeedCool => Action::GotoFridge,
        Cond::AtCool => Action::Cool,
        Cond::NeedClean => Action::GotoSink,
        Cond::AtClean => Action::Clean,
        Cond::NeedLight => Action::GotoLamp,
        Cond::AtLight => Action::ToggleLamp,
        Cond::Carry => Action::GotoTarget,
        Cond::Place => Action::Put,
        _ => Action::Look,
    }
}

/// The phase sequence an expert walks through for `family`, as rules.
pub fn canonical_rules(family: Family) -> Vec<(Cond, Action)> {
    let phases: &[Cond] = match family {
        Family::Pick => &[Cond::Search, Cond::Take, Cond::Carry, Cond::Place],
        Family::Pick2 => &[Cond::Search, Cond::Take, Cond::Carry, Cond::Place, Cond::More],
        Family::Heat => &[Cond::Search, Cond::Take, Cond::NeedHeat, Cond::AtHeat, Cond::Carry, Cond::Place],
        Family::Cool => &[Cond::Search, Cond::Take, Cond::NeedCool, Cond::AtCool, Cond::Carry, Cond::Place],
        Family::Clean => &[Cond::Search, Cond::Take, Cond::NeedClean, Cond::AtClean, Cond::Carry, Cond::Place],
        Family::Look => &[Cond::Search, Cond::Take, Cond::NeedLight, Cond::AtLight],
        Family::StepTask => &[],
    };
    phases.iter().map(|&c| (c, scripted_action(c))).collect()
}

fn oracle_solves(family: Family, goal: &Goal, limit: usize) -> bool {
    let task = Task {
        id: 0,
        family,
        description: vec![],
        goal: goal.clone(),
        split: super::task::Split::Seen,
        world_seed: 0,
    };
    let mut env = GridHouse::new(limit);
    let Ok(mut obs) = env.reset(&task) else {
        return false;
    };
    loop {
        match env.step(scripted_action(obs.phase).token()) {
            Ok((Transition::Continue(o), _)) => obs = o,
            Ok((Transition::Terminal { success }, _)) => return success,
            Err(_) => return false,
        }
    }
}

#[derive(Clone, Debug)]
struct Instance {
    /// `None` while held.
    at: Option<usize>,
    heated: bool,
    cooled: bool,
    cleaned: bool,
}

#[derive(Clone, Debug)]
struct State {
    object: usize,
    target: Option<usize>,
    operation: Option<Operation>,
    count: usize,
    loc: HouseLoc,
    instances: Vec<Instance>,
    search_cursor: usize,
    steps: usize,
    done: bool,
    lit_while_holding: bool,
}

impl State {
    fn held(&self) -> Option<usize> {
        self.instances.iter().position(|i| i.at.is_none())
    }

    fn treated(&self, inst: &Instance) -> bool {
        match self.operation {
            Some(Operation::Heat) => inst.heated,
            Some(Operation::Cool) => inst.cooled,
            Some(Operation::Clean) => inst.cleaned,
            Some(Operation::Light) | None => true,
        }
    }

    fn satisfied(&self, inst: &Instance) -> bool {
        self.target.is_some() && inst.at == self.target && self.treated(inst)
    }

    fn goal_met(&self) -> bool {
        match self.operation {
            Some(Operation::Light) => self.lit_while_holding,
            _ => self.instances.iter().filter(|i| self.satisfied(i)).count() >= self.count,
        }
    }

    fn here(&self) -> Option<usize> {
        match self.loc {
            HouseLoc::Receptacle(r) => Some(r),
            _ => None,
        }
    }

    fn phase(&self) -> Cond {
        if let Some(h) = self.held() {
            let inst = &self.instances[h];
            return match self.operation {
                Some(Operation::Light) => {
                    if self.loc == HouseLoc::Lamp {
                        Cond::AtLight
                    } else {
                        Cond::NeedLight
                    }
                }
                Some(op) if !self.treated(inst) => {
                    let at = self.loc == appliance(op);
                    match (op, at) {
                        (Operation::Heat, false) => Cond::NeedHeat,
                        (Operation::Heat, true) => Cond::AtHeat,
                        (Operation::Cool, false) => Cond::NeedCool,
                        (Operation::Cool, true) => Cond::AtCool,
                        (Operation::Clean, false) => Cond::NeedClean,
                        (_, _) => Cond::AtClean,
                    }
                }
                _ => {
                    if self.here().is_some() && self.here() == self.target {
                        Cond::Place
                    } else {
                        Cond::Carry
                    }
                }
            };
        }
        let visible_unplaced = self
            .instances
            .iter()
            .any(|i| i.at.is_some() && i.at == self.here() && !self.satisfied(i));
        if visible_unplaced {
            Cond::Take
        } else if self.instances.iter().any(|i| self.satisfied(i)) {
            Cond::More
        } else {
            Cond::Search
        }
    }

    fn admissible(&self) -> Vec<Action> {
        let holding = self.held().is_some();
        let here = self.here();
        Action::HOUSE
            .iter()
            .copied()
            .filter(|a| match a {
                Action::Search | Action::Look => true,
                Action::Take => {
                    !holding && here.is_some() && self.instances.iter().any(|i| i.at == here)
                }
                Action::Put => holding && here.is_some(),
                Action::GotoTarget => {
                    self.target.is_some() && self.loc != HouseLoc::Receptacle(self.target.unwrap())
                }
                Action::GotoMicrowave => self.loc != HouseLoc::Microwave,
                Action::GotoFridge => self.loc != HouseLoc::Fridge,
                Action::GotoSink => self.loc != HouseLoc::Sink,
                Action::GotoLamp => self.loc != HouseLoc::Lamp,
                Action::Heat => holding && self.loc == HouseLoc::Microwave,
                Action::Cool => holding && self.loc == HouseLoc::Fridge,
                Action::Clean => holding && self.loc == HouseLoc::Sink,
                Action::ToggleLamp => self.loc == HouseLoc::Lamp,
                _ => false,
            })
            .collect()
    }

    fn apply(&mut self, action: Action) {
        let held = self.held();
        match action {
            Action::Search => {
                self.loc = HouseLoc::Receptacle(self.search_cursor % RECEPTACLES.len());
                self.search_cursor += 1;
            }
            Action::Take => {
                let here = self.here();
                if let Some(i) = self.instances.iter().position(|i| i.at == here) {
                    self.instances[i].at = None;
                }
            }
            Action::Put => self.instances[held.unwrap()].at = self.here(),
            Action::GotoTarget => self.loc = HouseLoc::Receptacle(self.target.unwrap()),
            Action::GotoMicrowave => self.loc = HouseLoc::Microwave,
            Action::GotoFridge => self.loc = HouseLoc::Fridge,
            Action::GotoSink => self.loc = HouseLoc::Sink,
            Action::GotoLamp => self.loc = HouseLoc::Lamp,
            Action::Heat => self.instances[held.unwrap()].heated = true,
            Action::Cool => self.instances[held.unwrap()].cooled = true,
            Action::Clean => self.instances[held.unwrap()].cleaned = true,
            Action::ToggleLamp => {
                if held.is_some() {
                    self.lit_while_holding = true;
                }
            }
            _ => {}
        }
    }

    fn observe(&self) -> Observation {
        let here = self.here();
        let visible_objects = self
            .instances
            .iter()
            .enumerate()
            .filter(|(_, i)| i.at.is_none() || (here.is_some() && i.at == here))
            .map(|(n, i)| ObjectView {
                instance: n,
                object: OBJECTS[self.object].to_string(),
                held: i.at.is_none(),
                heated: i.heated,
                cooled: i.cooled,
                cleaned: i.cleaned,
            })
            .collect();
        Observation {
            location: Location::House(self.loc),
            visible_objects,
            admissible_actions: self.admissible(),
            step_index: self.steps,
            phase: self.phase(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridHouse {
    step_limit: usize,
    state: Option<State>,
}

impl GridHouse {
    pub fn new(step_limit: usize) -> GridHouse {
        GridHouse {
            step_limit,
            state: None,
        }
    }
}

impl Default for GridHouse {
    fn default() -> Self {
        GridHouse::new(DEFAULT_STEP_LIMIT)
    }
}

impl Environment for GridHouse {
    fn reset(&mut self, task: &Task) -> Result<Observation> {
        let Goal::House {
            object,
            receptacle,
            operation,
            count,
            placements,
        } = &task.goal
        else {
            return error::usage("GridHouse cannot run a web task");
        };
        let state = State {
            object: *object,
            target: *receptacle,
            operation: *operation,
            count: *count as usize,
            loc: HouseLoc::Start,
            instances: placements
                .iter()
                .map(|&r| Instance {
                    at: Some(r),
                    heated: false,
                    cooled: false,
                    cleaned: false,
                })
                .collect(),
            search_cursor: 0,
            steps: 0,
            done: false,
            lit_while_holding: false,
        };
        let obs = state.observe();
        self.state = Some(state);
        Ok(obs)
    }

    fn step(&mut self, action: Token) -> Result<(Transition, f64)> {
        let limit = self.step_limit;
        let Some(state) = self.state.as_mut() else {
            return error::usage("step before reset");
        };
        if state.done {
            return error::usage("step on a terminated episode");
        }
        if let Some(a) = action.action() {
            if state.admissible().contains(&a) {
                state.apply(a);
            }
        }
        state.steps += 1;
        let success = state.goal_met();
        if success || state.steps >= limit {
            state.done = true;
            let reward = if success { SUCCESS_REWARD } else { 0.0 };
            return Ok((Transition::Terminal { success }, reward));
        }
        Ok((Transition::Continue(state.observe()), 0.0))
    }

    fn step_limit(&self) -> usize {
        self.step_limit
    }
}
