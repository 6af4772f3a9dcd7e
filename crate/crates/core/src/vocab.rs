//! The shared output vocabulary.
//!
//! Every token the policy can emit, and every token that appears in a
//! trajectory stream, lives here. Task descriptions use a separate word
//! vocabulary (see [`crate::env::words`]) and only enter the policy through
//! hashed context features.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{self, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u16);

pub const END: Token = Token(0);
pub const OBS: Token = Token(1);
pub const SUCCESS: Token = Token(2);
pub const FAIL: Token = Token(3);

const NUM_SPECIAL: usize = 4;
pub const NUM_ACTIONS: usize = 21;
pub const NUM_CONDS: usize = 19;
pub const NUM_NOISE: usize = 8;

const ACTION_BASE: usize = NUM_SPECIAL;
const COND_BASE: usize = ACTION_BASE + NUM_ACTIONS;
const NOISE_BASE: usize = COND_BASE + NUM_CONDS;
pub const VOCAB_SIZE: usize = NOISE_BASE + NUM_NOISE;

/// Environment actions. The first thirteen drive GridHouse, the rest StepWeb.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Search,
    Take,
    Put,
    GotoTarget,
    GotoMicrowave,
    GotoFridge,
    GotoSink,
    GotoLamp,
    Heat,
    Cool,
    Clean,
    ToggleLamp,
    Look,
    ClickLink,
    ClickButton,
    TypeText,
    SelectOption,
    Submit,
    Scroll,
    OpenMenu,
    GoBack,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Search,
        Action::Take,
        Action::Put,
        Action::GotoTarget,
        Action::GotoMicrowave,
        Action::GotoFridge,
        Action::GotoSink,
        Action::GotoLamp,
        Action::Heat,
        Action::Cool,
        Action::Clean,
        Action::ToggleLamp,
        Action::Look,
        Action::ClickLink,
        Action::ClickButton,
        Action::TypeText,
        Action::SelectOption,
        Action::Submit,
        Action::Scroll,
        Action::OpenMenu,
        Action::GoBack,
    ];

    pub const HOUSE: &'static [Action] = Action::ALL.split_at(13).0;
    pub const WEB: &'static [Action] = Action::ALL.split_at(13).1;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> Token {
        Token((ACTION_BASE + self.index()) as u16)
    }

    pub fn name(self) -> &'static str {
        ACTION_NAMES[self.index()]
    }
}

const ACTION_NAMES: [&str; NUM_ACTIONS] = [
    "search",
    "take",
    "put",
    "goto_target",
    "goto_microwave",
    "goto_fridge",
    "goto_sink",
    "goto_lamp",
    "heat",
    "cool",
    "clean",
    "toggle_lamp",
    "look",
    "click_link",
    "click_button",
    "type_text",
    "select_option",
    "submit",
    "scroll",
    "open_menu",
    "go_back",
];

/// Which household families reach a phase: all of them, one seen family,
/// or only the unseen ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseClass {
    Common,
    Family,
    Novel,
    Web,
}

/// State predicates. They double as observation phase markers and as the
/// condition half of skill rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Cond {
    /// Target not located yet, hands empty.
    Search,
    /// An unplaced target instance is visible, hands empty.
    Take,
    NeedHeat,
    AtHeat,
    NeedCool,
    AtCool,
    NeedClean,
    AtClean,
    NeedLight,
    AtLight,
    /// Holding a ready object away from the target receptacle.
    Carry,
    /// Holding a ready object at the target receptacle.
    Place,
    /// One instance placed, another still to be found.
    More,
    WebHome,
    WebSearch,
    WebResults,
    WebForm,
    WebDetail,
    WebConfirm,
}

impl Cond {
    pub const ALL: [Cond; NUM_CONDS] = [
        Cond::Search,
        Cond::Take,
        Cond::NeedHeat,
        Cond::AtHeat,
        Cond::NeedCool,
        Cond::AtCool,
        Cond::NeedClean,
        Cond::AtClean,
        Cond::NeedLight,
        Cond::AtLight,
        Cond::Carry,
        Cond::Place,
        Cond::More,
        Cond::WebHome,
        Cond::WebSearch,
        Cond::WebResults,
        Cond::WebForm,
        Cond::WebDetail,
        Cond::WebConfirm,
    ];

    pub const HOUSE: &'static [Cond] = Cond::ALL.split_at(13).0;
    pub const WEB: &'static [Cond] = Cond::ALL.split_at(13).1;

    pub fn phase_class(self) -> PhaseClass {
        use Cond::*;
        match self {
            Search | Take | Carry | Place => PhaseClass::Common,
            NeedHeat | AtHeat | NeedCool | AtCool | NeedClean | AtClean => PhaseClass::Family,
            NeedLight | AtLight | More => PhaseClass::Novel,
            _ => PhaseClass::Web,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> Token {
        Token((COND_BASE + self.index()) as u16)
    }

    pub fn name(self) -> &'static str {
        COND_NAMES[self.index()]
    }

    /// Whether moving from `self` to `next` is a step forward in the task.
    pub fn advances_to(self, next: Cond) -> bool {
        use Cond::*;
        match self {
            Search | More => next == Take,
            Take => matches!(next, NeedHeat | NeedCool | NeedClean | NeedLight | Carry | Place | AtHeat | AtCool | AtClean | AtLight),
            NeedHeat => next == AtHeat,
            NeedCool => next == AtCool,
            NeedClean => next == AtClean,
            NeedLight => next == AtLight,
            AtHeat | AtCool | AtClean => matches!(next, Carry | Place),
            AtLight => false,
            Carry => next == Place,
            Place => next == More,
            WebHome | WebSearch | WebResults | WebForm | WebDetail | WebConfirm => {
                Cond::WEB.contains(&next)
            }
        }
    }
}

const COND_NAMES: [&str; NUM_CONDS] = [
    "c:search",
    "c:take",
    "c:need_heat",
    "c:at_heat",
    "c:need_cool",
    "c:at_cool",
    "c:need_clean",
    "c:at_clean",
    "c:need_light",
    "c:at_light",
    "c:carry",
    "c:place",
    "c:more",
    "w:home",
    "w:search",
    "w:results",
    "w:form",
    "w:detail",
    "w:confirm",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    End,
    Obs,
    Success,
    Fail,
    Action(Action),
    Cond(Cond),
    Noise(usize),
}

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn kind(self) -> Kind {
        let i = self.index();
        match i {
            0 => Kind::End,
            1 => Kind::Obs,
            2 => Kind::Success,
            3 => Kind::Fail,
            _ if i < COND_BASE => Kind::Action(Action::ALL[i - ACTION_BASE]),
            _ if i < NOISE_BASE => Kind::Cond(Cond::ALL[i - COND_BASE]),
            _ if i < VOCAB_SIZE => Kind::Noise(i - NOISE_BASE),
            _ => panic!("token {i} outside vocabulary"),
        }
    }

    pub fn action(self) -> Option<Action> {
        match self.kind() {
            Kind::Action(a) => Some(a),
            _ => None,
        }
    }

    pub fn cond(self) -> Option<Cond> {
        match self.kind() {
            Kind::Cond(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self.kind(), Kind::Noise(_))
    }

    pub fn noise(i: usize) -> Token {
        assert!(i < NUM_NOISE);
        Token((NOISE_BASE + i) as u16)
    }

    pub fn name(self) -> String {
        match self.kind() {
            Kind::End => "<end>".into(),
            Kind::Obs => "<obs>".into(),
            Kind::Success => "<success>".into(),
            Kind::Fail => "<fail>".into(),
            Kind::Action(a) => a.name().into(),
            Kind::Cond(c) => c.name().into(),
            Kind::Noise(i) => format!("~{i}"),
        }
    }

    pub fn parse(s: &str) -> Result<Token> {
        all_tokens()
            .find(|t| t.name() == s)
            .map_or_else(|| error::input(format!("unknown token `{s}`")), Ok)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

pub fn all_tokens() -> impl Iterator<Item = Token> {
    (0..VOCAB_SIZE as u16).map(Token)
}

/// Names of every token in index order; written into checkpoints so a
/// reload can verify it is reading the same vocabulary.
pub fn token_names() -> Vec<String> {
    all_tokens().map(|t| t.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_partition_the_vocabulary() {
        let mut actions = 0;
        let mut conds = 0;
        let mut noise = 0;
        for t in all_tokens() {
            match t.kind() {
                Kind::Action(a) => {
                    assert_eq!(a.token(), t);
                    actions += 1
                }
                Kind::Cond(c) => {
                    assert_eq!(c.token(), t);
                    conds += 1
                }
                Kind::Noise(_) => noise += 1,
                _ => {}
            }
        }
        assert_eq!((actions, conds, noise), (NUM_ACTIONS, NUM_CONDS, NUM_NOISE));
    }

    #[test]
    fn names_round_trip() {
        for t in all_tokens() {
            assert_eq!(Token::parse(&t.name()).unwrap(), t);
        }
        assert!(Token::parse("nonsense").is_err());
    }
}
