//! Task-description vocabulary and templates.

use super::task::{Family, Goal};
use super::{gridhouse, stepweb};

const TEMPLATE_WORDS: &[&str] = &[
    "put", "a", "in", "the", "heat", "cool", "clean", "with", "microwave", "fridge", "sink",
    "until", "hot", "cold", "spotless", "then", "place", "on", "examine", "under", "desklamp",
    "find", "two", "and", "carry", "both", "to", "site", "go", "complete",
];

pub fn is_word(w: &str) -> bool {
    TEMPLATE_WORDS.contains(&w)
        || gridhouse::OBJECTS.contains(&w)
        || gridhouse::RECEPTACLES.contains(&w)
        || stepweb::SITES.contains(&w)
        || stepweb::INTENTS.iter().any(|ws| ws.contains(&w))
}

pub fn describe(family: Family, goal: &Goal) -> Vec<String> {
    let words: Vec<&str> = match goal {
        Goal::House {
            object, receptacle, ..
        } => {
            let obj = gridhouse::OBJECTS[*object];
            let rec = receptacle.map(|r| gridhouse::RECEPTACLES[r]).unwrap_or("");
            match family {
                Family::Pick => vec!["put", "a", obj, "in", "the", rec],
                Family::Heat => vec![
                    "heat", "the", obj, "with", "microwave", "until", "hot", "then", "place", "on", rec,
                ],
                Family::Cool => vec![
                    "cool", "the", obj, "with", "fridge", "until", "cold", "then", "place", "on", rec,
                ],
                Family::Clean => vec![
                    "clean", "the", obj, "with", "sink", "until", "spotless", "then", "place", "on",
                    rec,
                ],
                Family::Look => vec!["examine", "the", obj, "under", "the", "desklamp"],
                Family::Pick2 => vec!["find", "two", obj, "and", "carry", "both", "to", rec],
                Family::StepTask => unreachable!("house goal for web family"),
            }
        }
        Goal::Web { site, pages, .. } => {
            let intent = stepweb::INTENTS[*site];
            let mut w = vec!["go", "to", stepweb::SITES[*site], "site", "and"];
            // vary wording by task length so same-site tasks are not identical
            w.extend(intent.iter().take(2 + pages.len() % 2));
            w.push("complete");
            w
        }
    };
    words.into_iter().map(String::from).collect()
}
