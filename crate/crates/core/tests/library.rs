mod common;

use common::*;
use evorl::env::{build_task_pool, Family, PoolConfig, Split};
use evorl::library::{Relevance, SkillLibrary};
use evorl::policy::Prior;
use evorl::retrieval::embed;
use evorl::skill::Skill;
use evorl::trainer::{evaluate, extraction_pass, EvalSettings, ExtractSettings};
use evorl::vocab::{Action, Cond};
use evorl::Error;

fn library(n: usize) -> SkillLibrary {
    let pool = build_task_pool(&PoolConfig::uniform(&Family::HOUSE, 2), 3).unwrap();
    let mut lib = SkillLibrary::new();
    for (i, t) in pool.tasks.iter().take(n).enumerate() {
        let s = Skill::from_rules(&[(Cond::Search, Action::Search), (Cond::Take, Action::Take)], t.id, 16);
        lib.push(s, &t.description, i as f64 * 0.5, i as u64).unwrap();
    }
    lib
}

#[test]
fn save_then_load_is_identity() {
    let lib = library(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lib.jsonl");
    lib.save(&path).unwrap();
    assert_eq!(SkillLibrary::load(&path).unwrap(), lib);
}

#[test]
fn truncated_file_is_a_parse_error() {
    let lib = library(6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lib.jsonl");
    lib.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    std::fs::write(&path, lines[..4].join("\n") + "\n").unwrap();
    assert!(matches!(SkillLibrary::load(&path), Err(Error::Parse { .. })));

    let cut = &text[..text.len() - 40];
    std::fs::write(&path, cut).unwrap();
    match SkillLibrary::load(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
        other => panic!("expected a parse error, got {other:?}"),
    }

    std::fs::write(&path, "").unwrap();
    assert!(matches!(SkillLibrary::load(&path), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn selection_matches_similarity_oracle() {
    let lib = library(12);
    let queries = build_task_pool(&PoolConfig::uniform(&Family::HOUSE, 3), 9).unwrap();
    for q in &queries.tasks {
        let e = embed(&q.description).unwrap();
        let sims: Vec<f64> = lib.entries.iter().map(|x| e.cosine(&x.embedding)).collect();
        let best = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = sims.iter().copied().fold(f64::INFINITY, f64::min);
        let argmax = sims.iter().position(|&s| s == best).unwrap();
        let argmin = sims.iter().position(|&s| s == worst).unwrap();
        assert_eq!(lib.select(&q.description, Relevance::Relevant).unwrap(), Some(argmax));
        assert_eq!(lib.select(&q.description, Relevance::Irrelevant).unwrap(), Some(argmin));
    }
    assert_eq!(SkillLibrary::new().select(&queries.tasks[0].description, Relevance::Relevant).unwrap(), None);
}

fn settings(episodes: usize, temperature: f64) -> EvalSettings {
    EvalSettings {
        episodes,
        seed: 5,
        temperature,
        top_p: 1.0,
        step_limit: 30,
    }
}

#[test]
fn scripted_prior_solves_every_pick_task_greedily() {
    let p = policy();
    let prior = Prior {
        common_phase: 40.0,
        ..Prior::default()
    };
    let params = p.init::<f64>(&prior);
    let tasks = build_task_pool(&PoolConfig::uniform(&[Family::Pick], 12), 2).unwrap();
    let r = evaluate(&p, &params, &tasks, None, &settings(2, 0.0)).unwrap();
    assert_eq!(r.by_family["Pick"].rate(), 1.0);
    assert_eq!(r.overall.episodes, 24);
}

#[test]
fn evaluation_is_reproducible_and_reports_are_consistent() {
    let p = policy();
    let params = p.init::<f64>(&Prior::default());
    let tasks = build_task_pool(&PoolConfig::uniform(&Family::HOUSE, 2), 4).unwrap();
    let lib = library(5);
    let a = evaluate(&p, &params, &tasks, Some((&lib, Relevance::Relevant)), &settings(3, 1.0)).unwrap();
    let b = evaluate(&p, &params, &tasks, Some((&lib, Relevance::Relevant)), &settings(3, 1.0)).unwrap();
    assert_eq!(a, b);
    let per_split: usize = a.by_split.values().map(|t| t.episodes).sum();
    assert_eq!(per_split, a.overall.episodes);
    assert_eq!(a.overall.episodes, tasks.len() * 3);
    assert!(a.split_rate(Split::Unseen) <= 1.0);
    assert!(a.table().lines().count() > 3);
}

#[test]
fn evaluation_errors() {
    let p = policy();
    let params = p.init::<f64>(&Prior::default());
    let tasks = build_task_pool(&PoolConfig::uniform(&[Family::Pick], 2), 4).unwrap();
    let empty = tasks.filtered(|_| false);
    assert!(matches!(evaluate(&p, &params, &empty, None, &settings(1, 1.0)), Err(Error::Config(_))));
    let lib = SkillLibrary::new();
    let r = evaluate(&p, &params, &tasks, Some((&lib, Relevance::Relevant)), &settings(1, 1.0));
    assert!(matches!(r, Err(Error::Usage(_))));
}

#[test]
fn extraction_pass_keeps_only_valid_skills() {
    let p = policy();
    let params = p.init::<f64>(&Prior::default());
    let pool = build_task_pool(&PoolConfig::uniform(&Family::HOUSE, 2), 8).unwrap();
    let xs = ExtractSettings {
        seed: 3,
        attempts: 2,
        accumulate: true,
        temperature: 1.0,
        top_p: 0.9,
        step_limit: 30,
        rule_filter: true,
    };
    let lib = extraction_pass(&p, &params, &pool, &xs).unwrap();
    assert!(!lib.is_empty());
    assert!(lib.entries.iter().all(|e| e.skill.valid && !e.skill.rules.is_empty()));
    assert_eq!(lib, extraction_pass(&p, &params, &pool, &xs).unwrap());
}
