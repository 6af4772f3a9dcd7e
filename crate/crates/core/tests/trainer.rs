use evorl::config::{BaselineKind, RunConfig};
use evorl::env::EnvKind;
use evorl::metrics::{read_metrics, series, MetricsWriter};
use evorl::trainer::{Checkpoint, IterationRecord, Trainer};
use evorl::Error;

fn cfg(extra: &[&str]) -> RunConfig {
    let mut o: Vec<String> = vec!["run.iterations=3".into()];
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::from_toml_with("", &o).unwrap()
}

fn run_all(c: RunConfig) -> (Trainer, Vec<IterationRecord>) {
    let mut t = Trainer::new(c).unwrap();
    let mut recs = vec![];
    t.run(|_, r| {
        recs.push(r.clone());
        Ok(())
    })
    .unwrap();
    (t, recs)
}

#[test]
fn record_shape_follows_b_n_k() {
    let (_, recs) = run_all(cfg(&["grpo.batch_size=1", "grpo.num_skills=2", "grpo.num_retrieved=1"]));
    for r in &recs {
        assert_eq!(r.source_task_ids.len(), 1);
        assert_eq!(r.eval_task_ids[0].len(), 2);
        assert_eq!(r.eval_task_ids[0][0], r.source_task_ids[0]);
        assert_eq!(r.skills[0].len(), 2);
        assert_eq!(r.eval_rewards.len(), 1);
        assert_eq!(r.eval_rewards[0].len(), 2);
        for (row, reward) in r.eval_rewards[0].iter().zip(&r.skill_rewards[0]) {
            assert_eq!(row.len(), 2);
            assert!((row.iter().sum::<f64>() / 2.0 - reward).abs() < 1e-12);
        }
    }
}

#[test]
fn rollout_budget_holds_every_iteration() {
    let c = cfg(&["run.iterations=5"]);
    let (b, k) = (c.grpo.batch_size, c.grpo.num_retrieved);
    let (_, recs) = run_all(c);
    for r in &recs {
        // B x (1 + N_valid x (K+1)) with N_valid counted per source
        let per_source: usize = r.skill_valid.iter().map(|v| 1 + v.iter().filter(|&&x| x).count() * (k + 1)).sum();
        assert_eq!(r.source_task_ids.len(), b);
        assert_eq!(r.rollouts, per_source);
        assert_eq!(r.rollouts, b + r.n_valid * (k + 1));
        assert_eq!(r.rollouts, r.expected_rollouts);
    }
}

#[test]
fn table_six_schema_completes() {
    let (_, recs) = run_all(cfg(&["run.iterations=1", "grpo.batch_size=1", "grpo.num_skills=8", "grpo.num_retrieved=4"]));
    let r = &recs[0];
    assert_eq!(r.skills[0].len(), 8);
    assert_eq!(r.eval_task_ids[0].len(), 5);
    assert!(r.joint.total.is_finite());
}

#[test]
fn all_invalid_candidates_get_zero_reward() {
    let (t, recs) = run_all(cfg(&["stability.noise_injection=1.0", "grpo.batch_size=2"]));
    for r in &recs {
        assert_eq!(r.n_valid, 0);
        assert!(r.skill_rewards.iter().flatten().all(|&x| x == 0.0));
        assert_eq!(r.rollouts, 2);
        assert_eq!(r.solver.members, 0);
        assert_eq!(r.extractor.surrogate, 0.0);
    }
    assert!(t.library.is_empty());
}

#[test]
fn identical_seeds_give_identical_metrics_streams() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = vec![];
    for name in ["a", "b"] {
        let path = dir.path().join(name);
        let mut w = MetricsWriter::append(&path).unwrap();
        let mut t = Trainer::new(cfg(&["run.seed=11"])).unwrap();
        t.run(|_, r| w.write(r)).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let other = {
        let (_, recs) = run_all(cfg(&["run.seed=12"]));
        recs
    };
    let path = dir.path().join("a");
    assert_ne!(read_metrics(&path).unwrap(), other);
}

#[test]
fn every_baseline_runs() {
    for kind in BaselineKind::ALL {
        let (t, recs) = run_all(cfg(&["run.iterations=2", &format!("run.kind=\"{}\"", kind.name())]));
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.kind == kind && r.rollouts == r.expected_rollouts));
        assert_eq!(t.params.version, 2);
    }
}

#[test]
fn stepweb_iterations_run() {
    let mut c = RunConfig::for_env(EnvKind::StepWeb);
    c.run.iterations = 2;
    let (_, recs) = run_all(c);
    assert!(recs.iter().all(|r| r.rollouts == r.expected_rollouts && r.joint.total.is_finite()));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let full = cfg(&["run.iterations=4", "run.seed=3"]);
    let (straight, straight_recs) = run_all(full.clone());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let mut half = full.clone();
    half.run.iterations = 2;
    let (t, mut recs) = run_all(half);
    Checkpoint::of(&t).unwrap().save(&path).unwrap();
    drop(t);

    let mut t = Checkpoint::load(&path).unwrap().restore(Some(full)).unwrap();
    t.run(|_, r| {
        recs.push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(recs, straight_recs);
    assert_eq!(t.params, straight.params);
    assert_eq!(t.library, straight.library);
}

#[test]
fn restore_rejects_a_different_configuration() {
    let (t, _) = run_all(cfg(&["run.iterations=1"]));
    let ck = Checkpoint::of(&t).unwrap();
    let other = cfg(&["grpo.num_skills=3"]);
    assert!(matches!(ck.restore(Some(other)), Err(Error::Config(_))));
}

#[test]
fn metric_series_export() {
    let (_, recs) = run_all(cfg(&["run.iterations=4"]));
    let h = series(&recs, "extractor_entropy").unwrap();
    assert_eq!(h.len(), 4);
    assert!(series(&recs, "extractor_kl").unwrap().iter().all(|p| p.1 >= 0.0));
    let rew = series(&recs, "skill_reward_mean").unwrap();
    for (p, r) in rew.iter().zip(&recs) {
        assert_eq!(p.1, r.skill_reward_mean);
    }
    let e = series(&recs, "bogus").unwrap_err().to_string();
    assert!(e.contains("extractor_entropy"), "{e}");
}

#[test]
fn halting_on_a_flag_stops_the_run() {
    let (t, recs) = run_all(cfg(&["run.iterations=5", "stability.entropy_ceiling=0.0", "stability.halt_on_flag=true"]));
    assert_eq!(recs.len(), 1);
    assert!(recs[0].advisory.is_some());
    assert_eq!(t.iteration, 1);
}

#[test]
fn too_small_training_pool_is_rejected() {
    let c = RunConfig::from_toml_with("[env.train_pool]\nPick = 2\n", &["grpo.num_retrieved=4".into()]).unwrap();
    assert!(matches!(Trainer::new(c), Err(Error::Config(_))));
}
