use std::path::Path;
use std::process::{Command, Output};

fn evorl(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evorl"))
        .env("EVORL_OUTPUT_ROOT", root)
        .args(args)
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn smoke_train_writes_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&evorl(dir.path(), &["train", "--set", "run.iterations=2"]));
    let run = dir.path().join("co_evolution-seed0");
    assert_eq!(read(run.join("metrics.jsonl")).lines().count(), 2);
    for line in read(run.join("metrics.jsonl")).lines() {
        assert!(serde_json::from_str::<serde_json::Value>(line).unwrap().is_object());
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(run.join("manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(read(run.join("effective.toml")).contains("relational_scale"));
    assert!(run.join("checkpoint.json").exists());
    assert!(run.join("library.jsonl").exists());

    let again = evorl(dir.path(), &["train", "--set", "run.iterations=2"]);
    assert!(!again.status.success(), "a second run must not append to an existing stream");
}

#[test]
fn unknown_key_fails_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grpo]\nnum_skils = 4\n").unwrap();
    let o = evorl(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("num_skils"));
    let o = evorl(dir.path(), &["train", "--set", "grpo.eps_low=2.0"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("grpo.eps_low"));
}

#[test]
fn resumed_run_continues_the_same_stream() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    ok(&evorl(dir.path(), &["train", "--set", "run.iterations=4", "--run-dir", &s(&straight)]));
    ok(&evorl(dir.path(), &["train", "--set", "run.iterations=2", "--run-dir", &s(&split)]));
    let ck = s(&split.join("checkpoint.json"));
    ok(&evorl(dir.path(), &["train", "--resume", &ck, "--set", "run.iterations=4", "--run-dir", &s(&split)]));
    assert_eq!(read(straight.join("metrics.jsonl")), read(split.join("metrics.jsonl")));
    assert_eq!(read(straight.join("library.jsonl")), read(split.join("library.jsonl")));
}

#[test]
fn eval_is_reproducible_and_averages_seeds() {
    let dir = tempfile::tempdir().unwrap();
    ok(&evorl(dir.path(), &["train", "--set", "run.iterations=1"]));
    let ck = dir.path().join("co_evolution-seed0/checkpoint.json");
    let ck = ck.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&evorl(dir.path(), &["eval", "--checkpoint", ck, "--skills", "own", "--seeds", "1,2,3", "--episodes", "1", "--out", out.to_str().unwrap()]));
    }
    assert_eq!(read(a.join("report.json")), read(b.join("report.json")));
    assert_eq!(read(a.join("episodes.jsonl")), read(b.join("episodes.jsonl")));

    let r: serde_json::Value = serde_json::from_str(&read(a.join("report.json"))).unwrap();
    let per = r["per_seed"].as_array().unwrap();
    assert_eq!(per.len(), 3);
    for (k, v) in r["mean"].as_object().unwrap() {
        let m: f64 = per.iter().map(|s| s[k].as_f64().unwrap()).sum::<f64>() / 3.0;
        assert!((m - v.as_f64().unwrap()).abs() < 1e-12, "{k}");
    }
    assert!(read(a.join("report-seed1.tsv")).starts_with("group\tepisodes\tsuccess_rate\tmean_success_steps"));
}

#[test]
fn irrelevant_injection_uses_least_similar_skills() {
    use evorl::library::{Relevance, SkillLibrary};
    let dir = tempfile::tempdir().unwrap();
    ok(&evorl(dir.path(), &["train", "--set", "run.iterations=2"]));
    let run = dir.path().join("co_evolution-seed0");
    let lib_path = dir.path().join("lib.jsonl");
    ok(&evorl(dir.path(), &["extract-library", "--checkpoint", run.join("checkpoint.json").to_str().unwrap(), "--out", lib_path.to_str().unwrap()]));
    let lib = SkillLibrary::load(&lib_path).unwrap();
    let out = dir.path().join("irr");
    // untrained policy with the trained library, as in a transfer run
    ok(&evorl(dir.path(), &[
        "eval", "--skills", "library", "--library", lib_path.to_str().unwrap(), "--relevance", "irrelevant",
        "--split", "unseen", "--episodes", "1", "--out", out.to_str().unwrap(),
    ]));
    let cfg = evorl::RunConfig::from_toml_str("").unwrap();
    let (_, pool, _) = evorl::trainer::build_pools(&cfg).unwrap();
    for line in read(out.join("episodes.jsonl")).lines() {
        let e: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(e["split"], "Unseen");
        let task = pool.get(e["task_id"].as_u64().unwrap()).unwrap();
        let q = evorl::retrieval::embed(&task.description).unwrap();
        let sims: Vec<f64> = lib.entries.iter().map(|x| q.cosine(&x.embedding)).collect();
        let low = sims.iter().copied().fold(f64::INFINITY, f64::min);
        let pick = e["skill_entry"].as_u64().unwrap() as usize;
        assert_eq!(sims[pick], low);
        assert_eq!(lib.select(&task.description, Relevance::Irrelevant).unwrap(), Some(pick));
    }

    let o = evorl(dir.path(), &["eval", "--skills", "library"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--library"));
}

#[test]
fn reliability_rows_in_file_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rel.tsv");
    ok(&evorl(dir.path(), &["reliability", "--pairs", "0.8:0.5,0.5:0.5,1:0", "--ks", "4", "--trials", "20000", "--out", out.to_str().unwrap()]));
    let text = read(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][4], "0.320156");
    assert_eq!(rows[0][5], "0.825632");
    assert_eq!(rows[0][6], "0.801928");
    assert_eq!(rows[1][5], "0.500000");
    assert_eq!(rows[2][7], "1.000000");

    let o = evorl(dir.path(), &["reliability", "--ks", "4", "--pairs", "0.5"]);
    assert!(!o.status.success());
}

#[test]
fn export_writes_series() {
    let dir = tempfile::tempdir().unwrap();
    ok(&evorl(dir.path(), &["train", "--set", "run.iterations=3"]));
    let run = dir.path().join("co_evolution-seed0");
    let m = run.join("metrics.jsonl");
    let m = m.to_str().unwrap();
    ok(&evorl(dir.path(), &["export", "--metrics", m, "--quantity", "all"]));
    let h = read(run.join("extractor_entropy.tsv"));
    assert_eq!(h.lines().count(), 4);
    for l in read(run.join("extractor_kl.tsv")).lines().skip(1) {
        assert!(l.split('\t').nth(1).unwrap().parse::<f64>().unwrap() >= 0.0);
    }
    let recs = evorl::metrics::read_metrics(&run.join("metrics.jsonl")).unwrap();
    for (l, r) in read(run.join("skill_reward_mean.tsv")).lines().skip(1).zip(&recs) {
        assert_eq!(l.split('\t').nth(1).unwrap().parse::<f64>().unwrap(), r.skill_reward_mean);
    }
    let o = evorl(dir.path(), &["export", "--metrics", m, "--quantity", "nope"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("extractor_entropy"));
}
