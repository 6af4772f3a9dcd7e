use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use evorl::config::RunConfig;
use evorl::env::{Split, TaskPool};
use evorl::library::{Relevance, SkillLibrary};
use evorl::metrics::{self, MetricsWriter};
use evorl::reliability::{reliability_table, table_tsv};
use evorl::trainer::{
    build_pools, eval::mean_rates, evaluate, extraction_pass, Checkpoint, EvalReport, EvalSettings, ExtractSettings,
    Trainer,
};

#[derive(Parser)]
#[command(name = "evorl", version, about = "Co-evolving skill extraction and solving on simulated text worlds")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, env = "EVORL_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one baseline and write metrics, checkpoints and the skill library.
    Train(TrainArgs),
    /// Success rates of a checkpoint (or the untrained policy).
    Eval(EvalArgs),
    /// Ranking reliability table over a Bernoulli grid.
    Reliability(ReliabilityArgs),
    /// Two-column series files from a metrics stream.
    Export(ExportArgs),
    /// Run the test-time extraction pass and save the library.
    ExtractLibrary(ExtractArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        Ok(match &self.config {
            Some(p) => RunConfig::load(p, &self.overrides).with_context(|| format!("loading {}", p.display()))?,
            None => RunConfig::from_toml_with("", &self.overrides)?,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; defaults to `<output-root>/<kind>-seed<seed>`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Continue from this checkpoint. Overrides may extend `run.iterations`.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Seen,
    Unseen,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SkillMode {
    None,
    /// Skills the evaluated policy extracts itself from the library pool.
    Own,
    /// Skills from `--library`.
    Library,
}

#[derive(Clone, Copy, ValueEnum)]
enum RelevanceArg {
    Relevant,
    Irrelevant,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; the untrained policy of `--config` otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "none")]
    skills: SkillMode,
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "relevant")]
    relevance: RelevanceArg,
    /// Evaluation seeds; rates are averaged over them.
    #[arg(long, value_delimiter = ',', default_value = "7")]
    seeds: Vec<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Report directory; defaults to `<output-root>/eval`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReliabilityArgs {
    /// `p_a:p_b` pairs; the full 0.1..0.9 grid with p_a > p_b when omitted.
    #[arg(long, value_delimiter = ',')]
    pairs: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; defaults to `<output-root>/reliability.tsv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Quantities to export, or `all`.
    #[arg(long = "quantity", required = true)]
    quantities: Vec<String>,
    /// Output directory; defaults to the metrics file's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Library file; defaults to `<output-root>/library.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Command::Train(a) => train(&cli.output_root, a),
        Command::Eval(a) => eval(&cli.output_root, a),
        Command::Reliability(a) => reliability(&cli.output_root, a),
        Command::Export(a) => export(a),
        Command::ExtractLibrary(a) => extract(&cli.output_root, a),
    }
}

fn write_manifest(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let (train, eval, lib) = build_pools(cfg)?;
    let manifest = json!({
        "format": "evorl-run/1",
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "seed": cfg.run.seed,
        "kind": cfg.run.kind.name(),
        "effective_config": "effective.toml",
        "pools": {
            "train": train.fingerprint(),
            "eval": eval.fingerprint(),
            "library": lib.fingerprint(),
        },
        "target": format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join("effective.toml"), cfg.to_toml())?;
    Ok(())
}

fn train(root: &Path, a: TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            let cfg = if a.config.config.is_some() || !a.config.overrides.is_empty() {
                let base = if a.config.config.is_some() { a.config.load()? } else { ck.config.clone() };
                RunConfig::from_toml_with(&base.to_toml(), &a.config.overrides)?
            } else {
                ck.config.clone()
            };
            ck.restore(Some(cfg))?
        }
        None => Trainer::new(a.config.load()?)?,
    };
    let cfg = trainer.cfg.clone();
    let dir = a
        .run_dir
        .unwrap_or_else(|| root.join(format!("{}-seed{}", cfg.run.kind.name(), cfg.run.seed)));
    fs::create_dir_all(dir.join("checkpoints"))?;
    let metrics_path = dir.join("metrics.jsonl");
    if a.resume.is_none() && metrics_path.exists() {
        bail!("{} already holds a metrics stream; resume from its checkpoint or pick another --run-dir", dir.display());
    }
    write_manifest(&dir, &cfg)?;
    let mut writer = MetricsWriter::append(&metrics_path)?;
    let every = cfg.run.checkpoint_every;
    trainer.run(|t, rec| {
        writer.write(rec)?;
        if every > 0 && t.iteration % every as u64 == 0 {
            Checkpoint::of(t)?.save(&dir.join("checkpoints").join(format!("iter-{:06}.json", t.iteration)))?;
        }
        log::info!("iteration {} done, source success {:.3}", rec.iteration, rec.success_rates["source"]);
        Ok(())
    })?;
    Checkpoint::of(&trainer)?.save(&dir.join("checkpoint.json"))?;
    trainer.library.save(&dir.join("library.jsonl"))?;
    println!("{}", dir.display());
    Ok(())
}

/// The evaluated policy plus the configuration it runs under.
fn load_policy(checkpoint: &Option<PathBuf>, config: &ConfigArgs) -> Result<Trainer> {
    Ok(match checkpoint {
        Some(path) => Checkpoint::load(path)
            .with_context(|| format!("loading {}", path.display()))?
            .restore(None)?,
        None => Trainer::new(config.load()?)?,
    })
}

fn eval(root: &Path, a: EvalArgs) -> Result<()> {
    let t = load_policy(&a.checkpoint, &a.config)?;
    let cfg = &t.cfg;
    let (_, eval_pool, lib_pool) = build_pools(cfg)?;
    let tasks: TaskPool = match a.split {
        SplitArg::All => eval_pool,
        SplitArg::Seen => eval_pool.filtered(|t| t.split == Split::Seen),
        SplitArg::Unseen => eval_pool.filtered(|t| t.split == Split::Unseen),
    };
    let relevance = match a.relevance {
        RelevanceArg::Relevant => Relevance::Relevant,
        RelevanceArg::Irrelevant => Relevance::Irrelevant,
    };
    let given = match (&a.library, a.skills) {
        (Some(p), SkillMode::Library) => Some(SkillLibrary::load(p).with_context(|| format!("loading {}", p.display()))?),
        (None, SkillMode::Library) => bail!("--skills library needs --library <file>"),
        (Some(_), _) => bail!("--library only applies with --skills library"),
        _ => None,
    };
    if a.seeds.is_empty() {
        bail!("at least one seed is needed");
    }
    let out = a.out.unwrap_or_else(|| root.join("eval"));
    fs::create_dir_all(&out)?;
    let mut reports: Vec<EvalReport> = vec![];
    let mut episodes = String::new();
    for &seed in &a.seeds {
        let mut c = cfg.clone();
        c.eval.seed = seed;
        if let Some(n) = a.episodes {
            c.eval.episodes = n;
        }
        let own = match a.skills {
            SkillMode::Own => Some(extraction_pass(&t.policy, &t.params, &lib_pool, &ExtractSettings::from_config(&c))?),
            _ => None,
        };
        let lib = own.as_ref().or(given.as_ref());
        let r = evaluate(&t.policy, &t.params, &tasks, lib.map(|l| (l, relevance)), &EvalSettings::from_config(&c))?;
        for e in &r.episodes {
            let mut v = serde_json::to_value(e)?;
            v["seed"] = json!(seed);
            episodes.push_str(&serde_json::to_string(&v)?);
            episodes.push('\n');
        }
        fs::write(out.join(format!("report-seed{seed}.tsv")), r.table())?;
        reports.push(r);
    }
    let mean = mean_rates(&reports);
    let mut tsv = String::from("group\tmean_success_rate\n");
    for (k, v) in &mean {
        tsv.push_str(&format!("{k}\t{v:.6}\n"));
    }
    fs::write(out.join("report.tsv"), &tsv)?;
    fs::write(out.join("episodes.jsonl"), episodes)?;
    let summary = json!({
        "seeds": a.seeds,
        "per_seed": reports.iter().map(EvalReport::rates).collect::<Vec<_>>(),
        "mean": mean,
    });
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    print!("{tsv}");
    Ok(())
}

fn reliability(root: &Path, a: ReliabilityArgs) -> Result<()> {
    let pairs: Vec<(f64, f64)> = if a.pairs.is_empty() {
        let ps: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        ps.iter().flat_map(|&x| ps.iter().filter(move |&&y| x > y).map(move |&y| (x, y))).collect()
    } else {
        a.pairs
            .iter()
            .map(|s| {
                let (x, y) = s.split_once(':').with_context(|| format!("pair `{s}` is not p_a:p_b"))?;
                Ok((x.trim().parse()?, y.trim().parse()?))
            })
            .collect::<Result<_>>()?
    };
    let rows = reliability_table(&pairs, &a.ks, a.trials, a.seed)?;
    let out = a.out.unwrap_or_else(|| root.join("reliability.tsv"));
    if let Some(d) = out.parent() {
        fs::create_dir_all(d)?;
    }
    fs::write(&out, table_tsv(&rows))?;
    println!("{}", out.display());
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let recs = metrics::read_metrics(&a.metrics).with_context(|| format!("reading {}", a.metrics.display()))?;
    let names: Vec<String> = if a.quantities.iter().any(|q| q == "all") {
        metrics::quantities().into_iter().map(String::from).collect()
    } else {
        a.quantities
    };
    let out = a
        .out
        .unwrap_or_else(|| a.metrics.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&out)?;
    for q in &names {
        let s = metrics::series(&recs, q)?;
        let path = out.join(format!("{q}.tsv"));
        fs::write(&path, metrics::series_tsv(&s))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn extract(root: &Path, a: ExtractArgs) -> Result<()> {
    let t = load_policy(&a.checkpoint, &a.config)?;
    let mut cfg = t.cfg.clone();
    if let Some(s) = a.seed {
        cfg.eval.seed = s;
    }
    let (_, _, lib_pool) = build_pools(&cfg)?;
    let lib = extraction_pass(&t.policy, &t.params, &lib_pool, &ExtractSettings::from_config(&cfg))?;
    let out = a.out.unwrap_or_else(|| root.join("library.jsonl"));
    if let Some(d) = out.parent() {
        fs::create_dir_all(d)?;
    }
    lib.save(&out)?;
    println!("{} ({} skills)", out.display(), lib.len());
    Ok(())
}
