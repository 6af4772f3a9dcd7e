//! Run configuration (TOML). Unknown keys are rejected and every value is
//! range-checked; `effective()` materialises environment-dependent defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{gridhouse, EnvKind, Family, PoolConfig};
use crate::error::{self, Error, Result};
use crate::grpo::AdamWConfig;
use crate::policy::{PolicyConfig, Prior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Plain group-relative training on source tasks, no skills.
    Grpo,
    ExtractorOnly,
    SolverOnly,
    CoEvolution,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Grpo,
        BaselineKind::ExtractorOnly,
        BaselineKind::SolverOnly,
        BaselineKind::CoEvolution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Grpo => "grpo",
            BaselineKind::ExtractorOnly => "extractor_only",
            BaselineKind::SolverOnly => "solver_only",
            BaselineKind::CoEvolution => "co_evolution",
        }
    }

    pub fn parse(s: &str) -> Result<BaselineKind> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .map_or_else(|| error::config(format!("unknown run kind `{s}`")), Ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub kind: BaselineKind,
    pub iterations: usize,
    /// Write a resumable checkpoint every this many iterations (0: only at
    /// the end).
    pub checkpoint_every: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            kind: BaselineKind::CoEvolution,
            iterations: 60,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub step_limit: usize,
    pub pool_seed: u64,
    /// Training uses the seen-split tasks of this pool.
    pub train_pool: PoolConfig,
    pub eval_pool: PoolConfig,
    /// Tasks the test-time extraction pass draws skills from.
    pub library_pool: PoolConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            kind: EnvKind::GridHouse,
            step_limit: gridhouse::DEFAULT_STEP_LIMIT,
            pool_seed: 1,
            train_pool: PoolConfig::default(),
            eval_pool: PoolConfig::default(),
            library_pool: PoolConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSection {
    /// Source tasks per iteration (B).
    pub batch_size: usize,
    /// Candidate skills per source task (N).
    pub num_skills: usize,
    /// Retrieved downstream tasks per source (K).
    pub num_retrieved: usize,
    pub lambda_e: f64,
    pub lambda_s: f64,
    pub beta_e: f64,
    pub beta_s: f64,
    pub eta_e: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub temperature: f64,
    pub top_p: f64,
    /// Optimizer updates per batch of rollouts.
    pub epochs: usize,
}

impl Default for GrpoSection {
    fn default() -> Self {
        GrpoSection {
            batch_size: 4,
            num_skills: 4,
            num_retrieved: 2,
            lambda_e: 0.2,
            lambda_s: 1.0,
            beta_e: 0.01,
            beta_s: 0.01,
            eta_e: -0.03,
            eps_low: 0.1,
            eps_high: 0.15,
            temperature: 1.0,
            top_p: 0.9,
            epochs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub rule_filter: bool,
    /// Per-token probability of swapping a sampled skill token for noise.
    pub noise_injection: f64,
    pub entropy_ceiling: f64,
    /// Iterations of strictly rising entropy that raise a flag (0: off).
    pub entropy_window: usize,
    pub halt_on_flag: bool,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection {
            rule_filter: true,
            noise_injection: 0.0,
            entropy_ceiling: 2.5,
            entropy_window: 10,
            halt_on_flag: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub seed: u64,
    pub episodes: usize,
    /// Source attempts per task in the extraction pass.
    pub attempts: usize,
    /// Condition extraction-pass rollouts on skills already collected.
    pub accumulate: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seed: 7,
            episodes: 4,
            attempts: 3,
            accumulate: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub policy: PolicyConfig,
    pub prior: Prior,
    pub optimizer: AdamWConfig,
    pub grpo: GrpoSection,
    pub stability: StabilitySection,
    pub eval: EvalSection,
}

fn range(name: &str, x: f64, lo: f64, hi: f64) -> Result<()> {
    if !(x >= lo && x <= hi) {
        return error::config(format!("{name} must be in [{lo}, {hi}], got {x}"));
    }
    Ok(())
}

fn count(name: &str, x: usize, lo: usize, hi: usize) -> Result<()> {
    if !(lo..=hi).contains(&x) {
        return error::config(format!("{name} must be in {lo}..={hi}, got {x}"));
    }
    Ok(())
}

impl RunConfig {
    /// Desk-scale defaults for one environment.
    pub fn for_env(kind: EnvKind) -> RunConfig {
        let mut c = RunConfig::default();
        c.env.kind = kind;
        if kind == EnvKind::StepWeb {
            c.env.step_limit = crate::env::stepweb::MAX_LEN;
            c.grpo.lambda_e = 0.1;
            c.grpo.eta_e = 0.0;
            c.grpo.top_p = 0.85;
        }
        c.effective()
    }

    /// Fills empty pools with the environment's default families.
    pub fn effective(mut self) -> RunConfig {
        let (fams, train, eval, lib): (&[Family], _, _, _) = match self.env.kind {
            EnvKind::GridHouse => (&Family::HOUSE, 10, 20, 20),
            EnvKind::StepWeb => (&[Family::StepTask], 60, 60, 24),
        };
        for (pool, n) in [
            (&mut self.env.train_pool, train),
            (&mut self.env.eval_pool, eval),
            (&mut self.env.library_pool, lib),
        ] {
            if pool.0.is_empty() {
                *pool = PoolConfig::uniform(fams, n);
            }
        }
        self
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml_with(text, &[])
    }

    /// Parses `text`, then applies `key.path=value` overrides. Values parse
    /// as TOML and fall back to plain strings.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
                Ok(mut t) => t.remove("v").unwrap(),
                Err(_) => toml::Value::String(value.to_string()),
            };
            let parts: Vec<&str> = key.trim().split('.').collect();
            let (last, path) = parts.split_last().unwrap();
            let mut cur = &mut table;
            for p in path {
                cur = cur
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override path `{key}` crosses a non-table")))?;
            }
            cur.insert(last.to_string(), value);
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let cfg = cfg.effective();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grpo;
        count("run.iterations", self.run.iterations, 1, 1_000_000)?;
        count("env.step_limit", self.env.step_limit, 1, 1000)?;
        count("grpo.batch_size", g.batch_size, 1, 4096)?;
        count("grpo.num_skills", g.num_skills, 2, 256)?;
        count("grpo.num_retrieved", g.num_retrieved, 1, 256)?;
        count("grpo.epochs", g.epochs, 1, 64)?;
        range("grpo.lambda_e", g.lambda_e, 0.0, 100.0)?;
        range("grpo.lambda_s", g.lambda_s, 0.0, 100.0)?;
        range("grpo.beta_e", g.beta_e, 0.0, 100.0)?;
        range("grpo.beta_s", g.beta_s, 0.0, 100.0)?;
        range("grpo.eta_e", g.eta_e, -10.0, 10.0)?;
        range("grpo.eps_low", g.eps_low, 1e-9, 1.0 - 1e-9)?;
        range("grpo.eps_high", g.eps_high, 1e-9, 100.0)?;
        range("grpo.temperature", g.temperature, 1e-6, 100.0)?;
        if !(g.top_p > 0.0 && g.top_p <= 1.0) {
            return error::config(format!("grpo.top_p must be in (0, 1], got {}", g.top_p));
        }
        range("stability.noise_injection", self.stability.noise_injection, 0.0, 1.0)?;
        range("stability.entropy_ceiling", self.stability.entropy_ceiling, 0.0, 1e6)?;
        count("eval.episodes", self.eval.episodes, 1, 100_000)?;
        count("eval.attempts", self.eval.attempts, 1, 100)?;
        self.policy.validate()?;
        self.optimizer.validate()?;
        for (name, pool) in [
            ("env.train_pool", &self.env.train_pool),
            ("env.eval_pool", &self.env.eval_pool),
            ("env.library_pool", &self.env.library_pool),
        ] {
            for (f, &n) in &pool.0 {
                if f.env() != self.env.kind {
                    return error::config(format!("{name}: family {} does not run in this environment", f.name()));
                }
                if n == 0 {
                    return error::config(format!("{name}: family {} has zero tasks", f.name()));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.grpo.batch_size, 4);
        assert_eq!(c.grpo.num_skills, 4);
        assert_eq!(c.grpo.num_retrieved, 2);
        assert_eq!(c.run.iterations, 60);
        assert_eq!(c.env.train_pool.0.len(), 6);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml_str("[grpo]\nbatch_sise = 3\n").unwrap_err().to_string();
        assert!(e.contains("batch_sise"), "{e}");
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = RunConfig::from_toml_with("", &["grpo.num_skills=8".into(), "run.kind=\"solver_only\"".into()]).unwrap();
        assert_eq!(c.grpo.num_skills, 8);
        assert_eq!(c.run.kind, BaselineKind::SolverOnly);
        assert!(RunConfig::from_toml_with("", &["grpo.top_p=1.5".into()]).is_err());
        assert!(RunConfig::from_toml_with("", &["grpo.num_skills=1".into()]).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let c = RunConfig::for_env(EnvKind::StepWeb);
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let h = RunConfig::for_env(EnvKind::GridHouse);
        assert_eq!(RunConfig::from_toml_str(&h.to_toml()).unwrap(), h);
    }

    #[test]
    fn pool_must_match_environment() {
        let e = RunConfig::from_toml_str("[env.train_pool]\nStepTask = 4\n").unwrap_err();
        assert!(e.to_string().contains("StepTask"));
    }
}
