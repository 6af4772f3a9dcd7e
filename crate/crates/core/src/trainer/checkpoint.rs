//! Resumable trainer state. Every random stream is derived from the run
//! seed and the iteration counter, so the counter is the whole RNG state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Trainer;
use crate::config::RunConfig;
use crate::error::{self, Result};
use crate::grpo::AdamW;
use crate::library::SkillLibrary;
use crate::policy::{self, Params};
use crate::retrieval::RetrievalIndex;

const FORMAT: &str = "evorl-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: RunConfig,
    pub iteration: u64,
    pub policy: serde_json::Value,
    pub reference: Params<f64>,
    pub optimizer: AdamW<f64>,
    pub entropy_trace: Vec<f64>,
    pub library: SkillLibrary,
}

impl Checkpoint {
    pub fn of(t: &Trainer) -> Result<Checkpoint> {
        Ok(Checkpoint {
            format: FORMAT.into(),
            config: t.cfg.clone(),
            iteration: t.iteration,
            policy: policy::to_value(&t.policy, &t.params)?,
            reference: (*t.reference).clone(),
            optimizer: t.optimizer.clone(),
            entropy_trace: t.entropy_trace.clone(),
            library: t.library.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if c.format != FORMAT {
            return error::input(format!("unknown checkpoint format {:?}", c.format));
        }
        Ok(c)
    }

    /// Rebuilds the trainer. `config` replaces the stored configuration (to
    /// extend `run.iterations`, say) but must agree on everything that
    /// shapes the state.
    pub fn restore(self, config: Option<RunConfig>) -> Result<Trainer> {
        let cfg = config.unwrap_or_else(|| self.config.clone());
        let mut a = cfg.clone();
        let mut b = self.config.clone();
        a.run.iterations = 0;
        b.run.iterations = 0;
        a.run.checkpoint_every = 0;
        b.run.checkpoint_every = 0;
        if a != b {
            return error::config("checkpoint was written under a different configuration");
        }
        let (pol, params) = policy::from_value::<f64>(self.policy)?;
        let mut t = Trainer::new(cfg)?;
        if pol != t.policy || params.len() != t.policy.num_params() {
            return error::input("checkpoint policy does not match the configuration");
        }
        t.params = params;
        t.reference = self.reference.snapshot();
        t.optimizer = self.optimizer;
        t.iteration = self.iteration;
        t.entropy_trace = self.entropy_trace;
        t.library = self.library;
        t.index = RetrievalIndex::build(&t.train_pool)?;
        Ok(t)
    }
}
