//! Per-iteration metrics as JSON lines, and plot-ready series export.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{self, Error, Result};
use crate::trainer::IterationRecord;

pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    /// Opens `path` for appending, creating it if needed.
    pub fn append(path: &Path) -> Result<MetricsWriter> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsWriter { file })
    }

    pub fn write(&mut self, rec: &IterationRecord) -> Result<()> {
        let mut line = serde_json::to_vec(rec)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

type Getter = fn(&IterationRecord) -> f64;

const QUANTITIES: &[(&str, Getter)] = &[
    ("extractor_entropy", |r| r.extractor_entropy),
    ("extractor_kl", |r| r.extractor.kl),
    ("solver_kl", |r| r.solver.kl),
    ("extractor_loss", |r| r.extractor.total),
    ("solver_loss", |r| r.solver.total),
    ("joint_loss", |r| r.joint.total),
    ("clip_fraction", |r| r.joint.clip_fraction),
    ("skill_reward_mean", |r| r.skill_reward_mean),
    ("skill_reward_std", |r| r.skill_reward_std),
    ("source_success", |r| r.success_rates.get("source").copied().unwrap_or(0.0)),
    ("downstream_success", |r| r.success_rates.get("downstream").copied().unwrap_or(0.0)),
    ("valid_skills", |r| r.n_valid as f64),
    ("rollouts", |r| r.rollouts as f64),
];

pub fn quantities() -> Vec<&'static str> {
    QUANTITIES.iter().map(|q| q.0).collect()
}

/// `(iteration, value)` pairs for one named quantity.
pub fn series(records: &[IterationRecord], quantity: &str) -> Result<Vec<(u64, f64)>> {
    let Some((_, get)) = QUANTITIES.iter().find(|q| q.0 == quantity) else {
        return error::usage(format!("unknown quantity `{quantity}`; known: {}", quantities().join(", ")));
    };
    Ok(records.iter().map(|r| (r.iteration, get(r))).collect())
}

pub fn series_tsv(points: &[(u64, f64)]) -> String {
    let mut s = String::from("iteration\tvalue\n");
    for (i, v) in points {
        s.push_str(&format!("{i}\t{v}\n"));
    }
    s
}
