//! Persistent skill library keyed by source-task description.
//!
//! On disk: a header line `{"format", "entries"}` followed by one JSON entry
//! per line. The header count lets a reader detect truncation at a line
//! boundary.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{embed, rank, Embedding};
use crate::skill::Skill;

const FORMAT: &str = "evorl-library/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub skill: Skill,
    pub source_task_id: u64,
    pub source_description: Vec<String>,
    pub skill_reward: f64,
    pub iteration: u64,
    pub embedding: Embedding,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SkillLibrary {
    pub entries: Vec<LibraryEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    entries: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    /// Most similar source description.
    Relevant,
    /// Least similar source description.
    Irrelevant,
}

impl SkillLibrary {
    pub fn new() -> SkillLibrary {
        SkillLibrary::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, skill: Skill, source_description: &[String], skill_reward: f64, iteration: u64) -> Result<()> {
        let embedding = embed(source_description)?;
        self.entries.push(LibraryEntry {
            source_task_id: skill.source_task_id,
            skill,
            source_description: source_description.to_vec(),
            skill_reward,
            iteration,
            embedding,
        });
        Ok(())
    }

    /// Index of the entry to inject for a task described by `description`.
    /// Ties go to the lowest entry index.
    pub fn select(&self, description: &[String], relevance: Relevance) -> Result<Option<usize>> {
        if self.entries.is_empty() {
            return Ok(None);
        }
        let q = embed(description)?;
        let ranked = rank(&q, self.entries.iter().enumerate().map(|(i, e)| (i as u64, &e.embedding)));
        Ok(Some(match relevance {
            Relevance::Relevant => ranked[0].0 as usize,
            Relevance::Irrelevant => {
                let low = ranked.last().unwrap().1;
                ranked.iter().filter(|r| r.1 == low).map(|r| r.0).min().unwrap() as usize
            }
        }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(
            &mut out,
            &Header {
                format: FORMAT.into(),
                entries: self.entries.len(),
            },
        )?;
        out.write_all(b"\n")?;
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// All-or-nothing load; any defect is reported with its line number.
    pub fn load(path: &Path) -> Result<SkillLibrary> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let header: Header = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l?).map_err(|e| parse_err(1, format!("bad header: {e}")))?,
            None => return Err(parse_err(1, "empty library file".into())),
        };
        if header.format != FORMAT {
            return Err(parse_err(1, format!("unknown format {:?}", header.format)));
        }
        let mut entries = Vec::with_capacity(header.entries);
        for (i, l) in lines {
            let l = l?;
            let e: LibraryEntry = serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e.to_string()))?;
            entries.push(e);
        }
        if entries.len() != header.entries {
            return Err(parse_err(
                entries.len() + 2,
                format!("header promises {} entries, file holds {}", header.entries, entries.len()),
            ));
        }
        Ok(SkillLibrary { entries })
    }
}
