use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{gridhouse, stepweb, words};
use crate::error::{self, Error, Result};
use crate::vocab::{Action, Cond};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Pick,
    Heat,
    Cool,
    Clean,
    Look,
    Pick2,
    StepTask,
}

impl Family {
    pub const HOUSE: [Family; 6] = [
        Family::Pick,
        Family::Heat,
        Family::Cool,
        Family::Clean,
        Family::Look,
        Family::Pick2,
    ];

    pub fn env(self) -> EnvKind {
        match self {
            Family::StepTask => EnvKind::StepWeb,
            _ => EnvKind::GridHouse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Pick => "Pick",
            Family::Heat => "Heat",
            Family::Cool => "Cool",
            Family::Clean => "Clean",
            Family::Look => "Look",
            Family::Pick2 => "Pick2",
            Family::StepTask => "StepTask",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        [Family::HOUSE.as_slice(), &[Family::StepTask]]
            .concat()
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .map_or_else(|| error::config(format!("unknown task family `{s}`")), Ok)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    Seen,
    Unseen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    GridHouse,
    StepWeb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    Heat,
    Cool,
    Clean,
    Light,
}

impl Operation {
    pub fn verb(self) -> &'static str {
        match self {
            Operation::Heat => "heat",
            Operation::Cool => "cool",
            Operation::Clean => "clean",
            Operation::Light => "examine",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Goal {
    House {
        object: usize,
        /// `None` for Look tasks, which finish at the lamp.
        receptacle: Option<usize>,
        operation: Option<Operation>,
        count: u8,
        /// Receptacle index of each target instance at reset.
        placements: Vec<usize>,
    },
    Web {
        site: usize,
        pages: Vec<Cond>,
        reference: Vec<Action>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub family: Family,
    pub description: Vec<String>,
    pub goal: Goal,
    pub split: Split,
    pub world_seed: u64,
}

impl Task {
    pub fn env(&self) -> EnvKind {
        self.family.env()
    }

    pub fn with_id(mut self, id: u64) -> Task {
        self.id = id;
        self
    }

    pub fn description_text(&self) -> String {
        self.description.join(" ")
    }
}

/// Pure function of family for GridHouse; by site for StepWeb.
pub fn split_of(family: Family, goal: &Goal) -> Split {
    match (family, goal) {
        (Family::Look | Family::Pick2, _) => Split::Unseen,
        (Family::StepTask, Goal::Web { site, .. }) => stepweb::split_of_site(*site),
        _ => Split::Seen,
    }
}

/// Deterministically generates the task for `(family, seed)`. The id is a
/// hash of the pair; pools renumber tasks sequentially.
pub fn generate_task(family: Family, seed: u64) -> Result<Task> {
    let goal = match family.env() {
        EnvKind::GridHouse => gridhouse::generate_goal(family, seed)?,
        EnvKind::StepWeb => stepweb::generate_goal(seed),
    };
    let description = words::describe(family, &goal);
    debug_assert!(description.iter().all(|w| words::is_word(w)));
    let split = split_of(family, &goal);
    let id = crate::seed::derive(seed, &[family as u64]);
    Ok(Task {
        id,
        family,
        description,
        goal,
        split,
        world_seed: seed,
    })
}

/// Per-family task counts. Families are visited in a fixed order so pools
/// are reproducible.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoolConfig(pub BTreeMap<Family, usize>);

impl PoolConfig {
    pub fn uniform(families: &[Family], count: usize) -> PoolConfig {
        PoolConfig(families.iter().map(|&f| (f, count)).collect())
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPool {
    pub tasks: Vec<Task>,
}

impl TaskPool {
    pub fn by_split(&self, split: Split) -> Vec<&Task> {
        self.tasks.iter().filter(|t| t.split == split).collect()
    }

    pub fn seen(&self) -> TaskPool {
        self.filtered(|t| t.split == Split::Seen)
    }

    pub fn filtered(&self, keep: impl Fn(&Task) -> bool) -> TaskPool {
        TaskPool {
            tasks: self.tasks.iter().filter(|t| keep(t)).cloned().collect(),
        }
    }

    pub fn get(&self, id: u64) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Stable digest of the pool contents; embedding caches key on it.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for t in &self.tasks {
            h.update(t.id.to_le_bytes());
            h.update(t.family.name().as_bytes());
            h.update(t.world_seed.to_le_bytes());
            h.update(t.description_text().as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn write_records(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for t in &self.tasks {
            let rec = TaskRecord {
                id: t.id,
                family: t.family,
                split: t.split,
                world_seed: t.world_seed,
                description: t.description.clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a pool record file, regenerating each task from its family and
    /// world seed and checking the stored description against it.
    pub fn read_records(path: &Path) -> Result<TaskPool> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut tasks = Vec::new();
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let task = generate_task(rec.family, rec.world_seed)?.with_id(rec.id);
            if task.description != rec.description || task.split != rec.split {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "record does not match regenerated task".into(),
                });
            }
            tasks.push(task);
        }
        Ok(TaskPool { tasks })
    }
}

#[derive(Serialize, Deserialize)]
struct TaskRecord {
    id: u64,
    family: Family,
    split: Split,
    world_seed: u64,
    description: Vec<String>,
}

pub fn build_task_pool(config: &PoolConfig, seed: u64) -> Result<TaskPool> {
    build_task_pool_from(config, seed, 0)
}

/// Like [`build_task_pool`] but numbering ids from `first_id`, so several
/// pools can coexist without id clashes.
pub fn build_task_pool_from(config: &PoolConfig, seed: u64, first_id: u64) -> Result<TaskPool> {
    if config.0.is_empty() {
        return error::config("task pool has no families");
    }
    let mut tasks = Vec::with_capacity(config.total());
    let mut seen = HashSet::new();
    for (&family, &count) in &config.0 {
        if count == 0 {
            return error::config(format!("family {} requested with zero tasks", family.name()));
        }
        let mut draw = 0u64;
        let mut made = 0;
        while made < count {
            let s = crate::seed::derive(seed, &[family as u64, draw]);
            draw += 1;
            if draw > 1000 * count as u64 {
                return error::config(format!(
                    "could not draw {count} distinct {} tasks",
                    family.name()
                ));
            }
            let task = generate_task(family, s)?;
            if !seen.insert((task.family, task.goal.clone())) {
                continue;
            }
            tasks.push(task.with_id(first_id + tasks.len() as u64));
            made += 1;
        }
    }
    Ok(TaskPool { tasks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_split_counts() {
        let cfg = PoolConfig::uniform(&Family::HOUSE, 10);
        let pool = build_task_pool(&cfg, 3).unwrap();
        assert_eq!(pool.len(), 60);
        assert_eq!(pool.by_split(Split::Seen).len(), 40);
        assert_eq!(pool.by_split(Split::Unseen).len(), 20);
        let ids: HashSet<u64> = pool.tasks.iter().map(|t| t.id).collect();
        assert_eq!(ids.len(), 60);
    }

    #[test]
    fn seen_only_pool() {
        let cfg = PoolConfig::uniform(&[Family::Pick, Family::Heat], 10);
        let pool = build_task_pool(&cfg, 11).unwrap();
        assert_eq!(pool.len(), 20);
        assert!(pool.tasks.iter().all(|t| t.split == Split::Seen));
        assert_eq!(pool, build_task_pool(&cfg, 11).unwrap());
    }

    #[test]
    fn zero_family_count_is_rejected() {
        let mut cfg = PoolConfig::uniform(&[Family::Pick], 3);
        cfg.0.insert(Family::Heat, 0);
        assert!(matches!(build_task_pool(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_family_name() {
        assert!(matches!(Family::parse("Juggle"), Err(Error::Config(_))));
        assert_eq!(Family::parse("pick2").unwrap(), Family::Pick2);
    }

    #[test]
    fn records_round_trip() {
        let cfg = PoolConfig::uniform(&[Family::Heat, Family::Look, Family::StepTask], 4);
        let pool = build_task_pool(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.jsonl");
        pool.write_records(&p).unwrap();
        assert_eq!(TaskPool::read_records(&p).unwrap(), pool);
    }
}
