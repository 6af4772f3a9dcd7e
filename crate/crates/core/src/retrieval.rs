//! Hashed bag-of-words task embeddings and exhaustive cosine top-K search.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Task, TaskPool};
use crate::error::{self, Result};
use crate::seed::fnv1a;

pub const EMBED_DIM: usize = 64;
pub const EMBED_SEED: u64 = 0x5EED_E3BD;

/// Unit-norm dense embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

pub fn embed(description: &[String]) -> Result<Embedding> {
    if description.is_empty() {
        return error::input("cannot embed an empty description");
    }
    let mut v = vec![0.0; EMBED_DIM];
    for w in description {
        let h = fnv1a(EMBED_SEED, w.as_bytes());
        // the top bit picks a sign so collisions partly cancel
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % EMBED_DIM as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return error::input("description hashes to the zero vector");
    }
    Ok(Embedding(v.into_iter().map(|x| x / norm).collect()))
}

/// Candidates ordered by descending similarity, ties by ascending id.
pub fn rank<'a>(query: &Embedding, candidates: impl IntoIterator<Item = (u64, &'a Embedding)>) -> Vec<(u64, f64)> {
    let mut scored: Vec<(u64, f64)> = candidates.into_iter().map(|(id, e)| (id, query.cosine(e))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalIndex {
    pub entries: Vec<(u64, Embedding)>,
    pub built_from: String,
}

impl RetrievalIndex {
    pub fn build(pool: &TaskPool) -> Result<RetrievalIndex> {
        let entries = pool
            .tasks
            .iter()
            .map(|t| Ok((t.id, embed(&t.description)?)))
            .collect::<Result<_>>()?;
        Ok(RetrievalIndex {
            entries,
            built_from: pool.fingerprint(),
        })
    }

    pub fn get(&self, id: u64) -> Option<&Embedding> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, e)| e)
    }

    /// The source id followed by the `k` most similar other tasks.
    pub fn retrieve_topk(&self, source: &Task, k: usize) -> Result<Vec<u64>> {
        if k == 0 {
            return error::config("K must be at least 1");
        }
        let others = self.entries.iter().filter(|(id, _)| *id != source.id).count();
        if k > others {
            return error::config(format!("K = {k} exceeds the {others} candidate tasks"));
        }
        let q = embed(&source.description)?;
        let ranked = rank(&q, self.entries.iter().filter(|(id, _)| *id != source.id).map(|(id, e)| (*id, e)));
        let mut out = vec![source.id];
        out.extend(ranked.into_iter().take(k).map(|(id, _)| id));
        Ok(out)
    }

    /// Reads the cache at `path` when it matches `pool`, else rebuilds and
    /// rewrites it.
    pub fn cached(pool: &TaskPool, path: &Path) -> Result<RetrievalIndex> {
        let fp = pool.fingerprint();
        if let Ok(text) = fs::read_to_string(path) {
            if let Ok(idx) = serde_json::from_str::<RetrievalIndex>(&text) {
                if idx.built_from == fp && idx.entries.len() == pool.len() {
                    return Ok(idx);
                }
            }
            log::info!("embedding cache {} is stale, rebuilding", path.display());
        }
        let idx = RetrievalIndex::build(pool)?;
        fs::write(path, serde_json::to_string(&idx)?)?;
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_task_pool, Family, PoolConfig};

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn embedding_is_unit_and_deterministic() {
        let d = words("heat the mug with microwave until hot then place on shelf");
        let a = embed(&d).unwrap();
        assert_eq!(a, embed(&d).unwrap());
        let n: f64 = a.0.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-9);
        assert!(embed(&[]).is_err());
    }

    #[test]
    fn source_first_then_duplicate() {
        let pool = build_task_pool(&PoolConfig::uniform(&Family::HOUSE, 8), 3).unwrap();
        let idx = RetrievalIndex::build(&pool).unwrap();
        let src = &pool.tasks[0];
        let got = idx.retrieve_topk(src, 3).unwrap();
        assert_eq!(got[0], src.id);
        assert_eq!(got.len(), 4);
        assert!(!got[1..].contains(&src.id));
        assert!(idx.retrieve_topk(src, pool.len()).is_err());
    }

    #[test]
    fn cache_rebuilds_on_fingerprint_change() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        let a = build_task_pool(&PoolConfig::uniform(&[Family::Pick], 5), 1).unwrap();
        let b = build_task_pool(&PoolConfig::uniform(&[Family::Pick], 5), 2).unwrap();
        let ia = RetrievalIndex::cached(&a, &path).unwrap();
        assert_eq!(RetrievalIndex::cached(&a, &path).unwrap(), ia);
        let ib = RetrievalIndex::cached(&b, &path).unwrap();
        assert_eq!(ib.built_from, b.fingerprint());
    }
}
