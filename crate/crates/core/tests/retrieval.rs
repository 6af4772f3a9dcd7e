use proptest::prelude::*;

use evorl::env::{build_task_pool, Family, PoolConfig};
use evorl::retrieval::{embed, RetrievalIndex};
use evorl::Error;

fn pool(per_family: usize, seed: u64) -> evorl::env::TaskPool {
    build_task_pool(&PoolConfig::uniform(&Family::HOUSE, per_family), seed).unwrap()
}

#[test]
fn top_k_matches_exhaustive_sort() {
    let p = pool(9, 4);
    assert!(p.len() >= 50);
    let idx = RetrievalIndex::build(&p).unwrap();
    for src in p.tasks.iter().step_by(7) {
        let got = idx.retrieve_topk(src, 4).unwrap();
        let q = embed(&src.description).unwrap();
        let mut all: Vec<(u64, f64)> = p
            .tasks
            .iter()
            .filter(|t| t.id != src.id)
            .map(|t| {
                let e = embed(&t.description).unwrap();
                (t.id, q.0.iter().zip(&e.0).map(|(a, b)| a * b).sum())
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let want: Vec<u64> = std::iter::once(src.id).chain(all.iter().take(4).map(|x| x.0)).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn duplicate_description_ranks_first() {
    let mut p = pool(3, 5);
    let mut dup = p.tasks[2].clone();
    dup.id = 999;
    p.tasks.push(dup);
    let idx = RetrievalIndex::build(&p).unwrap();
    let got = idx.retrieve_topk(&p.tasks[2], 3).unwrap();
    assert_eq!(got[1], 999);
}

#[test]
fn k_beyond_pool_is_a_config_error() {
    let p = pool(1, 6);
    let idx = RetrievalIndex::build(&p).unwrap();
    assert!(matches!(idx.retrieve_topk(&p.tasks[0], p.len()), Err(Error::Config(_))));
    assert!(idx.retrieve_topk(&p.tasks[0], p.len() - 1).is_ok());
}

#[test]
fn empty_description_is_an_input_error() {
    assert!(matches!(embed(&[]), Err(Error::Input(_))));
}

#[test]
fn cache_survives_reload_and_tracks_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.json");
    let a = pool(2, 7);
    let first = RetrievalIndex::cached(&a, &path).unwrap();
    assert_eq!(RetrievalIndex::cached(&a, &path).unwrap(), first);
    let b = pool(2, 8);
    let second = RetrievalIndex::cached(&b, &path).unwrap();
    assert_eq!(second, RetrievalIndex::build(&b).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embeddings_are_unit_and_deterministic(words in prop::collection::vec("[a-z]{1,8}", 1..12)) {
        let a = embed(&words).unwrap();
        prop_assert_eq!(&a, &embed(&words).unwrap());
        let n: f64 = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-9);
    }
}
