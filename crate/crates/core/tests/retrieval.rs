mod common;

use knm_core::retrieval::{knm_distribution, Neighbor};
use knm_core::{Datastore, Error, NeighborSet, RetrievalIndex, StoreMode, TokenId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::exhaustive_scan;

fn random_store(rng: &mut ChaCha8Rng, n: usize, dim: usize, vocab: u32) -> Datastore {
    let keys: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let values = (0..n).map(|_| TokenId(rng.gen_range(0..vocab))).collect();
    Datastore::from_parts(StoreMode::Full, dim, n as u64, 0, keys, values).unwrap()
}

fn pairs(set: &NeighborSet) -> Vec<(usize, f64)> {
    set.items.iter().map(|n| (n.index, n.distance)).collect()
}

fn set(items: &[(f64, u32)]) -> NeighborSet {
    NeighborSet {
        k: items.len(),
        items: items
            .iter()
            .enumerate()
            .map(|(index, &(distance, v))| Neighbor {
                index,
                distance,
                value: TokenId(v),
            })
            .collect(),
    }
}

#[test]
fn search_equals_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let store = random_store(&mut rng, 1000, 16, 50);
    let keys = store.keys().to_vec();
    let index = RetrievalIndex::new(store);
    for _ in 0..100 {
        let q: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let got = index.search(&q, 8).unwrap();
        assert_eq!(pairs(&got), exhaustive_scan(&keys, 16, &q, 8));
        for n in &got.items {
            assert_eq!(n.value, index.store().value(n.index));
        }
    }
}

#[test]
fn partition_count_does_not_change_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let store = random_store(&mut rng, 10_000, 8, 30);
    let keys = store.keys().to_vec();
    let queries: Vec<Vec<f32>> = (0..20)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect();
    let reference: Vec<_> = queries.iter().map(|q| exhaustive_scan(&keys, 8, q, 16)).collect();
    for parts in [1, 3, 4, 7, 64] {
        let index = RetrievalIndex::with_partitions(store.clone(), parts);
        for (q, want) in queries.iter().zip(&reference) {
            assert_eq!(&pairs(&index.search(q, 16).unwrap()), want, "{parts} partitions");
        }
    }
}

#[test]
fn ties_break_by_entry_index() {
    let keys = vec![1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
    let values = (0..5).map(TokenId).collect();
    let index = RetrievalIndex::new(Datastore::from_parts(StoreMode::Full, 2, 5, 0, keys, values).unwrap());
    let got = index.search(&[0.0, 0.0], 5).unwrap();
    assert_eq!(got.items.iter().map(|n| n.index).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
    assert!(got.items.iter().all(|n| n.distance == 1.0));
}

#[test]
fn search_examples_and_errors() {
    let store = Datastore::from_parts(StoreMode::Full, 3, 1, 0, vec![0.5, 0.25, -2.0], vec![TokenId(9)]).unwrap();
    let index = RetrievalIndex::new(store);
    let one = index.search(&[0.5, 0.25, -2.0], 8).unwrap();
    assert_eq!(
        one.items,
        [Neighbor {
            index: 0,
            distance: 0.0,
            value: TokenId(9)
        }]
    );
    assert!(matches!(
        index.search(&[0.0; 2], 1),
        Err(Error::DimensionMismatch { expected: 3, found: 2 })
    ));
    assert!(matches!(index.search(&[0.0; 3], 0), Err(Error::InvalidArgument(_))));

    let empty = RetrievalIndex::new(Datastore::from_parts(StoreMode::Decoupled, 3, 10, 0, vec![], vec![]).unwrap());
    let none = empty.search(&[0.0; 3], 4).unwrap();
    assert!(none.is_empty());
    assert!(knm_distribution(&none, 10).is_none());
}

#[test]
fn truncation_equals_smaller_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let index = RetrievalIndex::new(random_store(&mut rng, 500, 6, 20));
    for _ in 0..20 {
        let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let big = index.search(&q, 32).unwrap();
        for k in [1, 2, 8, 31] {
            assert_eq!(big.truncated(k), index.search(&q, k).unwrap());
        }
    }
}

#[test]
fn distribution_examples() {
    let p = knm_distribution(&set(&[(0.0, 3)]), 5).unwrap();
    assert_eq!(p.probs(), [0.0, 0.0, 0.0, 1.0, 0.0]);

    let p = knm_distribution(&set(&[(0.0, 1), (2f64.ln(), 2)]), 4).unwrap();
    assert!((p.prob(TokenId(1)) - 2.0 / 3.0).abs() < 1e-12);
    assert!((p.prob(TokenId(2)) - 1.0 / 3.0).abs() < 1e-12);

    let p = knm_distribution(&set(&[(0.0, 1), (0.0, 1), (0.0, 2)]), 4).unwrap();
    assert!((p.prob(TokenId(1)) - 2.0 / 3.0).abs() < 1e-12);
    assert!((p.prob(TokenId(2)) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn far_neighbors_do_not_underflow() {
    let p = knm_distribution(&set(&[(2000.0, 1), (2000.0 + 2f64.ln(), 2)]), 3).unwrap();
    assert!((p.prob(TokenId(1)) - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn f32_keys_rank_like_f64_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 2000;
    let dim = 16;
    let wide: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let narrow: Vec<f32> = wide.iter().map(|&x| x as f32).collect();
    let index = RetrievalIndex::new(
        Datastore::from_parts(StoreMode::Full, dim, n as u64, 0, narrow, vec![TokenId(0); n]).unwrap(),
    );
    for _ in 0..50 {
        let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mut exact: Vec<(usize, f64)> = wide
            .chunks(dim)
            .enumerate()
            .map(|(i, row)| (i, row.iter().zip(&q).map(|(a, &b)| (a - b as f64).powi(2)).sum()))
            .collect();
        exact.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let want: Vec<usize> = exact.iter().take(8).map(|e| e.0).collect();
        let got: Vec<usize> = index.search(&q, 8).unwrap().items.iter().map(|n| n.index).collect();
        assert_eq!(got, want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_on_random_instances(
        seed in any::<u64>(),
        n in 0usize..3000,
        dim in 1usize..20,
        k in 1usize..40,
        coarse in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse grids force many exact distance ties.
        let draw = |rng: &mut ChaCha8Rng| if coarse { rng.gen_range(-2i32..=2) as f32 } else { rng.gen_range(-1.0f32..1.0) };
        let keys: Vec<f32> = (0..n * dim).map(|_| draw(&mut rng)).collect();
        let q: Vec<f32> = (0..dim).map(|_| draw(&mut rng)).collect();
        let store = Datastore::from_parts(StoreMode::Full, dim, n as u64, 0, keys.clone(), vec![TokenId(1); n]).unwrap();
        let got = RetrievalIndex::with_partitions(store, 1 + (seed % 8) as usize).search(&q, k).unwrap();
        prop_assert_eq!(got.len(), k.min(n));
        prop_assert_eq!(pairs(&got), exhaustive_scan(&keys, dim, &q, k));
    }

    #[test]
    fn distribution_properties(
        items in prop::collection::vec((0.0f64..30.0, 0u32..12), 1..16),
        shift in 0.0f64..50.0,
    ) {
        let mut items = items;
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        let p = knm_distribution(&set(&items), 12).unwrap();
        prop_assert!((p.mass() - 1.0).abs() <= 1e-9);
        for y in 0..12u32 {
            let present = items.iter().any(|&(_, v)| v == y);
            prop_assert_eq!(p.prob(TokenId(y)) > 0.0, present);
        }
        let shifted: Vec<_> = items.iter().map(|&(d, v)| (d + shift, v)).collect();
        let q = knm_distribution(&set(&shifted), 12).unwrap();
        for (a, b) in p.probs().iter().zip(q.probs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
