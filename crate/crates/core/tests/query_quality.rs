//! Query behavior against the brute-force oracle on synthetic data.

use std::sync::Arc;

use dblsh::dataset::{euclidean, generate_synthetic, Distribution, DEFAULT_NN_TARGET};
use dblsh::eval::{evaluate_index, GroundTruth};
use dblsh::query::{Bucketing, RcNnResult, SearchState};
use dblsh::{DbLshIndex, IndexParams, PointId};

/// Pilot on this fixture (5 seeds): recall@50 between 0.90 and 0.92.
/// The threshold leaves room for seed-to-seed variation.
const RECALL_AT_50_FLOOR: f64 = 0.8;

#[test]
fn recall_at_50_with_practical_parameters() {
    let dist = Distribution::GaussianClusters {
        clusters: 10,
        spread: 0.05,
    };
    let all = generate_synthetic(10_100, 32, dist, 31).unwrap();
    let (data, queries) = all.split_tail(100).unwrap();
    let scale = data.nn_scale_factor(DEFAULT_NN_TARGET, 200, 1).unwrap();
    let data = Arc::new(data);
    let truth = GroundTruth::compute(&data, &queries, 50).unwrap();
    // 2tL = 500 candidates before the k answers
    let params = IndexParams::practical(1.5, 9.0, 50, 10, 5, 8)
        .unwrap()
        .with_scale(scale);
    let idx = DbLshIndex::build(data, params).unwrap();
    let pass = evaluate_index(&idx, &queries, &truth, Bucketing::Dynamic).unwrap();
    assert!(
        pass.recall >= RECALL_AT_50_FLOOR,
        "recall@50 {} below {RECALL_AT_50_FLOOR}",
        pass.recall
    );
    assert!(pass.overall_ratio >= 1.0 - 1e-9);
}

#[test]
fn found_rounds_are_within_c_r() {
    let data = generate_synthetic(1000, 16, Distribution::UniformCube, 5).unwrap();
    let scale = data.nn_scale_factor(DEFAULT_NN_TARGET, 100, 2).unwrap();
    let data = Arc::new(data);
    let params = IndexParams::practical(2.0, 4.0, 5, 4, 6, 3)
        .unwrap()
        .with_scale(scale);
    let idx = DbLshIndex::build(data.clone(), params).unwrap();
    let queries = generate_synthetic(50, 16, Distribution::UniformCube, 6).unwrap();
    let mut found = 0;
    for q in queries.points() {
        for r in [1.0, 2.0, 4.0, 8.0] {
            let mut state = SearchState::for_index(&idx, 1);
            if let RcNnResult::Found(n) = idx.rc_nn(q.coords, r, &mut state).unwrap() {
                found += 1;
                let d = euclidean(q.coords, data.point(n.id));
                assert_eq!(d, n.distance);
                assert!(d * scale <= params.c * r);
            }
        }
    }
    assert!(found > 0);
}

#[test]
fn rc_nn_shares_visited_points_across_calls() {
    let data = Arc::new(generate_synthetic(2000, 8, Distribution::UniformCube, 9).unwrap());
    let params = IndexParams::practical(1.5, 4.0, 3, 3, 4, 1)
        .unwrap()
        .with_scale(20.0);
    let idx = DbLshIndex::build(data, params).unwrap();
    let q = [0.5; 8];
    let mut state = SearchState::for_index(&idx, 1);
    let mut last = 0;
    for i in 0..6 {
        let r = 1.5f64.powi(i);
        let result = idx.rc_nn(&q, r, &mut state).unwrap();
        assert!(state.verified() >= last);
        assert!(state.verified() <= params.candidate_budget(1));
        last = state.verified();
        if result != RcNnResult::NotFound {
            break;
        }
    }
}

#[test]
fn fixed_buckets_never_beat_the_candidate_budget() {
    let data = Arc::new(generate_synthetic(3000, 12, Distribution::UniformCube, 4).unwrap());
    let params = IndexParams::practical(1.5, 9.0, 4, 5, 3, 2)
        .unwrap()
        .with_scale(10.0);
    let idx = DbLshIndex::build(data, params).unwrap();
    for i in 0..30 {
        let q = idx.dataset().point(i as PointId * 7).to_vec();
        let out = idx.fb_ck_ann(&q, 5).unwrap();
        assert!(out.candidates_verified <= params.candidate_budget(5));
        assert_eq!(out.neighbors.len(), 5);
    }
}
