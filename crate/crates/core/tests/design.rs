mod common;

use common::{grid, grid_spec, test_pose};
use elastocal::design::{build_candidate_grid, optimize_plan, test_pose_block, CandidateGrid, SearchConfig};
use elastocal::model::presets::heavy_6r;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_grid(size: usize, groups: usize) -> CandidateGrid {
    let model = heavy_6r();
    let mut spec = grid_spec(21);
    spec.size = size;
    spec.q2_values.truncate(groups);
    CandidateGrid::new(&model, build_candidate_grid(&model, &spec).unwrap()).unwrap()
}

/// Every k-subset (or k-multiset) of 0..n in lexicographic order.
fn combinations(n: usize, k: usize, repeats: bool) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, repeats: bool, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(if repeats { i } else { i + 1 }, n, k, repeats, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, repeats, &mut Vec::new(), &mut out);
    out
}

fn exhaustive_min(grid: &CandidateGrid, m: usize, repeats: bool) -> f64 {
    let a0 = test_pose_block(&heavy_6r(), &test_pose()).unwrap();
    combinations(grid.len(), m, repeats)
        .iter()
        .map(|c| grid.criterion(&a0, c))
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn exchange_finds_exhaustive_optimum_on_small_grid() {
    let grid = toy_grid(12, 2);
    let best = exhaustive_min(&grid, 6, false);
    assert!(best.is_finite());
    let found = optimize_plan(&grid, 6, &test_pose(), &heavy_6r(), &SearchConfig::default()).unwrap();
    assert!(found.criterion <= best * (1.0 + 1e-9), "{} vs exhaustive {best}", found.criterion);
    let mut distinct = found.indices.clone();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 6);
}

#[test]
fn repeats_reach_the_multiset_optimum() {
    let grid = toy_grid(6, 1);
    let best = exhaustive_min(&grid, 8, true);
    let config = SearchConfig {
        allow_repeats: true,
        ..SearchConfig::default()
    };
    let found = optimize_plan(&grid, 8, &test_pose(), &heavy_6r(), &config).unwrap();
    assert!(found.criterion <= best * (1.0 + 1e-9), "{} vs exhaustive {best}", found.criterion);
    assert!(optimize_plan(&grid, 8, &test_pose(), &heavy_6r(), &SearchConfig::default()).is_err());
}

#[test]
fn optimized_plan_beats_random_subsets() {
    let grid = grid(3);
    let model = heavy_6r();
    let config = SearchConfig {
        restarts: 4,
        min_groups: 3,
        ..SearchConfig::default()
    };
    let found = optimize_plan(&grid, 15, &test_pose(), &model, &config).unwrap();
    assert!(found.plan.group_count() >= 3);
    let a0 = test_pose_block(&model, &test_pose()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let idx = sample(&mut rng, grid.len(), 15).into_vec();
        assert!(found.criterion <= grid.criterion(&a0, &idx));
    }
}

#[test]
fn search_is_reproducible_from_its_seed() {
    let grid = toy_grid(40, 3);
    let config = SearchConfig {
        restarts: 3,
        seed: 17,
        ..SearchConfig::default()
    };
    let run = || optimize_plan(&grid, 9, &test_pose(), &heavy_6r(), &config).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.indices, b.indices);
    assert_eq!(a.criterion.to_bits(), b.criterion.to_bits());
    assert_eq!(a.evaluations, b.evaluations);
}
