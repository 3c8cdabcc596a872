//! Shared synthetic scenario for the integration tests.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

use elastocal::design::{build_candidate_grid, default_force_directions, CandidateGrid, ExperimentPlan, GridSpec, PlanEntry, TestPose};
use elastocal::ident::LoadedMeasurement;
use elastocal::model::presets::heavy_6r;
use elastocal::model::{JointState, Vec3, Wrench};
use elastocal::seed::derive_seed;
use elastocal::sim::{simulate_loaded_measurement, GroundTruth, NoiseSpec};
use elastocal::stiffness::{CompensatorGeometry, CompensatorModel, SpringSign};
use nalgebra::{Isometry3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const L: f64 = 0.18472;
pub const A_X: f64 = 0.68593;
pub const A_Y: f64 = 0.12330;

pub const K_THETA2_0: f64 = 3e6;
pub const K_C: f64 = 1e7;
pub const S_0: f64 = 0.45;

/// Tool load magnitude of the calibration and validation experiments, N.
pub const LOAD: f64 = 3000.0;

pub fn geometry() -> CompensatorGeometry {
    CompensatorGeometry {
        link_length: L,
        a_x: A_X,
        a_y: A_Y,
        sign: SpringSign::Plus,
    }
}

pub fn compensator() -> CompensatorModel {
    CompensatorModel::new(geometry(), K_C, S_0, K_THETA2_0).unwrap()
}

pub fn truth() -> GroundTruth {
    let mut t = GroundTruth::new(heavy_6r(), compensator());
    t.base_perturbation = Isometry3::new(
        Vector3::new(0.002, -0.0015, 0.001),
        Vector3::new(0.001, -0.002, 0.5f64.to_radians()),
    );
    t.tool_perturbation = Isometry3::new(Vector3::new(0.0005, 0.001, -0.002), Vector3::new(0.003, -0.002, 0.004));
    t.compensator_frame = Isometry3::new(Vector3::new(0.35, 0.0, 0.675), Vector3::new(FRAC_PI_2, 0.0, 0.0));
    t
}

/// Joint-2 angles of the compensator sweep, rad.
pub fn trace_q2() -> Vec<f64> {
    [0.0, -30.0, -60.0, -90.0, -120.0, -140.0].iter().map(|d: &f64| d.to_radians()).collect()
}

/// Joint-2 angles of the five identification groups, rad.
pub fn group_q2() -> Vec<f64> {
    [-20.0, -45.0, -70.0, -95.0, -120.0].iter().map(|d: &f64| d.to_radians()).collect()
}

pub fn test_pose() -> TestPose {
    TestPose {
        q0: JointState::from_slice(&[0.3, -1.0, 0.6, 0.4, 1.0, -0.3]),
        f0: Wrench::force(Vec3::new(0.45, -0.35, -0.82).normalize() * LOAD),
    }
}

pub fn grid_spec(seed: u64) -> GridSpec {
    GridSpec {
        size: 200,
        q2_values: group_q2(),
        force_directions: default_force_directions(),
        force_magnitudes: vec![LOAD],
        min_singular_ratio: 0.05,
        seed,
    }
}

pub fn grid(seed: u64) -> CandidateGrid {
    let model = heavy_6r();
    CandidateGrid::new(&model, build_candidate_grid(&model, &grid_spec(seed)).unwrap()).unwrap()
}

/// Hand-picked 15-entry plan: three configurations per group with
/// horizontal and vertical loads.
pub fn hand_plan() -> ExperimentPlan {
    let base = [[0.2, 0.5, 0.3, 0.9], [-0.6, 1.0, -1.1, -0.7], [1.1, 0.2, 2.0, 1.3]];
    let dirs = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, -1.0)];
    let mut entries = Vec::new();
    for (g, &q2) in group_q2().iter().enumerate() {
        for (i, [q1, q3, q4, q5]) in base.iter().enumerate() {
            entries.push(PlanEntry {
                q: JointState::from_slice(&[q1 + 0.1 * g as f64, q2, *q3, *q4, *q5, 0.4 - 0.3 * i as f64]),
                wrench: Wrench::force(dirs[(i + g) % 3] * LOAD),
            });
        }
    }
    ExperimentPlan::new(entries)
}

fn random_config(rng: &mut ChaCha8Rng) -> JointState {
    let mut q5: f64 = rng.random_range(0.4..1.9);
    if rng.random_bool(0.5) {
        q5 = -q5;
    }
    JointState::from_slice(&[
        rng.random_range(-1.2..1.2),
        rng.random_range(-2.3..-0.2),
        rng.random_range(-0.4..1.6),
        rng.random_range(-PI..PI),
        q5,
        rng.random_range(-PI..PI),
    ])
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.2 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Held-out validation configurations anywhere in the working range.
pub fn validation_plan(count: usize, seed: u64) -> ExperimentPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "validation", 0));
    ExperimentPlan::new(
        (0..count)
            .map(|_| PlanEntry {
                q: random_config(&mut rng),
                wrench: Wrench::force(random_direction(&mut rng) * LOAD),
            })
            .collect(),
    )
}

/// Validation configurations in the machining region around the test pose.
pub fn machining_validation_plan(count: usize, seed: u64) -> ExperimentPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "machining", 0));
    let t = test_pose();
    ExperimentPlan::new(
        (0..count)
            .map(|_| {
                let q = t.q0.0.map(|v| v + rng.random_range(-0.15..0.15));
                let dir = (t.f0.force.normalize() + random_direction(&mut rng) * 0.2).normalize();
                PlanEntry {
                    q: JointState(q),
                    wrench: Wrench::force(dir * LOAD),
                }
            })
            .collect(),
    )
}

/// Measures every plan entry with ids offset by `first_id`.
pub fn measure(truth: &GroundTruth, plan: &ExperimentPlan, noise: &NoiseSpec, repetitions: usize, first_id: usize) -> Vec<LoadedMeasurement> {
    plan.entries
        .iter()
        .enumerate()
        .flat_map(|(i, e)| simulate_loaded_measurement(truth, first_id + i, &e.q, &e.wrench, noise, repetitions).unwrap())
        .collect()
}
