//! Test-pose based selection of measurement configurations.
//!
//! The criterion is `trace(A0 Σ_g (Σ_{i∈g} A_iᵀ A_i)⁻¹ A0ᵀ)`, where `g`
//! runs over the joint-2 groups of the plan, `A_i` stacks the position-row
//! observation blocks of all markers of entry `i`, and `A0` is the
//! tool-point block of the test pose. Smaller is better.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{stacked_observation, GROUP_TOLERANCE};
use crate::linalg;
use crate::model::{JointState, RobotModel, Vec3, Wrench};
use crate::seed::derive_seed;
use crate::stiffness::{COMPENSATED_JOINT, SINGULARITY_RATIO};

/// Machining-representative configuration and load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPose {
    pub q0: JointState,
    pub f0: Wrench,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub q: JointState,
    pub wrench: Wrench,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub entries: Vec<PlanEntry>,
}

impl ExperimentPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Group index of each entry (joint-2 angle equality within tolerance);
    /// all zeros for single-joint models.
    pub fn grouping(&self) -> Vec<usize> {
        let mut keys: Vec<f64> = Vec::new();
        self.entries
            .iter()
            .map(|e| {
                if e.q.len() <= COMPENSATED_JOINT {
                    return 0;
                }
                let v = e.q.0[COMPENSATED_JOINT];
                match keys.iter().position(|k| (k - v).abs() < GROUP_TOLERANCE) {
                    Some(i) => i,
                    None => {
                        keys.push(v);
                        keys.len() - 1
                    }
                }
            })
            .collect()
    }

    pub fn group_count(&self) -> usize {
        self.grouping().into_iter().max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyDataset("plan has no entries"));
        }
        for e in &self.entries {
            model.check_joints(&e.q)?;
        }
        Ok(())
    }
}

/// Position rows of the test-pose block at the tool point (3 × n).
pub fn test_pose_block(model: &RobotModel, test: &TestPose) -> Result<DMatrix<f64>> {
    model.check_joints(&test.q0)?;
    if test.f0.is_zero() {
        return Err(Error::invalid("test_pose.force", "test load must be nonzero"));
    }
    let chain = model.chain(&test.q0.0);
    let j = chain.jacobian_at(&chain.tool.translation.vector);
    let ratio = linalg::singular_ratio(&j);
    if ratio < SINGULARITY_RATIO {
        return Err(Error::Singular { ratio });
    }
    let torques = j.transpose() * DVector::from_column_slice(test.f0.to_vector().as_slice());
    let mut block = j.rows(0, 3).into_owned();
    for (c, tau) in torques.iter().enumerate() {
        block.column_mut(c).scale_mut(*tau);
    }
    Ok(block)
}

/// Sum over groups of `trace(A0 N_g⁻¹ A0ᵀ)`; `+∞` if any group's normal
/// matrix cannot be inverted.
fn grouped_trace(a0: &DMatrix<f64>, normals: &[DMatrix<f64>]) -> f64 {
    normals.iter().map(|n| group_trace(a0, n)).sum()
}

fn group_trace(a0: &DMatrix<f64>, normal: &DMatrix<f64>) -> f64 {
    let (condition, _) = linalg::equilibrated_condition(normal);
    if condition.is_nan() || condition >= linalg::CONDITION_LIMIT {
        return f64::INFINITY;
    }
    match normal.clone().cholesky() {
        Some(chol) => {
            let x = chol.solve(&a0.transpose());
            (a0 * x).trace()
        }
        None => f64::INFINITY,
    }
}

pub fn plan_criterion(plan: &ExperimentPlan, test: &TestPose, model: &RobotModel) -> Result<f64> {
    plan.validate(model)?;
    let a0 = test_pose_block(model, test)?;
    let n = model.n_joints();
    let grouping = plan.grouping();
    let count = grouping.iter().max().map_or(0, |m| m + 1);
    let mut normals = vec![DMatrix::zeros(n, n); count];
    for (entry, g) in plan.entries.iter().zip(grouping) {
        let a = stacked_observation(model, &entry.q, &entry.wrench)?;
        normals[g] += a.transpose() * &a;
    }
    Ok(grouped_trace(&a0, &normals))
}

/// Discrete candidate set with cached normal matrices.
#[derive(Clone, Debug)]
pub struct CandidateGrid {
    pub entries: Vec<PlanEntry>,
    normals: Vec<DMatrix<f64>>,
    groups: Vec<usize>,
}

impl CandidateGrid {
    pub fn new(model: &RobotModel, entries: Vec<PlanEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyDataset("candidate grid is empty"));
        }
        let plan = ExperimentPlan::new(entries);
        plan.validate(model)?;
        let groups = plan.grouping();
        let normals = plan
            .entries
            .iter()
            .map(|e| stacked_observation(model, &e.q, &e.wrench).map(|a| a.transpose() * &a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            entries: plan.entries,
            normals,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn plan(&self, indices: &[usize]) -> ExperimentPlan {
        ExperimentPlan::new(indices.iter().map(|&i| self.entries[i].clone()).collect())
    }

    fn group_count(&self) -> usize {
        self.groups.iter().max().map_or(0, |m| m + 1)
    }

    /// Criterion of the plan made of grid entries `indices`.
    pub fn criterion(&self, a0: &DMatrix<f64>, indices: &[usize]) -> f64 {
        let n = a0.ncols();
        let mut normals = vec![DMatrix::zeros(n, n); self.group_count()];
        for &i in indices {
            normals[self.groups[i]] += &self.normals[i];
        }
        normals
            .iter()
            .zip(0..)
            .filter(|(_, g)| indices.iter().any(|&i| self.groups[i] == *g))
            .map(|(nm, _)| group_trace(a0, nm))
            .sum()
    }
}

/// Fixed set of unit load directions used when building grids.
pub fn default_force_directions() -> Vec<Vec3> {
    vec![
        Vec3::new(0.0, 0.0, -1.0),
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
    ]
}

/// Recipe for a random candidate grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub size: usize,
    /// Admissible joint-2 angles; each candidate takes one of them.
    pub q2_values: Vec<f64>,
    pub force_directions: Vec<Vec3>,
    pub force_magnitudes: Vec<f64>,
    /// Candidates whose Jacobian singular-value ratio falls below this are
    /// discarded.
    pub min_singular_ratio: f64,
    pub seed: u64,
}

/// Random feasible, well-conditioned candidates with q2 on the declared set.
pub fn build_candidate_grid(model: &RobotModel, spec: &GridSpec) -> Result<Vec<PlanEntry>> {
    if spec.size == 0 || spec.force_directions.is_empty() || spec.force_magnitudes.is_empty() {
        return Err(Error::invalid("plan", "grid size, force directions and magnitudes must be nonempty"));
    }
    let n = model.n_joints();
    if n > COMPENSATED_JOINT && spec.q2_values.is_empty() {
        return Err(Error::invalid("plan.q2_values", "at least one q2 value is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "grid", 0));
    let mut out = Vec::with_capacity(spec.size);
    let mut attempts = 0usize;
    while out.len() < spec.size {
        attempts += 1;
        if attempts > 1000 * spec.size {
            return Err(Error::InfeasiblePlan);
        }
        let mut q = DVector::zeros(n);
        for (j, lim) in model.limits().iter().enumerate() {
            q[j] = if j == COMPENSATED_JOINT && !spec.q2_values.is_empty() {
                spec.q2_values[rng.random_range(0..spec.q2_values.len())]
            } else {
                // Stay within ±180° so that wrist joints do not wind up.
                let lo = lim.min.max(-std::f64::consts::PI);
                let hi = lim.max.min(std::f64::consts::PI);
                rng.random_range(lo..hi)
            };
        }
        let q = JointState(q);
        if model.check_joints(&q).is_err() {
            continue;
        }
        let chain = model.chain(&q.0);
        if linalg::singular_ratio(&chain.jacobian_at(&chain.tool.translation.vector)) < spec.min_singular_ratio {
            continue;
        }
        let dir = spec.force_directions[rng.random_range(0..spec.force_directions.len())];
        let mag = spec.force_magnitudes[rng.random_range(0..spec.force_magnitudes.len())];
        out.push(PlanEntry {
            q,
            wrench: Wrench::force(dir.normalize() * mag),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Allow the same grid entry more than once in a plan.
    pub allow_repeats: bool,
    pub max_sweeps: usize,
    /// Minimum number of distinct joint-2 groups the plan must cover.
    pub min_groups: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            restarts: 16,
            seed: 0,
            allow_repeats: false,
            max_sweeps: 200,
            min_groups: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizedPlan {
    pub plan: ExperimentPlan,
    pub indices: Vec<usize>,
    pub criterion: f64,
    pub evaluations: usize,
}

/// Search score, compared lexicographically: missing groups below the
/// required count, singular groups, then the sum of the finite group
/// traces. Lets the exchange climb out of infeasible starts.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Score(usize, usize, f64);

impl Score {
    fn of(traces: impl Iterator<Item = (usize, f64)>, min_groups: usize) -> Self {
        let mut present = 0;
        let mut singular = 0;
        let mut sum = 0.0;
        for (count, t) in traces {
            if count == 0 {
                continue;
            }
            present += 1;
            if t.is_finite() {
                sum += t;
            } else {
                singular += 1;
            }
        }
        Score(min_groups.saturating_sub(present), singular, sum)
    }

    fn value(self) -> f64 {
        if self.0 > 0 || self.1 > 0 {
            f64::INFINITY
        } else {
            self.2
        }
    }

    fn improves_on(self, other: Score) -> bool {
        (self.0, self.1) < (other.0, other.1) || ((self.0, self.1) == (other.0, other.1) && other.2 - self.2 > 1e-12 * other.2.abs())
    }
}

/// Per-group normal matrices and traces of a selection, updated in place.
struct Selection {
    normals: Vec<DMatrix<f64>>,
    traces: Vec<f64>,
    counts: Vec<usize>,
}

impl Selection {
    fn new(grid: &CandidateGrid, a0: &DMatrix<f64>, indices: &[usize]) -> Self {
        let n = a0.ncols();
        let groups = grid.group_count();
        let mut normals = vec![DMatrix::zeros(n, n); groups];
        let mut counts = vec![0; groups];
        for &i in indices {
            normals[grid.groups[i]] += &grid.normals[i];
            counts[grid.groups[i]] += 1;
        }
        let traces = normals
            .iter()
            .zip(&counts)
            .map(|(nm, &c)| if c > 0 { group_trace(a0, nm) } else { 0.0 })
            .collect();
        Self { normals, traces, counts }
    }

    fn score(&self, min_groups: usize) -> Score {
        Score::of(self.counts.iter().copied().zip(self.traces.iter().copied()), min_groups)
    }

    /// Score after replacing grid entry `out` by `into`.
    fn swapped(&self, grid: &CandidateGrid, a0: &DMatrix<f64>, out: usize, into: usize, min_groups: usize) -> Score {
        let (go, gi) = (grid.groups[out], grid.groups[into]);
        let mut changed = Vec::with_capacity(2);
        if go == gi {
            let nm = &self.normals[go] - &grid.normals[out] + &grid.normals[into];
            changed.push((go, group_trace(a0, &nm)));
        } else {
            let reduced = if self.counts[go] > 1 {
                group_trace(a0, &(&self.normals[go] - &grid.normals[out]))
            } else {
                0.0
            };
            changed.push((go, reduced));
            changed.push((gi, group_trace(a0, &(&self.normals[gi] + &grid.normals[into]))));
        }
        let mut counts = self.counts.clone();
        counts[go] -= 1;
        counts[gi] += 1;
        Score::of(
            counts.into_iter().zip(self.traces.iter().enumerate().map(|(g, &t)| {
                changed.iter().find(|(c, _)| *c == g).map_or(t, |(_, v)| *v)
            })),
            min_groups,
        )
    }

    fn apply(&mut self, grid: &CandidateGrid, a0: &DMatrix<f64>, out: usize, into: usize) {
        let (go, gi) = (grid.groups[out], grid.groups[into]);
        self.normals[go] -= &grid.normals[out];
        self.normals[gi] += &grid.normals[into];
        self.counts[go] -= 1;
        self.counts[gi] += 1;
        for g in [go, gi] {
            self.traces[g] = if self.counts[g] > 0 { group_trace(a0, &self.normals[g]) } else { 0.0 };
        }
    }
}

/// Multi-start greedy exchange over the grid: each sweep applies the single
/// best (position, candidate) swap until no swap improves the criterion.
pub fn optimize_plan(grid: &CandidateGrid, m: usize, test: &TestPose, model: &RobotModel, config: &SearchConfig) -> Result<OptimizedPlan> {
    if grid.is_empty() {
        return Err(Error::EmptyDataset("candidate grid is empty"));
    }
    if m == 0 || (!config.allow_repeats && m > grid.len()) {
        return Err(Error::invalid("plan.size", format!("cannot select {m} entries from {} candidates", grid.len())));
    }
    let a0 = test_pose_block(model, test)?;
    let mut evaluations = 0usize;
    let mut best: Option<(f64, Vec<usize>)> = None;

    for restart in 0..config.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "restart", restart as u64));
        let mut current: Vec<usize> = if config.allow_repeats {
            (0..m).map(|_| rng.random_range(0..grid.len())).collect()
        } else {
            sample(&mut rng, grid.len(), m).into_vec()
        };
        let mut selection = Selection::new(grid, &a0, &current);
        let mut score = selection.score(config.min_groups);
        evaluations += 1;

        for _ in 0..config.max_sweeps {
            let mut best_move: Option<(Score, usize, usize)> = None;
            for pos in 0..m {
                let out = current[pos];
                for cand in 0..grid.len() {
                    if cand == out || (!config.allow_repeats && current.contains(&cand)) {
                        continue;
                    }
                    let s = selection.swapped(grid, &a0, out, cand, config.min_groups);
                    evaluations += 1;
                    if s.improves_on(best_move.map_or(score, |b| b.0)) {
                        best_move = Some((s, pos, cand));
                    }
                }
            }
            let Some((_, pos, cand)) = best_move else { break };
            selection.apply(grid, &a0, current[pos], cand);
            current[pos] = cand;
            score = selection.score(config.min_groups);
        }

        let value = score.value();
        if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, current.clone()));
        }
    }

    let (_, indices) = best.ok_or(Error::InfeasiblePlan)?;
    // Report the criterion evaluated from scratch on the returned plan.
    let criterion = grid.criterion(&a0, &indices);
    Ok(OptimizedPlan {
        plan: grid.plan(&indices),
        indices,
        criterion,
        evaluations,
    })
}
