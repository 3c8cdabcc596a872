//! Two-step elastostatic identification.
//!
//! Step 1 fits an extended compliance vector in which every distinct joint-2
//! angle owns its own compliance. Step 2 regresses those joint-2 stiffness
//! values onto the compensator model. Parameter order is fixed:
//! `[k1, k2(group 1), ..., k2(group m), k3, ..., kn]`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{JointState, RobotModel, Vec3, Wrench};
use crate::registration::{register_base_tool, RigidCorrections, UnloadedObservation};
use crate::stiffness::{CompensatorGeometry, CompensatorModel, SINGULARITY_RATIO, COMPENSATED_JOINT};

/// Configurations whose joint-2 angles differ by less than this share one
/// joint-2 compliance, rad.
pub const GROUP_TOLERANCE: f64 = 1e-6;

/// Step-1 estimates whose equilibrated normal matrix is worse conditioned
/// than this are rejected.
pub const MAX_PLAN_CONDITION: f64 = 1e10;

/// One loaded/unloaded measurement of all markers at a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadedMeasurement {
    pub config_id: usize,
    pub q: JointState,
    pub wrench: Wrench,
    pub markers_unloaded: Vec<Vec3>,
    pub markers_loaded: Vec<Vec3>,
    pub repetition: usize,
}

/// Repetitions of one configuration averaged together.
#[derive(Clone, Debug)]
pub struct AveragedConfiguration {
    pub config_id: usize,
    pub q: JointState,
    pub wrench: Wrench,
    pub unloaded: Vec<Vec3>,
    pub loaded: Vec<Vec3>,
    pub repetitions: usize,
}

impl AveragedConfiguration {
    pub fn deflections(&self) -> Vec<Vec3> {
        self.loaded.iter().zip(&self.unloaded).map(|(l, u)| l - u).collect()
    }
}

/// Averages repetitions per configuration id, preserving first-seen order.
pub fn average_repetitions(dataset: &[LoadedMeasurement]) -> Result<Vec<AveragedConfiguration>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no loaded measurements"));
    }
    let mut order = Vec::new();
    let mut by_id: BTreeMap<usize, AveragedConfiguration> = BTreeMap::new();
    for m in dataset {
        if m.markers_loaded.len() != m.markers_unloaded.len() {
            return Err(Error::Dimension {
                what: "loaded vs unloaded marker count",
                expected: m.markers_unloaded.len(),
                got: m.markers_loaded.len(),
            });
        }
        match by_id.get_mut(&m.config_id) {
            None => {
                order.push(m.config_id);
                by_id.insert(
                    m.config_id,
                    AveragedConfiguration {
                        config_id: m.config_id,
                        q: m.q.clone(),
                        wrench: m.wrench,
                        unloaded: m.markers_unloaded.clone(),
                        loaded: m.markers_loaded.clone(),
                        repetitions: 1,
                    },
                );
            }
            Some(acc) => {
                if (&acc.q.0 - &m.q.0).amax() > GROUP_TOLERANCE || acc.wrench != m.wrench {
                    return Err(Error::DegenerateData(format!(
                        "configuration {} has inconsistent joints or wrench across repetitions",
                        m.config_id
                    )));
                }
                if acc.unloaded.len() != m.markers_unloaded.len() {
                    return Err(Error::Dimension {
                        what: "markers per repetition",
                        expected: acc.unloaded.len(),
                        got: m.markers_unloaded.len(),
                    });
                }
                for (a, b) in acc.unloaded.iter_mut().zip(&m.markers_unloaded) {
                    *a += b;
                }
                for (a, b) in acc.loaded.iter_mut().zip(&m.markers_loaded) {
                    *a += b;
                }
                acc.repetitions += 1;
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let mut c = by_id.remove(&id).expect("inserted above");
            let n = c.repetitions as f64;
            c.unloaded.iter_mut().for_each(|p| *p /= n);
            c.loaded.iter_mut().for_each(|p| *p /= n);
            c
        })
        .collect())
}

/// Position-row observation block of one marker: column `j` is the marker
/// displacement per unit compliance of joint `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBlock {
    pub marker: usize,
    pub matrix: DMatrix<f64>,
}

/// Column `j` of each block is `J_j^(marker) * (J_j^(tool)^T F)`.
pub fn observation_matrix(model: &RobotModel, q: &JointState, wrench: &Wrench) -> Result<Vec<ObservationBlock>> {
    model.check_joints(q)?;
    let chain = model.chain(&q.0);
    let tool_jacobian = chain.jacobian_at(&chain.tool.translation.vector);
    let ratio = linalg::singular_ratio(&tool_jacobian);
    if ratio < SINGULARITY_RATIO {
        return Err(Error::Singular { ratio });
    }
    let torques = tool_jacobian.transpose() * DVector::from_column_slice(wrench.to_vector().as_slice());
    Ok(model
        .markers()
        .iter()
        .enumerate()
        .map(|(marker, offset)| {
            let j = chain.jacobian_at(&chain.marker_position(offset));
            let mut block = j.rows(0, 3).into_owned();
            for (c, tau) in torques.iter().enumerate() {
                block.column_mut(c).scale_mut(*tau);
            }
            ObservationBlock { marker, matrix: block }
        })
        .collect())
}

/// Stacks all marker blocks of a configuration into a `3M × n` matrix.
pub fn stacked_observation(model: &RobotModel, q: &JointState, wrench: &Wrench) -> Result<DMatrix<f64>> {
    let blocks = observation_matrix(model, q, wrench)?;
    let n = model.n_joints();
    let mut out = DMatrix::zeros(3 * blocks.len(), n);
    for (i, b) in blocks.iter().enumerate() {
        out.view_mut((3 * i, 0), (3, n)).copy_from(&b.matrix);
    }
    Ok(out)
}

/// Whether joint 2 gets one compliance per q2 group or a single constant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentificationMode {
    #[default]
    CompensatorAware,
    SerialOnly,
}

/// Sorted distinct q2 values of a set of configurations.
pub fn q2_groups<'a>(qs: impl IntoIterator<Item = &'a JointState>) -> Vec<f64> {
    let mut groups: Vec<f64> = Vec::new();
    for q in qs {
        let v = q.0[COMPENSATED_JOINT];
        if !groups.iter().any(|g| (g - v).abs() < GROUP_TOLERANCE) {
            groups.push(v);
        }
    }
    groups.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    groups
}

/// Maps joint compliances onto the extended parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub n_joints: usize,
    /// Distinct joint-2 angles, one parameter each; empty when joint 2 has a
    /// single constant compliance.
    pub groups: Vec<f64>,
}

impl ParameterLayout {
    pub fn len(&self) -> usize {
        if self.groups.is_empty() {
            self.n_joints
        } else {
            self.n_joints - 1 + self.groups.len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn group_of(&self, q2: f64) -> Option<usize> {
        self.groups.iter().position(|g| (g - q2).abs() < GROUP_TOLERANCE)
    }

    /// Parameter column of joint `joint` for a configuration with joint-2
    /// angle `q2`.
    fn column(&self, joint: usize, q2: f64) -> Result<usize> {
        if self.groups.is_empty() || joint < COMPENSATED_JOINT {
            return Ok(joint);
        }
        let m = self.groups.len();
        if joint == COMPENSATED_JOINT {
            let g = self.group_of(q2).ok_or_else(|| {
                Error::DegenerateData(format!("q2 = {q2} does not belong to any identification group"))
            })?;
            Ok(COMPENSATED_JOINT + g)
        } else {
            Ok(joint + m - 1)
        }
    }

    /// Expands an `r × n` joint-column block into `r × len()`.
    pub fn expand(&self, block: &DMatrix<f64>, q2: f64) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(block.nrows(), self.len());
        for j in 0..self.n_joints {
            let c = self.column(j, q2)?;
            out.set_column(c, &block.column(j));
        }
        Ok(out)
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len())
            .map(|c| {
                if self.groups.is_empty() || c < COMPENSATED_JOINT {
                    format!("k{}", c + 1)
                } else if c < COMPENSATED_JOINT + self.groups.len() {
                    let g = c - COMPENSATED_JOINT;
                    format!("k2[q2={:.4} rad]", self.groups[g])
                } else {
                    format!("k{}", c + 2 - self.groups.len())
                }
            })
            .collect()
    }
}

/// Step-1 estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedCompliances {
    pub layout: ParameterLayout,
    /// Full parameter vector in layout order, rad/(N·m).
    pub values: Vec<f64>,
    /// `σ̂² (Σ BᵀB)⁻¹`.
    pub covariance: DMatrix<f64>,
    /// `(Σ BᵀB)⁻¹`, the noise-free part of the covariance.
    pub normal_inverse: DMatrix<f64>,
    pub sigma_estimate: f64,
    pub condition_number: f64,
    pub residual_rms: f64,
    pub equations: usize,
}

impl ExtendedCompliances {
    /// `(joint index, compliance)` for every joint except joint 2.
    pub fn fixed(&self) -> Vec<(usize, f64)> {
        (0..self.layout.n_joints)
            .filter(|&j| j != COMPENSATED_JOINT)
            .filter_map(|j| self.joint_compliance(j).map(|k| (j, k)))
            .collect()
    }

    /// `(q2, k2)` per group, or a single entry with `q2 = NaN` for a
    /// constant joint-2 compliance.
    pub fn k2_groups(&self) -> Vec<(f64, f64)> {
        if self.layout.groups.is_empty() {
            return vec![(f64::NAN, self.values[COMPENSATED_JOINT])];
        }
        self.layout
            .groups
            .iter()
            .enumerate()
            .map(|(g, &q2)| (q2, self.values[COMPENSATED_JOINT + g]))
            .collect()
    }

    /// Variance of each `k2` group estimate.
    pub fn k2_variances(&self) -> Vec<f64> {
        let count = self.layout.groups.len().max(1);
        (0..count)
            .map(|g| self.covariance[(COMPENSATED_JOINT + g, COMPENSATED_JOINT + g)])
            .collect()
    }

    /// Compliance of joint `joint` (joint 2 only when not grouped).
    pub fn joint_compliance(&self, joint: usize) -> Option<f64> {
        if !self.layout.groups.is_empty() && joint == COMPENSATED_JOINT {
            return None;
        }
        self.layout.column(joint, 0.0).ok().map(|c| self.values[c])
    }
}

fn build_normal_equations(
    model: &RobotModel,
    configs: &[AveragedConfiguration],
    layout: &ParameterLayout,
) -> Result<(DMatrix<f64>, DVector<f64>, f64, usize)> {
    let p = layout.len();
    let mut normal = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut yy = 0.0;
    let mut rows = 0;
    for c in configs {
        let stacked = stacked_observation(model, &c.q, &c.wrench)?;
        let b = layout.expand(&stacked, c.q.0[COMPENSATED_JOINT.min(model.n_joints() - 1)])?;
        let y = DVector::from_iterator(b.nrows(), c.deflections().iter().flat_map(|d| [d.x, d.y, d.z]));
        normal += b.transpose() * &b;
        rhs += b.transpose() * &y;
        yy += y.norm_squared();
        rows += b.nrows();
    }
    Ok((normal, rhs, yy, rows))
}

/// Least-squares extended compliances from averaged marker deflections.
pub fn identify_extended_compliances(
    dataset: &[LoadedMeasurement],
    model: &RobotModel,
    mode: IdentificationMode,
) -> Result<ExtendedCompliances> {
    let configs = average_repetitions(dataset)?;
    identify_from_averaged(&configs, model, mode)
}

pub fn identify_from_averaged(
    configs: &[AveragedConfiguration],
    model: &RobotModel,
    mode: IdentificationMode,
) -> Result<ExtendedCompliances> {
    let groups = if mode == IdentificationMode::CompensatorAware && model.n_joints() > COMPENSATED_JOINT {
        q2_groups(configs.iter().map(|c| &c.q))
    } else {
        Vec::new()
    };
    let layout = ParameterLayout {
        n_joints: model.n_joints(),
        groups,
    };
    let (normal, rhs, yy, rows) = build_normal_equations(model, configs, &layout)?;
    let p = layout.len();
    let labels = layout.labels();
    let (condition, weakest) = linalg::equilibrated_condition(&normal);
    if rows < p || condition.is_nan() || condition > MAX_PLAN_CONDITION {
        let (idx, _) = weakest
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or((0, &0.0));
        return Err(Error::IllConditionedPlan {
            condition,
            weakest: labels.get(idx).cloned().unwrap_or_default(),
        });
    }
    let (k, normal_inverse) = linalg::solve_normal(&normal, &rhs).ok_or(Error::IllConditionedPlan {
        condition,
        weakest: "normal matrix not positive definite".into(),
    })?;
    // RSS = y'y - k'(B'y) for the least-squares solution.
    let rss = (yy - k.dot(&rhs)).max(0.0);
    let dof = rows.saturating_sub(p);
    let sigma2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    Ok(ExtendedCompliances {
        values: k.iter().copied().collect(),
        covariance: &normal_inverse * sigma2,
        normal_inverse,
        sigma_estimate: sigma2.sqrt(),
        condition_number: condition,
        residual_rms: (rss / rows as f64).sqrt(),
        equations: rows,
        layout,
    })
}

/// Step-2 estimate of the compensator stiffness parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint2Regression {
    /// `K_θ2^0`, N·m/rad.
    pub joint_stiffness: f64,
    /// `K_c`, N/m.
    pub spring_stiffness: f64,
    /// `s_0`, m; `None` when the compensator contribution vanishes.
    pub free_length: Option<f64>,
    /// Covariance of `[K_θ2^0, K_c, s_0 K_c]`.
    pub covariance: Matrix3<f64>,
    pub groups: usize,
}

impl Joint2Regression {
    pub fn compensator(&self, geometry: CompensatorGeometry) -> Option<CompensatorModel> {
        let s0 = self.free_length?;
        CompensatorModel::new(geometry, self.spring_stiffness, s0, self.joint_stiffness).ok()
    }
}

/// Relative size below which `K_c` is treated as zero.
pub const ABSENT_SPRING: f64 = 1e-12;

/// Regresses `[K_θ2^0, K_c, s_0 K_c]` on the per-group joint-2 stiffness
/// `1/k2`. `k2_variances`, when given, propagates into the covariance.
pub fn regress_joint2_parameters(
    k2_groups: &[(f64, f64)],
    k2_variances: Option<&[f64]>,
    geometry: &CompensatorGeometry,
) -> Result<Joint2Regression> {
    geometry.validate()?;
    if k2_groups.len() < 3 {
        return Err(Error::InsufficientGroups {
            found: k2_groups.len(),
            needed: 3,
        });
    }
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    let mut rows = Vec::with_capacity(k2_groups.len());
    for &(q2, k2) in k2_groups {
        if !(k2.is_finite() && k2 > 0.0) {
            return Err(Error::ModelInconsistency(format!(
                "joint-2 compliance {k2:e} at q2 = {q2} is not positive"
            )));
        }
        let c = Vector3::from(geometry.regression_row(q2)?);
        normal += c * c.transpose();
        rhs += c * (1.0 / k2);
        rows.push(c);
    }
    let scale = Matrix3::from_diagonal(&normal.diagonal().map(|d| 1.0 / d.sqrt()));
    let scaled = scale * normal * scale;
    let svd = scaled.svd(false, false);
    if svd.singular_values.min() <= 1e-13 * svd.singular_values.max() {
        return Err(Error::CollinearGroups);
    }
    let inv = scale * scaled.try_inverse().ok_or(Error::CollinearGroups)? * scale;
    let x = inv * rhs;

    let covariance = match k2_variances {
        Some(vars) if vars.len() == k2_groups.len() => {
            // var(1/k) ≈ var(k) / k⁴
            let mut middle = Matrix3::zeros();
            for ((c, &(_, k2)), v) in rows.iter().zip(k2_groups).zip(vars) {
                middle += c * c.transpose() * (v / k2.powi(4));
            }
            inv * middle * inv
        }
        _ => Matrix3::zeros(),
    };

    let (k0, kc, s0kc) = (x[0], x[1], x[2]);
    let al = geometry.pivot_distance() * geometry.link_length;
    let free_length = if (kc * al).abs() <= ABSENT_SPRING * k0.abs() {
        None
    } else if kc < 0.0 {
        return Err(Error::ModelInconsistency(format!(
            "regressed compensator stiffness {kc:e} N/m is negative"
        )));
    } else {
        Some(s0kc / kc)
    };
    let spring_stiffness = if free_length.is_some() { kc } else { 0.0 };
    if let Some(s0) = free_length {
        if !(s0.is_finite() && s0 > 0.0) {
            return Err(Error::ModelInconsistency(format!(
                "regressed free spring length {s0:e} m is not positive"
            )));
        }
    }
    Ok(Joint2Regression {
        joint_stiffness: k0,
        spring_stiffness,
        free_length,
        covariance,
        groups: k2_groups.len(),
    })
}

/// Output of the complete identification procedure.
#[derive(Clone, Debug)]
pub struct TwoStepResult {
    pub corrections: RigidCorrections,
    pub compliances: ExtendedCompliances,
    pub joint2: Option<Joint2Regression>,
    /// Robot model with identified base/tool and compliances; joint 2 holds
    /// the mean identified compliance.
    pub robot: RobotModel,
    pub compensator: Option<CompensatorModel>,
}

/// Registration, extended compliances, then (compensator-aware mode) the
/// joint-2 regression.
pub fn run_two_step_identification(
    dataset: &[LoadedMeasurement],
    geometry: Option<&CompensatorGeometry>,
    model: &RobotModel,
    mode: IdentificationMode,
) -> Result<TwoStepResult> {
    let configs = average_repetitions(dataset)?;
    let obs: Vec<UnloadedObservation> = configs
        .iter()
        .map(|c| UnloadedObservation {
            q: c.q.clone(),
            markers: c.unloaded.clone(),
        })
        .collect();
    let corrections = register_base_tool(model, &obs)?;
    let corrected = corrections.apply(model);

    let compliances = identify_from_averaged(&configs, &corrected, mode)?;
    let joint2 = match (mode, geometry) {
        (IdentificationMode::CompensatorAware, Some(g)) if !compliances.layout.groups.is_empty() => Some(
            regress_joint2_parameters(&compliances.k2_groups(), Some(&compliances.k2_variances()), g)?,
        ),
        (IdentificationMode::CompensatorAware, None) => {
            return Err(Error::MissingInput {
                verb: "identify-elastostatics".into(),
                what: "compensator geometry".into(),
            })
        }
        _ => None,
    };

    let k2_values: Vec<f64> = compliances.k2_groups().iter().map(|(_, k)| *k).collect();
    let k2_mean = k2_values.iter().sum::<f64>() / k2_values.len() as f64;
    let joint_compliances: Vec<f64> = (0..model.n_joints())
        .map(|j| compliances.joint_compliance(j).unwrap_or(k2_mean))
        .collect();
    let robot = corrected.with_compliances(joint_compliances).map_err(|e| {
        Error::ModelInconsistency(format!("identified compliances are not admissible: {e}"))
    })?;
    let compensator = match (&joint2, geometry) {
        (Some(j2), Some(g)) => j2.compensator(*g),
        _ => None,
    };
    Ok(TwoStepResult {
        corrections,
        compliances,
        joint2,
        robot,
        compensator,
    })
}
