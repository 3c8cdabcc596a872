//! Off-line compliance-error compensation and accuracy statistics.

use log::warn;
use nalgebra::{DMatrix, DVector, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{average_repetitions, LoadedMeasurement};
use crate::linalg;
use crate::model::{forward_kinematics, JointState, Pose, RobotModel, Vec3, VirtualDeflections, Wrench};
use crate::stiffness::{predict_deflection, predict_marker_deflections, CompensatorModel};

/// Identified (or nominal) elastostatic model used for prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessModel {
    pub robot: RobotModel,
    pub comp: Option<CompensatorModel>,
    #[serde(default)]
    pub include_hessian: bool,
}

impl StiffnessModel {
    pub fn new(robot: RobotModel, comp: Option<CompensatorModel>) -> Self {
        Self {
            robot,
            comp,
            include_hessian: false,
        }
    }

    pub fn deflection(&self, q: &JointState, wrench: &Wrench) -> Result<Vector6<f64>> {
        predict_deflection(&self.robot, self.comp.as_ref(), q, wrench, self.include_hessian)
    }

    pub fn marker_deflections(&self, q: &JointState, wrench: &Wrench) -> Result<Vec<Vec3>> {
        predict_marker_deflections(&self.robot, self.comp.as_ref(), q, wrench, self.include_hessian)
    }

    /// Tool pose of the deflected robot: rigid pose displaced by the
    /// small-deflection twist.
    pub fn loaded_pose(&self, q: &JointState, wrench: &Wrench) -> Result<Pose> {
        let rigid = forward_kinematics(&self.robot, q, &VirtualDeflections::zeros(self.robot.n_joints()))?.pose;
        Ok(displace(&rigid, &self.deflection(q, wrench)?))
    }
}

fn displace(pose: &Pose, twist: &Vector6<f64>) -> Pose {
    Pose {
        position: pose.position + twist.fixed_rows::<3>(0),
        orientation: Rotation3::new(Vector3::from(twist.fixed_rows::<3>(3))) * pose.orientation,
    }
}

/// Position error and rotation vector from `actual` to `desired`.
fn pose_error(desired: &Pose, actual: &Pose) -> Vector6<f64> {
    let dp = desired.position - actual.position;
    let dr = (desired.orientation * actual.orientation.inverse()).scaled_axis();
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensationOptions {
    /// Damping of the joint-space pseudo-inverse.
    pub damping: f64,
    /// Largest accepted position deflection, m; larger ones are clipped.
    pub trust_radius: f64,
    /// Fixed-point refinement steps after the linear correction (0 = one-shot).
    pub max_iterations: usize,
    /// Position tolerance of the refinement, m.
    pub tolerance: f64,
}

impl Default for CompensationOptions {
    fn default() -> Self {
        Self {
            damping: 1e-6,
            trust_radius: 0.02,
            max_iterations: 0,
            tolerance: 1e-7,
        }
    }
}

impl CompensationOptions {
    /// Default options with fixed-point refinement enabled.
    pub fn refined() -> Self {
        Self {
            max_iterations: 5,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensatedTarget {
    pub desired: Pose,
    /// Predicted tool deflection at the desired configuration (m, rad).
    pub deflection: Vector6<f64>,
    /// Mirrored Cartesian target `desired - deflection`.
    pub corrected_target: Pose,
    pub corrected_q: JointState,
    pub clipped: bool,
    pub iterations: usize,
    /// Predicted position error of the loaded robot at `corrected_q`, m.
    pub predicted_error: f64,
}

fn damped_pinv(j: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
    let jjt = j * j.transpose() + DMatrix::identity(j.nrows(), j.nrows()) * damping;
    Ok(j.transpose() * linalg::guarded_inverse(&jjt, "damped J J^T")?)
}

/// Mirror compensation: command the robot to `desired - Δt` so that the
/// loaded robot lands on the desired pose.
pub fn compensated_target(
    model: &StiffnessModel,
    q_target: &JointState,
    wrench: &Wrench,
    options: &CompensationOptions,
) -> Result<CompensatedTarget> {
    let robot = &model.robot;
    let desired = forward_kinematics(robot, q_target, &VirtualDeflections::zeros(robot.n_joints()))?.pose;
    let mut deflection = model.deflection(q_target, wrench)?;
    let magnitude = deflection.fixed_rows::<3>(0).norm();
    let clipped = magnitude > options.trust_radius;
    if clipped {
        warn!(
            "predicted deflection {:.3} mm exceeds the trust radius {:.3} mm; clipping",
            magnitude * 1e3,
            options.trust_radius * 1e3
        );
        deflection *= options.trust_radius / magnitude;
    }
    let corrected_target = displace(&desired, &(-deflection));

    let jacobian = |q: &JointState| {
        let chain = robot.chain(&q.0);
        chain.jacobian_at(&chain.tool.translation.vector)
    };
    let step = |q: &JointState, err: &Vector6<f64>| -> Result<JointState> {
        let pinv = damped_pinv(&jacobian(q), options.damping)?;
        Ok(JointState(&q.0 + pinv * DVector::from_column_slice(err.as_slice())))
    };

    let mut q = step(q_target, &(-deflection))?;
    let mut err = pose_error(&desired, &model.loaded_pose(&q, wrench)?);
    let mut iterations = 0;
    while !clipped && iterations < options.max_iterations && err.fixed_rows::<3>(0).norm() > options.tolerance {
        q = step(&q, &err)?;
        err = pose_error(&desired, &model.loaded_pose(&q, wrench)?);
        iterations += 1;
    }
    robot.check_joints(&q)?;
    Ok(CompensatedTarget {
        desired,
        deflection,
        corrected_target,
        corrected_q: q,
        clipped,
        iterations,
        predicted_error: err.fixed_rows::<3>(0).norm(),
    })
}

/// Before/after accuracy statistics over validation configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// Per-configuration RMS marker deflection, m.
    pub residuals_before: Vec<f64>,
    /// Per-configuration RMS of measured minus predicted marker deflection, m.
    pub residuals_after: Vec<f64>,
    pub max_before: f64,
    pub max_after: f64,
    pub rms_before: f64,
    pub rms_after: f64,
    pub improvement_factor: f64,
    /// Mean share of the deflection removed per configuration, %.
    pub compensated_fraction: f64,
    /// Orientation diagnostics from rigid fits of the marker sets, rad.
    pub orientation_rms_before: Option<f64>,
    pub orientation_rms_after: Option<f64>,
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

impl AccuracyReport {
    pub fn from_residuals(before: Vec<f64>, after: Vec<f64>) -> Result<Self> {
        if before.is_empty() {
            return Err(Error::EmptyDataset("validation set is empty"));
        }
        if before.len() != after.len() {
            return Err(Error::Dimension {
                what: "residuals after compensation",
                expected: before.len(),
                got: after.len(),
            });
        }
        let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let (rms_before, rms_after) = (rms(&before), rms(&after));
        let improvement_factor = if rms_after > 0.0 { rms_before / rms_after } else { f64::INFINITY };
        let fractions: Vec<f64> = before
            .iter()
            .zip(&after)
            .map(|(b, a)| if *b > 0.0 { 1.0 - a / b } else { 1.0 })
            .collect();
        Ok(Self {
            max_before: max(&before),
            max_after: max(&after),
            rms_before,
            rms_after,
            improvement_factor,
            compensated_fraction: 100.0 * fractions.iter().sum::<f64>() / fractions.len() as f64,
            residuals_before: before,
            residuals_after: after,
            orientation_rms_before: None,
            orientation_rms_after: None,
        })
    }
}

/// Compares measured deflections of held-out configurations with the
/// deflections the model predicts (and would therefore compensate).
pub fn evaluate_accuracy(validation: &[LoadedMeasurement], model: &StiffnessModel) -> Result<AccuracyReport> {
    if validation.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty"));
    }
    let configs = average_repetitions(validation)?;
    let mut before = Vec::with_capacity(configs.len());
    let mut after = Vec::with_capacity(configs.len());
    let mut rot_before = Vec::new();
    let mut rot_after = Vec::new();
    for c in &configs {
        let measured = c.deflections();
        let predicted = model.marker_deflections(&c.q, &c.wrench)?;
        if predicted.len() != measured.len() {
            return Err(Error::Dimension {
                what: "validation markers",
                expected: predicted.len(),
                got: measured.len(),
            });
        }
        let n = measured.len() as f64;
        before.push((measured.iter().map(|d| d.norm_squared()).sum::<f64>() / n).sqrt());
        after.push((measured.iter().zip(&predicted).map(|(m, p)| (m - p).norm_squared()).sum::<f64>() / n).sqrt());

        if measured.len() >= 3 {
            let measured_rot = linalg::rigid_fit(&c.unloaded, &c.loaded)?.rotation.scaled_axis();
            let twist = model.deflection(&c.q, &c.wrench)?;
            let predicted_rot = Vector3::from(twist.fixed_rows::<3>(3));
            rot_before.push(measured_rot.norm());
            rot_after.push((measured_rot - predicted_rot).norm());
        }
    }
    let mut report = AccuracyReport::from_residuals(before, after)?;
    if !rot_before.is_empty() {
        report.orientation_rms_before = Some(rms(&rot_before));
        report.orientation_rms_after = Some(rms(&rot_after));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::heavy_6r;
    use crate::sim::{simulate_loaded_measurement, GroundTruth, NoiseSpec};
    use crate::stiffness::{CompensatorGeometry, SpringSign};

    fn comp() -> CompensatorModel {
        let g = CompensatorGeometry {
            link_length: 0.18472,
            a_x: 0.68593,
            a_y: 0.12330,
            sign: SpringSign::Plus,
        };
        CompensatorModel::new(g, 1e7, 0.45, 3e6).unwrap()
    }

    fn q() -> JointState {
        JointState::from_slice(&[0.2, -0.8, 0.5, 0.3, 0.9, -0.2])
    }

    #[test]
    fn zero_load_leaves_target_unchanged() {
        let m = StiffnessModel::new(heavy_6r(), Some(comp()));
        let t = compensated_target(&m, &q(), &Wrench::default(), &CompensationOptions::default()).unwrap();
        assert_eq!(t.corrected_target.position, t.desired.position);
        assert!((t.corrected_q.0.clone() - q().0).norm() < 1e-15);
    }

    #[test]
    fn refined_compensation_is_exact_for_known_model() {
        let m = StiffnessModel::new(heavy_6r(), Some(comp()));
        let w = Wrench::force(Vec3::new(800.0, -500.0, -2500.0));
        let mut options = CompensationOptions::refined();
        options.tolerance = 1e-11;
        let t = compensated_target(&m, &q(), &w, &options).unwrap();
        let landed = m.loaded_pose(&t.corrected_q, &w).unwrap();
        assert!((landed.position - t.desired.position).norm() < 1e-9);
        // Corrected target mirrors the deflection.
        assert!((t.corrected_target.position + t.deflection.fixed_rows::<3>(0) - t.desired.position).norm() < 1e-15);
    }

    #[test]
    fn oversize_deflection_is_clipped() {
        let m = StiffnessModel::new(heavy_6r(), Some(comp()));
        let w = Wrench::force(Vec3::new(0.0, 0.0, -5e4));
        let t = compensated_target(&m, &q(), &w, &CompensationOptions::default()).unwrap();
        assert!(t.clipped);
        assert!((t.deflection.fixed_rows::<3>(0).norm() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn perfect_model_on_noiseless_data() {
        let truth = GroundTruth::new(heavy_6r(), comp());
        let w = Wrench::force(Vec3::new(400.0, 300.0, -2000.0));
        let data: Vec<_> = [[0.2, -0.8, 0.5, 0.3, 0.9, -0.2], [-0.6, -1.2, 1.0, -0.4, 1.1, 0.6]]
            .iter()
            .enumerate()
            .flat_map(|(i, q)| simulate_loaded_measurement(&truth, i, &JointState::from_slice(q), &w, &NoiseSpec::noiseless(), 1).unwrap())
            .collect();
        let report = evaluate_accuracy(&data, &StiffnessModel::new(heavy_6r(), Some(comp()))).unwrap();
        assert!(report.rms_after < 1e-15, "{}", report.rms_after);
        assert!((report.compensated_fraction - 100.0).abs() < 1e-9);
        assert!(report.rms_before > 1e-4);
        // Rigid fit of linearly displaced markers differs from the twist only
        // at second order.
        assert!(report.orientation_rms_after.unwrap() < 1e-2 * report.orientation_rms_before.unwrap());
    }

    #[test]
    fn statistics_are_consistent() {
        let r = AccuracyReport::from_residuals(vec![3.0, 4.0], vec![0.3, 0.8]).unwrap();
        assert!(r.max_before >= r.rms_before && r.max_after >= r.rms_after);
        assert_eq!(r.improvement_factor, r.rms_before / r.rms_after);
        assert!((r.compensated_fraction - 85.0).abs() < 1e-12);
        assert!(AccuracyReport::from_residuals(vec![], vec![]).is_err());
    }
}
