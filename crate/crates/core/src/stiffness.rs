//! Compensator-aware stiffness model.
//!
//! The spring compensator closes a loop between links 1 and 2 and only
//! changes the equivalent stiffness of joint 2. Everything else is the
//! classical virtual-joint model: `dt = J (K - H)^-1 J^T F`.

use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{hessian_load, JointState, RobotModel, Vec3, VirtualDeflections, Wrench};

/// Zero-based index of the joint driven by the compensator.
pub const COMPENSATED_JOINT: usize = 1;

/// Sign of the `2aL cos(alpha - q2)` term in the spring-length relation.
///
/// `Plus` places the pivot `P0` at `P2 - (a_x, a_y)`; `Minus` at
/// `P2 + (a_x, a_y)` (plain law of cosines).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpringSign {
    #[default]
    Plus,
    Minus,
}

impl SpringSign {
    pub fn factor(self) -> f64 {
        match self {
            SpringSign::Plus => 1.0,
            SpringSign::Minus => -1.0,
        }
    }
}

/// Planar geometry of the compensator: lever `L = |P1P2|` and the in-plane
/// offset `(a_x, a_y)` between the pivot `P0` and joint axis `P2`, all in m.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensatorGeometry {
    pub link_length: f64,
    pub a_x: f64,
    pub a_y: f64,
    #[serde(default)]
    pub sign: SpringSign,
}

impl CompensatorGeometry {
    pub fn pivot_distance(&self) -> f64 {
        self.a_x.hypot(self.a_y)
    }

    pub fn pivot_angle(&self) -> f64 {
        self.a_y.atan2(self.a_x)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.link_length.is_finite() && self.link_length > 0.0) {
            return Err(Error::invalid("compensator.link_length", "must be positive"));
        }
        if !(self.a_x.is_finite() && self.a_y.is_finite() && self.pivot_distance() > 0.0) {
            return Err(Error::invalid("compensator.a_x/a_y", "pivot distance must be positive"));
        }
        Ok(())
    }

    /// Spring length `s(q2)`.
    pub fn spring_length(&self, q2: f64) -> Result<f64> {
        let a = self.pivot_distance();
        let l = self.link_length;
        let radicand = a * a + l * l + 2.0 * self.sign.factor() * a * l * (self.pivot_angle() - q2).cos();
        if radicand.is_nan() || radicand <= 0.0 {
            return Err(Error::ModelInconsistency(format!(
                "spring length radicand {radicand:e} is not positive at q2 = {q2}"
            )));
        }
        Ok(radicand.sqrt())
    }

    /// Row `[1, -σ aL cos φ, aL/s (aL/s² sin² φ + σ cos φ)]` mapping
    /// `[K_θ2^0, K_c, s_0 K_c]` onto the equivalent joint-2 stiffness.
    pub fn regression_row(&self, q2: f64) -> Result<[f64; 3]> {
        let s = self.spring_length(q2)?;
        let al = self.pivot_distance() * self.link_length;
        let phi = self.pivot_angle() - q2;
        let sigma = self.sign.factor();
        let (sin, cos) = phi.sin_cos();
        Ok([
            1.0,
            -sigma * al * cos,
            al / s * (al / (s * s) * sin * sin + sigma * cos),
        ])
    }
}

/// Geometry plus stiffness parameters of the gravity compensator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompensatorModel {
    pub geometry: CompensatorGeometry,
    /// Spring stiffness `K_c`, N/m.
    pub spring_stiffness: f64,
    /// Unloaded spring length `s_0`, m.
    pub free_length: f64,
    /// Intrinsic joint-2 stiffness `K_θ2^0`, N·m/rad.
    pub joint_stiffness: f64,
}

impl CompensatorModel {
    pub fn new(geometry: CompensatorGeometry, spring_stiffness: f64, free_length: f64, joint_stiffness: f64) -> Result<Self> {
        let comp = Self {
            geometry,
            spring_stiffness,
            free_length,
            joint_stiffness,
        };
        comp.validate()?;
        Ok(comp)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(self.spring_stiffness.is_finite() && self.spring_stiffness >= 0.0) {
            return Err(Error::invalid("compensator.spring_stiffness", "must be non-negative"));
        }
        if !(self.free_length.is_finite() && self.free_length > 0.0) {
            return Err(Error::invalid("compensator.free_length", "must be positive"));
        }
        if !(self.joint_stiffness.is_finite() && self.joint_stiffness > 0.0) {
            return Err(Error::invalid("compensator.joint_stiffness", "must be positive"));
        }
        Ok(())
    }
}

pub fn spring_length(comp: &CompensatorModel, q2: f64) -> Result<f64> {
    comp.geometry.spring_length(q2)
}

/// Equivalent stiffness of joint 2 including the compensator, N·m/rad.
pub fn joint2_equivalent_stiffness(comp: &CompensatorModel, q2: f64) -> Result<f64> {
    let g = &comp.geometry;
    let s = g.spring_length(q2)?;
    let al = g.pivot_distance() * g.link_length;
    let phi = g.pivot_angle() - q2;
    let sigma = g.sign.factor();
    let (sin, cos) = phi.sin_cos();
    let bracket = comp.free_length / s * (al / (s * s) * sin * sin + sigma * cos) - sigma * cos;
    Ok(comp.joint_stiffness + comp.spring_stiffness * al * bracket)
}

/// Diagonal of the virtual-joint stiffness matrix, N·m/rad.
#[derive(Clone, Debug, PartialEq)]
pub struct JointStiffnessDiagonal(pub DVector<f64>);

pub fn joint_stiffness_matrix(model: &RobotModel, comp: Option<&CompensatorModel>, q: &JointState) -> Result<JointStiffnessDiagonal> {
    model.check_joints(q)?;
    let mut k: DVector<f64> = DVector::from_iterator(model.n_joints(), model.compliances().iter().map(|c| 1.0 / c));
    if let Some(comp) = comp {
        if model.n_joints() <= COMPENSATED_JOINT {
            return Err(Error::ModelInconsistency(
                "compensator requires at least two joints".into(),
            ));
        }
        k[COMPENSATED_JOINT] = joint2_equivalent_stiffness(comp, q.0[COMPENSATED_JOINT])?;
    }
    if let Some((i, v)) = k.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::ModelInconsistency(format!(
            "joint {} stiffness {v:e} is not positive",
            i + 1
        )));
    }
    Ok(JointStiffnessDiagonal(k))
}

/// Smallest accepted ratio of extreme Jacobian singular values.
pub const SINGULARITY_RATIO: f64 = 1e-10;

/// Intermediate quantities shared by every stiffness query at one pose.
pub(crate) struct ElasticState {
    pub tool_jacobian: DMatrix<f64>,
    pub marker_jacobians: Vec<DMatrix<f64>>,
    /// `(K - H)^-1`
    pub inner_inverse: DMatrix<f64>,
}

impl ElasticState {
    pub fn new(
        model: &RobotModel,
        comp: Option<&CompensatorModel>,
        q: &JointState,
        wrench: &Wrench,
        include_hessian: bool,
    ) -> Result<Self> {
        let stiffness = joint_stiffness_matrix(model, comp, q)?;
        let chain = model.chain(&q.0);
        let tool_jacobian = chain.jacobian_at(&chain.tool.translation.vector);
        let ratio = linalg::singular_ratio(&tool_jacobian);
        if ratio < SINGULARITY_RATIO {
            return Err(Error::Singular { ratio });
        }
        let marker_jacobians = model
            .markers()
            .iter()
            .map(|m| chain.jacobian_at(&chain.marker_position(m)).rows(0, 3).into_owned())
            .collect();
        let inner_inverse = if include_hessian && !wrench.is_zero() {
            let h = hessian_load(model, q, &VirtualDeflections::zeros(model.n_joints()), wrench)?;
            let inner = DMatrix::from_diagonal(&stiffness.0) - h;
            linalg::guarded_inverse(&inner, "K_theta - H")?
        } else {
            let max = stiffness.0.max();
            let min = stiffness.0.min();
            if max / min > linalg::CONDITION_LIMIT {
                return Err(Error::Conditioning {
                    what: "K_theta",
                    condition: max / min,
                });
            }
            DMatrix::from_diagonal(&stiffness.0.map(|k| 1.0 / k))
        };
        Ok(Self {
            tool_jacobian,
            marker_jacobians,
            inner_inverse,
        })
    }

    /// Joint torques balancing the wrench at the tool point.
    pub fn joint_torques(&self, wrench: &Wrench) -> DVector<f64> {
        self.tool_jacobian.transpose() * DVector::from_column_slice(wrench.to_vector().as_slice())
    }

    pub fn compliance(&self) -> DMatrix<f64> {
        &self.tool_jacobian * &self.inner_inverse * self.tool_jacobian.transpose()
    }
}

/// Cartesian stiffness at the tool point (6×6, force rows then moment rows).
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianStiffness(pub DMatrix<f64>);

/// Evaluates `K_C = (J (K - H)^-1 J^T)^-1`.
///
/// Chains with fewer than six joints have a rank-deficient compliance; their
/// stiffness is returned on the reachable subspace (Moore-Penrose inverse).
pub fn cartesian_stiffness(
    model: &RobotModel,
    comp: Option<&CompensatorModel>,
    q: &JointState,
    wrench: &Wrench,
    include_hessian: bool,
) -> Result<CartesianStiffness> {
    let state = ElasticState::new(model, comp, q, wrench, include_hessian)?;
    let compliance = state.compliance();
    let k = if model.n_joints() >= 6 {
        linalg::guarded_inverse(&compliance, "Cartesian compliance")?
    } else {
        linalg::pseudo_inverse(&compliance, 1e-12)
    };
    Ok(CartesianStiffness(k))
}

/// Stiffness felt along the unit twist direction `direction`:
/// `1 / (d^T C d)` with `C` the Hessian-free Cartesian compliance.
pub fn directional_stiffness(
    model: &RobotModel,
    comp: Option<&CompensatorModel>,
    q: &JointState,
    direction: &Vector6<f64>,
) -> Result<f64> {
    let state = ElasticState::new(model, comp, q, &Wrench::default(), false)?;
    let d = DVector::from_column_slice(direction.as_slice());
    let c = (d.transpose() * state.compliance() * &d)[(0, 0)];
    Ok(1.0 / c)
}

/// Tool deflection `dt = J (K - H)^-1 J^T F` (m, rad).
pub fn predict_deflection(
    model: &RobotModel,
    comp: Option<&CompensatorModel>,
    q: &JointState,
    wrench: &Wrench,
    include_hessian: bool,
) -> Result<Vector6<f64>> {
    let state = ElasticState::new(model, comp, q, wrench, include_hessian)?;
    let theta = &state.inner_inverse * state.joint_torques(wrench);
    let dt = &state.tool_jacobian * theta;
    Ok(Vector6::from_column_slice(dt.as_slice()))
}

/// Displacement of every marker under the wrench applied at the tool point.
pub fn predict_marker_deflections(
    model: &RobotModel,
    comp: Option<&CompensatorModel>,
    q: &JointState,
    wrench: &Wrench,
    include_hessian: bool,
) -> Result<Vec<Vec3>> {
    let state = ElasticState::new(model, comp, q, wrench, include_hessian)?;
    let theta = &state.inner_inverse * state.joint_torques(wrench);
    Ok(state
        .marker_jacobians
        .iter()
        .map(|j| {
            let d = j * &theta;
            Vec3::new(d[0], d[1], d[2])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::{heavy_6r, planar_1r};

    const DEG: f64 = std::f64::consts::PI / 180.0;

    fn table1_geometry() -> CompensatorGeometry {
        CompensatorGeometry {
            link_length: 0.18472,
            a_x: 0.68593,
            a_y: 0.12330,
            sign: SpringSign::Plus,
        }
    }

    fn comp(spring: f64) -> CompensatorModel {
        CompensatorModel::new(table1_geometry(), spring, 0.45, 3.0e6).unwrap()
    }

    #[test]
    fn spring_length_degenerate_pivot() {
        // a = 0 would fail validation; evaluate the geometry directly.
        let g = CompensatorGeometry {
            link_length: 0.2,
            a_x: 0.0,
            a_y: 0.0,
            sign: SpringSign::Plus,
        };
        for q2 in [0.0, 0.7, -2.0] {
            assert!((g.spring_length(q2).unwrap() - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn spring_length_at_quarter_phase() {
        let g = table1_geometry();
        let q2 = g.pivot_angle() - std::f64::consts::FRAC_PI_2;
        let expected = (g.pivot_distance().powi(2) + g.link_length.powi(2)).sqrt();
        assert!((g.spring_length(q2).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn spring_length_table_geometry_at_zero() {
        // Direct evaluation: a² + L² + 2aL cos α with the tabulated lengths
        // gives s = 0.879337... m.
        let s = table1_geometry().spring_length(0.0).unwrap();
        assert!((s - 0.879_337_428_124_153).abs() < 1e-12, "{s}");
    }

    #[test]
    fn spring_length_symmetric_about_alpha() {
        let g = table1_geometry();
        let alpha = g.pivot_angle();
        for d in [0.1, 0.5, 1.3] {
            let a = g.spring_length(alpha + d).unwrap();
            let b = g.spring_length(alpha - d).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn minus_sign_is_law_of_cosines() {
        let mut g = table1_geometry();
        g.sign = SpringSign::Minus;
        let q2: f64 = -0.4;
        let p1 = Vec3::new(q2.cos(), q2.sin(), 0.0) * g.link_length;
        let p0 = Vec3::new(g.a_x, g.a_y, 0.0);
        assert!(((p1 - p0).norm() - g.spring_length(q2).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn no_spring_means_intrinsic_stiffness() {
        let c = comp(0.0);
        for q2 in [0.3, 0.0, -1.0, -2.4] {
            assert_eq!(joint2_equivalent_stiffness(&c, q2).unwrap(), 3.0e6);
        }
    }

    #[test]
    fn stiffness_at_free_length_simplifies() {
        let g = table1_geometry();
        let q2 = -50.0 * DEG;
        let s = g.spring_length(q2).unwrap();
        let c = CompensatorModel::new(g, 2.0e6, s, 1.0e6).unwrap();
        let al = g.pivot_distance() * g.link_length;
        let sin = (g.pivot_angle() - q2).sin();
        let expected = 1.0e6 + 2.0e6 * al * al * sin * sin / (s * s);
        let got = joint2_equivalent_stiffness(&c, q2).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn stiffness_matches_spring_energy_curvature() {
        // Oracle: K = K0 + d²/dq² [½ K_c (s(q) - s0)²] by central differences.
        let c = comp(1.0e7);
        let energy = |q: f64| {
            let s = c.geometry.spring_length(q).unwrap();
            0.5 * c.spring_stiffness * (s - c.free_length).powi(2)
        };
        let h = 1e-4;
        for deg in [0.0, -30.0, -60.0, -90.0, -120.0, -140.0] {
            let q = deg * DEG;
            let curvature = (energy(q + h) - 2.0 * energy(q) + energy(q - h)) / (h * h);
            let expected = c.joint_stiffness + curvature;
            let got = joint2_equivalent_stiffness(&c, q).unwrap();
            assert!((got - expected).abs() < 1e-6 * expected, "{deg}: {got} vs {expected}");
        }
    }

    #[test]
    fn joint_stiffness_uses_compliances_except_joint_two() {
        let robot = heavy_6r();
        let q = JointState::from_slice(&[0.1, -0.9, 0.6, 0.2, 0.7, -0.1]);
        let plain = joint_stiffness_matrix(&robot, None, &q).unwrap();
        for (k, c) in plain.0.iter().zip(robot.compliances()) {
            assert!((k * c - 1.0).abs() < 1e-15);
        }
        let zero = joint_stiffness_matrix(&robot, Some(&comp(0.0)), &q).unwrap();
        assert_eq!(zero.0[1], 3.0e6);
        let with = joint_stiffness_matrix(&robot, Some(&comp(1.0e7)), &q).unwrap();
        for i in [0, 2, 3, 4, 5] {
            assert_eq!(with.0[i], plain.0[i]);
        }
        let q_other = JointState::from_slice(&[0.1, -2.0, 0.6, 0.2, 0.7, -0.1]);
        let other = joint_stiffness_matrix(&robot, Some(&comp(1.0e7)), &q_other).unwrap();
        assert!((other.0[1] - with.0[1]).abs() > 1e3);
    }

    #[test]
    fn planar_arm_tangential_stiffness() {
        let l = 0.8;
        let k = 2.0e5;
        let arm = planar_1r(l, 1.0 / k);
        let q = JointState::from_slice(&[0.0]);
        let tangent = Vector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let kt = directional_stiffness(&arm, None, &q, &tangent).unwrap();
        assert!((kt - k / (l * l)).abs() < 1e-9 * k);
        // The reduced-rank stiffness is the pseudo-inverse of the compliance.
        let kc = cartesian_stiffness(&arm, None, &q, &Wrench::default(), false).unwrap().0;
        let c = ElasticState::new(&arm, None, &q, &Wrench::default(), false).unwrap().compliance();
        assert!((&kc * &c * &kc - &kc).norm() < 1e-9 * kc.norm());
    }

    #[test]
    fn singular_pose_is_rejected() {
        let robot = heavy_6r();
        // Wrist singularity: q5 = 0 aligns joints 4 and 6.
        let q = JointState::from_slice(&[0.0, -0.9, 0.6, 0.0, 0.0, 0.0]);
        let err = cartesian_stiffness(&robot, None, &q, &Wrench::default(), false).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn deflection_zero_without_load() {
        let robot = heavy_6r();
        let q = JointState::from_slice(&[0.1, -0.9, 0.6, 0.2, 0.7, -0.1]);
        let d = predict_deflection(&robot, Some(&comp(1e7)), &q, &Wrench::default(), true).unwrap();
        assert_eq!(d, Vector6::zeros());
    }
}
