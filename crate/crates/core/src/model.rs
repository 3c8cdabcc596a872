//! Serial-chain geometry: forward kinematics, virtual-joint Jacobians and
//! the load Hessian.
//!
//! Links follow the standard Denavit-Hartenberg convention: the transform
//! of link `j` is `Rz(q_j + offset_j) * Tz(d_j) * Tx(a_j) * Rx(alpha_j)`, and
//! joint `j` rotates about the z-axis of the frame that precedes it. One
//! virtual spring sits in every actuated joint, so a virtual deflection
//! `theta_j` simply adds to `q_j`.

use nalgebra::{DMatrix, DVector, Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// One row of standard link parameters. Lengths in m, angles in rad.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkRow {
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
    pub offset: f64,
}

impl LinkRow {
    pub fn new(d: f64, a: f64, alpha: f64, offset: f64) -> Self {
        Self { d, a, alpha, offset }
    }

    pub fn transform(&self, angle: f64) -> Isometry3<f64> {
        let theta = angle + self.offset;
        let (st, ct) = theta.sin_cos();
        let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), theta)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.alpha);
        Isometry3::from_parts(
            Translation3::new(self.a * ct, self.a * st, self.d),
            UnitQuaternion::from_rotation_matrix(&rotation),
        )
    }
}

/// Joint range in rad.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

/// Serial manipulator with rigid links, tool-mounted markers and nominal
/// joint compliances (rad/(N·m)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    links: Vec<LinkRow>,
    limits: Vec<JointLimit>,
    base: Isometry3<f64>,
    tool: Isometry3<f64>,
    markers: Vec<Vec3>,
    compliances: Vec<f64>,
}

impl RobotModel {
    pub fn new(
        links: Vec<LinkRow>,
        limits: Vec<JointLimit>,
        base: Isometry3<f64>,
        tool: Isometry3<f64>,
        markers: Vec<Vec3>,
        compliances: Vec<f64>,
    ) -> Result<Self> {
        let model = Self {
            links,
            limits,
            base,
            tool,
            markers,
            compliances,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.links.len();
        if n == 0 {
            return Err(Error::invalid("links", "at least one link is required"));
        }
        for (i, row) in self.links.iter().enumerate() {
            for (name, value) in [("d", row.d), ("a", row.a), ("alpha", row.alpha), ("offset", row.offset)] {
                if !value.is_finite() {
                    return Err(Error::invalid(format!("links[{i}].{name}"), "not finite"));
                }
            }
            if row.a < 0.0 {
                return Err(Error::invalid(format!("links[{i}].a"), "negative link length"));
            }
        }
        if self.limits.len() != n {
            return Err(Error::invalid(
                "joint_limits",
                format!("expected {n} entries, got {}", self.limits.len()),
            ));
        }
        for (i, l) in self.limits.iter().enumerate() {
            if !(l.min.is_finite() && l.max.is_finite() && l.min < l.max) {
                return Err(Error::invalid(format!("joint_limits[{i}]"), "empty or non-finite range"));
            }
        }
        if self.compliances.len() != n {
            return Err(Error::invalid(
                "compliances",
                format!("expected {n} entries, got {}", self.compliances.len()),
            ));
        }
        for (i, &k) in self.compliances.iter().enumerate() {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::invalid(format!("compliances[{i}]"), "compliance must be positive"));
            }
        }
        if self.markers.is_empty() {
            return Err(Error::invalid("markers", "at least one marker is required"));
        }
        if self.markers.iter().any(|m| !m.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("markers", "non-finite offset"));
        }
        if self.markers.len() >= 3 && centered_rank(&self.markers) < 2 {
            return Err(Error::invalid("markers", "marker offsets are collinear"));
        }
        for (name, iso) in [("base", &self.base), ("tool", &self.tool)] {
            if !iso.to_homogeneous().iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(name, "non-finite transform"));
            }
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkRow] {
        &self.links
    }

    pub fn limits(&self) -> &[JointLimit] {
        &self.limits
    }

    pub fn base(&self) -> &Isometry3<f64> {
        &self.base
    }

    pub fn tool(&self) -> &Isometry3<f64> {
        &self.tool
    }

    pub fn markers(&self) -> &[Vec3] {
        &self.markers
    }

    pub fn compliances(&self) -> &[f64] {
        &self.compliances
    }

    pub fn with_base(mut self, base: Isometry3<f64>) -> Self {
        self.base = base;
        self
    }

    pub fn with_tool(mut self, tool: Isometry3<f64>) -> Self {
        self.tool = tool;
        self
    }

    pub fn with_compliances(mut self, compliances: Vec<f64>) -> Result<Self> {
        self.compliances = compliances;
        self.validate()?;
        Ok(self)
    }

    pub fn check_joints(&self, q: &JointState) -> Result<()> {
        if q.len() != self.n_joints() {
            return Err(Error::Dimension {
                what: "joint vector",
                expected: self.n_joints(),
                got: q.len(),
            });
        }
        for (i, (&v, lim)) in q.0.iter().zip(&self.limits).enumerate() {
            if !v.is_finite() || !lim.contains(v) {
                return Err(Error::JointLimit {
                    index: i,
                    value: v,
                    min: lim.min,
                    max: lim.max,
                });
            }
        }
        Ok(())
    }

    fn check_theta(&self, theta: &VirtualDeflections) -> Result<()> {
        if theta.0.len() != self.n_joints() {
            return Err(Error::Dimension {
                what: "virtual deflection vector",
                expected: self.n_joints(),
                got: theta.0.len(),
            });
        }
        if !theta.0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("theta", "non-finite virtual deflection"));
        }
        Ok(())
    }

    /// World frames preceding each joint plus the tool frame, for the joint
    /// angles `angles` (already including virtual deflections).
    pub(crate) fn chain(&self, angles: &DVector<f64>) -> Chain {
        let mut frames = Vec::with_capacity(self.n_joints());
        let mut current = self.base;
        for (row, &angle) in self.links.iter().zip(angles.iter()) {
            frames.push(current);
            current *= row.transform(angle);
        }
        Chain {
            joint_frames: frames,
            tool: current * self.tool,
        }
    }
}

fn centered_rank(points: &[Vec3]) -> usize {
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    let m = DMatrix::from_fn(3, points.len(), |r, c| points[c][r] - mean[r]);
    let sv = crate::linalg::singular_values(&m);
    let max = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| s > 1e-9 * max.max(1e-300)).count()
}

pub(crate) struct Chain {
    pub joint_frames: Vec<Isometry3<f64>>,
    pub tool: Isometry3<f64>,
}

impl Chain {
    /// Geometric Jacobian (linear velocity of `point`, angular velocity).
    pub fn jacobian_at(&self, point: &Vec3) -> DMatrix<f64> {
        let n = self.joint_frames.len();
        let mut j = DMatrix::zeros(6, n);
        for (c, frame) in self.joint_frames.iter().enumerate() {
            let axis = frame.rotation * Vector3::z();
            let origin = frame.translation.vector;
            let lin = axis.cross(&(point - origin));
            j.fixed_view_mut::<3, 1>(0, c).copy_from(&lin);
            j.fixed_view_mut::<3, 1>(3, c).copy_from(&axis);
        }
        j
    }

    pub fn marker_position(&self, offset: &Vec3) -> Vec3 {
        self.tool.transform_point(&(*offset).into()).coords
    }
}

/// Actuated joint coordinates, rad.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState(pub DVector<f64>);

impl JointState {
    pub fn from_slice(q: &[f64]) -> Self {
        Self(DVector::from_column_slice(q))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Virtual spring deflections, rad. The zero vector is the unloaded state.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualDeflections(pub DVector<f64>);

impl VirtualDeflections {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }
}

/// External wrench applied at the tool point, expressed in the world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    pub fn force(force: Vec3) -> Self {
        Self {
            force,
            torque: Vec3::zeros(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            force: Vec3::new(v[0], v[1], v[2]),
            torque: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            force: self.force * s,
            torque: self.torque * s,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.force == Vec3::zeros() && self.torque == Vec3::zeros()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Rotation3<f64>,
}

impl From<Isometry3<f64>> for Pose {
    fn from(iso: Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            orientation: iso.rotation.to_rotation_matrix(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Kinematics {
    pub pose: Pose,
    pub markers: Vec<Vec3>,
}

fn deflected_angles(model: &RobotModel, q: &JointState, theta: &VirtualDeflections) -> Result<DVector<f64>> {
    model.check_joints(q)?;
    model.check_theta(theta)?;
    Ok(&q.0 + &theta.0)
}

pub fn forward_kinematics(model: &RobotModel, q: &JointState, theta: &VirtualDeflections) -> Result<Kinematics> {
    let angles = deflected_angles(model, q, theta)?;
    let chain = model.chain(&angles);
    let markers = model.markers.iter().map(|m| chain.marker_position(m)).collect();
    Ok(Kinematics {
        pose: chain.tool.into(),
        markers,
    })
}

/// 6×n Jacobian of the tool twist with respect to the virtual deflections.
pub fn jacobian_virtual(model: &RobotModel, q: &JointState, theta: &VirtualDeflections) -> Result<DMatrix<f64>> {
    let angles = deflected_angles(model, q, theta)?;
    let chain = model.chain(&angles);
    Ok(chain.jacobian_at(&chain.tool.translation.vector))
}

/// Position rows of the Jacobian evaluated at each marker point.
pub fn marker_jacobians(model: &RobotModel, q: &JointState, theta: &VirtualDeflections) -> Result<Vec<DMatrix<f64>>> {
    let angles = deflected_angles(model, q, theta)?;
    let chain = model.chain(&angles);
    Ok(model
        .markers
        .iter()
        .map(|m| chain.jacobian_at(&chain.marker_position(m)).rows(0, 3).into_owned())
        .collect())
}

const HESSIAN_STEP: f64 = 1e-6;

/// Load Hessian `d(J^T F)/d theta`, symmetrised. Zero when `F` is zero.
pub fn hessian_load(model: &RobotModel, q: &JointState, theta: &VirtualDeflections, wrench: &Wrench) -> Result<DMatrix<f64>> {
    let angles = deflected_angles(model, q, theta)?;
    let n = model.n_joints();
    if wrench.is_zero() {
        return Ok(DMatrix::zeros(n, n));
    }
    let f = DVector::from_column_slice(wrench.to_vector().as_slice());
    let torques = |a: &DVector<f64>| {
        let chain = model.chain(a);
        chain.jacobian_at(&chain.tool.translation.vector).transpose() * &f
    };
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = angles.clone();
        let mut minus = angles.clone();
        plus[j] += HESSIAN_STEP;
        minus[j] -= HESSIAN_STEP;
        let col = (torques(&plus) - torques(&minus)) / (2.0 * HESSIAN_STEP);
        h.set_column(j, &col);
    }
    Ok((&h + h.transpose()) * 0.5)
}

pub mod presets {
    //! Reference robots.

    use std::f64::consts::FRAC_PI_2;

    use super::*;

    /// Joint compliances of a heavy milling robot, rad/(N·m). Joint 2 carries
    /// a placeholder that the compensator-aware model overrides.
    pub const HEAVY_6R_COMPLIANCES: [f64; 6] = [0.623e-6, 0.30e-6, 0.416e-6, 2.786e-6, 3.483e-6, 2.074e-6];

    /// Six-revolute heavy industrial robot of roughly 2.7 m reach with a
    /// calibration end-effector carrying three markers.
    pub fn heavy_6r() -> RobotModel {
        let deg = std::f64::consts::PI / 180.0;
        let links = vec![
            LinkRow::new(0.675, 0.350, -FRAC_PI_2, 0.0),
            LinkRow::new(0.0, 1.150, 0.0, 0.0),
            LinkRow::new(0.0, 0.041, -FRAC_PI_2, 0.0),
            LinkRow::new(1.200, 0.0, FRAC_PI_2, 0.0),
            LinkRow::new(0.0, 0.0, -FRAC_PI_2, 0.0),
            LinkRow::new(0.215, 0.0, 0.0, 0.0),
        ];
        let limits = vec![
            JointLimit::new(-185.0 * deg, 185.0 * deg),
            JointLimit::new(-150.0 * deg, 10.0 * deg),
            JointLimit::new(-120.0 * deg, 155.0 * deg),
            JointLimit::new(-350.0 * deg, 350.0 * deg),
            JointLimit::new(-125.0 * deg, 125.0 * deg),
            JointLimit::new(-350.0 * deg, 350.0 * deg),
        ];
        // Load point of the calibration end-effector, off the flange axis so
        // that forces there also load joint 6.
        let tool = Isometry3::translation(0.2, 0.0, 0.25);
        let markers = vec![
            Vec3::new(0.15, 0.0, 0.0),
            Vec3::new(-0.075, 0.13, 0.0),
            Vec3::new(-0.075, -0.13, 0.0),
        ];
        RobotModel::new(
            links,
            limits,
            Isometry3::identity(),
            tool,
            markers,
            HEAVY_6R_COMPLIANCES.to_vec(),
        )
        .expect("preset is valid")
    }

    /// Planar single-joint arm of length `length` rotating about world z,
    /// with one marker at the tip.
    pub fn planar_1r(length: f64, compliance: f64) -> RobotModel {
        let pi = std::f64::consts::PI;
        RobotModel::new(
            vec![LinkRow::new(0.0, length, 0.0, 0.0)],
            vec![JointLimit::new(-pi, pi)],
            Isometry3::identity(),
            Isometry3::identity(),
            vec![Vec3::zeros()],
            vec![compliance],
        )
        .expect("preset is valid")
    }
}
