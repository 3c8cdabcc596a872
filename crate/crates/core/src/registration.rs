//! Base and tool registration from unloaded marker measurements.
//!
//! Measured marker `m` at configuration `c` is modelled as
//! `B * F(q_c) * T * o_m`, with `F` the nominal chain and `o_m` the marker
//! offset in the tool frame. `B` is initialised by a pooled rigid fit of the
//! nominal predictions, then `B` and `T` are refined jointly by Gauss-Newton.

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{JointState, RobotModel, Vec3};

/// Unloaded marker positions (averaged over repetitions) at one configuration.
#[derive(Clone, Debug)]
pub struct UnloadedObservation {
    pub q: JointState,
    pub markers: Vec<Vec3>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidCorrections {
    /// Identified base = `base_correction * nominal base`.
    pub base_correction: Isometry3<f64>,
    /// Identified tool = `nominal tool * tool_correction`.
    pub tool_correction: Isometry3<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl RigidCorrections {
    pub fn identity() -> Self {
        Self {
            base_correction: Isometry3::identity(),
            tool_correction: Isometry3::identity(),
            residual_rms: 0.0,
            iterations: 0,
        }
    }

    pub fn apply(&self, model: &RobotModel) -> RobotModel {
        let base = self.base_correction * model.base();
        let tool = model.tool() * self.tool_correction;
        model.clone().with_base(base).with_tool(tool)
    }
}

fn increment(x: &[f64]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(x[3], x[4], x[5]),
        UnitQuaternion::from_scaled_axis(Vector3::new(x[0], x[1], x[2])),
    )
}

fn residuals(model: &RobotModel, obs: &[UnloadedObservation], base: &Isometry3<f64>, tool: &Isometry3<f64>) -> DVector<f64> {
    let trial = model.clone().with_base(*base).with_tool(*tool);
    let mut r = Vec::with_capacity(obs.len() * model.markers().len() * 3);
    for o in obs {
        let chain = trial.chain(&o.q.0);
        for (offset, measured) in model.markers().iter().zip(&o.markers) {
            let p = chain.marker_position(offset) - measured;
            r.extend_from_slice(p.as_slice());
        }
    }
    DVector::from_vec(r)
}

const MAX_ITERATIONS: usize = 50;
const STEP: f64 = 1e-7;

pub fn register_base_tool(model: &RobotModel, obs: &[UnloadedObservation]) -> Result<RigidCorrections> {
    if obs.is_empty() {
        return Err(Error::EmptyDataset("registration needs unloaded measurements"));
    }
    for o in obs {
        model.check_joints(&o.q)?;
        if o.markers.len() != model.markers().len() {
            return Err(Error::Dimension {
                what: "markers per configuration",
                expected: model.markers().len(),
                got: o.markers.len(),
            });
        }
    }

    // Pooled rigid fit of the nominal predictions onto the measurements.
    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    for o in obs {
        let chain = model.chain(&o.q.0);
        for (offset, m) in model.markers().iter().zip(&o.markers) {
            predicted.push(chain.marker_position(offset));
            measured.push(*m);
        }
    }
    let initial = linalg::rigid_fit(&predicted, &measured)?;
    let mut base = initial * model.base();
    let mut tool = *model.tool();

    let mut r = residuals(model, obs, &base, &tool);
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mut jac = DMatrix::zeros(r.len(), 12);
        for k in 0..12 {
            let mut x = [0.0; 12];
            x[k] = STEP;
            let (bp, tp) = (increment(&x[..6]) * base, tool * increment(&x[6..]));
            x[k] = -STEP;
            let (bm, tm) = (increment(&x[..6]) * base, tool * increment(&x[6..]));
            let col = (residuals(model, obs, &bp, &tp) - residuals(model, obs, &bm, &tm)) / (2.0 * STEP);
            jac.set_column(k, &col);
        }
        let normal = jac.transpose() * &jac;
        let rhs = -(jac.transpose() * &r);
        let Some((dx, _)) = linalg::solve_normal(&normal, &rhs) else {
            return Err(Error::DegenerateData(
                "base/tool registration is not observable from these configurations".into(),
            ));
        };
        base = increment(&dx.as_slice()[..6]) * base;
        tool *= increment(&dx.as_slice()[6..]);
        let next = residuals(model, obs, &base, &tool);
        let done = dx.norm() < 1e-13 || (r.norm() - next.norm()).abs() <= 1e-15 * r.norm().max(1e-300);
        r = next;
        if done {
            break;
        }
    }

    Ok(RigidCorrections {
        base_correction: base * model.base().inverse(),
        tool_correction: model.tool().inverse() * tool,
        residual_rms: (r.norm_squared() / (r.len() as f64 / 3.0)).sqrt(),
        iterations,
    })
}
