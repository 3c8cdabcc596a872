//! Identification of the compensator geometry from marker traces.
//!
//! The attachment point `P1` turns with joint 2 on a circle of radius `L`
//! about `P2`; markers on the compensator body turn about the pivot axis
//! through `P0`. Both fits are closed-form.

use nalgebra::{DMatrix, Matrix3, Rotation3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Vec3;
use crate::stiffness::{CompensatorGeometry, SpringSign};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Joint-2 coordinate at which the marker was measured, rad.
    pub q2: f64,
    pub position: Vec3,
}

/// Positions of one marker recorded over a sweep of joint 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerTrace {
    pub marker_id: String,
    pub samples: Vec<TraceSample>,
    /// Nominal distance from the rotation axis, m.
    pub radius: f64,
    /// Nominal phase about the rotation axis, rad.
    pub phase: f64,
}

impl MarkerTrace {
    fn check(&self) -> Result<()> {
        let mut q2: Vec<f64> = self.samples.iter().map(|s| s.q2).collect();
        q2.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        q2.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if q2.len() < 3 {
            return Err(Error::DegenerateData(format!(
                "trace {} has {} distinct q2 values, at least 3 are required",
                self.marker_id,
                q2.len()
            )));
        }
        if self
            .samples
            .iter()
            .any(|s| !(s.q2.is_finite() && s.position.iter().all(|v| v.is_finite())))
        {
            return Err(Error::DegenerateData(format!(
                "trace {} contains non-finite samples",
                self.marker_id
            )));
        }
        Ok(())
    }
}

/// Result of the lever-length fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkLengthFit {
    pub link_length: f64,
    /// Maps the joint-2 plane frame into the measurement frame.
    pub rotation: Rotation3<f64>,
    /// Estimated joint axis point `P2`.
    pub center: Vec3,
    pub residual_rms: f64,
}

const MIN_SPAN: f64 = 30.0 * std::f64::consts::PI / 180.0;

/// Lever length `L` and plane rotation from the trace of `P1`.
pub fn fit_link_length(trace: &MarkerTrace) -> Result<LinkLengthFit> {
    trace.check()?;
    let span = trace.samples.iter().map(|s| s.q2).fold(f64::NEG_INFINITY, f64::max)
        - trace.samples.iter().map(|s| s.q2).fold(f64::INFINITY, f64::min);
    if span < MIN_SPAN {
        return Err(Error::DegenerateData(format!(
            "q2 span {span:.4} rad is below the required 30 degrees"
        )));
    }
    let m = trace.samples.len() as f64;
    let unit = |q: f64| Vec3::new(q.cos(), q.sin(), 0.0);
    let p_mean = trace.samples.iter().map(|s| s.position).sum::<Vec3>() / m;
    let u_mean = trace.samples.iter().map(|s| unit(s.q2)).sum::<Vec3>() / m;

    let mut cov = Matrix3::zeros();
    let mut num = 0.0;
    let mut den = 0.0;
    for s in &trace.samples {
        let p_hat = s.position - p_mean;
        let u_hat = unit(s.q2) - u_mean;
        cov += u_hat * p_hat.transpose();
        den += u_hat.norm_squared();
    }
    let rotation = linalg::procrustes_rotation(&cov)?;
    for s in &trace.samples {
        num += (s.position - p_mean).dot(&(rotation * (unit(s.q2) - u_mean)));
    }
    let link_length = num / den;
    let center = p_mean - rotation * u_mean * link_length;
    let rss: f64 = trace
        .samples
        .iter()
        .map(|s| (s.position - center - rotation * unit(s.q2) * link_length).norm_squared())
        .sum();
    Ok(LinkLengthFit {
        link_length,
        rotation,
        center,
        residual_rms: (rss / m).sqrt(),
    })
}

/// Result of the pivot-point fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PivotFit {
    /// Point on the pivot axis at the mean axial height of the markers.
    pub p0: Vec3,
    /// Unit normal of the rotation plane (axis direction).
    pub normal: Vec3,
    pub residual_rms: f64,
}

/// Pivot point `p0` from markers circling the compensator axis.
pub fn fit_pivot_point(traces: &[MarkerTrace]) -> Result<PivotFit> {
    if traces.is_empty() {
        return Err(Error::DegenerateData("no pivot-side traces".into()));
    }
    let mut scatter = Matrix3::zeros();
    let mut rhs = Vec3::zeros();
    let mut total = Vec3::zeros();
    let mut count = 0usize;
    for trace in traces {
        trace.check()?;
        let m = trace.samples.len() as f64;
        let p_mean = trace.samples.iter().map(|s| s.position).sum::<Vec3>() / m;
        let sq_mean = trace.samples.iter().map(|s| s.position.norm_squared()).sum::<f64>() / m;
        for s in &trace.samples {
            let p_hat = s.position - p_mean;
            let s_hat = s.position.norm_squared() - sq_mean;
            scatter += p_hat * p_hat.transpose();
            rhs += p_hat * s_hat;
            total += s.position;
            count += 1;
        }
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let lambda_max = eig.eigenvalues[order[0]];
    if lambda_max.is_nan() || lambda_max <= 0.0 || eig.eigenvalues[order[1]] <= 1e-12 * lambda_max {
        return Err(Error::DegenerateData(
            "pivot-side samples are collinear".into(),
        ));
    }
    let normal: Vec3 = eig.eigenvectors.column(order[2]).into_owned();
    // (I - n n^T) S^-1 restricted to the rotation plane: the out-of-plane
    // eigen-direction is projected out, so only the in-plane pair is inverted.
    let mut in_plane_inverse = Matrix3::zeros();
    for &i in &order[..2] {
        let v: Vec3 = eig.eigenvectors.column(i).into_owned();
        in_plane_inverse += v * v.transpose() / eig.eigenvalues[i];
    }
    let axial = normal * normal.transpose();
    let p0 = 0.5 * in_plane_inverse * rhs + axial * total / count as f64;

    let mut rss = 0.0;
    let mut n_res = 0usize;
    for trace in traces {
        let residuals = circle_residuals(trace, &p0, &normal);
        rss += residuals.iter().map(|r| r * r).sum::<f64>();
        n_res += residuals.len();
    }
    Ok(PivotFit {
        p0,
        normal,
        residual_rms: (rss / n_res as f64).sqrt(),
    })
}

/// Radial and axial deviations of a trace from the circle about the axis
/// `(p0, normal)` whose radius and height are the trace means.
fn circle_residuals(trace: &MarkerTrace, p0: &Vec3, normal: &Vec3) -> Vec<f64> {
    let m = trace.samples.len() as f64;
    let rel: Vec<Vec3> = trace.samples.iter().map(|s| s.position - p0).collect();
    let heights: Vec<f64> = rel.iter().map(|r| r.dot(normal)).collect();
    let radii: Vec<f64> = rel.iter().zip(&heights).map(|(r, h)| (r - normal * *h).norm()).collect();
    let h_mean = heights.iter().sum::<f64>() / m;
    let r_mean = radii.iter().sum::<f64>() / m;
    radii
        .iter()
        .map(|r| r - r_mean)
        .chain(heights.iter().map(|h| h - h_mean))
        .collect()
}

/// Identified compensator geometry with ±3σ half-widths for `(L, a_x, a_y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryFitResult {
    pub geometry: CompensatorGeometry,
    pub p0: Vec3,
    pub rotation: Rotation3<f64>,
    pub plane_normal: Vec3,
    pub center: Vec3,
    pub residual_rms: f64,
    pub sigma_estimate: f64,
    /// Half-widths for `[L, a_x, a_y]`, m.
    pub ci_half_widths: [f64; 3],
}

fn estimate(p1: &MarkerTrace, p0_traces: &[MarkerTrace], sign: SpringSign) -> Result<(LinkLengthFit, PivotFit, [f64; 3])> {
    let link = fit_link_length(p1)?;
    let pivot = fit_pivot_point(p0_traces)?;
    // P2 - P0 for the `Plus` convention, P0 - P2 for `Minus`.
    let offset = match sign {
        SpringSign::Plus => link.center - pivot.p0,
        SpringSign::Minus => pivot.p0 - link.center,
    };
    let local = link.rotation.inverse() * offset;
    Ok((link, pivot, [link.link_length, local.x, local.y]))
}

/// Full geometry identification: `L` from the `P1` trace, `(a_x, a_y)` as the
/// in-plane coordinates of the pivot relative to the joint axis, expressed
/// in the joint-2 plane frame.
pub fn identify_compensator_geometry(p1: &MarkerTrace, p0_traces: &[MarkerTrace], sign: SpringSign) -> Result<GeometryFitResult> {
    let (link, pivot, params) = estimate(p1, p0_traces, sign)?;

    // Pooled noise estimate: 3 residuals per P1 sample (7 fitted
    // parameters), 2 per pivot-side sample (4 axis + 2 per trace).
    let p1_rss = link.residual_rms.powi(2) * p1.samples.len() as f64;
    let p1_dof = 3 * p1.samples.len() as isize - 7;
    let mut p0_rss = 0.0;
    let mut p0_samples = 0isize;
    for t in p0_traces {
        p0_rss += circle_residuals(t, &pivot.p0, &pivot.normal).iter().map(|r| r * r).sum::<f64>();
        p0_samples += t.samples.len() as isize;
    }
    let p0_dof = 2 * p0_samples - 4 - 2 * p0_traces.len() as isize;
    let dof = (p1_dof + p0_dof).max(1) as f64;
    let sigma = ((p1_rss + p0_rss) / dof).sqrt();

    let ci = delta_method_half_widths(p1, p0_traces, sign, sigma)?;
    let total = p1.samples.len() + p0_traces.iter().map(|t| t.samples.len()).sum::<usize>();
    Ok(GeometryFitResult {
        geometry: CompensatorGeometry {
            link_length: params[0],
            a_x: params[1],
            a_y: params[2],
            sign,
        },
        p0: pivot.p0,
        rotation: link.rotation,
        plane_normal: pivot.normal,
        center: link.center,
        residual_rms: ((p1_rss + p0_rss) / total as f64).sqrt(),
        sigma_estimate: sigma,
        ci_half_widths: ci,
    })
}

const DELTA_STEP: f64 = 1e-7;

/// ±3σ half-widths from first-order propagation of isotropic coordinate
/// noise `sigma` through the closed-form estimator.
fn delta_method_half_widths(p1: &MarkerTrace, p0_traces: &[MarkerTrace], sign: SpringSign, sigma: f64) -> Result<[f64; 3]> {
    let mut traces: Vec<MarkerTrace> = std::iter::once(p1.clone()).chain(p0_traces.iter().cloned()).collect();
    let n_coords: usize = traces.iter().map(|t| 3 * t.samples.len()).sum();
    let mut grad = DMatrix::zeros(3, n_coords);
    let mut col = 0;
    for t in 0..traces.len() {
        for s in 0..traces[t].samples.len() {
            for axis in 0..3 {
                let original = traces[t].samples[s].position[axis];
                traces[t].samples[s].position[axis] = original + DELTA_STEP;
                let plus = estimate(&traces[0], &traces[1..], sign)?.2;
                traces[t].samples[s].position[axis] = original - DELTA_STEP;
                let minus = estimate(&traces[0], &traces[1..], sign)?.2;
                traces[t].samples[s].position[axis] = original;
                for k in 0..3 {
                    grad[(k, col)] = (plus[k] - minus[k]) / (2.0 * DELTA_STEP);
                }
                col += 1;
            }
        }
    }
    let cov = &grad * grad.transpose() * (sigma * sigma);
    Ok([0, 1, 2].map(|k| 3.0 * cov[(k, k)].max(0.0).sqrt()))
}

/// `(Σ R_j cos β_j, Σ R_j sin β_j)` over the nominal marker placements.
pub fn marker_balance_residual(traces: &[MarkerTrace]) -> (f64, f64) {
    traces.iter().fold((0.0, 0.0), |(c, s), t| {
        (c + t.radius * t.phase.cos(), s + t.radius * t.phase.sin())
    })
}

pub const BALANCE_TOLERANCE: f64 = 1e-6;

/// True when the marker placement satisfies both balance conditions
/// within `tolerance` (m).
pub fn is_marker_layout_balanced(traces: &[MarkerTrace], tolerance: f64) -> bool {
    let (c, s) = marker_balance_residual(traces);
    c.abs() <= tolerance && s.abs() <= tolerance
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(id: &str, samples: Vec<(f64, Vec3)>, radius: f64, phase: f64) -> MarkerTrace {
        MarkerTrace {
            marker_id: id.into(),
            samples: samples
                .into_iter()
                .map(|(q2, position)| TraceSample { q2, position })
                .collect(),
            radius,
            phase,
        }
    }

    const Q2: [f64; 6] = [0.0, -30.0, -60.0, -90.0, -120.0, -140.0];

    #[test]
    fn exact_circle_gives_identity_and_length() {
        let l = 0.18472;
        let samples = Q2
            .iter()
            .map(|d| {
                let q = d.to_radians();
                (q, Vec3::new(q.cos(), q.sin(), 0.0) * l)
            })
            .collect();
        let fit = fit_link_length(&trace("P1", samples, 0.0, 0.0)).unwrap();
        assert!((fit.link_length - l).abs() < 1e-15);
        assert!((fit.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!(fit.center.norm() < 1e-15);
    }

    #[test]
    fn rigidly_moved_trace_recovers_rotation() {
        let l = 0.18472;
        let r = Rotation3::from_euler_angles(0.4, -1.1, 2.0);
        let c = Vec3::new(1.2, -0.4, 0.8);
        let samples = Q2
            .iter()
            .map(|d| {
                let q = d.to_radians();
                (q, c + r * Vec3::new(q.cos(), q.sin(), 0.0) * l)
            })
            .collect();
        let fit = fit_link_length(&trace("P1", samples, 0.0, 0.0)).unwrap();
        assert!((fit.link_length - l).abs() < 1e-9 * l);
        assert!((fit.rotation.matrix() - r.matrix()).norm() < 1e-12);
        assert!((fit.center - c).norm() < 1e-12);
    }

    #[test]
    fn equal_q2_is_degenerate() {
        let samples = (0..5).map(|i| (0.3, Vec3::new(i as f64, 0.0, 0.0))).collect();
        assert!(matches!(
            fit_link_length(&trace("P1", samples, 0.0, 0.0)),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn pivot_of_origin_circle() {
        let samples = (0..8)
            .map(|i| {
                let a = i as f64 * 0.7;
                (a, Vec3::new(a.cos(), a.sin(), 0.0) * 0.2)
            })
            .collect();
        let fit = fit_pivot_point(&[trace("P01", samples, 0.2, 0.0)]).unwrap();
        assert!(fit.p0.norm() < 1e-15, "{}", fit.p0);
        assert!((fit.normal.z.abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_pivot_samples_are_degenerate() {
        let samples = (0..5).map(|i| (i as f64 * 0.1, Vec3::new(i as f64, 0.0, 0.0))).collect();
        assert!(matches!(
            fit_pivot_point(&[trace("P01", samples, 0.1, 0.0)]),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn balance_of_single_and_symmetric_layouts() {
        let t = |r: f64, b: f64| trace("m", vec![], r, b);
        let (c, s) = marker_balance_residual(&[t(0.1, 0.0)]);
        assert_eq!((c, s), (0.1, 0.0));
        let pi = std::f64::consts::PI;
        let layout = [t(0.12, 0.3), t(0.08, 1.4), t(0.12, 0.3 + pi), t(0.08, 1.4 + pi)];
        let (c, s) = marker_balance_residual(&layout);
        assert!(c.abs() < 1e-16 && s.abs() < 1e-16);
        assert!(is_marker_layout_balanced(&layout, BALANCE_TOLERANCE));
        // Three equal radii at 120° spacing: roots of unity sum to zero.
        let tri = [t(0.1, 0.0), t(0.1, 2.0 * pi / 3.0), t(0.1, 4.0 * pi / 3.0)];
        let (c, s) = marker_balance_residual(&tri);
        assert!(c.abs() < 1e-15 && s.abs() < 1e-15);
        assert!(!is_marker_layout_balanced(&[t(0.1, 0.0)], BALANCE_TOLERANCE));
    }
}
