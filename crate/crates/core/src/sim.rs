//! Synthetic laser-tracker data: compensator marker traces and
//! loaded/unloaded partial-pose measurements.

use nalgebra::Isometry3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::ExperimentPlan;
use crate::error::{Error, Result};
use crate::geometry::{MarkerTrace, TraceSample};
use crate::ident::LoadedMeasurement;
use crate::model::{forward_kinematics, JointState, RobotModel, Vec3, VirtualDeflections, Wrench};
use crate::registration::RigidCorrections;
use crate::seed::derive_seed;
use crate::stiffness::{predict_marker_deflections, CompensatorModel, SpringSign};

/// Parameters the simulated robot actually has.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Nominal model; its compliances are the true values (joint 2 is
    /// replaced by the compensator law).
    pub model: RobotModel,
    pub comp: CompensatorModel,
    /// True base = `base_perturbation * nominal base`.
    pub base_perturbation: Isometry3<f64>,
    /// True tool = `nominal tool * tool_perturbation`.
    pub tool_perturbation: Isometry3<f64>,
    /// Joint-2 plane frame in the tracker frame: origin at `P2`, z along the
    /// joint axis, x at `q2 = 0`.
    pub compensator_frame: Isometry3<f64>,
    pub include_hessian: bool,
}

impl GroundTruth {
    pub fn new(model: RobotModel, comp: CompensatorModel) -> Self {
        Self {
            model,
            comp,
            base_perturbation: Isometry3::identity(),
            tool_perturbation: Isometry3::identity(),
            compensator_frame: Isometry3::identity(),
            include_hessian: false,
        }
    }

    /// Model with the true base and tool.
    pub fn actual_robot(&self) -> RobotModel {
        RigidCorrections {
            base_correction: self.base_perturbation,
            tool_correction: self.tool_perturbation,
            residual_rms: 0.0,
            iterations: 0,
        }
        .apply(&self.model)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.comp.validate()
    }

    /// SHA-256 of the canonical TOML serialization, hex encoded.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("ground truth serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation per axis, m.
    pub sigma_position: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_position: 3e-5,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            sigma_position: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_position.is_finite() && self.sigma_position >= 0.0) {
            return Err(Error::invalid("noise.sigma", "must be finite and non-negative"));
        }
        Ok(())
    }
}

pub const DEFAULT_REPETITIONS: usize = 3;

/// Isotropic Gaussian position noise.
struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    fn new(noise: &NoiseSpec, stage: &str, index: u64) -> Result<Self> {
        noise.validate()?;
        let normal = if noise.sigma_position > 0.0 {
            Some(Normal::new(0.0, noise.sigma_position).map_err(|e| Error::invalid("noise.sigma", e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(noise.seed, stage, index)),
            normal,
        })
    }

    fn perturb(&mut self, p: Vec3) -> Vec3 {
        match &self.normal {
            Some(n) => p + Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng)),
            None => p,
        }
    }
}

/// Marker on the compensator body, placed in its local polar frame about the
/// pivot axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub radius: f64,
    pub phase: f64,
    /// Offset along the pivot axis, m.
    pub height: f64,
}

/// Four markers in two opposite pairs, which satisfies the balance
/// conditions exactly.
pub fn default_pivot_markers() -> Vec<MarkerSpec> {
    let pi = std::f64::consts::PI;
    [(0.15, 0.4), (0.10, 1.9), (0.15, 0.4 + pi), (0.10, 1.9 + pi)]
        .iter()
        .map(|&(radius, phase)| MarkerSpec {
            radius,
            phase,
            height: 0.0,
        })
        .collect()
}

/// Marker traces of `P1` (first) and of every pivot-side marker, one sample
/// per `q2` value, expressed in the tracker frame.
pub fn simulate_compensator_markers(
    truth: &GroundTruth,
    q2_set: &[f64],
    markers: &[MarkerSpec],
    noise: &NoiseSpec,
) -> Result<Vec<MarkerTrace>> {
    truth.comp.validate()?;
    let g = &truth.comp.geometry;
    let frame = &truth.compensator_frame;
    let offset = Vec3::new(g.a_x, g.a_y, 0.0);
    let p0 = match g.sign {
        SpringSign::Plus => -offset,
        SpringSign::Minus => offset,
    };
    let unit = |a: f64| Vec3::new(a.cos(), a.sin(), 0.0);
    let world = |p: Vec3| frame.transform_point(&p.into()).coords;

    let mut source = NoiseSource::new(noise, "compensator", 0)?;
    let mut traces = Vec::with_capacity(markers.len() + 1);
    let p1_samples = q2_set
        .iter()
        .map(|&q2| TraceSample {
            q2,
            position: source.perturb(world(unit(q2) * g.link_length)),
        })
        .collect();
    traces.push(MarkerTrace {
        marker_id: "P1".into(),
        samples: p1_samples,
        radius: g.link_length,
        phase: 0.0,
    });
    for (j, m) in markers.iter().enumerate() {
        let samples = q2_set
            .iter()
            .map(|&q2| {
                let d = unit(q2) * g.link_length - p0;
                let phi = d.y.atan2(d.x);
                let local = p0 + unit(m.phase + phi) * m.radius + Vec3::z() * m.height;
                TraceSample {
                    q2,
                    position: source.perturb(world(local)),
                }
            })
            .collect();
        traces.push(MarkerTrace {
            marker_id: format!("P0-{}", j + 1),
            samples,
            radius: m.radius,
            phase: m.phase,
        });
    }
    Ok(traces)
}

/// Noise-free unloaded and loaded marker positions of the true robot.
pub fn true_marker_positions(truth: &GroundTruth, q: &JointState, wrench: &Wrench) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let robot = truth.actual_robot();
    let unloaded = forward_kinematics(&robot, q, &VirtualDeflections::zeros(robot.n_joints()))?.markers;
    let deflection = predict_marker_deflections(&robot, Some(&truth.comp), q, wrench, truth.include_hessian)?;
    let loaded = unloaded.iter().zip(&deflection).map(|(p, d)| p + d).collect();
    Ok((unloaded, loaded))
}

/// `repetitions` noisy measurements of one configuration; the noise stream
/// is derived from `(noise.seed, config_id)`.
pub fn simulate_loaded_measurement(
    truth: &GroundTruth,
    config_id: usize,
    q: &JointState,
    wrench: &Wrench,
    noise: &NoiseSpec,
    repetitions: usize,
) -> Result<Vec<LoadedMeasurement>> {
    let (unloaded, loaded) = true_marker_positions(truth, q, wrench)?;
    let mut source = NoiseSource::new(noise, "measurement", config_id as u64)?;
    Ok((0..repetitions)
        .map(|repetition| LoadedMeasurement {
            config_id,
            q: q.clone(),
            wrench: *wrench,
            markers_unloaded: unloaded.iter().map(|p| source.perturb(*p)).collect(),
            markers_loaded: loaded.iter().map(|p| source.perturb(*p)).collect(),
            repetition,
        })
        .collect())
}

/// Reproducibility record for a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(with = "crate::seed::as_text")]
    pub seed: u64,
    pub sigma_position: f64,
    pub repetitions: usize,
    pub configurations: usize,
    pub measurements: usize,
    pub q2_groups: usize,
    pub include_hessian: bool,
    pub truth_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationDataset {
    pub measurements: Vec<LoadedMeasurement>,
    pub manifest: DatasetManifest,
}

/// Simulates every plan entry; entry `i` becomes configuration id `i`.
pub fn generate_calibration_dataset(
    plan: &ExperimentPlan,
    truth: &GroundTruth,
    noise: &NoiseSpec,
    repetitions: usize,
) -> Result<CalibrationDataset> {
    if plan.is_empty() {
        return Err(Error::EmptyDataset("plan has no entries"));
    }
    if repetitions == 0 {
        return Err(Error::invalid("simulation.repetitions", "must be at least 1"));
    }
    truth.validate()?;
    plan.validate(&truth.model)?;
    let mut measurements = Vec::with_capacity(plan.len() * repetitions);
    for (i, e) in plan.entries.iter().enumerate() {
        measurements.extend(simulate_loaded_measurement(truth, i, &e.q, &e.wrench, noise, repetitions)?);
    }
    let manifest = DatasetManifest {
        seed: noise.seed,
        sigma_position: noise.sigma_position,
        repetitions,
        configurations: plan.len(),
        measurements: measurements.len(),
        q2_groups: plan.group_count(),
        include_hessian: truth.include_hessian,
        truth_hash: truth.hash(),
    };
    Ok(CalibrationDataset { measurements, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::PlanEntry;
    use crate::geometry::identify_compensator_geometry;
    use crate::model::presets::heavy_6r;
    use crate::stiffness::CompensatorGeometry;
    use nalgebra::Vector3;

    fn truth() -> GroundTruth {
        let geometry = CompensatorGeometry {
            link_length: 0.18472,
            a_x: 0.68593,
            a_y: 0.12330,
            sign: SpringSign::Plus,
        };
        let comp = CompensatorModel::new(geometry, 1e7, 0.45, 3e6).unwrap();
        let mut t = GroundTruth::new(heavy_6r(), comp);
        t.compensator_frame = Isometry3::new(Vector3::new(0.35, -0.2, 0.675), Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        t
    }

    fn q2_set() -> Vec<f64> {
        [0.0, -30.0, -60.0, -90.0, -120.0, -140.0].iter().map(|d: &f64| d.to_radians()).collect()
    }

    #[test]
    fn noiseless_traces_round_trip_geometry() {
        let t = truth();
        let traces = simulate_compensator_markers(&t, &q2_set(), &default_pivot_markers(), &NoiseSpec::noiseless()).unwrap();
        let fit = identify_compensator_geometry(&traces[0], &traces[1..], SpringSign::Plus).unwrap();
        let g = t.comp.geometry;
        assert!((fit.geometry.link_length - g.link_length).abs() < 1e-9);
        assert!((fit.geometry.a_x - g.a_x).abs() < 1e-9);
        assert!((fit.geometry.a_y - g.a_y).abs() < 1e-9);
    }

    #[test]
    fn single_q2_value_is_degenerate_downstream() {
        let traces = simulate_compensator_markers(&truth(), &[0.2], &default_pivot_markers(), &NoiseSpec::noiseless()).unwrap();
        assert!(matches!(
            identify_compensator_geometry(&traces[0], &traces[1..], SpringSign::Plus),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn zero_load_zero_noise_loaded_equals_unloaded() {
        let q = JointState::from_slice(&[0.1, -0.9, 0.6, 0.2, 0.7, -0.1]);
        let m = simulate_loaded_measurement(&truth(), 0, &q, &Wrench::default(), &NoiseSpec::noiseless(), 1).unwrap();
        assert_eq!(m[0].markers_loaded, m[0].markers_unloaded);
    }

    #[test]
    fn noise_standard_deviation_matches() {
        let noise = NoiseSpec {
            sigma_position: 3e-5,
            seed: 11,
        };
        let mut src = NoiseSource::new(&noise, "test", 0).unwrap();
        let n = 10_000;
        let samples: Vec<Vec3> = (0..n).map(|_| src.perturb(Vec3::zeros())).collect();
        for axis in 0..3 {
            let mean = samples.iter().map(|s| s[axis]).sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s[axis] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var.sqrt() / noise.sigma_position - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn dataset_is_deterministic_and_grouped() {
        let t = truth();
        let plan = ExperimentPlan::new(
            [-0.3, -0.6, -0.9, -1.2, -1.5]
                .iter()
                .flat_map(|&q2| {
                    [[0.2, 0.5, 0.3], [-0.5, 1.0, -0.6], [0.9, 0.4, 1.2]].map(|[a, b, c]| PlanEntry {
                        q: JointState::from_slice(&[a, q2, b, c, 0.8, -0.4]),
                        wrench: Wrench::force(Vec3::new(300.0, -500.0, -2000.0)),
                    })
                })
                .collect(),
        );
        let noise = NoiseSpec::default();
        let a = generate_calibration_dataset(&plan, &t, &noise, 3).unwrap();
        let b = generate_calibration_dataset(&plan, &t, &noise, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.manifest.configurations, 15);
        assert_eq!(a.manifest.q2_groups, 5);
        assert_eq!(a.measurements.len(), 45);
        assert_eq!(a.manifest.truth_hash.len(), 64);
        assert!(generate_calibration_dataset(&ExperimentPlan::default(), &t, &noise, 3).is_err());
    }
}
