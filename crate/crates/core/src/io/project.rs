//! Project file: a TOML document describing the robot, the compensator, the
//! noise model, plan settings and the simulated ground truth.
//!
//! Quantities are written either as bare numbers (interpreted in the unit
//! declared for their dimension in `[units]`, SI by default) or as strings
//! with a unit suffix, e.g. `"0.623 urad/Nm"` or `"-30 deg"`.

use std::path::{Path, PathBuf};

use nalgebra::Isometry3;
use serde::Deserialize;

use super::units::{parse_quantity, to_si, Dimension};
use crate::design::{default_force_directions, GridSpec, SearchConfig, TestPose};
use crate::error::{Error, Result};
use crate::model::presets::heavy_6r;
use crate::model::{JointLimit, JointState, LinkRow, RobotModel, Vec3, Wrench};
use crate::sim::{default_pivot_markers, GroundTruth, MarkerSpec, NoiseSpec, DEFAULT_REPETITIONS};
use crate::stiffness::{CompensatorGeometry, CompensatorModel, SpringSign};

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Quantity {
    Number(f64),
    Text(String),
}

/// Units applied to bare numbers.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUnits {
    length: Option<String>,
    angle: Option<String>,
    force: Option<String>,
    torque: Option<String>,
    compliance: Option<String>,
    rotational_stiffness: Option<String>,
    linear_stiffness: Option<String>,
}

struct Units(RawUnits);

impl Units {
    fn unit(&self, dim: Dimension) -> Option<&str> {
        let u = &self.0;
        match dim {
            Dimension::Length => u.length.as_deref(),
            Dimension::Angle => u.angle.as_deref(),
            Dimension::Force => u.force.as_deref(),
            Dimension::Torque => u.torque.as_deref(),
            Dimension::Compliance => u.compliance.as_deref(),
            Dimension::RotationalStiffness => u.rotational_stiffness.as_deref(),
            Dimension::LinearStiffness => u.linear_stiffness.as_deref(),
        }
    }

    fn check(&self) -> Result<()> {
        for dim in [
            Dimension::Length,
            Dimension::Angle,
            Dimension::Force,
            Dimension::Torque,
            Dimension::Compliance,
            Dimension::RotationalStiffness,
            Dimension::LinearStiffness,
        ] {
            if let Some(u) = self.unit(dim) {
                if dim.scale(u).is_none() {
                    return Err(validation("units", format!("unknown {dim:?} unit `{u}`")));
                }
            }
        }
        Ok(())
    }

    fn get(&self, q: &Quantity, dim: Dimension, field: &str) -> Result<f64> {
        let value = match q {
            Quantity::Number(v) => match self.unit(dim) {
                Some(u) => to_si(*v, u, dim)?,
                None => *v,
            },
            Quantity::Text(t) => parse_quantity(t, dim).map_err(|e| validation(field, e.to_string()))?,
        };
        if !value.is_finite() {
            return Err(validation(field, "must be finite"));
        }
        Ok(value)
    }

    fn list(&self, qs: &[Quantity], dim: Dimension, field: &str) -> Result<Vec<f64>> {
        qs.iter()
            .enumerate()
            .map(|(i, q)| self.get(q, dim, &format!("{field}[{i}]")))
            .collect()
    }

    fn vec3(&self, qs: &Option<Vec<Quantity>>, dim: Dimension, field: &str) -> Result<Vec3> {
        match qs {
            None => Ok(Vec3::zeros()),
            Some(v) if v.len() == 3 => Ok(Vec3::from_vec(self.list(v, dim, field)?)),
            Some(v) => Err(validation(field, format!("expected 3 components, got {}", v.len()))),
        }
    }

    fn isometry(&self, offset: &Option<Vec<Quantity>>, rotation: &Option<Vec<Quantity>>, field: &str) -> Result<Isometry3<f64>> {
        let t = self.vec3(offset, Dimension::Length, &format!("{field}_offset"))?;
        let r = self.vec3(rotation, Dimension::Angle, &format!("{field}_rotation"))?;
        Ok(Isometry3::new(t, r))
    }
}

fn validation(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    d: Quantity,
    a: Quantity,
    alpha: Quantity,
    #[serde(default = "zero")]
    offset: Quantity,
}

fn zero() -> Quantity {
    Quantity::Number(0.0)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLimit {
    min: Quantity,
    max: Quantity,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRobot {
    preset: Option<String>,
    file: Option<PathBuf>,
    links: Option<Vec<RawLink>>,
    limits: Option<Vec<RawLimit>>,
    markers: Option<Vec<Vec<Quantity>>>,
    compliances: Option<Vec<Quantity>>,
    base_offset: Option<Vec<Quantity>>,
    base_rotation: Option<Vec<Quantity>>,
    tool_offset: Option<Vec<Quantity>>,
    tool_rotation: Option<Vec<Quantity>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompensatorMode {
    /// The compensator parameters below are taken as known.
    Nominal,
    /// The compensator is identified from data; parameters below only serve
    /// as simulation ground truth.
    #[default]
    Identify,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompensator {
    #[serde(default)]
    mode: CompensatorMode,
    #[serde(default)]
    sign: SpringSign,
    link_length: Option<Quantity>,
    a_x: Option<Quantity>,
    a_y: Option<Quantity>,
    spring_stiffness: Option<Quantity>,
    free_length: Option<Quantity>,
    joint_stiffness: Option<Quantity>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    sigma: Option<Quantity>,
    repetitions: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    size: Option<usize>,
    grid_size: Option<usize>,
    q2_values: Option<Vec<Quantity>>,
    force_magnitudes: Option<Vec<Quantity>>,
    restarts: Option<usize>,
    min_groups: Option<usize>,
    min_singular_ratio: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTestPose {
    q: Vec<Quantity>,
    force: Vec<Quantity>,
    torque: Option<Vec<Quantity>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarker {
    radius: Quantity,
    phase: Quantity,
    #[serde(default = "zero")]
    height: Quantity,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    trace_q2: Option<Vec<Quantity>>,
    validation_count: Option<usize>,
    include_hessian: Option<bool>,
    base_offset: Option<Vec<Quantity>>,
    base_rotation: Option<Vec<Quantity>>,
    tool_offset: Option<Vec<Quantity>>,
    tool_rotation: Option<Vec<Quantity>>,
    compensator_offset: Option<Vec<Quantity>>,
    compensator_rotation: Option<Vec<Quantity>>,
    pivot_markers: Option<Vec<RawMarker>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProject {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    units: RawUnits,
    robot: RawRobot,
    #[serde(default)]
    compensator: RawCompensator,
    #[serde(default)]
    noise: RawNoise,
    #[serde(default)]
    plan: RawPlan,
    test_pose: Option<RawTestPose>,
    #[serde(default)]
    simulation: RawSimulation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompensatorSpec {
    pub mode: CompensatorMode,
    pub sign: SpringSign,
    pub geometry: Option<CompensatorGeometry>,
    pub model: Option<CompensatorModel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanSettings {
    pub size: usize,
    pub grid: GridSpec,
    pub search: SearchConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSettings {
    pub trace_q2: Vec<f64>,
    pub validation_count: usize,
    pub include_hessian: bool,
    pub base_perturbation: Isometry3<f64>,
    pub tool_perturbation: Isometry3<f64>,
    pub compensator_frame: Isometry3<f64>,
    pub pivot_markers: Vec<MarkerSpec>,
}

/// Validated project with every quantity in SI.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectConfig {
    pub source: PathBuf,
    pub seed: u64,
    pub robot: RobotModel,
    pub compensator: CompensatorSpec,
    pub noise: NoiseSpec,
    pub repetitions: usize,
    pub plan: PlanSettings,
    pub test_pose: Option<TestPose>,
    pub simulation: SimulationSettings,
}

impl ProjectConfig {
    /// Simulation ground truth; needs a complete compensator section.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let comp = self.compensator.model.ok_or_else(|| Error::MissingInput {
            verb: "simulate".into(),
            what: "compensator stiffness parameters (spring_stiffness, free_length, joint_stiffness)".into(),
        })?;
        Ok(GroundTruth {
            model: self.robot.clone(),
            comp,
            base_perturbation: self.simulation.base_perturbation,
            tool_perturbation: self.simulation.tool_perturbation,
            compensator_frame: self.simulation.compensator_frame,
            include_hessian: self.simulation.include_hessian,
        })
    }

    pub fn test_pose(&self, verb: &str) -> Result<&TestPose> {
        self.test_pose.as_ref().ok_or_else(|| Error::MissingInput {
            verb: verb.into(),
            what: "[test_pose] section".into(),
        })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, source_name: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| line_of(text, s.start));
        let field = e.span().map_or_else(String::new, |s| {
            let snippet = &text[s.start.min(text.len())..s.end.min(text.len())];
            snippet.lines().next().unwrap_or("").trim().to_string()
        });
        Error::Parse {
            source_name: source_name.into(),
            line,
            field,
            message: e.message().to_string(),
        }
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads, resolves and validates a project file.
pub fn parse_project(path: impl AsRef<Path>) -> Result<ProjectConfig> {
    let path = path.as_ref();
    let text = read(path)?;
    parse_project_str(&text, path)
}

/// Parses project text; relative file references resolve against the
/// directory of `path`.
pub fn parse_project_str(text: &str, path: &Path) -> Result<ProjectConfig> {
    let raw: RawProject = parse_toml(text, &path.display().to_string())?;
    let units = Units(raw.units.clone());
    units.check()?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let robot = build_robot(&raw.robot, &units, dir)?;
    let compensator = build_compensator(&raw.compensator, &units)?;
    let n = robot.n_joints();

    let sigma = match &raw.noise.sigma {
        Some(q) => units.get(q, Dimension::Length, "noise.sigma")?,
        None => NoiseSpec::default().sigma_position,
    };
    if sigma < 0.0 {
        return Err(validation("noise.sigma", "must be non-negative"));
    }
    let repetitions = raw.noise.repetitions.unwrap_or(DEFAULT_REPETITIONS);
    if repetitions == 0 {
        return Err(validation("noise.repetitions", "must be at least 1"));
    }

    let p = &raw.plan;
    let size = p.size.unwrap_or(15);
    let grid_size = p.grid_size.unwrap_or(200);
    if size == 0 || grid_size < size {
        return Err(validation("plan.size", format!("need 0 < size <= grid_size, got {size} and {grid_size}")));
    }
    let q2_values = match &p.q2_values {
        Some(v) => units.list(v, Dimension::Angle, "plan.q2_values")?,
        None => [-20.0f64, -45.0, -70.0, -95.0, -120.0].iter().map(|d| d.to_radians()).collect(),
    };
    if n > 1 {
        let lim = robot.limits()[1];
        if let Some((i, v)) = q2_values.iter().enumerate().find(|(_, v)| !lim.contains(**v)) {
            return Err(validation(format!("plan.q2_values[{i}]"), format!("{v} rad is outside the joint-2 limits")));
        }
    }
    let force_magnitudes = match &p.force_magnitudes {
        Some(v) => units.list(v, Dimension::Force, "plan.force_magnitudes")?,
        None => vec![3000.0],
    };
    if force_magnitudes.is_empty() || force_magnitudes.iter().any(|f| *f <= 0.0) {
        return Err(validation("plan.force_magnitudes", "must be a nonempty list of positive forces"));
    }
    let plan = PlanSettings {
        size,
        grid: GridSpec {
            size: grid_size,
            q2_values,
            force_directions: default_force_directions(),
            force_magnitudes,
            min_singular_ratio: p.min_singular_ratio.unwrap_or(0.05),
            seed: raw.seed,
        },
        search: SearchConfig {
            restarts: p.restarts.unwrap_or(16),
            seed: raw.seed,
            min_groups: p.min_groups.unwrap_or(if n > 1 { 3 } else { 0 }),
            ..SearchConfig::default()
        },
    };

    let test_pose = match &raw.test_pose {
        None => None,
        Some(t) => {
            let q = units.list(&t.q, Dimension::Angle, "test_pose.q")?;
            if q.len() != n {
                return Err(validation("test_pose.q", format!("expected {n} joint values, got {}", q.len())));
            }
            let force = units.vec3(&Some(t.force.clone()), Dimension::Force, "test_pose.force")?;
            let torque = units.vec3(&t.torque, Dimension::Torque, "test_pose.torque")?;
            let pose = TestPose {
                q0: JointState::from_slice(&q),
                f0: Wrench::new(force, torque),
            };
            robot.check_joints(&pose.q0).map_err(|e| validation("test_pose.q", e.to_string()))?;
            if pose.f0.is_zero() {
                return Err(validation("test_pose.force", "test load must be nonzero"));
            }
            Some(pose)
        }
    };

    let s = &raw.simulation;
    let trace_q2 = match &s.trace_q2 {
        Some(v) => units.list(v, Dimension::Angle, "simulation.trace_q2")?,
        None => [0.0f64, -30.0, -60.0, -90.0, -120.0, -140.0].iter().map(|d| d.to_radians()).collect(),
    };
    let pivot_markers = match &s.pivot_markers {
        None => default_pivot_markers(),
        Some(ms) => ms
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let f = format!("simulation.pivot_markers[{i}]");
                Ok(MarkerSpec {
                    radius: units.get(&m.radius, Dimension::Length, &format!("{f}.radius"))?,
                    phase: units.get(&m.phase, Dimension::Angle, &format!("{f}.phase"))?,
                    height: units.get(&m.height, Dimension::Length, &format!("{f}.height"))?,
                })
            })
            .collect::<Result<_>>()?,
    };
    let simulation = SimulationSettings {
        trace_q2,
        validation_count: s.validation_count.unwrap_or(12),
        include_hessian: s.include_hessian.unwrap_or(false),
        base_perturbation: units.isometry(&s.base_offset, &s.base_rotation, "simulation.base")?,
        tool_perturbation: units.isometry(&s.tool_offset, &s.tool_rotation, "simulation.tool")?,
        compensator_frame: units.isometry(&s.compensator_offset, &s.compensator_rotation, "simulation.compensator")?,
        pivot_markers,
    };

    Ok(ProjectConfig {
        source: path.to_path_buf(),
        seed: raw.seed,
        robot,
        compensator,
        noise: NoiseSpec {
            sigma_position: sigma,
            seed: raw.seed,
        },
        repetitions,
        plan,
        test_pose,
        simulation,
    })
}

fn model_error(e: Error) -> Error {
    match e {
        Error::InvalidModel { field, reason } => validation(format!("robot.{field}"), reason),
        other => other,
    }
}

fn build_robot(raw: &RawRobot, units: &Units, dir: &Path) -> Result<RobotModel> {
    if let Some(file) = &raw.file {
        if raw.preset.is_some() || raw.links.is_some() {
            return Err(validation("robot.file", "cannot be combined with `preset` or `links`"));
        }
        let path = dir.join(file);
        let text = read(&path)?;
        let mut inner: RawRobot = parse_toml(&text, &path.display().to_string())?;
        if inner.file.is_some() {
            return Err(validation("robot.file", "robot files cannot reference other files"));
        }
        // Fields set in the project override those of the robot file.
        macro_rules! overlay {
            ($($f:ident),*) => { $( if raw.$f.is_some() { inner.$f = raw.$f.clone(); } )* };
        }
        overlay!(compliances, base_offset, base_rotation, tool_offset, tool_rotation, markers, limits);
        return build_robot(&inner, units, dir);
    }

    let mut robot = match (&raw.preset, &raw.links) {
        (Some(_), Some(_)) => return Err(validation("robot", "give either `preset` or `links`, not both")),
        (Some(name), None) => match name.as_str() {
            "heavy_6r" => heavy_6r(),
            other => return Err(validation("robot.preset", format!("unknown preset `{other}`"))),
        },
        (None, Some(links)) => {
            let links: Vec<LinkRow> = links
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let f = |k: &str| format!("robot.links[{i}].{k}");
                    Ok(LinkRow::new(
                        units.get(&l.d, Dimension::Length, &f("d"))?,
                        units.get(&l.a, Dimension::Length, &f("a"))?,
                        units.get(&l.alpha, Dimension::Angle, &f("alpha"))?,
                        units.get(&l.offset, Dimension::Angle, &f("offset"))?,
                    ))
                })
                .collect::<Result<_>>()?;
            let n = links.len();
            let pi = std::f64::consts::PI;
            let limits = vec![JointLimit::new(-pi, pi); n];
            let markers = vec![Vec3::zeros()];
            let compliances = vec![1e-6; n];
            RobotModel::new(links, limits, Isometry3::identity(), Isometry3::identity(), markers, compliances).map_err(model_error)?
        }
        (None, None) => return Err(validation("robot", "one of `preset`, `file` or `links` is required")),
    };

    let n = robot.n_joints();
    let links = robot.links().to_vec();
    let mut limits = robot.limits().to_vec();
    let mut markers = robot.markers().to_vec();
    let mut compliances = robot.compliances().to_vec();
    let mut base = *robot.base();
    let mut tool = *robot.tool();
    if let Some(ls) = &raw.limits {
        limits = ls
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(JointLimit::new(
                    units.get(&l.min, Dimension::Angle, &format!("robot.limits[{i}].min"))?,
                    units.get(&l.max, Dimension::Angle, &format!("robot.limits[{i}].max"))?,
                ))
            })
            .collect::<Result<_>>()?;
    }
    if let Some(ms) = &raw.markers {
        markers = ms
            .iter()
            .enumerate()
            .map(|(i, m)| units.vec3(&Some(m.clone()), Dimension::Length, &format!("robot.markers[{i}]")))
            .collect::<Result<_>>()?;
    }
    if let Some(cs) = &raw.compliances {
        compliances = units.list(cs, Dimension::Compliance, "robot.compliances")?;
    }
    if raw.base_offset.is_some() || raw.base_rotation.is_some() {
        base = units.isometry(&raw.base_offset, &raw.base_rotation, "robot.base")?;
    }
    if raw.tool_offset.is_some() || raw.tool_rotation.is_some() {
        tool = units.isometry(&raw.tool_offset, &raw.tool_rotation, "robot.tool")?;
    }
    if limits.len() != n {
        return Err(validation("robot.limits", format!("expected {n} entries, got {}", limits.len())));
    }
    if compliances.len() != n {
        return Err(validation("robot.compliances", format!("expected {n} entries, got {}", compliances.len())));
    }
    robot = RobotModel::new(links, limits, base, tool, markers, compliances).map_err(model_error)?;
    Ok(robot)
}

fn build_compensator(raw: &RawCompensator, units: &Units) -> Result<CompensatorSpec> {
    let get = |q: &Option<Quantity>, dim, field: &str| -> Result<Option<f64>> {
        q.as_ref().map(|q| units.get(q, dim, &format!("compensator.{field}"))).transpose()
    };
    let l = get(&raw.link_length, Dimension::Length, "link_length")?;
    let ax = get(&raw.a_x, Dimension::Length, "a_x")?;
    let ay = get(&raw.a_y, Dimension::Length, "a_y")?;
    let geometry = match (l, ax, ay) {
        (Some(link_length), Some(a_x), Some(a_y)) => {
            let g = CompensatorGeometry {
                link_length,
                a_x,
                a_y,
                sign: raw.sign,
            };
            g.validate().map_err(|e| match e {
                Error::InvalidModel { field, reason } => validation(field, reason),
                other => other,
            })?;
            Some(g)
        }
        (None, None, None) => None,
        _ => return Err(validation("compensator", "link_length, a_x and a_y must be given together")),
    };
    let kc = get(&raw.spring_stiffness, Dimension::LinearStiffness, "spring_stiffness")?;
    let s0 = get(&raw.free_length, Dimension::Length, "free_length")?;
    let k0 = get(&raw.joint_stiffness, Dimension::RotationalStiffness, "joint_stiffness")?;
    let model = match (geometry, kc, s0, k0) {
        (Some(g), Some(kc), Some(s0), Some(k0)) => Some(CompensatorModel::new(g, kc, s0, k0).map_err(|e| match e {
            Error::InvalidModel { field, reason } => validation(field, reason),
            other => other,
        })?),
        (_, None, None, None) => None,
        _ => {
            return Err(validation(
                "compensator",
                "spring_stiffness, free_length and joint_stiffness need each other and the geometry",
            ))
        }
    };
    if raw.mode == CompensatorMode::Nominal && model.is_none() {
        return Err(validation("compensator.mode", "nominal mode requires the full compensator parameter set"));
    }
    Ok(CompensatorSpec {
        mode: raw.mode,
        sign: raw.sign,
        geometry,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3

[robot]
preset = "heavy_6r"

[compensator]
mode = "nominal"
link_length = "184.72 mm"
a_x = "685.93 mm"
a_y = "123.30 mm"
spring_stiffness = "1e7 N/m"
free_length = "450 mm"
joint_stiffness = "3 MNm/rad"
"#;

    fn parse(text: &str) -> Result<ProjectConfig> {
        parse_project_str(text, Path::new("project.toml"))
    }

    #[test]
    fn minimal_project_parses() {
        let p = parse(MINIMAL).unwrap();
        assert_eq!(p.robot.n_joints(), 6);
        let c = p.compensator.model.unwrap();
        assert!((c.geometry.link_length - 0.18472).abs() < 1e-15);
        assert_eq!(c.joint_stiffness, 3e6);
        assert_eq!(p.repetitions, 3);
        assert_eq!(p.noise.sigma_position, 3e-5);
    }

    #[test]
    fn compliance_with_unit_suffix() {
        let text = MINIMAL.replace(
            "preset = \"heavy_6r\"",
            "preset = \"heavy_6r\"\ncompliances = [\"0.623 urad/Nm\", \"0.3 urad/Nm\", \"0.416 urad/Nm\", \"2.786 urad/Nm\", \"3.483 urad/Nm\", \"2.074 urad/Nm\"]",
        );
        let p = parse(&text).unwrap();
        assert!((p.robot.compliances()[0] - 6.23e-7).abs() < 1e-21);
    }

    #[test]
    fn bare_numbers_follow_units_section() {
        let text = format!("{}\n[units]\nlength = \"mm\"\n", MINIMAL.replace("\"184.72 mm\"", "184.72"));
        let p = parse(&text).unwrap();
        assert!((p.compensator.geometry.unwrap().link_length - 0.18472).abs() < 1e-15);
    }

    #[test]
    fn negative_link_length_names_field() {
        let text = r#"
[robot]
links = [{ d = 0.4, a = 0.3, alpha = 0 }, { d = 0, a = -0.5, alpha = 0 }]
"#;
        match parse(text) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "robot.links[1].a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = "seed = 3\n[robot]\npreset = \n";
        match parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{MINIMAL}\n[noise]\nsigmaa = 1\n");
        assert!(matches!(parse(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn nominal_mode_needs_stiffness() {
        let text = MINIMAL.replace("joint_stiffness = \"3 MNm/rad\"\n", "");
        assert!(matches!(parse(&text), Err(Error::Validation { .. })));
    }
}
