//! Command verbs. Each verb reads its inputs, runs one pipeline stage,
//! writes artifacts atomically and merges its section into the report.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};

use super::data::{self, plan_to_csv, traces_to_csv};
use super::project::{CompensatorMode, ProjectConfig};
use super::report::{self, CompensationSection, ElastostaticsSection, GeometrySection, PlanSection, Report};
use super::write_atomic;
use crate::compensation::{compensated_target, evaluate_accuracy, CompensationOptions, StiffnessModel};
use crate::design::{build_candidate_grid, optimize_plan, plan_criterion, CandidateGrid, ExperimentPlan, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{identify_compensator_geometry, GeometryFitResult};
use crate::ident::{run_two_step_identification, IdentificationMode};
use crate::seed::derive_seed;
use crate::sim::{generate_calibration_dataset, simulate_compensator_markers, simulate_loaded_measurement};
use crate::stiffness::COMPENSATED_JOINT;

/// Environment variable that redirects `report.toml` / `report.txt`.
pub const REPORT_DIR_ENV: &str = "ELASTOCAL_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    Simulate,
    IdentifyGeometry,
    IdentifyElastostatics,
    Plan,
    Compensate,
    Evaluate,
}

impl Verb {
    pub const ALL: [Verb; 6] = [
        Verb::Simulate,
        Verb::IdentifyGeometry,
        Verb::IdentifyElastostatics,
        Verb::Plan,
        Verb::Compensate,
        Verb::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Simulate => "simulate",
            Verb::IdentifyGeometry => "identify-geometry",
            Verb::IdentifyElastostatics => "identify-elastostatics",
            Verb::Plan => "plan",
            Verb::Compensate => "compensate",
            Verb::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verb {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Verb::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Validation {
            field: "verb".into(),
            message: format!(
                "unknown verb `{s}`; expected one of {}",
                Verb::ALL.map(Verb::name).join(", ")
            ),
        })
    }
}

/// File arguments and switches shared by all verbs.
#[derive(Clone, Debug, Default)]
pub struct Inputs {
    /// Artifact directory.
    pub out_dir: PathBuf,
    /// Report directory; defaults to `out_dir`.
    pub report_dir: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub geometry: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub targets: Option<PathBuf>,
    pub mode: IdentificationMode,
    /// Iterate the joint-space correction instead of a single step.
    pub refine: bool,
}

impl Inputs {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Inputs {
            out_dir: out_dir.into(),
            ..Inputs::default()
        }
    }

    fn report_dir(&self) -> &Path {
        self.report_dir.as_deref().unwrap_or(&self.out_dir)
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    /// The merged report as written.
    pub report: Report,
}

fn require<'a>(verb: Verb, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::MissingInput {
        verb: verb.name().into(),
        what: what.into(),
    })
}

struct Artifacts<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl Artifacts<'_> {
    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, content.as_bytes())?;
        self.written.push(path);
        Ok(())
    }

    fn toml<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        report::save_toml(&path, value)?;
        self.written.push(path);
        Ok(())
    }
}

pub fn run_command(verb: Verb, config: &ProjectConfig, inputs: &Inputs) -> Result<Outcome> {
    let mut out = Artifacts {
        dir: &inputs.out_dir,
        written: Vec::new(),
    };
    let section = match verb {
        Verb::Simulate => simulate(config, inputs, &mut out)?,
        Verb::IdentifyGeometry => identify_geometry(config, inputs, &mut out)?,
        Verb::IdentifyElastostatics => identify_elastostatics(config, inputs, &mut out)?,
        Verb::Plan => plan(config, inputs, &mut out)?,
        Verb::Compensate => compensate(config, inputs, &mut out)?,
        Verb::Evaluate => evaluate(config, inputs)?,
    };
    let report = report::write_report(inputs.report_dir(), section)?;
    let mut artifacts = out.written;
    artifacts.push(inputs.report_dir().join(report::REPORT_FILE));
    Ok(Outcome { artifacts, report })
}

fn optimized_plan(config: &ProjectConfig, verb: Verb) -> Result<(ExperimentPlan, PlanSection)> {
    let test = config.test_pose(verb.name())?;
    let grid = CandidateGrid::new(&config.robot, build_candidate_grid(&config.robot, &config.plan.grid)?)?;
    let best = optimize_plan(&grid, config.plan.size, test, &config.robot, &config.plan.search)?;
    info!(
        "optimized plan: {} entries, {} q2 groups, criterion {:.6e}",
        best.plan.len(),
        best.plan.group_count(),
        best.criterion
    );
    let section = PlanSection::from(&best);
    Ok((best.plan, section))
}

fn plan(config: &ProjectConfig, inputs: &Inputs, out: &mut Artifacts) -> Result<Report> {
    let (plan, section) = match &inputs.plan {
        // An explicit plan is scored, not optimized.
        Some(path) => {
            let plan = data::read_plan(path)?;
            let criterion = plan_criterion(&plan, config.test_pose(Verb::Plan.name())?, &config.robot)?;
            info!("plan criterion {criterion:.6e} for {} entries", plan.len());
            let section = PlanSection {
                criterion,
                entries: plan.len(),
                groups: plan.group_count(),
                evaluations: 1,
            };
            (plan, section)
        }
        None => optimized_plan(config, Verb::Plan)?,
    };
    out.text("plan.csv", &plan_to_csv(&plan))?;
    Ok(Report {
        plan: Some(section),
        ..Report::default()
    })
}

/// Held-out configurations spanning the joint-2 range of the identification
/// data, loaded like the plan.
fn validation_plan(config: &ProjectConfig, identification: &ExperimentPlan) -> Result<ExperimentPlan> {
    let q2_seen = identification
        .entries
        .iter()
        .filter_map(|e| e.q.as_slice().get(COMPENSATED_JOINT).copied());
    let (lo, hi) = q2_seen.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    const Q2_LEVELS: usize = 25;
    let q2_values = if lo.is_finite() && hi > lo {
        (0..Q2_LEVELS).map(|i| lo + (hi - lo) * i as f64 / (Q2_LEVELS - 1) as f64).collect()
    } else {
        config.plan.grid.q2_values.clone()
    };
    let spec = GridSpec {
        size: config.simulation.validation_count,
        q2_values,
        seed: derive_seed(config.seed, "validation", 0),
        ..config.plan.grid.clone()
    };
    Ok(ExperimentPlan::new(build_candidate_grid(&config.robot, &spec)?))
}

fn simulate(config: &ProjectConfig, inputs: &Inputs, out: &mut Artifacts) -> Result<Report> {
    let truth = config.ground_truth()?;
    let mut report = Report::default();
    let plan = match &inputs.plan {
        Some(path) => data::read_plan(path)?,
        None => {
            let (plan, section) = optimized_plan(config, Verb::Simulate)?;
            report.plan = Some(section);
            plan
        }
    };

    let traces = simulate_compensator_markers(
        &truth,
        &config.simulation.trace_q2,
        &config.simulation.pivot_markers,
        &config.noise,
    )?;
    let dataset = generate_calibration_dataset(&plan, &truth, &config.noise, config.repetitions)?;

    let validation = validation_plan(config, &plan)?;
    let mut held_out = Vec::with_capacity(validation.len() * config.repetitions);
    for (i, e) in validation.entries.iter().enumerate() {
        held_out.extend(simulate_loaded_measurement(
            &truth,
            plan.len() + i,
            &e.q,
            &e.wrench,
            &config.noise,
            config.repetitions,
        )?);
    }
    info!(
        "simulated {} trace samples, {} identification and {} validation measurements",
        traces.iter().map(|t| t.samples.len()).sum::<usize>(),
        dataset.measurements.len(),
        held_out.len()
    );

    out.text("plan.csv", &plan_to_csv(&plan))?;
    out.text("traces.csv", &traces_to_csv(&traces))?;
    out.text("measurements.csv", &data::measurements_to_csv(&dataset.measurements))?;
    out.text("validation_plan.csv", &plan_to_csv(&validation))?;
    out.text("validation.csv", &data::measurements_to_csv(&held_out))?;
    out.toml("manifest.toml", &dataset.manifest)?;
    out.toml("truth.toml", &truth)?;
    report.manifest = Some(dataset.manifest);
    Ok(report)
}

fn identify_geometry(config: &ProjectConfig, inputs: &Inputs, out: &mut Artifacts) -> Result<Report> {
    let path = require(Verb::IdentifyGeometry, &inputs.traces, "--traces marker-trace file")?;
    let (p1, p0) = data::split_traces(data::read_traces(path)?, &path.display().to_string())?;
    let fit = identify_compensator_geometry(&p1, &p0, config.compensator.sign)?;
    info!(
        "compensator geometry: L {:.4} mm, a_x {:.4} mm, a_y {:.4} mm",
        fit.geometry.link_length * 1e3,
        fit.geometry.a_x * 1e3,
        fit.geometry.a_y * 1e3
    );
    out.toml("geometry.toml", &fit)?;
    Ok(Report {
        geometry: Some(GeometrySection::from(&fit)),
        ..Report::default()
    })
}

fn identify_elastostatics(config: &ProjectConfig, inputs: &Inputs, out: &mut Artifacts) -> Result<Report> {
    let path = require(Verb::IdentifyElastostatics, &inputs.measurements, "--measurements data file")?;
    let measurements = data::read_measurements(path)?;
    let geometry = match (&inputs.geometry, config.compensator.geometry) {
        (Some(g), _) => Some(report::load_toml::<GeometryFitResult>(g)?.geometry),
        (None, nominal) => nominal,
    };
    if inputs.mode == IdentificationMode::CompensatorAware && geometry.is_none() {
        return Err(Error::MissingInput {
            verb: Verb::IdentifyElastostatics.name().into(),
            what: "--geometry file or [compensator] geometry".into(),
        });
    }
    let result = run_two_step_identification(&measurements, geometry.as_ref(), &config.robot, inputs.mode)?;
    info!(
        "identified {} compliances, condition {:.3e}",
        result.compliances.values.len(),
        result.compliances.condition_number
    );
    if inputs.mode == IdentificationMode::CompensatorAware && result.compensator.is_none() {
        warn!("no compensator contribution found; the model uses a constant joint-2 compliance");
    }
    out.toml("model.toml", &StiffnessModel::new(result.robot.clone(), result.compensator))?;
    Ok(Report {
        elastostatics: Some(ElastostaticsSection::new(&result, inputs.mode)),
        ..Report::default()
    })
}

fn stiffness_model(verb: Verb, config: &ProjectConfig, inputs: &Inputs) -> Result<StiffnessModel> {
    match (&inputs.model, config.compensator.mode, config.compensator.model) {
        (Some(path), _, _) => report::load_toml(path),
        (None, CompensatorMode::Nominal, comp) => Ok(StiffnessModel::new(config.robot.clone(), comp)),
        _ => Err(Error::MissingInput {
            verb: verb.name().into(),
            what: "--model file (or a nominal compensator in the project)".into(),
        }),
    }
}

fn compensate(config: &ProjectConfig, inputs: &Inputs, out: &mut Artifacts) -> Result<Report> {
    let model = stiffness_model(Verb::Compensate, config, inputs)?;
    let targets = data::read_plan(require(Verb::Compensate, &inputs.targets, "--targets plan file")?)?;
    if targets.is_empty() {
        return Err(Error::EmptyDataset("no compensation targets"));
    }
    let options = if inputs.refine {
        CompensationOptions::refined()
    } else {
        CompensationOptions::default()
    };
    let n = model.robot.n_joints();
    let mut header: Vec<String> = vec!["entry".into()];
    header.extend((1..=n).map(|j| format!("q{j}")));
    header.extend(["dx", "dy", "dz", "drx", "dry", "drz", "x", "y", "z", "cx", "cy", "cz"].map(String::from));
    header.extend((1..=n).map(|j| format!("cq{j}")));
    header.extend(["clipped", "predicted_error"].map(String::from));
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_csv = |e: csv::Error| Error::Validation {
        field: "compensated.csv".into(),
        message: e.to_string(),
    };
    writer.write_record(&header).map_err(to_csv)?;
    let mut section = CompensationSection {
        targets: targets.len(),
        clipped: 0,
        max_deflection: 0.0,
        max_predicted_error: 0.0,
    };
    for (i, e) in targets.entries.iter().enumerate() {
        let c = compensated_target(&model, &e.q, &e.wrench, &options)?;
        section.clipped += usize::from(c.clipped);
        section.max_deflection = section.max_deflection.max(c.deflection.fixed_rows::<3>(0).norm());
        section.max_predicted_error = section.max_predicted_error.max(c.predicted_error);
        let mut row = vec![i.to_string()];
        row.extend(e.q.as_slice().iter().map(|v| format!("{v}")));
        row.extend(c.deflection.iter().map(|v| format!("{v}")));
        row.extend(c.desired.position.iter().map(|v| format!("{v}")));
        row.extend(c.corrected_target.position.iter().map(|v| format!("{v}")));
        row.extend(c.corrected_q.as_slice().iter().map(|v| format!("{v}")));
        row.push(c.clipped.to_string());
        row.push(format!("{}", c.predicted_error));
        writer.write_record(&row).map_err(to_csv)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Validation {
        field: "compensated.csv".into(),
        message: e.to_string(),
    })?;
    out.text("compensated.csv", &String::from_utf8_lossy(&bytes))?;
    Ok(Report {
        compensation: Some(section),
        ..Report::default()
    })
}

fn evaluate(config: &ProjectConfig, inputs: &Inputs) -> Result<Report> {
    let path = require(Verb::Evaluate, &inputs.validation, "--validation data file")?;
    let model = stiffness_model(Verb::Evaluate, config, inputs)?;
    let validation = data::read_measurements(path)?;
    let accuracy = evaluate_accuracy(&validation, &model)?;
    info!(
        "accuracy: RMS {:.3} mm -> {:.3} mm, compensated {:.1} %",
        accuracy.rms_before * 1e3,
        accuracy.rms_after * 1e3,
        accuracy.compensated_fraction
    );
    Ok(Report {
        accuracy: Some(accuracy),
        ..Report::default()
    })
}
