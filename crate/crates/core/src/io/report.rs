//! Result report: a TOML document with one optional table per pipeline
//! stage, plus a plain-text rendering in mm / μrad for reading.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Isometry3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::compensation::AccuracyReport;
use crate::design::OptimizedPlan;
use crate::error::{Error, Result};
use crate::geometry::GeometryFitResult;
use crate::ident::{IdentificationMode, TwoStepResult};
use crate::sim::DatasetManifest;
use crate::stiffness::SpringSign;

pub const REPORT_FILE: &str = "report.toml";
pub const REPORT_TEXT_FILE: &str = "report.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub parameters: Vec<String>,
    /// `L`, `a_x`, `a_y`, m.
    pub values: [f64; 3],
    /// ±3σ, m.
    pub ci_half_widths: [f64; 3],
    pub sign: SpringSign,
    pub p0: [f64; 3],
    pub plane_normal: [f64; 3],
    pub residual_rms: f64,
    pub sigma_estimate: f64,
}

impl From<&GeometryFitResult> for GeometrySection {
    fn from(r: &GeometryFitResult) -> Self {
        let g = &r.geometry;
        GeometrySection {
            parameters: vec!["L".into(), "a_x".into(), "a_y".into()],
            values: [g.link_length, g.a_x, g.a_y],
            ci_half_widths: r.ci_half_widths,
            sign: g.sign,
            p0: r.p0.into(),
            plane_normal: r.plane_normal.into(),
            residual_rms: r.residual_rms,
            sigma_estimate: r.sigma_estimate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Joint2Section {
    /// `K_θ2^0`, N·m/rad.
    pub joint_stiffness: f64,
    /// `K_c`, N/m.
    pub spring_stiffness: f64,
    /// `s_0`, m; absent when no compensator contribution was found.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_length: Option<f64>,
    /// ±3σ for `K_θ2^0` and `K_c`.
    pub ci_half_widths: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_length_ci: Option<f64>,
    pub groups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationSection {
    /// Translation (m) then rotation vector (rad).
    pub base_correction: [f64; 6],
    pub tool_correction: [f64; 6],
    pub residual_rms: f64,
    pub iterations: usize,
}

fn twist_of(iso: &Isometry3<f64>) -> [f64; 6] {
    let t = iso.translation.vector;
    let r = iso.rotation.scaled_axis();
    [t.x, t.y, t.z, r.x, r.y, r.z]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElastostaticsSection {
    pub mode: IdentificationMode,
    pub labels: Vec<String>,
    /// rad/(N·m).
    pub values: Vec<f64>,
    pub ci_half_widths: Vec<f64>,
    /// Compliances of the returned model, one per joint.
    pub joint_compliances: Vec<f64>,
    pub condition_number: f64,
    pub sigma_estimate: f64,
    pub residual_rms: f64,
    pub equations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint2: Option<Joint2Section>,
    pub registration: RegistrationSection,
}

impl ElastostaticsSection {
    pub fn new(result: &TwoStepResult, mode: IdentificationMode) -> Self {
        let c = &result.compliances;
        let joint2 = result.joint2.as_ref().map(|j| {
            let sd = |i: usize| j.covariance[(i, i)].max(0.0).sqrt();
            // s_0 = (s_0 K_c) / K_c, first-order propagation.
            let s0_ci = j.free_length.map(|s0| {
                let kc = j.spring_stiffness;
                let grad = nalgebra::Vector3::new(0.0, -s0 / kc, 1.0 / kc);
                3.0 * (grad.transpose() * j.covariance * grad)[0].max(0.0).sqrt()
            });
            Joint2Section {
                joint_stiffness: j.joint_stiffness,
                spring_stiffness: j.spring_stiffness,
                free_length: j.free_length,
                ci_half_widths: [3.0 * sd(0), 3.0 * sd(1)],
                free_length_ci: s0_ci,
                groups: j.groups,
            }
        });
        ElastostaticsSection {
            mode,
            labels: c.layout.labels(),
            values: c.values.clone(),
            ci_half_widths: (0..c.values.len()).map(|i| 3.0 * c.covariance[(i, i)].max(0.0).sqrt()).collect(),
            joint_compliances: result.robot.compliances().to_vec(),
            condition_number: c.condition_number,
            sigma_estimate: c.sigma_estimate,
            residual_rms: c.residual_rms,
            equations: c.equations,
            joint2,
            registration: RegistrationSection {
                base_correction: twist_of(&result.corrections.base_correction),
                tool_correction: twist_of(&result.corrections.tool_correction),
                residual_rms: result.corrections.residual_rms,
                iterations: result.corrections.iterations,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub criterion: f64,
    pub entries: usize,
    pub groups: usize,
    pub evaluations: usize,
}

impl From<&OptimizedPlan> for PlanSection {
    fn from(p: &OptimizedPlan) -> Self {
        PlanSection {
            criterion: p.criterion,
            entries: p.plan.len(),
            groups: p.plan.group_count(),
            evaluations: p.evaluations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensationSection {
    pub targets: usize,
    pub clipped: usize,
    /// Largest predicted tool displacement, m.
    pub max_deflection: f64,
    /// Largest predicted residual after correction, m.
    pub max_predicted_error: f64,
}

/// Sections appear in the file in field order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<DatasetManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elastostatics: Option<ElastostaticsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensation: Option<CompensationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.manifest.is_none()
            && self.geometry.is_none()
            && self.elastostatics.is_none()
            && self.plan.is_none()
            && self.compensation.is_none()
            && self.accuracy.is_none()
    }

    /// Sections present in `newer` replace ours.
    pub fn merge(&mut self, newer: Report) {
        macro_rules! take {
            ($($f:ident),*) => {$( if newer.$f.is_some() { self.$f = newer.$f; } )*};
        }
        take!(manifest, geometry, elastostatics, plan, compensation, accuracy);
    }
}

pub fn emit_report(report: &Report) -> Result<String> {
    if report.is_empty() {
        return Err(Error::EmptyDataset("report has no result sections"));
    }
    toml::to_string(report).map_err(|e| Error::Validation {
        field: "report".into(),
        message: e.to_string(),
    })
}

pub fn parse_report(text: &str, source: &str) -> Result<Report> {
    from_toml(text, source)
}

pub(crate) fn from_toml<T: DeserializeOwned>(text: &str, source: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        Error::Parse {
            source_name: source.into(),
            line,
            field: String::new(),
            message: e.message().to_string(),
        }
    })
}

pub fn save_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Validation {
        field: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_toml(&super::data::read_text(path)?, &path.display().to_string())
}

/// Merges `report` into `dir/report.toml` and refreshes the text rendering.
pub fn write_report(dir: &Path, report: Report) -> Result<Report> {
    let path = dir.join(REPORT_FILE);
    let mut merged = if path.exists() {
        load_toml::<Report>(&path)?
    } else {
        Report::default()
    };
    merged.merge(report);
    write_atomic(&path, emit_report(&merged)?.as_bytes())?;
    write_atomic(&dir.join(REPORT_TEXT_FILE), render_text(&merged).as_bytes())?;
    Ok(merged)
}

const MM: f64 = 1e3;

/// The spelling an enum has in the files.
fn file_name_of<T: Serialize>(v: &T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        _ => String::new(),
    }
}
const URAD: f64 = 1e6;

/// Human-readable tables: lengths in mm, compliances in μrad/(N·m).
pub fn render_text(report: &Report) -> String {
    let mut s = String::new();
    if let Some(m) = &report.manifest {
        let _ = writeln!(s, "Dataset");
        let _ = writeln!(
            s,
            "  seed {}  sigma {:.4} mm  {} configurations x {} repetitions  {} q2 groups  truth {}",
            m.seed,
            m.sigma_position * MM,
            m.configurations,
            m.repetitions,
            m.q2_groups,
            &m.truth_hash[..m.truth_hash.len().min(12)]
        );
        let _ = writeln!(s);
    }
    if let Some(g) = &report.geometry {
        let _ = writeln!(s, "Compensator geometry [mm]");
        let _ = writeln!(s, "  {:<10}{:>12}{:>12}{:>12}", "", g.parameters[0], g.parameters[1], g.parameters[2]);
        let row = |label: &str, v: &[f64; 3]| format!("  {label:<10}{:>12.3}{:>12.3}{:>12.3}", v[0] * MM, v[1] * MM, v[2] * MM);
        let _ = writeln!(s, "{}", row("value", &g.values));
        let _ = writeln!(s, "{}", row("CI ±3σ", &g.ci_half_widths));
        let _ = writeln!(s, "  fit residual {:.4} mm, sign {}", g.residual_rms * MM, file_name_of(&g.sign));
        let _ = writeln!(s);
    }
    if let Some(e) = &report.elastostatics {
        let _ = writeln!(s, "Joint compliances [μrad/(N·m)]  mode {}", file_name_of(&e.mode));
        for ((l, v), ci) in e.labels.iter().zip(&e.values).zip(&e.ci_half_widths) {
            let _ = writeln!(s, "  {l:<22}{:>10.4} ± {:.4}", v * URAD, ci * URAD);
        }
        let _ = writeln!(
            s,
            "  condition {:.3e}  sigma {:.4} mm  {} equations",
            e.condition_number,
            e.sigma_estimate * MM,
            e.equations
        );
        if let Some(j) = &e.joint2 {
            let _ = writeln!(s, "  K_theta2_0 {:.4e} ± {:.2e} N·m/rad", j.joint_stiffness, j.ci_half_widths[0]);
            let _ = writeln!(s, "  K_c        {:.4e} ± {:.2e} N/m", j.spring_stiffness, j.ci_half_widths[1]);
            match j.free_length {
                Some(s0) => {
                    let ci = j.free_length_ci.unwrap_or(f64::NAN);
                    let _ = writeln!(s, "  s_0        {:.3} ± {:.3} mm", s0 * MM, ci * MM);
                }
                None => {
                    let _ = writeln!(s, "  s_0        n/a (no compensator contribution)");
                }
            }
        }
        let r = &e.registration;
        let _ = writeln!(
            s,
            "  registration residual {:.4} mm after {} iterations",
            r.residual_rms * MM,
            r.iterations
        );
        let _ = writeln!(s);
    }
    if let Some(p) = &report.plan {
        let _ = writeln!(s, "Experiment plan");
        let _ = writeln!(
            s,
            "  {} entries in {} q2 groups, criterion {:.6e} ({} evaluations)",
            p.entries, p.groups, p.criterion, p.evaluations
        );
        let _ = writeln!(s);
    }
    if let Some(c) = &report.compensation {
        let _ = writeln!(s, "Compensation");
        let _ = writeln!(
            s,
            "  {} targets, {} clipped, max deflection {:.3} mm, max predicted error {:.3e} mm",
            c.targets,
            c.clipped,
            c.max_deflection * MM,
            c.max_predicted_error * MM
        );
        let _ = writeln!(s);
    }
    if let Some(a) = &report.accuracy {
        let _ = writeln!(s, "Accuracy [mm]");
        let _ = writeln!(s, "  {:<22}{:>10}{:>10}", "", "max", "RMS");
        let _ = writeln!(s, "  {:<22}{:>10.3}{:>10.3}", "before compensation", a.max_before * MM, a.rms_before * MM);
        let _ = writeln!(s, "  {:<22}{:>10.3}{:>10.3}", "after compensation", a.max_after * MM, a.rms_after * MM);
        let factor = |b: f64, x: f64| if x > 0.0 { b / x } else { f64::INFINITY };
        let _ = writeln!(
            s,
            "  {:<22}{:>10.1}{:>10.1}",
            "improvement factor",
            factor(a.max_before, a.max_after),
            a.improvement_factor
        );
        let _ = writeln!(s, "  compensated fraction {:.1} %", a.compensated_fraction);
        let _ = writeln!(s);
    }
    s
}
