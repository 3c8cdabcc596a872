//! Delimited data files: measurements, compensator traces and plans.
//!
//! Numbers are written with the shortest representation that parses back
//! to the same `f64`, so files round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::write_atomic;
use crate::design::{ExperimentPlan, PlanEntry};
use crate::error::{Error, Result};
use crate::geometry::{MarkerTrace, TraceSample};
use crate::ident::LoadedMeasurement;
use crate::model::{JointState, Vec3, Wrench};

fn csv_err(source: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        source_name: source.into(),
        line,
        field: String::new(),
        message: e.to_string(),
    }
}

/// Row accessor that reports the line and column of bad values.
struct Row<'a> {
    source: &'a str,
    record: &'a StringRecord,
    headers: &'a StringRecord,
}

impl Row<'_> {
    fn line(&self) -> usize {
        self.record.position().map_or(0, |p| p.line() as usize)
    }

    fn error(&self, field: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.source.into(),
            line: self.line(),
            field: field.into(),
            message: message.into(),
        }
    }

    fn text(&self, field: &str) -> Result<&str> {
        let i = self
            .headers
            .iter()
            .position(|h| h == field)
            .ok_or_else(|| self.error(field, "column missing from header"))?;
        self.record.get(i).ok_or_else(|| self.error(field, "missing value"))
    }

    fn f64(&self, field: &str) -> Result<f64> {
        let t = self.text(field)?;
        t.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.error(field, format!("`{t}` is not a finite number")))
    }

    fn usize(&self, field: &str) -> Result<usize> {
        let t = self.text(field)?;
        t.trim().parse().map_err(|_| self.error(field, format!("`{t}` is not a non-negative integer")))
    }

    fn joints(&self, n: usize) -> Result<JointState> {
        (1..=n)
            .map(|j| self.f64(&format!("q{j}")))
            .collect::<Result<Vec<_>>>()
            .map(|q| JointState::from_slice(&q))
    }

    fn wrench(&self) -> Result<Wrench> {
        Ok(Wrench::new(
            Vec3::new(self.f64("fx")?, self.f64("fy")?, self.f64("fz")?),
            Vec3::new(self.f64("mx")?, self.f64("my")?, self.f64("mz")?),
        ))
    }
}

fn joint_count(headers: &StringRecord) -> usize {
    (1..).take_while(|j| headers.iter().any(|h| h == format!("q{j}"))).count()
}

fn read_records(text: &str, source: &str) -> Result<(StringRecord, Vec<StringRecord>)> {
    let mut reader = ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_err(source, e))?.clone();
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| csv_err(source, e))?;
    Ok((headers, records))
}

fn to_csv(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut w = WriterBuilder::new().from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn joint_header(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|j| format!("q{j}"))
}

const WRENCH_COLUMNS: [&str; 6] = ["fx", "fy", "fz", "mx", "my", "mz"];

fn wrench_cells(w: &Wrench) -> impl Iterator<Item = String> {
    w.to_vector().iter().map(|v| num(*v)).collect::<Vec<_>>().into_iter()
}

/// One row per (configuration, repetition, marker, phase).
pub fn measurements_to_csv(data: &[LoadedMeasurement]) -> String {
    let n = data.first().map_or(0, |m| m.q.len());
    let header: Vec<String> = ["config_id".to_string()]
        .into_iter()
        .chain(joint_header(n))
        .chain(WRENCH_COLUMNS.iter().map(|s| s.to_string()))
        .chain(["marker_id", "phase", "x", "y", "z", "repetition"].iter().map(|s| s.to_string()))
        .collect();
    let mut rows = Vec::new();
    for m in data {
        for (phase, markers) in [("unloaded", &m.markers_unloaded), ("loaded", &m.markers_loaded)] {
            for (k, p) in markers.iter().enumerate() {
                let mut row = vec![m.config_id.to_string()];
                row.extend(m.q.as_slice().iter().map(|v| num(*v)));
                row.extend(wrench_cells(&m.wrench));
                row.push(format!("M{}", k + 1));
                row.push(phase.into());
                row.extend(p.iter().map(|v| num(*v)));
                row.push(m.repetition.to_string());
                rows.push(row);
            }
        }
    }
    to_csv(header, rows)
}

pub fn measurements_from_csv(text: &str, source: &str) -> Result<Vec<LoadedMeasurement>> {
    let (headers, records) = read_records(text, source)?;
    let n = joint_count(&headers);
    if n == 0 {
        return Err(Error::Parse {
            source_name: source.into(),
            line: 1,
            field: "q1".into(),
            message: "header has no joint columns".into(),
        });
    }
    // (config, repetition) -> (q, wrench, unloaded markers, loaded markers)
    type Slot = (JointState, Wrench, BTreeMap<usize, Vec3>, BTreeMap<usize, Vec3>);
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut slots: BTreeMap<(usize, usize), Slot> = BTreeMap::new();
    for record in &records {
        let row = Row {
            source,
            record,
            headers: &headers,
        };
        let key = (row.usize("config_id")?, row.usize("repetition")?);
        let q = row.joints(n)?;
        let wrench = row.wrench()?;
        let marker_text = row.text("marker_id")?;
        let marker = marker_text
            .strip_prefix('M')
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|k| *k >= 1)
            .ok_or_else(|| row.error("marker_id", format!("`{marker_text}` is not of the form M<k>")))?
            - 1;
        let p = Vec3::new(row.f64("x")?, row.f64("y")?, row.f64("z")?);
        let slot = slots.entry(key).or_insert_with(|| {
            order.push(key);
            (q.clone(), wrench, BTreeMap::new(), BTreeMap::new())
        });
        if slot.0 != q || slot.1 != wrench {
            return Err(row.error("config_id", "joint values or wrench differ within one configuration"));
        }
        let target = match row.text("phase")? {
            "unloaded" => &mut slot.2,
            "loaded" => &mut slot.3,
            other => return Err(row.error("phase", format!("`{other}` is neither `unloaded` nor `loaded`"))),
        };
        if target.insert(marker, p).is_some() {
            return Err(row.error("marker_id", format!("duplicate marker {marker_text}")));
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (q, wrench, unloaded, loaded) = slots.remove(&key).expect("inserted above");
            let complete = |m: &BTreeMap<usize, Vec3>| m.keys().copied().eq(0..m.len());
            if unloaded.len() != loaded.len() || !complete(&unloaded) || !complete(&loaded) {
                return Err(Error::Parse {
                    source_name: source.into(),
                    line: 0,
                    field: "marker_id".into(),
                    message: format!(
                        "configuration {} repetition {} needs markers M1..Mk in both phases",
                        key.0, key.1
                    ),
                });
            }
            Ok(LoadedMeasurement {
                config_id: key.0,
                q,
                wrench,
                markers_unloaded: unloaded.into_values().collect(),
                markers_loaded: loaded.into_values().collect(),
                repetition: key.1,
            })
        })
        .collect()
}

pub fn traces_to_csv(traces: &[MarkerTrace]) -> String {
    let header = ["marker_id", "radius", "phase", "q2", "x", "y", "z"].iter().map(|s| s.to_string()).collect();
    let rows = traces
        .iter()
        .flat_map(|t| {
            t.samples.iter().map(move |s| {
                vec![
                    t.marker_id.clone(),
                    num(t.radius),
                    num(t.phase),
                    num(s.q2),
                    num(s.position.x),
                    num(s.position.y),
                    num(s.position.z),
                ]
            })
        })
        .collect();
    to_csv(header, rows)
}

/// Traces in first-seen order; the `P1` trace must be present.
pub fn traces_from_csv(text: &str, source: &str) -> Result<Vec<MarkerTrace>> {
    let (headers, records) = read_records(text, source)?;
    let mut traces: Vec<MarkerTrace> = Vec::new();
    for record in &records {
        let row = Row {
            source,
            record,
            headers: &headers,
        };
        let id = row.text("marker_id")?.to_string();
        let sample = TraceSample {
            q2: row.f64("q2")?,
            position: Vec3::new(row.f64("x")?, row.f64("y")?, row.f64("z")?),
        };
        let (radius, phase) = (row.f64("radius")?, row.f64("phase")?);
        match traces.iter_mut().find(|t| t.marker_id == id) {
            Some(t) => t.samples.push(sample),
            None => traces.push(MarkerTrace {
                marker_id: id,
                samples: vec![sample],
                radius,
                phase,
            }),
        }
    }
    Ok(traces)
}

/// Splits traces into the `P1` trace and the pivot-side traces.
pub fn split_traces(traces: Vec<MarkerTrace>, source: &str) -> Result<(MarkerTrace, Vec<MarkerTrace>)> {
    let (p1, rest): (Vec<_>, Vec<_>) = traces.into_iter().partition(|t| t.marker_id == "P1");
    match <[MarkerTrace; 1]>::try_from(p1) {
        Ok([p1]) => Ok((p1, rest)),
        Err(v) => Err(Error::Parse {
            source_name: source.into(),
            line: 0,
            field: "marker_id".into(),
            message: format!("expected exactly one P1 trace, found {}", v.len()),
        }),
    }
}

pub fn plan_to_csv(plan: &ExperimentPlan) -> String {
    let n = plan.entries.first().map_or(0, |e| e.q.len());
    let header = ["entry".to_string()]
        .into_iter()
        .chain(joint_header(n))
        .chain(WRENCH_COLUMNS.iter().map(|s| s.to_string()))
        .collect();
    let rows = plan
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut row = vec![i.to_string()];
            row.extend(e.q.as_slice().iter().map(|v| num(*v)));
            row.extend(wrench_cells(&e.wrench));
            row
        })
        .collect();
    to_csv(header, rows)
}

pub fn plan_from_csv(text: &str, source: &str) -> Result<ExperimentPlan> {
    let (headers, records) = read_records(text, source)?;
    let n = joint_count(&headers);
    let entries = records
        .iter()
        .map(|record| {
            let row = Row {
                source,
                record,
                headers: &headers,
            };
            Ok(PlanEntry {
                q: row.joints(n)?,
                wrench: row.wrench()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentPlan::new(entries))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_measurements(path: &Path) -> Result<Vec<LoadedMeasurement>> {
    measurements_from_csv(&read_text(path)?, &path.display().to_string())
}

pub fn write_measurements(path: &Path, data: &[LoadedMeasurement]) -> Result<()> {
    write_atomic(path, measurements_to_csv(data).as_bytes())
}

pub fn read_traces(path: &Path) -> Result<Vec<MarkerTrace>> {
    traces_from_csv(&read_text(path)?, &path.display().to_string())
}

pub fn read_plan(path: &Path) -> Result<ExperimentPlan> {
    plan_from_csv(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measurement(id: usize, rep: usize) -> LoadedMeasurement {
        LoadedMeasurement {
            config_id: id,
            q: JointState::from_slice(&[0.1, -0.7, 1.0 / 3.0]),
            wrench: Wrench::new(Vec3::new(1.0, -2000.5, 0.1), Vec3::new(0.0, 3.0, 0.0)),
            markers_unloaded: vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.1 + 0.2, -1e-9, 2.5)],
            markers_loaded: vec![Vec3::new(1.001, 2.0, 3.0), Vec3::new(0.3, -7e-4, std::f64::consts::PI)],
            repetition: rep,
        }
    }

    #[test]
    fn measurements_round_trip_exactly() {
        let data = vec![measurement(0, 0), measurement(0, 1), measurement(4, 0)];
        let text = measurements_to_csv(&data);
        assert_eq!(measurements_from_csv(&text, "m.csv").unwrap(), data);
    }

    #[test]
    fn bad_number_reports_line_and_column() {
        let text = measurements_to_csv(&[measurement(0, 0)]);
        let broken = text.lines().enumerate().map(|(i, l)| if i == 2 { l.replacen("0.1", "abc", 1) } else { l.to_string() }).collect::<Vec<_>>().join("\n");
        match measurements_from_csv(&broken, "m.csv") {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "q1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plan_round_trip() {
        let plan = ExperimentPlan::new(vec![
            PlanEntry {
                q: JointState::from_slice(&[0.1, -0.2]),
                wrench: Wrench::force(Vec3::new(0.0, 0.0, -3000.0)),
            },
            PlanEntry {
                q: JointState::from_slice(&[1e-17, 2.0]),
                wrench: Wrench::force(Vec3::new(1500.0, 0.0, 0.0)),
            },
        ]);
        assert_eq!(plan_from_csv(&plan_to_csv(&plan), "p.csv").unwrap(), plan);
    }

    #[test]
    fn traces_round_trip_and_split() {
        let t = |id: &str| MarkerTrace {
            marker_id: id.into(),
            samples: vec![TraceSample {
                q2: -0.5,
                position: Vec3::new(0.1, 0.2, 0.3),
            }],
            radius: 0.15,
            phase: 0.4,
        };
        let traces = vec![t("P1"), t("P0-1"), t("P0-2")];
        let back = traces_from_csv(&traces_to_csv(&traces), "t.csv").unwrap();
        assert_eq!(back, traces);
        let (p1, rest) = split_traces(back, "t.csv").unwrap();
        assert_eq!(p1.marker_id, "P1");
        assert_eq!(rest.len(), 2);
        assert!(split_traces(vec![t("P0-1")], "t.csv").is_err());
    }
}
