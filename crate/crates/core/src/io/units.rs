//! Boundary units. Everything inside the crate is SI: m, rad, N, N·m,
//! rad/(N·m), N·m/rad, N/m.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dimension {
    Length,
    Angle,
    Force,
    Torque,
    Compliance,
    RotationalStiffness,
    LinearStiffness,
}

impl Dimension {
    pub fn si_unit(self) -> &'static str {
        match self {
            Dimension::Length => "m",
            Dimension::Angle => "rad",
            Dimension::Force => "N",
            Dimension::Torque => "Nm",
            Dimension::Compliance => "rad/Nm",
            Dimension::RotationalStiffness => "Nm/rad",
            Dimension::LinearStiffness => "N/m",
        }
    }

    /// Accepted unit spellings and their scale to SI.
    fn table(self) -> &'static [(&'static str, f64)] {
        const DEG: f64 = std::f64::consts::PI / 180.0;
        match self {
            Dimension::Length => &[("m", 1.0), ("mm", 1e-3), ("um", 1e-6), ("μm", 1e-6), ("cm", 1e-2)],
            Dimension::Angle => &[("rad", 1.0), ("mrad", 1e-3), ("urad", 1e-6), ("μrad", 1e-6), ("deg", DEG), ("°", DEG)],
            Dimension::Force => &[("N", 1.0), ("kN", 1e3)],
            Dimension::Torque => &[("Nm", 1.0), ("N·m", 1.0), ("kNm", 1e3)],
            Dimension::Compliance => &[
                ("rad/Nm", 1.0),
                ("rad/(N·m)", 1.0),
                ("mrad/Nm", 1e-3),
                ("urad/Nm", 1e-6),
                ("μrad/Nm", 1e-6),
                ("urad/kNm", 1e-9),
            ],
            Dimension::RotationalStiffness => &[
                ("Nm/rad", 1.0),
                ("N·m/rad", 1.0),
                ("kNm/rad", 1e3),
                ("MNm/rad", 1e6),
                ("Nm/urad", 1e6),
            ],
            Dimension::LinearStiffness => &[("N/m", 1.0), ("N/mm", 1e3), ("kN/m", 1e3), ("kN/mm", 1e6)],
        }
    }

    pub fn scale(self, unit: &str) -> Option<f64> {
        self.table().iter().find(|(u, _)| *u == unit).map(|(_, s)| *s)
    }
}

pub fn to_si(value: f64, unit: &str, dim: Dimension) -> Result<f64> {
    dim.scale(unit).map(|s| value * s).ok_or_else(|| Error::Validation {
        field: "unit".into(),
        message: format!("unknown {dim:?} unit `{unit}`"),
    })
}

pub fn from_si(value: f64, unit: &str, dim: Dimension) -> Result<f64> {
    dim.scale(unit).map(|s| value / s).ok_or_else(|| Error::Validation {
        field: "unit".into(),
        message: format!("unknown {dim:?} unit `{unit}`"),
    })
}

/// Parses `"0.623 urad/Nm"` style text into SI.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64> {
    let text = text.trim();
    let split = text
        .char_indices()
        .find(|(_, c)| c.is_whitespace() || !(c.is_ascii_digit() || "+-.eE".contains(*c)))
        .map_or(text.len(), |(i, _)| i);
    let (number, unit) = text.split_at(split);
    let value: f64 = number.parse().map_err(|_| Error::Validation {
        field: "quantity".into(),
        message: format!("`{text}` does not start with a number"),
    })?;
    let unit = unit.trim();
    if unit.is_empty() {
        return Ok(value);
    }
    to_si(value, unit, dim)
}
