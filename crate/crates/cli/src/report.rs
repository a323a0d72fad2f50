use std::fmt::Write as _;

use brp_core::checks::{Bound, Check, Measurement};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Report {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckEntry>,
}

#[derive(Debug, Serialize)]
pub struct CheckEntry {
    pub id: String,
    pub title: String,
    pub status: &'static str,
    /// Value of the measurement closest to (or furthest past) its bound.
    pub defect: Option<f64>,
    pub tolerance: Option<f64>,
    pub runtime_s: f64,
    pub measurements: Vec<MeasurementEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct MeasurementEntry {
    pub name: String,
    pub value: f64,
    pub bound: &'static str,
    pub limit: f64,
    pub passed: bool,
}

impl From<&Measurement> for MeasurementEntry {
    fn from(m: &Measurement) -> Self {
        MeasurementEntry {
            name: m.name.clone(),
            value: m.value,
            bound: match m.bound {
                Bound::AtMost => "at_most",
                Bound::AtLeast => "at_least",
            },
            limit: m.limit,
            passed: m.passed(),
        }
    }
}

impl CheckEntry {
    pub fn from_check(c: &Check) -> CheckEntry {
        let worst = c.worst();
        CheckEntry {
            id: c.id.clone(),
            title: c.title.clone(),
            status: if c.passed() { "pass" } else { "fail" },
            defect: worst.map(|m| m.value),
            tolerance: worst.map(|m| m.limit),
            runtime_s: c.seconds,
            measurements: c.measurements.iter().map(MeasurementEntry::from).collect(),
            notes: c.notes.clone(),
        }
    }

    pub fn from_error(id: &str, title: &str, err: &str) -> CheckEntry {
        CheckEntry {
            id: id.to_string(),
            title: title.to_string(),
            status: "error",
            defect: None,
            tolerance: None,
            runtime_s: 0.0,
            measurements: Vec::new(),
            notes: vec![err.to_string()],
        }
    }
}

impl Report {
    pub fn new(suite: &str, checks: Vec<CheckEntry>) -> Report {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.status == "pass");
        Report { suite: suite.to_string(), passed, checks }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}: {}", self.suite, if self.passed { "PASS" } else { "FAIL" });
        for c in &self.checks {
            let _ = writeln!(out, "  [{}] {} ({:.2}s)", c.status.to_uppercase(), c.title, c.runtime_s);
            for m in &c.measurements {
                let op = if m.bound == "at_most" { "<=" } else { ">=" };
                let _ = writeln!(out, "      {:<44} {:>11.4e} {op} {:.1e}{}", m.name, m.value, m.limit, if m.passed { "" } else { "  FAILED" });
            }
            for n in &c.notes {
                let _ = writeln!(out, "      {n}");
            }
        }
        out
    }
}
