use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("vertex reference {0} is out of range")]
    InvalidVertex(usize),
    #[error("degree {degree} exceeds the truncation level {max}")]
    DegreeOverflow { degree: u32, max: u32 },
    #[error("label {0} is not supported by this operation")]
    UnsupportedLabel(String),
    #[error("forest {0} is missing from the rough path basis")]
    MissingComponent(String),
    #[error("sewing did not converge (last defect {last_defect:e})")]
    NonConvergence { last_defect: f64 },
    #[error("driver is not quasi-geometric (defect {defect:e} on {forest})")]
    NotQuasiGeometric { forest: String, defect: f64 },
    #[error("bracket extension inconsistent at f={f}, g={g}, vertex {vertex} (defect {defect:e})")]
    InconsistentBracket { f: String, g: String, vertex: String, defect: f64 },
    #[error("singular linear system: {0}")]
    Singular(String),
    #[error("no chart covers the path at t={0}")]
    Uncovered(f64),
    #[error("solution left the chart region at t={0}")]
    ChartExhaustion(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
