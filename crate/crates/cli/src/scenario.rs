use std::collections::BTreeMap;
use std::path::Path;

use brp_core::geometry::{Atlas, Chart, Connection};
use brp_core::poly::{Poly, QPoly, QPolyMap};
use brp_core::rough_path::{dyadic_grid, quasi_geometric_lift, smooth_lift, RoughPath};
use brp_core::{Forest, Label};
use serde::Deserialize;

use crate::CliError;

/// Scenario file. Every field is optional; each subcommand reads the ones
/// it needs and falls back to its built-in scenario. Polynomials use the
/// variables `x1, x2, …`; time is `x1` in driver channels. Coordinate
/// indices count from 1.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub p: Option<f64>,
    pub horizon: Option<f64>,
    pub grid_depth: Option<u32>,
    pub tolerance: Option<f64>,
    /// Components of a smooth driver `γ(t)`, lifted geometrically.
    pub path: Option<Vec<String>>,
    /// A quasi-geometric driver given by its channels.
    pub driver: Option<DriverSpec>,
    pub map: Option<Vec<String>>,
    pub x0: Option<Vec<f64>>,
    /// Expected values of forests over the whole interval.
    pub components: Option<BTreeMap<String, f64>>,
    pub perturb: Option<Perturbation>,
    pub christoffel: Option<ConnectionSpec>,
    pub point: Option<Vec<f64>>,
    pub n: Option<u32>,
    pub transition: Option<Vec<String>>,
    pub base_domain: Option<Vec<(f64, f64)>>,
    pub charts: Option<Vec<ChartSpec>>,
    pub one_form: Option<Vec<String>>,
    pub g: Option<String>,
    pub margin: Option<f64>,
    pub rde: Option<RdeSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub d: usize,
    /// Letter (`"1"`, `"{12}"`, …) to polynomial in `x1 = t`.
    pub channels: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub forest: String,
    pub epsilon: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSpec {
    pub dim: usize,
    #[serde(default)]
    pub symbols: Vec<SymbolSpec>,
}

/// `Γ^upper_{lower[0] lower[1]}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    pub upper: usize,
    pub lower: [usize; 2],
    pub value: String,
}

/// A chart `y = map(x)` of the base chart.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub name: String,
    pub map: Vec<String>,
    pub inverse: Vec<String>,
    pub domain: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdeSpec {
    pub state_dim: usize,
    /// `F^k_α(y, x)` row by row: entry `k·d + α`, variables `y` then `x`.
    #[serde(rename = "F")]
    pub field: Vec<String>,
    pub target_christoffel: Option<ConnectionSpec>,
    pub y0: Vec<f64>,
    pub target_domain: Option<Vec<(f64, f64)>>,
    pub slope_depths: Option<Vec<u32>>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Scenario::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scenario, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("scenario: {e}")))
    }

    pub fn p_or(&self, p: f64) -> f64 {
        self.p.unwrap_or(p)
    }

    pub fn grid(&self, depth: u32) -> Vec<f64> {
        dyadic_grid(self.horizon.unwrap_or(1.0), depth)
    }
}

pub fn polys(comps: &[String], nin: usize) -> Result<QPolyMap, CliError> {
    let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
    Ok(QPolyMap::parse(&refs, nin)?)
}

pub fn forest(s: &str) -> Result<Forest, CliError> {
    Ok(Forest::parse(s)?)
}

pub fn smooth_driver(path: &[String], p: f64, grid: Vec<f64>) -> Result<RoughPath, CliError> {
    Ok(smooth_lift(&polys(path, 1)?.to_f64(), p, grid)?)
}

pub fn quasi_driver(spec: &DriverSpec, p: f64, grid: Vec<f64>) -> Result<RoughPath, CliError> {
    let mut channels: BTreeMap<Label, Poly<f64>> = BTreeMap::new();
    for (letter, poly) in &spec.channels {
        let label = match forest(letter)?.as_tree() {
            Some(t) if t.is_single_vertex() => t.label().clone(),
            _ => return Err(CliError::Usage(format!("channel {letter} is not a letter"))),
        };
        channels.insert(label, QPoly::parse(poly, 1)?.to_f64());
    }
    Ok(quasi_geometric_lift(spec.d, &channels, p, grid)?)
}

pub fn connection(spec: &ConnectionSpec) -> Result<Connection, CliError> {
    let m = spec.dim;
    let mut entries = Vec::with_capacity(spec.symbols.len());
    for s in &spec.symbols {
        let idx = [s.upper, s.lower[0], s.lower[1]];
        if idx.iter().any(|&i| i == 0 || i > m) {
            return Err(CliError::Usage(format!("Christoffel index {idx:?} out of range 1..={m}")));
        }
        entries.push((s.upper - 1, s.lower[0] - 1, s.lower[1] - 1, s.value.as_str()));
    }
    Ok(Connection::parse(m, &entries)?)
}

pub fn atlas(base: Connection, base_domain: Option<Vec<(f64, f64)>>, charts: &[ChartSpec]) -> Result<Atlas, CliError> {
    let m = base.dim();
    let mut chart = Chart::new("base", base);
    if let Some(d) = base_domain {
        chart = chart.with_domain(d);
    }
    let mut atlas = Atlas::new(chart);
    for c in charts {
        atlas.add_chart(&c.name, 0, polys(&c.map, m)?, polys(&c.inverse, m)?, c.domain.clone())?;
    }
    Ok(atlas)
}
