use std::time::Instant;

use brp_core::bracket::{consistency_instances, max_consistency_defect};
use brp_core::checks::{self, Check, Measurement, Settings, CRITERIA};
use brp_core::controlled::davie_residual_slope;
use brp_core::forest::numbered_letters;
use brp_core::geometry::{
    check_chart, ito_kelly_manifold_defect, manifold_integral, manifold_rde_lift, quasi_rde_coefficients, right_inverse_residual, transfer_table,
    transform_check, Chart, Connection, CovariantCoeffs, ManifoldRoughPath, Patch, SymbolChoice, TransferSymbols,
};
use brp_core::lift::{compose_path, pushforward};
use brp_core::poly::QPoly;
use brp_core::rough_path::{dyadic_grid, smooth_lift, RoughPath};

use crate::report::{CheckEntry, Report};
use crate::scenario::{self, Scenario};
use crate::{CliError, Common};

const LIFT: &str = include_str!("../scenarios/lift.json");
const PUSHFORWARD: &str = include_str!("../scenarios/pushforward.json");
const QUASI: &str = include_str!("../scenarios/quasi.json");
const FLAT: &str = include_str!("../scenarios/flat.json");
const MANIFOLD: &str = include_str!("../scenarios/manifold.json");
const RDE: &str = include_str!("../scenarios/rde.json");

struct Ctx<'a> {
    flags: &'a Common,
    scenario: Scenario,
}

impl Ctx<'_> {
    fn tol(&self) -> f64 {
        self.flags.tolerance.or(self.scenario.tolerance).unwrap_or(1e-8)
    }

    fn depth(&self, default: u32) -> u32 {
        self.flags.grid_depth.or(self.scenario.grid_depth).unwrap_or(default)
    }

    fn settings(&self) -> Settings {
        Settings { max_degree: self.flags.max_degree, letters: self.flags.letters, grid_depth: self.flags.grid_depth, seed: self.flags.seed }
    }

    fn require<'s, T>(&self, field: &'s Option<T>, name: &str) -> Result<&'s T, CliError> {
        field.as_ref().ok_or_else(|| CliError::Usage(format!("scenario needs `{name}`")))
    }

    fn quasi_driver(&self, default_depth: u32) -> Result<RoughPath, CliError> {
        let spec = self.require(&self.scenario.driver, "driver")?;
        scenario::quasi_driver(spec, self.scenario.p_or(3.2), self.scenario.grid(self.depth(default_depth)))
    }
}

fn check(id: &str, title: &str, start: Instant, measurements: Vec<Measurement>, notes: Vec<String>) -> Check {
    Check { id: id.to_string(), title: title.to_string(), measurements, notes, seconds: start.elapsed().as_secs_f64() }
}

fn worst_forest(defects: Vec<(brp_core::Forest, f64)>) -> (String, f64) {
    defects.into_iter().fold((String::from("-"), 0.0), |acc, (f, d)| if d > acc.1 { (f.to_string(), d) } else { acc })
}

pub fn run(suite: &str, flags: &Common) -> Result<Report, CliError> {
    let builtin = match suite {
        "lift" => LIFT,
        "pushforward" => PUSHFORWARD,
        "quasi-check" | "verify-bracket" => QUASI,
        "transfer-symbols" => FLAT,
        "integrate-manifold" => MANIFOLD,
        "rde-manifold" => RDE,
        _ => "{}",
    };
    let scenario = match &flags.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::from_json(builtin)?,
    };
    let ctx = Ctx { flags, scenario };
    let checks = match suite {
        "verify-hopf" => verify_hopf(&ctx)?,
        "verify-bracket" => verify_bracket(&ctx)?,
        "lift" => lift(&ctx)?,
        "pushforward" => pushforward_cmd(&ctx)?,
        "quasi-check" => quasi_check(&ctx)?,
        "transfer-symbols" => transfer_symbols(&ctx)?,
        "integrate-manifold" => integrate_manifold(&ctx)?,
        "rde-manifold" => rde_manifold(&ctx)?,
        "report" => return Ok(report(&ctx)),
        other => return Err(CliError::Usage(format!("unknown subcommand {other}"))),
    };
    Ok(Report::new(suite, checks.iter().map(CheckEntry::from_check).collect()))
}

fn verify_hopf(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let letters = ctx.flags.letters.unwrap_or(2);
    let degree = ctx.flags.max_degree.unwrap_or(4);
    Ok(vec![checks::hopf_exactness(letters, degree)?, checks::golden_values()?])
}

fn verify_bracket(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let start = Instant::now();
    let x = ctx.quasi_driver(8)?;
    let letters = numbered_letters(ctx.require(&ctx.scenario.driver, "driver")?.d);
    let instances = consistency_instances(&letters, x.n(), false);
    let (worst, at) = max_consistency_defect(&x, &instances)?;
    let mut notes = vec![format!("{} consistency instances", instances.len())];
    if let Some((f, g, nu)) = at {
        notes.push(format!("largest defect at f = {f}, g = {g}, {nu:?}"));
    }
    let consistency = check("consistency", "Consistency of the bracket extension", start, vec![Measurement::at_most("consistency defect", worst, ctx.tol())], notes);
    Ok(vec![checks::golden_values()?, checks::pure_bracket_ito()?, consistency])
}

fn lift(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let start = Instant::now();
    let path = ctx.require(&ctx.scenario.path, "path")?;
    let x = scenario::smooth_driver(path, ctx.scenario.p_or(3.5), ctx.scenario.grid(ctx.depth(10)))?;
    let tol = ctx.tol();
    let (shuffle_at, shuffle) = worst_forest(x.geometric_defect()?);
    let mut ms = vec![
        Measurement::at_most("Chen defect", x.max_chen_defect(), tol),
        Measurement::at_most("grouplike defect", x.max_grouplike_defect(), tol),
        Measurement::at_most("shuffle defect", shuffle, tol),
    ];
    let mut notes = vec![format!("largest shuffle defect on {shuffle_at}")];
    for (f, want) in ctx.scenario.components.iter().flatten() {
        let got = x.component(0, x.num_cells(), &scenario::forest(f)?)?;
        notes.push(format!("X^{f} = {got:.15}"));
        ms.push(Measurement::at_most(&format!("|X^{f} - {want}|"), (got - want).abs(), tol));
    }
    Ok(vec![check("lift", "Smooth geometric lift", start, ms, notes)])
}

fn pushforward_cmd(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let start = Instant::now();
    let path = ctx.require(&ctx.scenario.path, "path")?;
    let map = scenario::polys(ctx.require(&ctx.scenario.map, "map")?, path.len())?;
    let p = ctx.scenario.p_or(3.5);
    let grid = ctx.scenario.grid(ctx.depth(10));
    let gamma = scenario::polys(path, 1)?.to_f64();
    let x = smooth_lift(&gamma, p, grid.clone())?;
    let x0 = gamma.eval(&[grid[0]]);
    let y = pushforward(&map, &x, &x0, 1e-4)?;
    let oracle = smooth_lift(&compose_path(&map, &gamma), p, grid)?;
    let mut worst: f64 = 0.0;
    let mut at = String::from("-");
    for (s, f) in y.basis().forests().iter().enumerate() {
        let Some(k) = oracle.basis().index_of(f) else { continue };
        for (i, j) in y.stored_pairs() {
            let d = (y.value(i, j)[s] - oracle.value(i, j)[k]).abs();
            if d > worst {
                worst = d;
                at = f.to_string();
            }
        }
    }
    let notes = vec![format!("largest gap on {at}")];
    Ok(vec![check("pushforward", "Pushforward against the composed path", start, vec![Measurement::at_most("per-forest defect", worst, ctx.tol())], notes)])
}

fn quasi_check(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let start = Instant::now();
    let mut x = ctx.quasi_driver(8)?;
    let mut notes = Vec::new();
    if let Some(p) = &ctx.scenario.perturb {
        let f = scenario::forest(&p.forest)?;
        let last = x.num_cells();
        let v = x.component(0, last, &f)?;
        x.set_component(0, last, &f, v + p.epsilon)?;
        notes.push(format!("perturbed X^{} on the whole interval by {:e}", p.forest, p.epsilon));
    }
    let (at, worst) = worst_forest(x.quasi_geometric_defect()?);
    notes.push(format!("largest quasi-shuffle defect on {at}"));
    let ms = vec![Measurement::at_most(&format!("quasi-shuffle defect ({at})"), worst, ctx.tol()), Measurement::at_most("Chen defect", x.max_chen_defect(), ctx.tol().max(1e-12))];
    Ok(vec![check("quasi-check", "Quasi-geometric relations", start, ms, notes)])
}

fn transfer_symbols(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let start = Instant::now();
    let conn = scenario::connection(ctx.require(&ctx.scenario.christoffel, "christoffel")?)?;
    let m = conn.dim();
    let n = ctx.scenario.n.or(ctx.flags.max_degree).unwrap_or(3);
    let x = ctx.scenario.point.clone().unwrap_or_else(|| vec![0.0; m]);
    let cov = CovariantCoeffs::new(&conn, n);
    let exact = TransferSymbols::new(&cov).at(&x);
    let lu = transfer_table(&cov, &x)?;
    let tol = ctx.tol();
    let mut ms = vec![Measurement::at_most("exact vs LU", exact.max_diff(&lu), tol), Measurement::at_most("right-inverse residual", right_inverse_residual(&cov, &exact, &x), tol)];
    let mut notes: Vec<String> = exact
        .entries()
        .filter(|(u, l, v)| *v != 0.0 && u.windows(2).all(|w| w[0] <= w[1]) && !l.is_empty())
        .map(|(u, l, v)| format!("G~^{:?}_{:?} = {v}", plus_one(u), plus_one(l)))
        .collect();
    notes.insert(0, format!("torsion-free: {}", conn.is_torsion_free()));
    if let Some(t) = &ctx.scenario.transition {
        let map = scenario::polys(t, m)?;
        ms.push(Measurement::at_most("transformation residual", transform_check(&conn, &map, &x, n, SymbolChoice::Transfer)?, tol));
    }
    Ok(vec![check("transfer-symbols", "Transfer symbols", start, ms, notes)])
}

fn plus_one(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

fn integrate_manifold(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let start = Instant::now();
    let sc = &ctx.scenario;
    let conn = scenario::connection(ctx.require(&sc.christoffel, "christoffel")?)?;
    let m = conn.dim();
    let atlas = scenario::atlas(conn, sc.base_domain.clone(), sc.charts.as_deref().unwrap_or(&[]))?;
    let x = ctx.quasi_driver(10)?;
    let x0 = sc.x0.clone().unwrap_or_else(|| vec![0.0; m]);
    let tol = ctx.tol();
    let mx = ManifoldRoughPath::from_chart(&atlas, 0, &x, &x0, 1e-3)?;
    let mut ms = Vec::new();
    for c in 1..atlas.len() {
        ms.push(Measurement::at_most(&format!("driver round trip {} -> base", atlas.chart(c).name), mx.compatibility_defect(&atlas, c, 0, 1e-3)?, tol));
    }
    let patches = mx.patching(&atlas, sc.margin.unwrap_or(0.05))?;
    let mut notes: Vec<String> = patches.iter().map(|p| format!("chart {} on cells {}..{}", atlas.chart(p.chart).name, p.start, p.end)).collect();
    if let Some(form) = &sc.one_form {
        let f0 = scenario::polys(form, m)?;
        let forms = (0..atlas.len()).map(|c| atlas.pull_form(&f0, 0, c)).collect::<brp_core::Result<Vec<_>>>()?;
        let patched = manifold_integral(&atlas, &mx, &forms, &patches)?;
        let single = manifold_integral(&atlas, &mx, &forms, &[Patch { chart: 0, start: 0, end: x.num_cells() }])?;
        notes.push(format!("integral = {patched:?}"));
        let gap = patched.iter().zip(&single).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ms.push(Measurement::at_most("patched vs single-chart integral", gap, tol));
    }
    if let Some(g) = &sc.g {
        let g0 = QPoly::parse(g, m)?;
        let gs = (0..atlas.len()).map(|c| atlas.pull_function(&g0, 0, c)).collect::<brp_core::Result<Vec<_>>>()?;
        ms.push(Measurement::at_most("Ito-Kelly defect", ito_kelly_manifold_defect(&atlas, &mx, &gs, &patches)?, tol));
    }
    Ok(vec![check("integrate-manifold", "Manifold rough integral", start, ms, notes)])
}

fn rde_manifold(ctx: &Ctx) -> Result<Vec<Check>, CliError> {
    let start = Instant::now();
    let sc = &ctx.scenario;
    let spec = ctx.require(&sc.rde, "rde")?;
    let gm = match &sc.christoffel {
        Some(c) => scenario::connection(c)?,
        None => Connection::flat(ctx.require(&sc.driver, "driver")?.d),
    };
    let gn = match &spec.target_christoffel {
        Some(c) => scenario::connection(c)?,
        None => Connection::flat(spec.state_dim),
    };
    let (e, d) = (spec.state_dim, gm.dim());
    let f = scenario::polys(&spec.field, e + d)?;
    let x = ctx.quasi_driver(8)?;
    let n = x.n();
    let x0 = sc.x0.clone().unwrap_or_else(|| vec![0.0; d]);
    let rde = quasi_rde_coefficients(&f, &gm, &gn, n)?;
    let tol = ctx.tol();
    let (sol, y) = manifold_rde_lift(&rde, &x, &spec.y0, &x0, 1e-3)?;
    let end = sol.trace_at(x.num_cells());
    let mut notes = vec![format!("Y_T = {:?}", &end[..e])];
    let (at, worst) = worst_forest(y.quasi_geometric_defect()?);
    let mut ms = vec![Measurement::at_most(&format!("solution lift quasi-shuffle defect ({at})"), worst, tol)];
    if let Some(domain) = &spec.target_domain {
        let chart = Chart::new("target", gn.clone()).with_domain(domain.clone());
        let left = match check_chart(&sol, &(0..e).collect::<Vec<_>>(), &chart, x.grid()) {
            Ok(()) => 0.0,
            Err(err) => {
                notes.push(err.to_string());
                1.0
            }
        };
        ms.push(Measurement::at_most("chart exhaustion", left, 0.0));
    }
    if let Some(depths) = &spec.slope_depths {
        let fine = *depths.iter().max().unwrap_or(&10) + 2;
        let xf = scenario::quasi_driver(ctx.require(&sc.driver, "driver")?, sc.p_or(3.2), dyadic_grid(sc.horizon.unwrap_or(1.0), fine))?;
        let y0: Vec<f64> = spec.y0.iter().chain(&x0).copied().collect();
        let (points, slope) = davie_residual_slope(&rde.vector_fields(&xf)?, &xf, &y0, depths)?;
        notes.push(format!("residuals by cell length: {points:?}"));
        let p = xf.p();
        ms.push(Measurement::at_least("Davie residual slope", slope, (p.floor() + 1.0) / p - 0.1));
    }
    Ok(vec![check("rde-manifold", "Manifold RDE", start, ms, notes)])
}

/// Runs every criterion on its own thread and collects them in order.
fn report(ctx: &Ctx) -> Report {
    let settings = ctx.settings();
    let entries = std::thread::scope(|s| {
        let handles: Vec<_> = CRITERIA.iter().map(|id| (id, s.spawn(|| checks::run(id, &settings)))).collect();
        handles
            .into_iter()
            .map(|(id, h)| match h.join() {
                Ok(Ok(c)) => CheckEntry::from_check(&c),
                Ok(Err(e)) => CheckEntry::from_error(id, id, &e.to_string()),
                Err(_) => CheckEntry::from_error(id, id, "check panicked"),
            })
            .collect()
    });
    Report::new("report", entries)
}
