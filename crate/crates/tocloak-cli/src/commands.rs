//! Command dispatch: each command produces a report file body plus checks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use tocloak::coeffs::Domain;
use tocloak::fem::{generate_disk_mesh, FredholmOptions};
use tocloak::radial::RadialOptions;
use tocloak::verify::cloak::{
    background_mesh, cloak_mesh, fem_dtn, general_cloak_experiment, near_cloak_sweep, spectral_dtn, CloakReport,
    DtnOperator, FEM_MODES,
};
use tocloak::verify::decoupled::{decoupled_cloak_solve, hidden_bc_report, InteriorProblem};
use tocloak::verify::energy::{cutoff_decay_experiment, ShellQuadrature, SmoothCutoff};
use tocloak::verify::form::{form_invariance, SmoothField};
use tocloak::verify::scenario::{is_identity, Scenario, SolverChoice};
use tocloak::xform::{
    blowup_map, closed_form_radial_cloak, compose, pushforward_coefficients, regularized_blowup, RadialLaw,
};
use tocloak::{CVec, Point, C64};

use crate::config::{CloakMap, Command, RunConfig};
use crate::specs::parse_source;
use crate::CliError;

pub const CLOAK_SWEEP_HEADER: [&str; 7] =
    ["epsilon", "mode", "lambda_bg_re", "lambda_bg_im", "lambda_cloak_re", "lambda_cloak_im", "abs_err"];
pub const ENERGY_DECAY_HEADER: [&str; 3] = ["epsilon", "energy_sq", "energy_sq_times_log"];
pub const PUSHFORWARD_HEADER: [&str; 7] = ["y1", "y2", "block", "row", "col", "re", "im"];
pub const DTN_HEADER: [&str; 5] = ["mode", "row", "col", "lambda_re", "lambda_im"];
pub const THM2_HEADER: [&str; 5] =
    ["h", "trace_constant_deviation", "net_flux_norm", "angular_derivative_norm", "jump_norm"];

/// Largest form-invariance defect accepted before a sweep.
pub const FORM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check { name: name.into(), value, limit, pass: value <= limit }
    }

    fn holds(name: impl Into<String>, pass: bool) -> Self {
        Check { name: name.into(), value: f64::from(u8::from(pass)), limit: 1.0, pass }
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub body: Vec<u8>,
    pub rows: usize,
    pub checks: Vec<Check>,
    pub details: Value,
}

/// Shortest round-trip decimal form, in exponent notation for very small or large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

struct Table {
    out: csv::Writer<Vec<u8>>,
    rows: usize,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self, CliError> {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(header).map_err(csv_error)?;
        Ok(Table { out, rows: 0 })
    }

    fn row(&mut self, fields: &[String]) -> Result<(), CliError> {
        self.rows += 1;
        self.out.write_record(fields).map_err(csv_error)
    }

    fn finish(self, checks: Vec<Check>, details: Value) -> Result<Outcome, CliError> {
        let body = self.out.into_inner().map_err(|e| csv_error(e.into_error().into()))?;
        Ok(Outcome { body, rows: self.rows, checks, details })
    }
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

pub fn run(config: &RunConfig, serial: bool) -> Result<Outcome, CliError> {
    let opts = RadialOptions { parallel: !serial, ..Default::default() };
    match config.command {
        Command::Pushforward => pushforward(config),
        Command::Dtn => dtn(config, &opts),
        Command::CloakSweep => sweep(config, &opts),
        Command::GeneralCloak => sweep(config, &opts),
        Command::EnergyDecay => energy_decay(config),
        Command::VerifyThm2 => verify_thm2(config),
        Command::Mesh => mesh(config),
    }
}

fn fem_h(s: &Scenario) -> f64 {
    match s.solver {
        SolverChoice::Fem { h } => h,
        SolverChoice::Spectral { .. } => unreachable!("validated: command needs the fem solver"),
    }
}

fn pushforward(config: &RunConfig) -> Result<Outcome, CliError> {
    let s = &config.scenario;
    let f = match config.map {
        CloakMap::Blowup => blowup_map(),
        CloakMap::Regularized => regularized_blowup(s.epsilon)?,
    };
    let map = if is_identity(&s.g) { f } else { compose(&s.g, &f)? };
    let pushed = pushforward_coefficients(&map, &s.background.field)?;
    let mut t = Table::new(&PUSHFORWARD_HEADER)?;
    for rho in [1.1, 1.3, 1.5, 1.7, 1.9] {
        for k in 0..8 {
            let theta = std::f64::consts::TAU * k as f64 / 8.0;
            let y = s.g.forward(Point::new(rho * theta.cos(), rho * theta.sin()))?;
            let c = pushed.eval(y)?;
            let blocks = [("a11", &c.a[0][0]), ("a12", &c.a[0][1]), ("a21", &c.a[1][0]), ("a22", &c.a[1][1]), ("b", &c.b)];
            for (name, blk) in blocks {
                for i in 0..s.m {
                    for j in 0..s.m {
                        let v = blk[(i, j)];
                        t.row(&[num(y[0]), num(y[1]), name.into(), i.to_string(), j.to_string(), num(v.re), num(v.im)])?;
                    }
                }
            }
        }
    }
    t.finish(Vec::new(), json!({ "map": map.name }))
}

fn dtn(config: &RunConfig, opts: &RadialOptions) -> Result<Outcome, CliError> {
    let s = &config.scenario;
    let cloaked = s.epsilon > 0.0;
    let mut checks = Vec::new();
    if cloaked {
        checks.push(form_check(s, s.epsilon, config.seed)?);
    }
    let mut t = Table::new(&DTN_HEADER)?;
    let mut emit = |n: i64, lambda: &tocloak::CMat| -> Result<(), CliError> {
        for i in 0..s.m {
            for j in 0..s.m {
                let v = lambda[(i, j)];
                t.row(&[n.to_string(), i.to_string(), j.to_string(), num(v.re), num(v.im)])?;
            }
        }
        Ok(())
    };
    match s.solver {
        SolverChoice::Spectral { n_max } => {
            let medium = if cloaked { s.cloaked_reference_medium()? } else { s.background.clone() };
            for mode in spectral_dtn(&medium, s.omega, n_max, opts)?.modes {
                emit(mode.n, &mode.lambda)?;
            }
        }
        SolverChoice::Fem { h } => {
            let (mesh, medium) =
                if cloaked { (cloak_mesh(s, h)?, s.physical_cloak()?) } else { (background_mesh(s, h)?, s.physical_background()?) };
            let modes: Vec<i64> = (-FEM_MODES..=FEM_MODES).collect();
            let d = fem_dtn(mesh, &medium, s.omega, &modes)?;
            for &n in &modes {
                emit(n, &d.block(n).expect("projected mode"))?;
            }
        }
    }
    t.finish(checks, json!({ "epsilon": s.epsilon, "cloaked": cloaked }))
}

/// Randomized `Q(u, v)` invariance check of the cloak map on the background.
fn form_check(s: &Scenario, eps: f64, seed: u64) -> Result<Check, CliError> {
    let f = regularized_blowup(eps)?;
    let map = if is_identity(&s.g) { f } else { compose(&s.g, &f)? };
    let law = RadialLaw::Regularized { eps };
    let field = &s.background.field;
    let mut reference = vec![eps];
    reference.extend(field.breakpoints.iter().copied());
    // kinks in the polar parameter of the codomain: the radius for disks, the G-preimage radius otherwise
    let image = reference
        .iter()
        .map(|&r| match map.codomain {
            Domain::Disk { .. } => Ok(s.g.forward(Point::new(law.radius(r), 0.0))?.norm()),
            _ => Ok(law.radius(r)),
        })
        .collect::<Result<Vec<f64>, tocloak::Error>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = SmoothField::random(s.m, &mut rng);
    let v = SmoothField::random(s.m, &mut rng);
    let r = form_invariance(&map, field, s.omega, &u, &v, &reference, &image)?;
    Ok(Check::at_most(format!("form invariance defect, epsilon {eps}"), r.defect, FORM_TOL))
}

fn lambda00(op: &DtnOperator, n: i64) -> C64 {
    match op {
        DtnOperator::Modal(d) => d.get(n).expect("mode computed").lambda[(0, 0)],
        DtnOperator::Projected(d) => d.block(n).expect("mode projected")[(0, 0)],
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn sweep(config: &RunConfig, opts: &RadialOptions) -> Result<Outcome, CliError> {
    let s = &config.scenario;
    let mut checks = config.eps_list.iter().map(|&e| form_check(s, e, config.seed)).collect::<Result<Vec<_>, _>>()?;
    let reps: Vec<CloakReport> = match config.command {
        Command::GeneralCloak => general_cloak_experiment(s, &config.eps_list, fem_h(s))?,
        _ => near_cloak_sweep(s, &config.eps_list, opts)?,
    };
    let mut t = Table::new(&CLOAK_SWEEP_HEADER)?;
    let mut worst_errors = Vec::new();
    let mut per_eps = Vec::new();
    for r in &reps {
        let (n, err) = r.mode_errors.iter().copied().fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        let bg = lambda00(&r.dtn_background, n);
        let cl = lambda00(&r.dtn_cloaked, n);
        t.row(&[num(r.epsilon), n.to_string(), num(bg.re), num(bg.im), num(cl.re), num(cl.im), num(err)])?;
        worst_errors.push(err);
        per_eps.push(json!({
            "epsilon": r.epsilon,
            "error": r.error,
            "offset_error": r.offset_error,
            "mode_errors": r.mode_errors.iter().map(|&(n, e)| json!([n, e])).collect::<Vec<_>>(),
        }));
    }
    let errors: Vec<f64> = reps.iter().map(|r| r.error).collect();
    if config.command == Command::GeneralCloak {
        checks.push(Check::holds("operator errors strictly decreasing along epsilon", strictly_decreasing(&errors)));
    } else {
        checks.push(Check::holds("abs_err strictly decreasing along epsilon", strictly_decreasing(&worst_errors)));
    }
    t.finish(checks, json!({ "sweep": per_eps }))
}

fn energy_decay(config: &RunConfig) -> Result<Outcome, CliError> {
    let field = closed_form_radial_cloak(&config.scenario.background.field)?;
    let rows = cutoff_decay_experiment(&field, &config.eps_list, SmoothCutoff, &ShellQuadrature::default())?;
    let mut t = Table::new(&ENERGY_DECAY_HEADER)?;
    for r in &rows {
        t.row(&[num(r.epsilon), num(r.energy_sq), num(r.energy_sq_times_log)])?;
    }
    let e: Vec<f64> = rows.iter().map(|r| r.energy_sq).collect();
    let details = json!({ "error_estimates": rows.iter().map(|r| r.error_estimate).collect::<Vec<_>>() });
    t.finish(vec![Check::holds("energy_sq strictly decreasing along epsilon", strictly_decreasing(&e))], details)
}

fn verify_thm2(config: &RunConfig) -> Result<Outcome, CliError> {
    let s = &config.scenario;
    let h0 = fem_h(s);
    let interior = InteriorProblem::new(s, h0, &FredholmOptions::default())?;
    let fredholm = match &interior.report {
        None => json!({ "unique": true, "null_dim": 0 }),
        Some(r) => json!({
            "unique": false,
            "null_dim": r.null_dim,
            "compatibility": r.compatibility,
            "singular_values": r.singular_values,
            "threshold": r.threshold,
        }),
    };
    let boundary_field = parse_source(&config.boundary, s.m);
    let boundary = |y: Point| boundary_field.eval(y).unwrap_or_else(|_| CVec::zeros(s.m));
    let mut t = Table::new(&THM2_HEADER)?;
    let mut checks = Vec::new();
    let mut angular = Vec::new();
    let mut jumps = Vec::new();
    for h in [h0, h0 / 2.0, h0 / 4.0] {
        let u = match decoupled_cloak_solve(s, h, boundary) {
            Err(e @ tocloak::Error::Incompatible(_)) => {
                return Err(CliError::Solver { source: e, details: json!({ "h": h, "fredholm": fredholm }) })
            }
            other => other?,
        };
        let r = hidden_bc_report(&u, s)?;
        let wn = u.interior.w.l2_norm();
        checks.push(Check::at_most(format!("trace constant deviation, h {h}"), r.trace_constant_deviation, 1e-10));
        checks.push(Check::at_most(format!("net flux / |w|, h {h}"), r.net_flux_norm / wn.max(1e-300), 1e-8));
        let jump = r.jump_value.norm();
        t.row(&[num(h), num(r.trace_constant_deviation), num(r.net_flux_norm), num(r.angular_derivative_norm), num(jump)])?;
        angular.push(r.angular_derivative_norm);
        jumps.push(jump);
    }
    // a vanishing exterior field has nothing to converge
    if angular.iter().any(|&a| a > 1e-12) {
        for w in angular.windows(2) {
            checks.push(Check { name: "angular derivative ratio per halving".into(), value: w[0] / w[1], limit: 1.5, pass: w[0] / w[1] >= 1.5 });
        }
    }
    t.finish(checks, json!({ "fredholm": fredholm, "jump_norms": jumps }))
}

fn mesh(config: &RunConfig) -> Result<Outcome, CliError> {
    let mesh = generate_disk_mesh(&config.radii, fem_h(&config.scenario))?;
    mesh.validate()?;
    let details = json!({ "nodes": mesh.node_count(), "triangles": mesh.triangles.len() });
    Ok(Outcome { body: mesh.to_text().into_bytes(), rows: mesh.triangles.len(), checks: Vec::new(), details })
}

#[cfg(test)]
mod tests {
    use super::num;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, -0.0, 1.0, 0.1, 1e-4, 1.2268259973465803e-16, -2.5759203213530144, 3e20, f64::MIN_POSITIVE, f64::MAX] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits(), "{}", num(x));
        }
        assert_eq!(num(1e-4), "0.0001");
        assert_eq!(num(1.5e-7), "1.5e-7");
    }
}
