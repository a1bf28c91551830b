//! Run configuration: strict JSON documents and their validation.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tocloak::verify::scenario::{Medium, Scenario, SolverChoice};
use tocloak::xform::{ellipse_map, identity_map, scaling_map, DiffeoMap};
use tocloak::Mat2;

use crate::specs::{parse_coefficients, parse_source, SourceSpec};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Pushforward,
    Dtn,
    CloakSweep,
    VerifyThm2,
    EnergyDecay,
    GeneralCloak,
    Mesh,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pushforward => "pushforward",
            Command::Dtn => "dtn",
            Command::CloakSweep => "cloak-sweep",
            Command::VerifyThm2 => "verify-thm2",
            Command::EnergyDecay => "energy-decay",
            Command::GeneralCloak => "general-cloak",
            Command::Mesh => "mesh",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    command: Command,
    #[serde(default = "one")]
    omega: f64,
    #[serde(default = "one_usize")]
    m: usize,
    #[serde(default)]
    background: MediumDoc,
    #[serde(default)]
    cloak: CloakDoc,
    #[serde(default)]
    interior: MediumDoc,
    solver: Option<SolverDoc>,
    output: Option<PathBuf>,
    seed: Option<u64>,
    boundary: Option<String>,
    mesh: Option<MeshDoc>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MediumDoc {
    #[serde(rename = "A")]
    a: Option<String>,
    #[serde(rename = "B")]
    b: Option<String>,
    source: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloakDoc {
    epsilon: Option<f64>,
    epsilon_list: Option<Vec<f64>>,
    map: Option<String>,
    #[serde(rename = "G")]
    g: Option<GDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GDoc {
    #[serde(rename = "type")]
    kind: String,
    factor: Option<f64>,
    matrix: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverDoc {
    #[serde(rename = "type")]
    kind: String,
    n_max: Option<usize>,
    h: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshDoc {
    radii: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloakMap {
    Regularized,
    Blowup,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: Scenario,
    pub map: CloakMap,
    pub eps_list: Vec<f64>,
    /// Boundary data on `|y| = 2` (verify-thm2).
    pub boundary: SourceSpec,
    /// Mesh radii (mesh command).
    pub radii: Vec<f64>,
    pub output_path: PathBuf,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_N_MAX: usize = 16;
pub const DEFAULT_H: f64 = 0.1;
pub const SPECTRAL_EPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const FEM_EPS: [f64; 3] = [1e-1, 3e-2, 1e-2];
pub const ENERGY_EPS: [f64; 3] = [1e-2, 1e-4, 1e-6];

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parses a document; relative table paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        if key == "." {
            CliError::Config(e.inner().to_string())
        } else {
            CliError::Config(format!("{key}: {}", e.inner()))
        }
    })?;
    validate(doc, base)
}

fn validate(doc: Document, base: &Path) -> Result<RunConfig, CliError> {
    let command = doc.command;
    if !(doc.omega.is_finite() && doc.omega >= 0.0) {
        return Err(invalid("omega", format!("{} must be finite and nonnegative", doc.omega)));
    }
    let m = doc.m;
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    let background = medium(&doc.background, "background", m, 2.0, base)?;
    let interior = medium(&doc.interior, "interior", m, 1.0, base)?;

    let epsilon = doc.cloak.epsilon.unwrap_or(match command {
        Command::Pushforward | Command::Dtn => 0.1,
        _ => 0.0,
    });
    if !(0.0..1.0).contains(&epsilon) {
        return Err(invalid("cloak.epsilon", format!("{epsilon} must lie in [0, 1)")));
    }
    let map = match doc.cloak.map.as_deref() {
        None | Some("regularized") => CloakMap::Regularized,
        Some("blowup") => CloakMap::Blowup,
        Some(other) => return Err(invalid("cloak.map", format!("unknown map {other:?} (regularized, blowup)"))),
    };
    let g = g_map(doc.cloak.g.as_ref())?;
    let g_identity = tocloak::verify::scenario::is_identity(&g);

    let needs_fem = matches!(command, Command::VerifyThm2 | Command::GeneralCloak | Command::Mesh);
    let solver = match &doc.solver {
        None if needs_fem || !g_identity => SolverChoice::Fem { h: DEFAULT_H },
        None => SolverChoice::Spectral { n_max: DEFAULT_N_MAX },
        Some(s) => solver(s)?,
    };
    if needs_fem && matches!(solver, SolverChoice::Spectral { .. }) {
        return Err(invalid("solver.type", format!("{} needs the fem solver", command.name())));
    }
    if !g_identity && matches!(solver, SolverChoice::Spectral { .. }) {
        return Err(invalid("solver.type", "a non-identity G needs the fem solver"));
    }

    let eps_list = match (&doc.cloak.epsilon_list, command) {
        (Some(list), _) => list.clone(),
        (None, Command::EnergyDecay) => ENERGY_EPS.to_vec(),
        (None, _) => match solver {
            SolverChoice::Spectral { .. } => SPECTRAL_EPS.to_vec(),
            SolverChoice::Fem { .. } => FEM_EPS.to_vec(),
        },
    };
    if eps_list.is_empty() {
        return Err(invalid("cloak.epsilon_list", "must not be empty"));
    }
    if let Some(e) = eps_list.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(invalid("cloak.epsilon_list", format!("{e} must lie in (0, 1)")));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("cloak.epsilon_list", "must be strictly decreasing"));
    }

    match command {
        Command::CloakSweep | Command::GeneralCloak if map == CloakMap::Blowup => {
            return Err(invalid("cloak.map", format!("{} sweeps the regularized map", command.name())));
        }
        Command::Pushforward if map == CloakMap::Blowup && epsilon != 0.0 => {
            return Err(invalid("cloak.epsilon", "the blowup map is the ideal cloak (epsilon = 0)"));
        }
        Command::Pushforward if map == CloakMap::Regularized && epsilon == 0.0 => {
            return Err(invalid("cloak.epsilon", "the regularized map needs epsilon > 0"));
        }
        Command::VerifyThm2 if epsilon != 0.0 => {
            return Err(invalid("cloak.epsilon", "verify-thm2 solves the ideal cloak (epsilon = 0)"));
        }
        Command::VerifyThm2 if !g_identity => {
            return Err(invalid("cloak.G", "verify-thm2 needs G = identity"));
        }
        Command::EnergyDecay if !(background.field.is_radial && g_identity) => {
            return Err(invalid("background.A", "energy-decay needs a radial background and G = identity"));
        }
        _ => {}
    }

    let boundary = match &doc.boundary {
        None => SourceSpec::None,
        Some(_) if command != Command::VerifyThm2 => {
            return Err(invalid("boundary", "only used by verify-thm2"));
        }
        Some(s) => SourceSpec::parse(s).map_err(|e| invalid("boundary", e))?,
    };
    let radii = match (&doc.mesh, command) {
        (Some(_), c) if c != Command::Mesh => return Err(invalid("mesh", "only used by the mesh command")),
        (Some(md), _) => {
            if md.radii.is_empty() || md.radii.windows(2).any(|w| !(w[1] > w[0])) || !(md.radii[0] > 0.0) {
                return Err(invalid("mesh.radii", "must be positive and strictly increasing"));
            }
            md.radii.clone()
        }
        (None, _) => vec![1.0, 2.0],
    };

    let scenario = Scenario { omega: doc.omega, m, background, epsilon, g, interior, solver };
    scenario.validate().map_err(|e| match e {
        tocloak::Error::InvalidParameter(msg) if msg.contains("source") => invalid("background.source", msg),
        other => CliError::Config(other.to_string()),
    })?;
    let output_path = doc.output.unwrap_or_else(|| PathBuf::from(format!("{}.csv", command.name())));
    Ok(RunConfig {
        command,
        scenario,
        map,
        eps_list,
        boundary,
        radii,
        output_path,
        seed: doc.seed.unwrap_or(DEFAULT_SEED),
    })
}

fn medium(doc: &MediumDoc, key: &str, m: usize, radius: f64, base: &Path) -> Result<Medium, CliError> {
    let a = doc.a.as_deref().unwrap_or("identity");
    let b = doc.b.as_deref().unwrap_or("identity");
    let field = parse_coefficients(a, b, m, radius, base).map_err(|(which, msg)| invalid(&format!("{key}.{which}"), msg))?;
    let src = SourceSpec::parse(doc.source.as_deref().unwrap_or("none")).map_err(|e| invalid(&format!("{key}.source"), e))?;
    Medium::new(field, parse_source(&src, m)).map_err(|e| invalid(key, e))
}

fn g_map(doc: Option<&GDoc>) -> Result<DiffeoMap, CliError> {
    let Some(g) = doc else { return Ok(identity_map(2.0)) };
    let unexpected = |field: &str| invalid(&format!("cloak.G.{field}"), format!("not a parameter of G type {:?}", g.kind));
    match g.kind.as_str() {
        "identity" | "ellipse" => {
            if g.factor.is_some() {
                return Err(unexpected("factor"));
            }
            if g.matrix.is_some() {
                return Err(unexpected("matrix"));
            }
            Ok(if g.kind == "identity" { identity_map(2.0) } else { ellipse_map() })
        }
        "scaling" => {
            if g.matrix.is_some() {
                return Err(unexpected("matrix"));
            }
            let f = g.factor.ok_or_else(|| invalid("cloak.G.factor", "required for scaling"))?;
            scaling_map(f).map_err(|e| invalid("cloak.G.factor", e))
        }
        "linear" => {
            if g.factor.is_some() {
                return Err(unexpected("factor"));
            }
            let [a, b, c, d] = g.matrix.ok_or_else(|| invalid("cloak.G.matrix", "required for linear"))?;
            if !(a * d - b * c > 0.0) {
                return Err(invalid("cloak.G.matrix", "must have positive determinant"));
            }
            DiffeoMap::linear(Mat2::new(a, b, c, d), 2.0, "linear").map_err(|e| invalid("cloak.G.matrix", e))
        }
        other => Err(invalid("cloak.G.type", format!("unknown map {other:?} (identity, scaling, ellipse, linear)"))),
    }
}

fn solver(doc: &SolverDoc) -> Result<SolverChoice, CliError> {
    match doc.kind.as_str() {
        "spectral" => {
            if doc.h.is_some() {
                return Err(invalid("solver.h", "not a parameter of the spectral solver"));
            }
            let n_max = doc.n_max.unwrap_or(DEFAULT_N_MAX);
            if n_max == 0 {
                return Err(invalid("solver.n_max", "must be at least 1"));
            }
            Ok(SolverChoice::Spectral { n_max })
        }
        "fem" => {
            if doc.n_max.is_some() {
                return Err(invalid("solver.n_max", "not a parameter of the fem solver"));
            }
            let h = doc.h.unwrap_or(DEFAULT_H);
            if !(h > 0.0 && h <= 0.5) {
                return Err(invalid("solver.h", format!("{h} must lie in (0, 0.5]")));
            }
            Ok(SolverChoice::Fem { h })
        }
        other => Err(invalid("solver.type", format!("unknown solver {other:?} (spectral, fem)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        parse_config_str(text, Path::new("."))
    }

    fn config_error(text: &str) -> String {
        match parse(text) {
            Err(CliError::Config(msg)) => msg,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_sweep_gets_defaults() {
        let c = parse(r#"{"command": "cloak-sweep"}"#).unwrap();
        assert_eq!(c.scenario.omega, 1.0);
        assert_eq!(c.scenario.m, 1);
        assert_eq!(c.scenario.solver, SolverChoice::Spectral { n_max: 16 });
        assert_eq!(c.eps_list, SPECTRAL_EPS.to_vec());
        assert_eq!(c.output_path, PathBuf::from("cloak-sweep.csv"));
        assert_eq!(c.seed, DEFAULT_SEED);
    }

    #[test]
    fn unknown_keys_are_named() {
        assert!(config_error(r#"{"command": "cloak-sweep", "omegaa": 1.0}"#).contains("omegaa"));
        let nested = config_error(r#"{"command": "cloak-sweep", "cloak": {"epsilom": 0.1}}"#);
        assert!(nested.contains("cloak.epsilom"), "{nested}");
        let g = config_error(r#"{"command": "general-cloak", "cloak": {"G": {"type": "scaling", "factr": 2}}}"#);
        assert!(g.contains("cloak.G.factr"), "{g}");
    }

    #[test]
    fn invalid_values_are_named() {
        for (doc, key) in [
            (r#"{"command": "cloak-sweep", "cloak": {"epsilon": -0.1}}"#, "cloak.epsilon"),
            (r#"{"command": "cloak-sweep", "omega": -1}"#, "omega"),
            (r#"{"command": "cloak-sweep", "m": 0}"#, "m"),
            (r#"{"command": "cloak-sweep", "cloak": {"epsilon_list": [0.01, 0.1]}}"#, "cloak.epsilon_list"),
            (r#"{"command": "cloak-sweep", "solver": {"type": "spectral", "h": 0.1}}"#, "solver.h"),
            (r#"{"command": "cloak-sweep", "solver": {"type": "fem", "h": 0}}"#, "solver.h"),
            (r#"{"command": "cloak-sweep", "solver": {"type": "galerkin"}}"#, "solver.type"),
            (r#"{"command": "cloak-sweep", "background": {"A": "constant:-1"}}"#, "background.A"),
            (r#"{"command": "cloak-sweep", "m": 2, "interior": {"B": "diag:1,2,3"}}"#, "interior.B"),
            (r#"{"command": "cloak-sweep", "background": {"source": "gaussian:1,2"}}"#, "background.source"),
            (r#"{"command": "cloak-sweep", "background": {"source": "bump:1"}}"#, "background.source"),
            (r#"{"command": "cloak-sweep", "cloak": {"G": {"type": "shear"}}}"#, "cloak.G.type"),
            (r#"{"command": "cloak-sweep", "cloak": {"G": {"type": "ellipse"}}, "solver": {"type": "spectral"}}"#, "solver.type"),
            (r#"{"command": "cloak-sweep", "cloak": {"map": "blowup"}}"#, "cloak.map"),
            (r#"{"command": "verify-thm2", "cloak": {"epsilon": 0.1}}"#, "cloak.epsilon"),
            (r#"{"command": "mesh", "mesh": {"radii": [2, 1]}}"#, "mesh.radii"),
            (r#"{"command": "dtn", "boundary": "none"}"#, "boundary"),
            (r#"{"command": "mesh", "solver": {"type": "spectral"}}"#, "solver.type"),
        ] {
            let msg = config_error(doc);
            assert!(msg.starts_with(key), "{doc}: {msg}");
        }
    }

    #[test]
    fn malformed_and_missing_documents_are_config_errors() {
        assert!(matches!(parse("{"), Err(CliError::Config(_))));
        assert!(config_error(r#"{"omega": 1}"#).contains("command"));
        assert!(config_error(r#"{"command": "plot"}"#).contains("command"));
        assert!(matches!(parse_config(Path::new("/nonexistent/run.json")), Err(CliError::Config(_))));
    }

    #[test]
    fn fem_commands_default_to_fem() {
        let c = parse(r#"{"command": "general-cloak", "cloak": {"G": {"type": "scaling", "factor": 2}}}"#).unwrap();
        assert_eq!(c.scenario.solver, SolverChoice::Fem { h: DEFAULT_H });
        assert_eq!(c.eps_list, FEM_EPS.to_vec());
        let e = parse(r#"{"command": "energy-decay"}"#).unwrap();
        assert_eq!(e.eps_list, ENERGY_EPS.to_vec());
    }
}
