//! Ideal cloak through the decoupled formulation: the pulled-forward
//! reference solution outside the unit circle, a constant-trace interior
//! solution inside it, and the hidden interface conditions.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::fem::assemble::{assemble, FieldSolution, Locator};
use crate::fem::fredholm::{
    solve_compatible, solve_constant_trace, ConstantTraceOutcome, ConstantTraceSolution, ConstantTraceSystem,
    FredholmOptions, FredholmReport,
};
use crate::fem::mesh::{generate_disk_mesh, generate_layered_mesh, BoundaryTag, Mesh, Ring};
use crate::fem::solve::{flux_integral, solve_dirichlet};
use crate::verify::scenario::{is_identity, Scenario};
use crate::xform::blowup_map;
use crate::{CMat, CVec, Error, Point, Result};

/// Interior problem on the unit disk, before any load override.
pub struct InteriorProblem {
    pub system: ConstantTraceSystem,
    /// Present when the problem is not uniquely solvable.
    pub report: Option<FredholmReport>,
    solution: Option<ConstantTraceSolution>,
}

impl InteriorProblem {
    pub fn new(scenario: &Scenario, h: f64, opts: &FredholmOptions) -> Result<Self> {
        let mesh = Arc::new(generate_disk_mesh(&[1.0], h)?);
        let (system, outcome) =
            solve_constant_trace(&mesh, &scenario.interior.field, scenario.omega, &scenario.interior.source, opts)?;
        Ok(match outcome {
            ConstantTraceOutcome::Solved(s) => InteriorProblem { system, report: None, solution: Some(s) },
            ConstantTraceOutcome::NotUnique(r) => InteriorProblem { system, report: Some(r), solution: None },
        })
    }

    /// Solve with the assembled load or with `load` (condensed, see
    /// [`ConstantTraceSystem::load`]). A non-unique problem with an
    /// incompatible load fails with [`Error::Incompatible`].
    pub fn solve(&self, load: Option<&CVec>) -> Result<ConstantTraceSolution> {
        match (&self.report, load, &self.solution) {
            (None, None, Some(s)) => Ok(s.clone()),
            (None, Some(l), _) => {
                let unique = FredholmReport::trivial(self.system.dim());
                solve_compatible(&self.system, &unique, l)
            }
            (Some(r), l, _) => solve_compatible(&self.system, r, l.unwrap_or(&self.system.load)),
            (None, None, None) => unreachable!("unique interior problem without a solution"),
        }
    }

    /// `load` with its components along the adjoint null vectors removed.
    pub fn compatible_part(&self, load: &CVec) -> CVec {
        let Some(r) = &self.report else { return load.clone() };
        let adj: Vec<CVec> = r.adjoint_null_basis.iter().map(|w| self.system.condensed(w)).collect();
        let q = CMat::from_columns(&adj).qr().q();
        let mut out = load.clone();
        for c in 0..adj.len() {
            let b = q.column(c);
            let a = b.dotc(&out);
            out -= b * a;
        }
        out
    }
}

/// Reference solution on the disk of radius 2 and its pull-forward to the
/// cloaked annulus.
#[derive(Clone, Debug)]
pub struct ExteriorSolution {
    pub reference: FieldSolution,
    /// Field on `1 <= |y| <= 2`; the ring at `|y| = 1` carries the reference value at the origin.
    pub field: FieldSolution,
}

/// Part of a layered disk mesh with an interface ring at `|y| = 1` lying
/// outside the unit circle.
fn exterior_mesh(h: f64) -> Result<Mesh> {
    let disk = generate_layered_mesh(&[(1.0, h), (2.0, h)])?;
    let first = disk
        .rings
        .iter()
        .position(|r| (r.radius - 1.0).abs() < 1e-12)
        .ok_or_else(|| Error::Mesh("no ring on the unit circle".into()))?;
    let mut index = vec![usize::MAX; disk.node_count()];
    let mut nodes = Vec::new();
    for r in &disk.rings[first..] {
        for &i in &r.nodes {
            index[i] = nodes.len();
            nodes.push(disk.nodes[i]);
        }
    }
    let triangles: Vec<[usize; 3]> = disk
        .triangles
        .iter()
        .filter(|t| t.iter().all(|&i| index[i] != usize::MAX))
        .map(|t| t.map(|i| index[i]))
        .collect();
    let boundary_edges = disk.boundary_edges.iter().map(|(e, t)| (e.map(|i| index[i]), *t)).collect();
    let rings = disk.rings[first..]
        .iter()
        .map(|r| Ring { radius: r.radius, nodes: r.nodes.iter().map(|&i| index[i]).collect(), angles: r.angles.clone() })
        .collect();
    Ok(Mesh { nodes, triangles, boundary_edges, h, rings })
}

/// Solve the reference problem with trace `boundary` on `|x| = 2` and pull
/// the nodal values forward.
pub fn exterior_solve<B>(scenario: &Scenario, h: f64, boundary: B) -> Result<ExteriorSolution>
where
    B: Fn(Point) -> CVec,
{
    let m = scenario.m;
    let mesh = Arc::new(generate_disk_mesh(&[2.0], h)?);
    let sys = assemble(&mesh, &scenario.background.field, scenario.omega, &scenario.background.source)?;
    let mut trace = CVec::zeros(sys.dirichlet_nodes.len() * m);
    for (k, &node) in sys.dirichlet_nodes.iter().enumerate() {
        let g = boundary(mesh.nodes[node]);
        if g.len() != m {
            return Err(Error::Dimension(format!("boundary data has {} components, expected {m}", g.len())));
        }
        trace.rows_mut(k * m, m).copy_from(&g);
    }
    let reference = solve_dirichlet(&sys, &trace)?;
    let ext = Arc::new(exterior_mesh(h)?);
    let loc = Locator::new(&mesh);
    let f = blowup_map();
    let origin = reference.node_value(0);
    let on_circle = ext.rings[0].nodes.len();
    let mut values = CVec::zeros(ext.node_count() * m);
    for (i, &y) in ext.nodes.iter().enumerate() {
        let v = if i < on_circle { origin.clone() } else { reference.eval_with(&loc, f.inverse(y)?)? };
        values.rows_mut(i * m, m).copy_from(&v);
    }
    Ok(ExteriorSolution { reference, field: FieldSolution { mesh: ext, m, values } })
}

#[derive(Clone, Debug)]
pub struct DecoupledSolution {
    pub exterior: ExteriorSolution,
    pub interior: ConstantTraceSolution,
    /// Exterior trace on the interface (the reference value at the origin).
    pub outer_trace: CVec,
    /// `outer_trace - c0`.
    pub jump: CVec,
    pub elapsed: Duration,
}

fn check_decoupled(scenario: &Scenario) -> Result<()> {
    scenario.validate()?;
    if scenario.epsilon != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "decoupled route needs epsilon = 0 (got {})",
            scenario.epsilon
        )));
    }
    if !is_identity(&scenario.g) {
        return Err(Error::InvalidParameter(format!("decoupled route needs G = identity (got {})", scenario.g.name)));
    }
    Ok(())
}

/// Ideal cloak with `epsilon = 0` and outer trace `boundary`.
pub fn decoupled_cloak_solve<B>(scenario: &Scenario, h: f64, boundary: B) -> Result<DecoupledSolution>
where
    B: Fn(Point) -> CVec,
{
    decoupled_cloak_solve_with_load(scenario, h, boundary, None, &FredholmOptions::default())
}

/// As [`decoupled_cloak_solve`], optionally replacing the condensed interior load.
pub fn decoupled_cloak_solve_with_load<B>(
    scenario: &Scenario,
    h: f64,
    boundary: B,
    interior_load: Option<&CVec>,
    opts: &FredholmOptions,
) -> Result<DecoupledSolution>
where
    B: Fn(Point) -> CVec,
{
    check_decoupled(scenario)?;
    let start = Instant::now();
    let exterior = exterior_solve(scenario, h, boundary)?;
    let interior = InteriorProblem::new(scenario, h, opts)?.solve(interior_load)?;
    let outer_trace = exterior.reference.values.rows(0, scenario.m).into_owned();
    let jump = &outer_trace - &interior.c0;
    Ok(DecoupledSolution { exterior, interior, outer_trace, jump, elapsed: start.elapsed() })
}

#[derive(Clone, Debug)]
pub struct HiddenBcReport {
    /// Largest `|w - c0|` over interior boundary nodes.
    pub trace_constant_deviation: f64,
    /// Modulus of the net conormal flux of `w` through the unit circle.
    pub net_flux_norm: f64,
    /// `L^2` norm of the angular difference quotient of the exterior field on
    /// its first ring outside the interface.
    pub angular_derivative_norm: f64,
    pub jump_value: CVec,
}

pub fn hidden_bc_report(u: &DecoupledSolution, scenario: &Scenario) -> Result<HiddenBcReport> {
    let w = &u.interior.w;
    let m = w.m;
    let mut dev: f64 = 0.0;
    for node in w.mesh.boundary_nodes() {
        dev = dev.max((w.node_value(node) - &u.interior.c0).norm());
    }
    let flux = flux_integral(w, &scenario.interior.field, scenario.omega, &scenario.interior.source, BoundaryTag::Outer)?;
    let ext = &u.exterior.field;
    let ring = ext.mesh.rings.get(1).ok_or_else(|| Error::Mesh("exterior mesh has no rings".into()))?;
    let k = ring.nodes.len();
    let mut s = 0.0;
    for i in 0..k {
        let d = ext.node_value(ring.nodes[(i + 1) % k]) - ext.node_value(ring.nodes[i]);
        s += d.norm_squared() * k as f64 / (2.0 * std::f64::consts::PI);
    }
    debug_assert_eq!(u.jump.len(), m);
    Ok(HiddenBcReport {
        trace_constant_deviation: dev,
        net_flux_norm: flux.norm(),
        angular_derivative_norm: s.sqrt(),
        jump_value: u.jump.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::SourceField;
    use crate::C64;

    fn ideal(m: usize) -> Scenario {
        Scenario::radial_default(m, 0.0)
    }

    fn zero(m: usize) -> impl Fn(Point) -> CVec {
        move |_| CVec::zeros(m)
    }

    #[test]
    fn zero_data_gives_zero() {
        let u = decoupled_cloak_solve(&ideal(1), 0.15, zero(1)).unwrap();
        assert_eq!(u.exterior.field.values.norm(), 0.0);
        assert_eq!(u.interior.c0.norm(), 0.0);
        assert_eq!(u.jump.norm(), 0.0);
    }

    #[test]
    fn first_mode_data_has_zero_interface_trace() {
        let u = decoupled_cloak_solve(&ideal(1), 0.1, |p| CVec::from_element(1, C64::from_polar(1.0, p[1].atan2(p[0]))))
            .unwrap();
        assert!(u.outer_trace.norm() < 1e-12, "{}", u.outer_trace);
        let inner = u.exterior.field.values.rows(0, u.exterior.field.mesh.rings[0].nodes.len());
        assert!(inner.norm() < 1e-12);
    }

    #[test]
    fn exterior_mesh_covers_the_annulus() {
        let ext = exterior_mesh(0.1).unwrap();
        let area: f64 = (0..ext.triangles.len()).map(|t| ext.triangle_area(t)).sum();
        assert!((area - 3.0 * std::f64::consts::PI).abs() < 0.01, "{area}");
        assert!(ext.nodes.iter().all(|p| p.norm() > 1.0 - 1e-12));
    }

    #[test]
    fn bump_source_gives_nonzero_jump_and_hidden_conditions() {
        let mut s = ideal(1);
        s.background.source = SourceField::bump(1, Point::new(0.8, 0.3), 0.4, 1.0);
        s.interior.source = SourceField::gaussian(1, Point::new(0.3, 0.2), 0.2, 1.0);
        let u = decoupled_cloak_solve(&s, 0.1, zero(1)).unwrap();
        let r = hidden_bc_report(&u, &s).unwrap();
        assert!(r.jump_value.norm() > 1e-3, "{r:?}");
        assert!(r.trace_constant_deviation <= 1e-10);
        assert!(r.net_flux_norm <= 1e-8 * u.interior.w.l2_norm(), "{r:?}");
    }

    #[test]
    fn compatibility_gates_the_solve_at_resonance() {
        const J11: f64 = 3.831705970207512;
        let mut s = ideal(1);
        s.omega = J11;
        let opts = FredholmOptions::default();
        let p = InteriorProblem::new(&s, 0.12, &opts).unwrap();
        let r = p.report.as_ref().expect("resonant interior");
        assert_eq!(r.null_dim, 3);
        let bad = p.system.load_of_field(&p.system.condensed(&r.null_basis[0]));
        let e = decoupled_cloak_solve_with_load(&s, 0.12, zero(1), Some(&bad), &opts);
        assert!(matches!(e, Err(Error::Incompatible(_))));
        let good = p.compatible_part(&CVec::from_fn(p.system.dim(), |i, _| C64::new((i as f64).sin(), 0.5)));
        let u = decoupled_cloak_solve_with_load(&s, 0.12, zero(1), Some(&good), &opts).unwrap();
        assert_eq!(u.interior.null_dim, 3);
    }

    #[test]
    fn rejects_positive_epsilon() {
        assert!(decoupled_cloak_solve(&ideal(1).with_epsilon(0.1), 0.2, zero(1)).is_err());
    }
}
