//! Dirichlet solves, variational boundary fluxes and DtN matrices.

use std::collections::HashMap;
use std::sync::Arc;

use crate::coeffs::CoefficientField;
use crate::fem::assemble::{assemble_triangles, AssembledSystem, FieldSolution};
use crate::fem::mesh::{BoundaryTag, Mesh};
use crate::linalg::{SparseLu, SparseMatrix};
use crate::source::SourceField;
use crate::{CMat, CVec, Error, Result, C64};

/// Relative residual accepted from the direct solver.
pub const SOLVE_TOL: f64 = 1e-10;

/// Factorized interior block of a system with all outer-boundary unknowns prescribed.
pub struct DirichletSolver<'a> {
    system: &'a AssembledSystem,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    s_ii: SparseMatrix,
    s_ib: SparseMatrix,
    lu: SparseLu,
}

impl<'a> DirichletSolver<'a> {
    pub fn new(system: &'a AssembledSystem) -> Result<Self> {
        let m = system.m;
        let n = system.matrix.nrows();
        let mut is_boundary = vec![false; n];
        let mut boundary = Vec::with_capacity(system.dirichlet_nodes.len() * m);
        for &node in &system.dirichlet_nodes {
            for p in 0..m {
                is_boundary[node * m + p] = true;
                boundary.push(node * m + p);
            }
        }
        let interior: Vec<usize> = (0..n).filter(|&i| !is_boundary[i]).collect();
        let s_ii = system.matrix.select(&interior, &interior);
        let s_ib = system.matrix.select(&interior, &boundary);
        let lu = s_ii.lu()?;
        Ok(DirichletSolver { system, interior, boundary, s_ii, s_ib, lu })
    }

    /// Number of trace unknowns (`boundary nodes * m`, node-major).
    pub fn trace_len(&self) -> usize {
        self.boundary.len()
    }

    /// Full nodal vectors for the given trace columns; `with_source` adds the load.
    pub fn solve_columns(&self, traces: &CMat, with_source: bool) -> Result<CMat> {
        if traces.nrows() != self.boundary.len() {
            return Err(Error::Dimension(format!(
                "trace has {} entries, expected {}",
                traces.nrows(),
                self.boundary.len()
            )));
        }
        let k = traces.ncols();
        let mut rhs = CMat::zeros(self.interior.len(), k);
        for c in 0..k {
            let g = traces.column(c).into_owned();
            let mut r = -self.s_ib.mul_vec(&g);
            if with_source {
                for (ii, &i) in self.interior.iter().enumerate() {
                    r[ii] += self.system.load[i];
                }
            }
            rhs.set_column(c, &r);
        }
        let x = self.lu.solve_columns(&rhs);
        let mut full = CMat::zeros(self.system.matrix.nrows(), k);
        for c in 0..k {
            let xc = x.column(c).into_owned();
            if xc.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver("Dirichlet problem is singular".into()));
            }
            let rc = rhs.column(c).into_owned();
            let res = (self.s_ii.mul_vec(&xc) - &rc).norm();
            let scale = rc.norm().max(1e-300);
            if res > SOLVE_TOL * scale {
                return Err(Error::Solver(format!(
                    "reduced Dirichlet system residual {:.3e} exceeds tolerance (near-singular)",
                    res / scale
                )));
            }
            for (ii, &i) in self.interior.iter().enumerate() {
                full[(i, c)] = xc[ii];
            }
            for (bi, &i) in self.boundary.iter().enumerate() {
                full[(i, c)] = traces[(bi, c)];
            }
        }
        Ok(full)
    }

    pub fn solve(&self, trace: &CVec, with_source: bool) -> Result<CVec> {
        let t = CMat::from_column_slice(trace.len(), 1, trace.as_slice());
        Ok(self.solve_columns(&t, with_source)?.column(0).into_owned())
    }

    /// Boundary rows of `S u - F` (the flux functional paired with boundary hats).
    pub fn flux_functional(&self, u: &CVec, with_source: bool) -> CVec {
        let mut out = CVec::zeros(self.boundary.len());
        for (bi, &i) in self.boundary.iter().enumerate() {
            let mut v: C64 = self.system.matrix.row(i).map(|(j, a)| a * u[j]).sum();
            if with_source {
                v -= self.system.load[i];
            }
            out[bi] = v;
        }
        out
    }
}

/// Solve with prescribed trace on the outer boundary (node-major, `m` entries per node,
/// nodes in `system.dirichlet_nodes` order).
pub fn solve_dirichlet(system: &AssembledSystem, trace: &CVec) -> Result<FieldSolution> {
    let solver = DirichletSolver::new(system)?;
    let values = solver.solve(trace, true)?;
    Ok(FieldSolution { mesh: system.mesh.clone(), m: system.m, values })
}

/// P1 mass matrix of the outer boundary curve over trace unknowns.
pub fn boundary_mass(mesh: &Mesh, nodes: &[usize], m: usize) -> CMat {
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let mut out = CMat::zeros(nodes.len() * m, nodes.len() * m);
    for (e, tag) in &mesh.boundary_edges {
        if *tag != BoundaryTag::Outer {
            continue;
        }
        let (Some(&a), Some(&b)) = (pos.get(&e[0]), pos.get(&e[1])) else { continue };
        let len = (mesh.nodes[e[0]] - mesh.nodes[e[1]]).norm();
        for p in 0..m {
            for (i, j, w) in [(a, a, 2.0), (b, b, 2.0), (a, b, 1.0), (b, a, 1.0)] {
                out[(i * m + p, j * m + p)] += C64::new(len * w / 6.0, 0.0);
            }
        }
    }
    out
}

/// DtN in weak form: column `j` holds the boundary flux functional of the
/// solution with trace `e_j` (node-major trace unknowns).
#[derive(Clone, Debug)]
pub struct BoundaryDtN {
    pub omega: f64,
    pub m: usize,
    pub nodes: Vec<usize>,
    pub matrix: CMat,
    pub mass: CMat,
    /// Flux functional of the zero-trace solution with the source.
    pub offset: CVec,
}

impl BoundaryDtN {
    /// Nodal flux values `M^{-1} r` for the functional `r`.
    pub fn nodal_flux(&self, functional: &CVec) -> Option<CVec> {
        self.mass.clone().lu().solve(functional)
    }
}

/// Full DtN matrix (one Dirichlet solve per trace unknown).
pub fn dtn_matrix(system: &AssembledSystem) -> Result<BoundaryDtN> {
    let solver = DirichletSolver::new(system)?;
    let nb = solver.trace_len();
    let eye = CMat::identity(nb, nb);
    let u = solver.solve_columns(&eye, false)?;
    let mut matrix = CMat::zeros(nb, nb);
    for c in 0..nb {
        matrix.set_column(c, &solver.flux_functional(&u.column(c).into_owned(), false));
    }
    let u0 = solver.solve(&CVec::zeros(nb), true)?;
    let offset = solver.flux_functional(&u0, true);
    Ok(BoundaryDtN {
        omega: system.omega,
        m: system.m,
        nodes: system.dirichlet_nodes.clone(),
        mass: boundary_mass(&system.mesh, &system.dirichlet_nodes, system.m),
        matrix,
        offset,
    })
}

/// Angular parameter of each outer boundary node: the generator angle when the
/// mesh has rings (so mapped meshes keep their reference parametrization),
/// otherwise the polar angle of the node.
pub fn boundary_angles(mesh: &Mesh, nodes: &[usize]) -> Vec<f64> {
    let mut from_rings: HashMap<usize, f64> = HashMap::new();
    if let Some(ring) = mesh.rings.last() {
        for (&n, &a) in ring.nodes.iter().zip(&ring.angles) {
            from_rings.insert(n, a);
        }
    }
    nodes
        .iter()
        .map(|n| from_rings.get(n).copied().unwrap_or_else(|| mesh.nodes[*n][1].atan2(mesh.nodes[*n][0])))
        .collect()
}

/// DtN restricted to Fourier traces `e^{i n theta}` for the listed modes, in the
/// basis normalized by the boundary mass: entry `((a,p),(b,q))` is
/// `<e_a (x) d_p, Lambda (e_b (x) d_q)> / sqrt(|e_a|_M |e_b|_M)`.
/// For radial media the diagonal approximates the mode eigenvalues `lambda_n`.
#[derive(Clone, Debug)]
pub struct ProjectedDtn {
    pub omega: f64,
    pub m: usize,
    pub modes: Vec<i64>,
    pub matrix: CMat,
    pub offset: CVec,
}

impl ProjectedDtn {
    pub fn block(&self, n: i64) -> Option<CMat> {
        let k = self.modes.iter().position(|&x| x == n)?;
        Some(self.matrix.view((k * self.m, k * self.m), (self.m, self.m)).into_owned())
    }

    /// Spectral norm of the projected operator.
    pub fn norm(&self) -> f64 {
        spectral_norm(&self.matrix)
    }

    /// `|P (self - other) P| / |P other P|` in the spectral norm.
    pub fn relative_difference(&self, other: &ProjectedDtn) -> f64 {
        spectral_norm(&(&self.matrix - &other.matrix)) / spectral_norm(&other.matrix)
    }

    /// Energy of the off-diagonal (mode-coupling) part of column block `n` relative to its diagonal block.
    pub fn off_mode_ratio(&self, n: i64) -> Option<f64> {
        let k = self.modes.iter().position(|&x| x == n)?;
        let col = self.matrix.columns(k * self.m, self.m);
        let (mut on, mut off) = (0.0, 0.0);
        for r in 0..col.nrows() {
            let e: f64 = col.row(r).iter().map(|v| v.norm_sqr()).sum();
            if r / self.m == k {
                on += e;
            } else {
                off += e;
            }
        }
        Some(off / on)
    }
}

pub fn spectral_norm(a: &CMat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Apply the DtN of `system` to Fourier traces only (one solve per mode and component).
pub fn project_dtn(system: &AssembledSystem, modes: &[i64]) -> Result<ProjectedDtn> {
    let m = system.m;
    let solver = DirichletSolver::new(system)?;
    let nodes = &system.dirichlet_nodes;
    let angles = boundary_angles(&system.mesh, nodes);
    let mass = boundary_mass(&system.mesh, nodes, m);
    let nb = nodes.len() * m;
    let k = modes.len() * m;
    let mut basis = CMat::zeros(nb, k);
    for (a, &n) in modes.iter().enumerate() {
        for p in 0..m {
            for (i, &t) in angles.iter().enumerate() {
                basis[(i * m + p, a * m + p)] = C64::from_polar(1.0, n as f64 * t);
            }
        }
    }
    let norms: Vec<f64> = (0..k)
        .map(|c| {
            let e = basis.column(c);
            (e.adjoint() * &mass * e)[(0, 0)].re.sqrt()
        })
        .collect();
    let u = solver.solve_columns(&basis, false)?;
    let mut matrix = CMat::zeros(k, k);
    for c in 0..k {
        let r = solver.flux_functional(&u.column(c).into_owned(), false);
        for a in 0..k {
            matrix[(a, c)] = basis.column(a).dotc(&r) / (norms[a] * norms[c]);
        }
    }
    let u0 = solver.solve(&CVec::zeros(nb), true)?;
    let r0 = solver.flux_functional(&u0, true);
    let offset = CVec::from_fn(k, |a, _| basis.column(a).dotc(&r0) / norms[a]);
    Ok(ProjectedDtn { omega: system.omega, m, modes: modes.to_vec(), matrix, offset })
}

/// Total flux `oint nu . A grad w` through the tagged curve, as the Green
/// residual `Q(w, phi) - <f, phi>` with `phi` the sum of the hat functions of
/// the curve's nodes, assembled over the triangles inside the curve.
pub fn flux_integral(
    w: &FieldSolution,
    field: &CoefficientField,
    omega: f64,
    source: &SourceField,
    tag: BoundaryTag,
) -> Result<CVec> {
    let mesh = &w.mesh;
    let nodes = mesh.tagged_nodes(tag);
    if nodes.is_empty() {
        return Err(Error::Mesh(format!("no edges tagged '{}'", tag.as_str())));
    }
    let radius = nodes.iter().map(|&i| mesh.nodes[i].norm()).sum::<f64>() / nodes.len() as f64;
    let triangles: Vec<usize> = match tag {
        BoundaryTag::Outer => (0..mesh.triangles.len()).collect(),
        BoundaryTag::Interface => (0..mesh.triangles.len())
            .filter(|&t| mesh.centroid(t).norm() < radius)
            .collect(),
    };
    let sys = assemble_triangles(mesh, field, omega, source, &triangles)?;
    let m = w.m;
    let mut out = CVec::zeros(m);
    for &node in &nodes {
        for p in 0..m {
            let i = node * m + p;
            let v: C64 = sys.matrix.row(i).map(|(j, a)| a * w.values[j]).sum();
            out[p] += v - sys.load[i];
        }
    }
    Ok(out)
}

/// Shared handle used by callers that build meshes once.
pub fn shared(mesh: Mesh) -> Arc<Mesh> {
    Arc::new(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Domain;
    use crate::fem::assemble::assemble;
    use crate::fem::mesh::generate_disk_mesh;
    use crate::Point;

    fn trace_of<F: Fn(Point) -> C64>(sys: &AssembledSystem, f: F) -> CVec {
        CVec::from_iterator(sys.dirichlet_nodes.len(), sys.dirichlet_nodes.iter().map(|&i| f(sys.mesh.nodes[i])))
    }

    fn mms_error(h: f64) -> f64 {
        let mesh = Arc::new(generate_disk_mesh(&[1.0], h).unwrap());
        let field = CoefficientField::identity(Domain::Disk { radius: 1.0 }, 1);
        // u = sin(x) cos(y): -Lap u = 2u, so f = 2u - u = u at omega = 1
        let exact = |p: Point| C64::new(p[0].sin() * p[1].cos(), 0.0);
        let src = SourceField::from_fn(1, crate::source::Support::Everywhere, move |p| {
            Ok(CVec::from_element(1, C64::new(p.y[0].sin() * p.y[1].cos(), 0.0)))
        });
        let sys = assemble(&mesh, &field, 1.0, &src).unwrap();
        let u = solve_dirichlet(&sys, &trace_of(&sys, exact)).unwrap();
        let ex = FieldSolution::interpolate(&mesh, 1, |p| Ok(CVec::from_element(1, exact(p)))).unwrap();
        FieldSolution { values: &u.values - &ex.values, ..u }.l2_norm()
    }

    #[test]
    fn manufactured_solution_converges_quadratically() {
        let (e1, e2) = (mms_error(0.1), mms_error(0.05));
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let mesh = Arc::new(generate_disk_mesh(&[2.0], 0.3).unwrap());
        let field = CoefficientField::identity(Domain::Disk { radius: 2.0 }, 2);
        let sys = assemble(&mesh, &field, 1.0, &SourceField::zero(2)).unwrap();
        let u = solve_dirichlet(&sys, &CVec::zeros(sys.dirichlet_nodes.len() * 2)).unwrap();
        assert_eq!(u.values.norm(), 0.0);
    }

    #[test]
    fn harmonic_polynomial_is_reproduced() {
        let mut errs = Vec::new();
        for h in [0.2, 0.1] {
            let mesh = Arc::new(generate_disk_mesh(&[2.0], h).unwrap());
            let field = CoefficientField::identity(Domain::Disk { radius: 2.0 }, 1);
            let sys = assemble(&mesh, &field, 0.0, &SourceField::zero(1)).unwrap();
            let exact = |p: Point| C64::new((p[0] * p[0] - p[1] * p[1]) / 4.0, 0.0);
            let u = solve_dirichlet(&sys, &trace_of(&sys, exact)).unwrap();
            let err = mesh
                .nodes
                .iter()
                .enumerate()
                .map(|(i, &p)| (u.values[i] - exact(p)).norm())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < 1e-2 && errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn dtn_annihilates_constants_and_is_symmetric() {
        let mesh = Arc::new(generate_disk_mesh(&[1.0, 2.0], 0.3).unwrap());
        let field = CoefficientField::identity(Domain::Disk { radius: 2.0 }, 1);
        let sys = assemble(&mesh, &field, 0.0, &SourceField::zero(1)).unwrap();
        let d = dtn_matrix(&sys).unwrap();
        let ones = CVec::from_element(d.matrix.ncols(), C64::new(1.0, 0.0));
        assert!((&d.matrix * &ones).norm() < 1e-10);
        let asym = crate::max_modulus(&(&d.matrix - d.matrix.transpose()));
        assert!(asym < 1e-10 * crate::max_modulus(&d.matrix));
    }

    #[test]
    fn flux_of_quadratic_is_four_pi() {
        let mut errs = Vec::new();
        for h in [0.1, 0.05] {
            let mesh = Arc::new(generate_disk_mesh(&[1.0], h).unwrap());
            let field = CoefficientField::identity(Domain::Disk { radius: 1.0 }, 1);
            let w = FieldSolution::interpolate(&mesh, 1, |p| Ok(CVec::from_element(1, C64::new(p.norm_squared(), 0.0)))).unwrap();
            let f = SourceField::from_fn(1, crate::source::Support::Everywhere, |_| {
                Ok(CVec::from_element(1, C64::new(-4.0, 0.0)))
            });
            let flux = flux_integral(&w, &field, 0.0, &f, BoundaryTag::Outer).unwrap();
            errs.push((flux[0].re - 4.0 * std::f64::consts::PI).abs());
            let c = FieldSolution::interpolate(&mesh, 1, |_| Ok(CVec::from_element(1, C64::new(3.0, 0.0)))).unwrap();
            let flux = flux_integral(&c, &field, 0.0, &SourceField::zero(1), BoundaryTag::Outer).unwrap();
            assert!(flux[0].norm() < 1e-12);
        }
        assert!(errs[1] < 0.05 && errs[0] / errs[1] > 3.0, "{errs:?}");
    }
}
