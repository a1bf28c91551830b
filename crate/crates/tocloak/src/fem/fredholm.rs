//! Interior problem over fields with constant outer trace, and its Fredholm alternative.
//!
//! All outer-boundary unknowns of component `p` are condensed into one shared
//! unknown, so the zero net flux condition is the natural condition of the
//! condensed system.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coeffs::CoefficientField;
use crate::fem::assemble::{assemble, lumped_mass, AssembledSystem, FieldSolution};
use crate::fem::mesh::Mesh;
use crate::fem::solve::SOLVE_TOL;
use crate::linalg::{SparseLu, SparseMatrix};
use crate::source::SourceField;
use crate::{CMat, CVec, Error, Result, C64};

/// Condensed system over the constant-trace subspace.
pub struct ConstantTraceSystem {
    pub full: AssembledSystem,
    /// Full unknown index -> condensed index.
    pub map: Vec<usize>,
    pub matrix: SparseMatrix,
    pub load: CVec,
    /// Lumped mass of each condensed unknown (a shared unknown gets the boundary total).
    pub mass: Vec<f64>,
}

impl ConstantTraceSystem {
    pub fn new(full: AssembledSystem) -> Self {
        let m = full.m;
        let n = full.matrix.nrows();
        let mut on_boundary = vec![false; n / m];
        for &node in &full.dirichlet_nodes {
            on_boundary[node] = true;
        }
        let mut map = vec![0; n];
        let mut next = 0;
        for (node, &b) in on_boundary.iter().enumerate() {
            if !b {
                for p in 0..m {
                    map[node * m + p] = next;
                    next += 1;
                }
            }
        }
        for (node, &b) in on_boundary.iter().enumerate() {
            if b {
                for p in 0..m {
                    map[node * m + p] = next + p;
                }
            }
        }
        let dim = next + m;
        let opt: Vec<Option<usize>> = map.iter().map(|&k| Some(k)).collect();
        let matrix = full.matrix.condense(&opt, dim);
        let mut load = CVec::zeros(dim);
        for (i, &k) in map.iter().enumerate() {
            load[k] += full.load[i];
        }
        let nodal = lumped_mass(&full.mesh);
        let mut mass = vec![0.0; dim];
        for (i, &k) in map.iter().enumerate() {
            mass[k] += nodal[i / m];
        }
        ConstantTraceSystem { full, map, matrix, load, mass }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn m(&self) -> usize {
        self.full.m
    }

    /// Indices of the shared trace unknowns.
    pub fn shared(&self) -> std::ops::Range<usize> {
        let d = self.dim();
        d - self.m()..d
    }

    /// Nodal field of a condensed vector.
    pub fn expand(&self, x: &CVec) -> FieldSolution {
        let values = CVec::from_iterator(self.map.len(), self.map.iter().map(|&k| x[k]));
        FieldSolution { mesh: self.full.mesh.clone(), m: self.m(), values }
    }

    /// Condensed vector of a field that is constant on the outer boundary.
    pub fn condensed(&self, w: &FieldSolution) -> CVec {
        let mut out = CVec::zeros(self.dim());
        for (i, &k) in self.map.iter().enumerate() {
            out[k] = w.values[i];
        }
        out
    }

    /// Condensed load of a full-space load vector (`P^T F`).
    pub fn restrict(&self, full_load: &CVec) -> CVec {
        let mut out = CVec::zeros(self.dim());
        for (i, &k) in self.map.iter().enumerate() {
            out[k] += full_load[i];
        }
        out
    }

    /// Condensed load whose field is `v` (lumped mass times values).
    pub fn load_of_field(&self, v: &CVec) -> CVec {
        CVec::from_fn(self.dim(), |k, _| v[k] * self.mass[k])
    }
}

#[derive(Clone, Debug)]
pub struct FredholmOptions {
    pub block: usize,
    pub iterations: usize,
    /// Singular values of the mass-scaled operator at or below
    /// `near_null_fraction * max(omega^2, 1)` count as null directions.
    pub near_null_fraction: f64,
    pub compatibility_tol: f64,
    pub seed: u64,
}

impl Default for FredholmOptions {
    fn default() -> Self {
        FredholmOptions { block: 8, iterations: 12, near_null_fraction: 0.1, compatibility_tol: 1e-8, seed: 7 }
    }
}

#[derive(Clone, Debug)]
pub struct FredholmReport {
    pub unique: bool,
    pub null_dim: usize,
    pub null_basis: Vec<FieldSolution>,
    pub adjoint_null_basis: Vec<FieldSolution>,
    /// `|<v_p, f>| <= tol |v_p| |f|` for each adjoint null vector.
    pub compatibility: Vec<bool>,
    /// Smallest singular values of the mass-scaled operator, ascending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    /// Condensed null and adjoint null vectors (columns, unit Euclidean norm).
    pub null_vectors: CMat,
    pub adjoint_null_vectors: CMat,
}

impl FredholmReport {
    /// Report of a uniquely solvable system with `n` condensed unknowns.
    pub fn trivial(n: usize) -> Self {
        FredholmReport {
            unique: true,
            null_dim: 0,
            null_basis: Vec::new(),
            adjoint_null_basis: Vec::new(),
            compatibility: Vec::new(),
            singular_values: Vec::new(),
            threshold: 0.0,
            null_vectors: CMat::zeros(n, 0),
            adjoint_null_vectors: CMat::zeros(n, 0),
        }
    }

    pub fn compatible(&self) -> bool {
        self.compatibility.iter().all(|&c| c)
    }
}

/// Mass-scaled operator `D^{-1/2} T D^{-1/2}` applied through a factorization
/// of a slightly shifted `T` (the shift keeps exactly singular systems factorizable).
struct Scaled<'a> {
    sys: &'a ConstantTraceSystem,
    lu: SparseLu,
    shift: f64,
    d_half: Vec<f64>,
}

impl<'a> Scaled<'a> {
    fn new(sys: &'a ConstantTraceSystem) -> Result<Self> {
        let d_half: Vec<f64> = sys.mass.iter().map(|d| d.sqrt()).collect();
        let scale = sys.full.omega.powi(2).max(1.0);
        let shift = 1e-9 * scale;
        let diag = SparseMatrix::from_triplets(
            sys.dim(),
            sys.dim(),
            sys.mass.iter().enumerate().map(|(i, &d)| (i, i, C64::new(0.0, d))).collect(),
        );
        let lu = sys.matrix.add_scaled(&diag, C64::new(shift, 0.0)).lu()?;
        Ok(Scaled { sys, lu, shift, d_half })
    }

    fn apply(&self, x: &CVec) -> CVec {
        let y = CVec::from_fn(x.len(), |i, _| x[i] / self.d_half[i]);
        let t = self.sys.matrix.mul_vec(&y);
        CVec::from_fn(x.len(), |i, _| t[i] / self.d_half[i])
    }

    fn apply_adjoint(&self, x: &CVec) -> CVec {
        let y = CVec::from_fn(x.len(), |i, _| x[i] / self.d_half[i]);
        let t = self.sys.matrix.adjoint_mul_vec(&y);
        CVec::from_fn(x.len(), |i, _| t[i] / self.d_half[i])
    }

    fn inverse(&self, x: &CVec, adjoint: bool) -> CVec {
        let b = CVec::from_fn(x.len(), |i, _| x[i] * self.d_half[i]);
        let y = if adjoint { self.lu.solve_adjoint(&b) } else { self.lu.solve(&b) };
        CVec::from_fn(x.len(), |i, _| y[i] * self.d_half[i])
    }

    fn unscale(&self, x: &CVec) -> CVec {
        CVec::from_fn(x.len(), |i, _| x[i] / self.d_half[i])
    }
}

fn orthonormalize(x: CMat) -> CMat {
    let k = x.ncols();
    x.qr().q().columns(0, k).into_owned()
}

/// Singular values (ascending) of `op` restricted to the orthonormal basis
/// `q`, with the matching vectors `q v` in columns.
fn ritz(q: &CMat, op: impl Fn(&CVec) -> CVec) -> (Vec<f64>, CMat) {
    let k = q.ncols();
    let mut t = CMat::zeros(q.nrows(), k);
    for c in 0..k {
        t.set_column(c, &op(&q.column(c).into_owned()));
    }
    let svd = t.svd(false, true);
    let v = svd.v_t.expect("right vectors").adjoint();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let vecs = q * v;
    let mut out = CMat::zeros(q.nrows(), k);
    for (c, &i) in order.iter().enumerate() {
        out.set_column(c, &vecs.column(i));
    }
    (order.iter().map(|&i| svd.singular_values[i]).collect(), out)
}

/// Smallest singular triplets of the mass-scaled condensed operator by
/// subspace iteration with `(T^H T)^{-1}`, then near-null classification and
/// compatibility of `load` against the adjoint null vectors.
pub fn fredholm_diagnose(sys: &ConstantTraceSystem, load: &CVec, opts: &FredholmOptions) -> Result<FredholmReport> {
    let op = Scaled::new(sys)?;
    Ok(diagnose_with(&op, load, opts))
}

fn diagnose_with(op: &Scaled<'_>, load: &CVec, opts: &FredholmOptions) -> FredholmReport {
    let n = op.sys.dim();
    let k = opts.block.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = CMat::from_fn(n, k, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    x = orthonormalize(x);
    for _ in 0..opts.iterations {
        let mut next = CMat::zeros(n, k);
        for c in 0..k {
            let y = op.inverse(&x.column(c).into_owned(), true);
            next.set_column(c, &op.inverse(&y, false));
        }
        x = orthonormalize(next);
    }
    // Rayleigh-Ritz for right vectors on span(X) and for left vectors on
    // span(T^{-H} X); taking each side from its own SVD avoids dividing by
    // tiny singular values.
    let mut y = CMat::zeros(n, k);
    for c in 0..k {
        y.set_column(c, &op.inverse(&x.column(c).into_owned(), true));
    }
    let y = orthonormalize(y);
    let (sigma, right) = ritz(&x, |v| op.apply(v));
    let (_, left) = ritz(&y, |v| op.apply_adjoint(v));
    let threshold = opts.near_null_fraction * op.sys.full.omega.powi(2).max(1.0);
    let null_dim = sigma.iter().filter(|&&s| s <= threshold).count();
    let null_vectors = right.columns(0, null_dim).into_owned();
    let adjoint_null_vectors = left.columns(0, null_dim).into_owned();
    let singular_values = sigma;
    let mut report = FredholmReport {
        unique: null_dim == 0,
        null_dim,
        null_basis: Vec::new(),
        adjoint_null_basis: Vec::new(),
        compatibility: Vec::new(),
        singular_values,
        threshold,
        null_vectors,
        adjoint_null_vectors,
    };
    for c in 0..report.null_dim {
        let v = op.unscale(&report.null_vectors.column(c).into_owned());
        let w = op.unscale(&report.adjoint_null_vectors.column(c).into_owned());
        let ok = w.dotc(load).norm() <= opts.compatibility_tol * w.norm() * load.norm();
        report.compatibility.push(ok);
        report.null_basis.push(op.sys.expand(&v));
        report.adjoint_null_basis.push(op.sys.expand(&w));
    }
    report
}

/// Solution over the constant-trace subspace.
#[derive(Clone, Debug)]
pub struct ConstantTraceSolution {
    pub w: FieldSolution,
    /// Common trace value of each component.
    pub c0: CVec,
    /// Null-space dimension of the problem (the solution is normalized to be
    /// mass-orthogonal to the null space when positive).
    pub null_dim: usize,
}

#[derive(Clone, Debug)]
pub enum ConstantTraceOutcome {
    Solved(ConstantTraceSolution),
    NotUnique(FredholmReport),
}

/// Solve the interior problem on a disk mesh over fields with constant outer trace.
pub fn solve_constant_trace(
    mesh: &Arc<Mesh>,
    field: &CoefficientField,
    omega: f64,
    source: &SourceField,
    opts: &FredholmOptions,
) -> Result<(ConstantTraceSystem, ConstantTraceOutcome)> {
    let sys = ConstantTraceSystem::new(assemble(mesh, field, omega, source)?);
    let op = Scaled::new(&sys)?;
    let report = diagnose_with(&op, &sys.load, opts);
    let outcome = if report.unique {
        ConstantTraceOutcome::Solved(solve_projected(&op, &report, &sys.load)?)
    } else {
        ConstantTraceOutcome::NotUnique(report)
    };
    Ok((sys, outcome))
}

/// Solution of a compatible non-unique problem, normalized to have no
/// component along the null space. Fails with [`Error::Incompatible`] if the
/// load violates a compatibility condition.
pub fn solve_compatible(sys: &ConstantTraceSystem, report: &FredholmReport, load: &CVec) -> Result<ConstantTraceSolution> {
    let op = Scaled::new(sys)?;
    let mut check = report.clone();
    check.compatibility = (0..report.null_dim)
        .map(|c| {
            let w = op.unscale(&report.adjoint_null_vectors.column(c).into_owned());
            w.dotc(load).norm() <= FredholmOptions::default().compatibility_tol * w.norm() * load.norm()
        })
        .collect();
    if !check.compatible() {
        return Err(Error::Incompatible(format!(
            "source is not orthogonal to {} of {} adjoint null vectors",
            check.compatibility.iter().filter(|&&c| !c).count(),
            report.null_dim
        )));
    }
    solve_projected(&op, report, load)
}

fn project_out(v: &mut CVec, basis: &CMat) {
    for c in 0..basis.ncols() {
        let b = basis.column(c);
        let a = b.dotc(v);
        *v -= b * a;
    }
}

/// Solve `T x = F` in scaled coordinates on the complement of the null
/// spaces, by iterative refinement with the shifted factorization.
fn solve_projected(op: &Scaled<'_>, report: &FredholmReport, load: &CVec) -> Result<ConstantTraceSolution> {
    let sys = op.sys;
    let mut rhs = CVec::from_fn(load.len(), |i, _| load[i] / op.d_half[i]);
    project_out(&mut rhs, &report.adjoint_null_vectors);
    let rhs_norm = rhs.norm();
    let mut x = CVec::zeros(rhs.len());
    let mut rel = 0.0;
    if rhs_norm > 0.0 {
        for _ in 0..20 {
            let mut r = &rhs - op.apply(&x);
            project_out(&mut r, &report.adjoint_null_vectors);
            rel = r.norm() / rhs_norm;
            if rel <= 0.1 * SOLVE_TOL {
                break;
            }
            let mut dx = op.inverse(&r, false);
            project_out(&mut dx, &report.null_vectors);
            x += dx;
        }
    }
    if !(rel <= SOLVE_TOL) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver(format!(
            "constant-trace system residual {rel:.3e} exceeds tolerance (shift {:.1e})",
            op.shift
        )));
    }
    let x = op.unscale(&x);
    let c0 = CVec::from_iterator(sys.m(), sys.shared().map(|k| x[k]));
    Ok(ConstantTraceSolution { w: sys.expand(&x), c0, null_dim: report.null_dim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Domain;
    use crate::fem::mesh::{generate_disk_mesh, BoundaryTag};
    use crate::fem::solve::flux_integral;
    use crate::source::Support;
    use crate::Point;

    /// First positive zero of J_1.
    const J11: f64 = 3.831705970207512;

    fn disk(h: f64) -> Arc<Mesh> {
        Arc::new(generate_disk_mesh(&[1.0], h).unwrap())
    }

    fn identity() -> CoefficientField {
        CoefficientField::identity(Domain::Disk { radius: 1.0 }, 1)
    }

    fn solved(out: ConstantTraceOutcome) -> ConstantTraceSolution {
        match out {
            ConstantTraceOutcome::Solved(s) => s,
            ConstantTraceOutcome::NotUnique(r) => panic!("not unique: {:?}", r.singular_values),
        }
    }

    #[test]
    fn zero_source_gives_zero() {
        let (_, out) =
            solve_constant_trace(&disk(0.15), &identity(), 1.0, &SourceField::zero(1), &FredholmOptions::default())
                .unwrap();
        let s = solved(out);
        assert_eq!(s.w.values.norm(), 0.0);
        assert_eq!(s.c0.norm(), 0.0);
    }

    #[test]
    fn solution_has_constant_trace_and_zero_flux() {
        let mesh = disk(0.1);
        let f = SourceField::gaussian(1, Point::new(0.3, -0.2), 0.3, 1.0);
        let (_, out) = solve_constant_trace(&mesh, &identity(), 1.0, &f, &FredholmOptions::default()).unwrap();
        let s = solved(out);
        for i in mesh.boundary_nodes() {
            assert!((s.w.values[i] - s.c0[0]).norm() <= 1e-12);
        }
        let flux = flux_integral(&s.w, &identity(), 1.0, &f, BoundaryTag::Outer).unwrap();
        assert!(flux.norm() <= 1e-8 * s.w.l2_norm(), "flux {}", flux.norm());
        assert!(s.c0.norm() > 1e-3);
    }

    #[test]
    fn condensation_matches_explicit_subspace_basis() {
        let mesh = disk(0.25);
        let f = SourceField::gaussian(1, Point::new(0.2, 0.1), 0.4, 1.0);
        let full = assemble(&mesh, &identity(), 1.0, &f).unwrap();
        assert!(full.matrix.nrows() <= 400);
        let n = full.matrix.nrows();
        let boundary = mesh.boundary_nodes();
        let interior: Vec<usize> = (0..n).filter(|i| !boundary.contains(i)).collect();
        let mut p = CMat::zeros(n, interior.len() + 1);
        for (c, &i) in interior.iter().enumerate() {
            p[(i, c)] = C64::new(1.0, 0.0);
        }
        for &i in &boundary {
            p[(i, interior.len())] = C64::new(1.0, 0.0);
        }
        let s = full.matrix.to_dense();
        let a = p.adjoint() * &s * &p;
        let b = p.adjoint() * &full.load;
        let x = p * a.lu().solve(&b).unwrap();
        let (_, out) = solve_constant_trace(&mesh, &identity(), 1.0, &f, &FredholmOptions::default()).unwrap();
        let w = solved(out).w;
        assert!((&w.values - &x).norm() <= 1e-10 * x.norm());
    }

    #[test]
    fn odd_source_at_zero_frequency() {
        let mesh = disk(0.1);
        let f = SourceField::from_fn(1, Support::Everywhere, |p| Ok(CVec::from_element(1, C64::new(p.y[0], 0.0))));
        let opts = FredholmOptions::default();
        let (sys, out) = solve_constant_trace(&mesh, &identity(), 0.0, &f, &opts).unwrap();
        let ConstantTraceOutcome::NotUnique(report) = out else { panic!("constants are null at omega = 0") };
        assert_eq!(report.null_dim, 1);
        assert!(report.compatible());
        let s = solve_compatible(&sys, &report, &sys.load).unwrap();
        assert!(s.c0.norm() <= 1e-8, "c0 {}", s.c0.norm());
        assert!(s.w.values.norm() > 1e-3);
    }

    #[test]
    fn resonance_has_three_null_directions() {
        for h in [0.15, 0.1] {
            let (_, out) =
                solve_constant_trace(&disk(h), &identity(), J11, &SourceField::zero(1), &FredholmOptions::default())
                    .unwrap();
            let ConstantTraceOutcome::NotUnique(report) = out else { panic!("expected resonance at h = {h}") };
            assert_eq!(report.null_dim, 3, "{:?}", report.singular_values);
            assert_eq!(report.null_basis.len(), 3);
        }
    }

    #[test]
    fn unique_away_from_resonance() {
        let sys = ConstantTraceSystem::new(assemble(&disk(0.1), &identity(), 1.0, &SourceField::zero(1)).unwrap());
        let r = fredholm_diagnose(&sys, &sys.load, &FredholmOptions::default()).unwrap();
        assert!(r.unique && r.null_dim == 0, "{:?}", r.singular_values);
    }

    #[test]
    fn compatibility_gating_at_resonance() {
        let sys = ConstantTraceSystem::new(assemble(&disk(0.12), &identity(), J11, &SourceField::zero(1)).unwrap());
        let opts = FredholmOptions::default();
        let r = fredholm_diagnose(&sys, &sys.load, &opts).unwrap();
        assert_eq!(r.null_dim, 3);
        let bad = sys.load_of_field(&sys.condensed(&r.null_basis[0]));
        let rb = fredholm_diagnose(&sys, &bad, &opts).unwrap();
        assert!(!rb.compatible());
        assert!(matches!(solve_compatible(&sys, &rb, &bad), Err(Error::Incompatible(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut good = CVec::from_fn(sys.dim(), |_, _| C64::new(rng.random::<f64>(), rng.random::<f64>()));
        let adj: Vec<CVec> = r.adjoint_null_basis.iter().map(|w| sys.condensed(w)).collect();
        project_out(&mut good, &orthonormalize(CMat::from_columns(&adj)));
        let rg = fredholm_diagnose(&sys, &good, &opts).unwrap();
        assert!(rg.compatible());
        let s = solve_compatible(&sys, &rg, &good).unwrap();
        assert_eq!(s.null_dim, 3);
    }
}
