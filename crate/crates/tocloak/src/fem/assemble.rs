//! P1 assembly of `-div(A grad u) - omega^2 B u = f` and nodal fields.

use std::sync::Arc;

use rayon::prelude::*;

use crate::coeffs::{BlockCoefficient, CoefficientField};
use crate::fem::mesh::Mesh;
use crate::linalg::SparseMatrix;
use crate::source::SourceField;
use crate::{CMat, CVec, Error, Point, Result, C64};

/// Stiffness-minus-mass matrix over `(node, component)` unknowns (index
/// `node * m + component`) and the load vector.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub mesh: Arc<Mesh>,
    pub m: usize,
    pub omega: f64,
    pub matrix: SparseMatrix,
    pub load: CVec,
    /// Outer boundary nodes (trace unknowns of Dirichlet problems).
    pub dirichlet_nodes: Vec<usize>,
}

/// Gradients of the three barycentric functions of a counterclockwise triangle.
pub fn p1_gradients(p: &[Point; 3]) -> ([Point; 3], f64) {
    let area = 0.5 * (p[1] - p[0]).perp(&(p[2] - p[0]));
    let g = |j: usize, k: usize| Point::new(p[j][1] - p[k][1], p[k][0] - p[j][0]) / (2.0 * area);
    ([g(1, 2), g(2, 0), g(0, 1)], area)
}

struct ElementContribution {
    entries: Vec<(usize, usize, C64)>,
    load: Vec<(usize, C64)>,
}

fn element(
    mesh: &Mesh,
    t: usize,
    c: &BlockCoefficient,
    omega: f64,
    source: &SourceField,
) -> Result<ElementContribution> {
    let m = c.m();
    let tri = mesh.triangles[t];
    let pts = tri.map(|i| mesh.nodes[i]);
    let (grads, area) = p1_gradients(&pts);
    let w2 = C64::new(omega * omega, 0.0);
    let mut entries = Vec::with_capacity(9 * m * m);
    for i in 0..3 {
        for j in 0..3 {
            let k = c.contract(&grads[i], &grads[j]) * C64::new(area, 0.0);
            let mass = area / 12.0 * if i == j { 2.0 } else { 1.0 };
            let blk: CMat = k - &c.b * (w2 * mass);
            for p in 0..m {
                for q in 0..m {
                    entries.push((tri[i] * m + p, tri[j] * m + q, blk[(p, q)]));
                }
            }
        }
    }
    let mut load = Vec::new();
    if !source.is_zero() {
        // edge-midpoint rule (exact for quadratics); phi_i = 1/2 on its two edges
        for e in 0..3 {
            let (a, b) = (e, (e + 1) % 3);
            let mid = 0.5 * (pts[a] + pts[b]);
            let f = source.eval(mid)?;
            for &node in &[a, b] {
                for p in 0..m {
                    load.push((tri[node] * m + p, f[p] * (area / 3.0 * 0.5)));
                }
            }
        }
    }
    Ok(ElementContribution { entries, load })
}

/// Assemble over all triangles of `mesh`.
pub fn assemble(mesh: &Arc<Mesh>, field: &CoefficientField, omega: f64, source: &SourceField) -> Result<AssembledSystem> {
    let all: Vec<usize> = (0..mesh.triangles.len()).collect();
    assemble_triangles(mesh, field, omega, source, &all)
}

/// Assemble over a subset of triangles. Elements are processed in parallel
/// and reduced in triangle order, so the result does not depend on threading.
pub fn assemble_triangles(
    mesh: &Arc<Mesh>,
    field: &CoefficientField,
    omega: f64,
    source: &SourceField,
    triangles: &[usize],
) -> Result<AssembledSystem> {
    let m = field.m;
    if source.m != m {
        return Err(Error::Dimension(format!("source has {} components, medium {m}", source.m)));
    }
    let parts: Vec<ElementContribution> = triangles
        .par_iter()
        .map(|&t| {
            let c = field.eval(mesh.centroid(t)).map_err(|e| {
                Error::Solver(format!("coefficient evaluation failed in triangle {t}: {e}"))
            })?;
            element(mesh, t, &c, omega, source)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = mesh.node_count() * m;
    let mut load = CVec::zeros(n);
    let mut trips = Vec::with_capacity(parts.iter().map(|p| p.entries.len()).sum());
    for p in parts {
        trips.extend(p.entries);
        for (i, v) in p.load {
            load[i] += v;
        }
    }
    Ok(AssembledSystem {
        mesh: mesh.clone(),
        m,
        omega,
        matrix: SparseMatrix::from_triplets(n, n, trips),
        load,
        dirichlet_nodes: mesh.boundary_nodes(),
    })
}

/// Lumped (row-sum) P1 mass of each node.
pub fn lumped_mass(mesh: &Mesh) -> Vec<f64> {
    let mut w = vec![0.0; mesh.node_count()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let a = mesh.triangle_area(t) / 3.0;
        for &i in tri {
            w[i] += a;
        }
    }
    w
}

/// Uniform bucket grid for point location.
#[derive(Clone, Debug)]
pub struct Locator {
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    pub fn new(mesh: &Mesh) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &mesh.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let span = (hi - lo).max().max(1e-300);
        let target = (mesh.triangles.len() as f64).sqrt().max(1.0);
        let cell = span / target;
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let pts = tri.map(|i| mesh.nodes[i]);
            let (a, b) = (pts[0].inf(&pts[1]).inf(&pts[2]), pts[0].sup(&pts[1]).sup(&pts[2]));
            let (i0, j0) = Self::cell_of(lo, cell, nx, ny, &a);
            let (i1, j1) = Self::cell_of(lo, cell, nx, ny, &b);
            for i in i0..=i1 {
                for j in j0..=j1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Locator { lo, cell, nx, ny, buckets }
    }

    fn cell_of(lo: Point, cell: f64, nx: usize, ny: usize, p: &Point) -> (usize, usize) {
        let i = ((p[0] - lo[0]) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let j = ((p[1] - lo[1]) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (i, j)
    }

    /// Triangle containing `y` and its barycentric coordinates. Points slightly
    /// outside the polygonal domain are assigned to the nearest candidate with
    /// clamped coordinates.
    pub fn locate(&self, mesh: &Mesh, y: Point) -> Option<(usize, [f64; 3])> {
        let (ci, cj) = Self::cell_of(self.lo, self.cell, self.nx, self.ny, &y);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for radius in 0..3usize {
            let (i0, i1) = (ci.saturating_sub(radius), (ci + radius).min(self.nx - 1));
            let (j0, j1) = (cj.saturating_sub(radius), (cj + radius).min(self.ny - 1));
            for i in i0..=i1 {
                for j in j0..=j1 {
                    for &t in &self.buckets[j * self.nx + i] {
                        let bary = barycentric(mesh, t, y);
                        let worst = bary.iter().copied().fold(f64::INFINITY, f64::min);
                        if worst >= -1e-12 {
                            return Some((t, bary));
                        }
                        if best.as_ref().is_none_or(|b| worst > b.2) {
                            best = Some((t, bary, worst));
                        }
                    }
                }
            }
            if best.is_some() && radius >= 1 {
                break;
            }
        }
        best.map(|(t, b, _)| {
            let c = b.map(|v| v.max(0.0));
            let s: f64 = c.iter().sum();
            (t, c.map(|v| v / s))
        })
    }
}

pub fn barycentric(mesh: &Mesh, t: usize, y: Point) -> [f64; 3] {
    let [a, b, c] = mesh.triangles[t].map(|i| mesh.nodes[i]);
    let det = (b - a).perp(&(c - a));
    let l1 = (y - a).perp(&(c - a)) / det;
    let l2 = (b - a).perp(&(y - a)) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Nodal P1 field with `m` components per node.
#[derive(Clone, Debug)]
pub struct FieldSolution {
    pub mesh: Arc<Mesh>,
    pub m: usize,
    pub values: CVec,
}

impl FieldSolution {
    pub fn zeros(mesh: &Arc<Mesh>, m: usize) -> Self {
        FieldSolution { mesh: mesh.clone(), m, values: CVec::zeros(mesh.node_count() * m) }
    }

    pub fn node_value(&self, i: usize) -> CVec {
        self.values.rows(i * self.m, self.m).into_owned()
    }

    /// Constant gradient `(d/dy1, d/dy2)` of the field on triangle `t`.
    pub fn gradient(&self, t: usize) -> [CVec; 2] {
        let tri = self.mesh.triangles[t];
        let (g, _) = p1_gradients(&tri.map(|i| self.mesh.nodes[i]));
        let mut out = [CVec::zeros(self.m), CVec::zeros(self.m)];
        for (k, &i) in tri.iter().enumerate() {
            let v = self.node_value(i);
            out[0] += &v * C64::new(g[k][0], 0.0);
            out[1] += &v * C64::new(g[k][1], 0.0);
        }
        out
    }

    pub fn eval_with(&self, loc: &Locator, y: Point) -> Result<CVec> {
        let (t, b) = loc.locate(&self.mesh, y).ok_or(Error::OutsideDomain(y[0], y[1]))?;
        let tri = self.mesh.triangles[t];
        let mut out = CVec::zeros(self.m);
        for k in 0..3 {
            out += self.node_value(tri[k]) * C64::new(b[k], 0.0);
        }
        Ok(out)
    }

    /// Value and gradient at `y`.
    pub fn eval_with_gradient(&self, loc: &Locator, y: Point) -> Result<(CVec, [CVec; 2])> {
        let (t, _) = loc.locate(&self.mesh, y).ok_or(Error::OutsideDomain(y[0], y[1]))?;
        Ok((self.eval_with(loc, y)?, self.gradient(t)))
    }

    pub fn eval_points(&self, pts: &[Point]) -> Result<Vec<CVec>> {
        let loc = Locator::new(&self.mesh);
        pts.iter().map(|&p| self.eval_with(&loc, p)).collect()
    }

    /// `L^2` norm with the consistent P1 mass.
    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            let area = self.mesh.triangle_area(t);
            for i in 0..3 {
                for j in 0..3 {
                    let w = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                    s += w * self.node_value(tri[i]).dotc(&self.node_value(tri[j])).re;
                }
            }
        }
        s.max(0.0).sqrt()
    }

    /// Nodal interpolant of a function.
    pub fn interpolate<F: Fn(Point) -> Result<CVec>>(mesh: &Arc<Mesh>, m: usize, f: F) -> Result<Self> {
        let mut values = CVec::zeros(mesh.node_count() * m);
        for (i, &p) in mesh.nodes.iter().enumerate() {
            let v = f(p)?;
            values.rows_mut(i * m, m).copy_from(&v);
        }
        Ok(FieldSolution { mesh: mesh.clone(), m, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Domain;
    use crate::fem::mesh::generate_disk_mesh;

    #[test]
    fn right_triangle_element_matrix() {
        let mesh = Arc::new(Mesh {
            nodes: vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            triangles: vec![[0, 1, 2]],
            boundary_edges: vec![
                ([0, 1], crate::fem::mesh::BoundaryTag::Outer),
                ([1, 2], crate::fem::mesh::BoundaryTag::Outer),
                ([2, 0], crate::fem::mesh::BoundaryTag::Outer),
            ],
            h: 1.0,
            rings: vec![],
        });
        let field = CoefficientField::identity(Domain::Disk { radius: 2.0 }, 1);
        let sys = assemble(&mesh, &field, 0.0, &SourceField::zero(1)).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((sys.matrix.get(i, j) - C64::new(expected[i][j], 0.0)).norm() < 1e-15);
            }
        }
        // mass part: omega = 1, B = 1 subtracts area/12 * (1 + delta)
        let sys = assemble(&mesh, &field, 1.0, &SourceField::zero(1)).unwrap();
        assert!((sys.matrix.get(0, 0).re - (1.0 - 1.0 / 12.0)).abs() < 1e-15);
        assert!((sys.matrix.get(1, 2).re - (0.0 - 1.0 / 24.0)).abs() < 1e-15);
    }

    #[test]
    fn patch_test_linear_field() {
        let mesh = Arc::new(generate_disk_mesh(&[1.0, 2.0], 0.3).unwrap());
        let field = CoefficientField::constant(
            Domain::Disk { radius: 2.0 },
            BlockCoefficient::scalar_tensor(&crate::Mat2::new(2.0, 0.3, 0.3, 1.0), C64::new(0.0, 0.0), 1),
        );
        let sys = assemble(&mesh, &field, 0.0, &SourceField::zero(1)).unwrap();
        let u = CVec::from_iterator(mesh.node_count(), mesh.nodes.iter().map(|p| C64::new(0.3 + p[0] - 2.0 * p[1], 0.0)));
        let r = sys.matrix.mul_vec(&u);
        let boundary: std::collections::HashSet<usize> = sys.dirichlet_nodes.iter().copied().collect();
        for i in 0..mesh.node_count() {
            if !boundary.contains(&i) {
                assert!(r[i].norm() < 1e-12, "node {i}: {}", r[i]);
            }
        }
    }

    #[test]
    fn locator_interpolates_linear_fields() {
        let mesh = Arc::new(generate_disk_mesh(&[1.0, 2.0], 0.2).unwrap());
        let f = FieldSolution::interpolate(&mesh, 1, |p| Ok(CVec::from_element(1, C64::new(p[0] + 3.0 * p[1], 1.0)))).unwrap();
        let loc = Locator::new(&mesh);
        for y in [Point::new(0.3, -0.7), Point::new(1.0, 0.0), Point::new(-1.2, 1.1)] {
            let v = f.eval_with(&loc, y).unwrap();
            assert!((v[0] - C64::new(y[0] + 3.0 * y[1], 1.0)).norm() < 1e-12);
        }
        let g = f.gradient(5);
        assert!((g[0][0].re - 1.0).abs() < 1e-12 && (g[1][0].re - 3.0).abs() < 1e-12);
    }
}
