//! Block coefficients `(A, B)` of the operator and the algebraic checks on them.

use std::fmt;
use std::sync::Arc;

use crate::{max_modulus, CMat, CVec, Error, Mat2, Point, Probe, Result, C64};

/// Absolute tolerance for hermitian-structure and realness checks.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Pointwise medium: `A = [A^{ab}]` (2x2 array of m x m blocks) and `B` (m x m).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCoefficient {
    pub a: [[CMat; 2]; 2],
    pub b: CMat,
}

impl BlockCoefficient {
    pub fn new(a: [[CMat; 2]; 2], b: CMat) -> Result<Self> {
        let m = b.nrows();
        if m == 0 || b.ncols() != m {
            return Err(Error::Dimension(format!("B is {}x{}", b.nrows(), b.ncols())));
        }
        for row in &a {
            for blk in row {
                if blk.nrows() != m || blk.ncols() != m {
                    return Err(Error::Dimension(format!(
                        "A block is {}x{}, expected {m}x{m}",
                        blk.nrows(),
                        blk.ncols()
                    )));
                }
            }
        }
        Ok(BlockCoefficient { a, b })
    }

    pub fn identity(m: usize) -> Self {
        Self::isotropic(&CMat::identity(m, m), &CMat::identity(m, m))
    }

    /// `A^{ab} = delta_ab * a`, `B = b`.
    pub fn isotropic(a: &CMat, b: &CMat) -> Self {
        let m = a.nrows();
        let z = CMat::zeros(m, m);
        BlockCoefficient {
            a: [[a.clone(), z.clone()], [z, a.clone()]],
            b: b.clone(),
        }
    }

    /// Scalar-tensor medium `A^{ab} = t_ab * I_m`, `B = b * I_m`.
    pub fn scalar_tensor(t: &Mat2, b: C64, m: usize) -> Self {
        let id = CMat::identity(m, m);
        let s = |v: f64| &id * C64::new(v, 0.0);
        BlockCoefficient {
            a: [[s(t[(0, 0)]), s(t[(0, 1)])], [s(t[(1, 0)]), s(t[(1, 1)])]],
            b: &id * b,
        }
    }

    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    /// The 2m x 2m matrix with block `(a, b)` equal to `A^{ab}`.
    pub fn block_matrix(&self) -> CMat {
        let m = self.m();
        let mut out = CMat::zeros(2 * m, 2 * m);
        for al in 0..2 {
            for be in 0..2 {
                out.view_mut((al * m, be * m), (m, m)).copy_from(&self.a[al][be]);
            }
        }
        out
    }

    pub fn from_block_matrix(big: &CMat, b: CMat) -> Result<Self> {
        let m = b.nrows();
        if big.nrows() != 2 * m || big.ncols() != 2 * m {
            return Err(Error::Dimension("block matrix must be 2m x 2m".into()));
        }
        let blk = |al: usize, be: usize| big.view((al * m, be * m), (m, m)).into_owned();
        Self::new([[blk(0, 0), blk(0, 1)], [blk(1, 0), blk(1, 1)]], b)
    }

    /// Contraction `sum_{ab} d_a A^{ab} e_b` with real direction vectors.
    pub fn contract(&self, d: &Point, e: &Point) -> CMat {
        let m = self.m();
        let mut out = CMat::zeros(m, m);
        for al in 0..2 {
            for be in 0..2 {
                let w = d[al] * e[be];
                if w != 0.0 {
                    out += &self.a[al][be] * C64::new(w, 0.0);
                }
            }
        }
        out
    }

    /// Blocks of `A` in the orthonormal frame `(dir, dir^perp)`.
    pub fn frame_blocks(&self, dir: &Point) -> (CMat, CMat) {
        let t = Point::new(-dir[1], dir[0]);
        (self.contract(dir, dir), self.contract(&t, &t))
    }
}

/// Region on which a coefficient field is defined.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Disk { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    /// Image of the disk of the given radius under `y = matrix * x`.
    LinearImage { radius: f64, matrix: Mat2 },
}

impl Domain {
    /// Closed membership test with a relative slack of 1e-12.
    pub fn contains(&self, p: &Probe) -> bool {
        const SLACK: f64 = 1e-12;
        match self {
            Domain::Disk { radius } => p.radius <= radius * (1.0 + SLACK),
            Domain::Annulus { inner, outer } => {
                p.radius >= inner * (1.0 - SLACK) && p.radius <= outer * (1.0 + SLACK)
            }
            Domain::LinearImage { radius, matrix } => match matrix.try_inverse() {
                Some(inv) => (inv * p.y).norm() <= radius * (1.0 + SLACK),
                None => false,
            },
        }
    }
}

/// Curve on which a field's coefficients are undefined.
#[derive(Clone, Debug, PartialEq)]
pub enum Interface {
    Circle { radius: f64 },
}

impl Interface {
    pub fn contains(&self, p: &Probe) -> bool {
        match self {
            Interface::Circle { radius } => {
                if *radius == 1.0 {
                    p.gap == 0.0
                } else {
                    (p.radius - radius).abs() <= 4.0 * f64::EPSILON * radius
                }
            }
        }
    }
}

pub type CoefficientFn = dyn Fn(&Probe) -> Result<BlockCoefficient> + Send + Sync;

/// A medium over a domain: point evaluator plus metadata.
#[derive(Clone)]
pub struct CoefficientField {
    pub domain: Domain,
    pub m: usize,
    pub is_radial: bool,
    pub singular_interface: Option<Interface>,
    /// Radii at which radially layered pieces join (ascending).
    pub breakpoints: Vec<f64>,
    eval: Arc<CoefficientFn>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("domain", &self.domain)
            .field("m", &self.m)
            .field("is_radial", &self.is_radial)
            .field("singular_interface", &self.singular_interface)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl CoefficientField {
    pub fn from_fn<F>(domain: Domain, m: usize, is_radial: bool, eval: F) -> Self
    where
        F: Fn(&Probe) -> Result<BlockCoefficient> + Send + Sync + 'static,
    {
        CoefficientField {
            domain,
            m,
            is_radial,
            singular_interface: None,
            breakpoints: Vec::new(),
            eval: Arc::new(eval),
        }
    }

    pub fn with_interface(mut self, interface: Interface) -> Self {
        self.singular_interface = Some(interface);
        self
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn constant(domain: Domain, c: BlockCoefficient) -> Self {
        let m = c.m();
        let is_radial = is_rotation_invariant(&c);
        CoefficientField::from_fn(domain, m, is_radial, move |_| Ok(c.clone()))
    }

    pub fn identity(domain: Domain, m: usize) -> Self {
        Self::constant(domain, BlockCoefficient::identity(m))
    }

    /// Evaluate at a probe; errors on the singular interface or outside the domain.
    pub fn eval_probe(&self, p: &Probe) -> Result<BlockCoefficient> {
        if let Some(iface) = &self.singular_interface {
            if iface.contains(p) {
                return Err(Error::OnInterface(p.y[0], p.y[1]));
            }
        }
        if !self.domain.contains(p) {
            return Err(Error::OutsideDomain(p.y[0], p.y[1]));
        }
        (self.eval)(p)
    }

    pub fn eval(&self, y: Point) -> Result<BlockCoefficient> {
        self.eval_probe(&Probe::at(y))
    }

    /// Evaluation without the domain check (used when composing fields whose
    /// pieces are selected by the caller).
    pub(crate) fn eval_unchecked(&self, p: &Probe) -> Result<BlockCoefficient> {
        (self.eval)(p)
    }

    /// `inner` on `|y| < radius`, `outer` elsewhere.
    pub fn layered(inner: CoefficientField, outer: CoefficientField, radius: f64) -> Result<Self> {
        if inner.m != outer.m {
            return Err(Error::Dimension("layers have different component counts".into()));
        }
        let mut breakpoints: Vec<f64> = inner
            .breakpoints
            .iter()
            .chain(outer.breakpoints.iter())
            .copied()
            .chain(std::iter::once(radius))
            .collect();
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        let domain = outer.domain.clone();
        let m = inner.m;
        let is_radial = inner.is_radial && outer.is_radial;
        let f = move |p: &Probe| {
            let inside = if radius == 1.0 { p.gap < 0.0 } else { p.radius < radius };
            if inside {
                inner.eval_unchecked(p)
            } else {
                outer.eval_unchecked(p)
            }
        };
        Ok(CoefficientField::from_fn(domain, m, is_radial, f).with_breakpoints(breakpoints))
    }
}

fn is_rotation_invariant(c: &BlockCoefficient) -> bool {
    let d = max_modulus(&(&c.a[0][0] - &c.a[1][1]));
    let s = max_modulus(&(&c.a[0][1] + &c.a[1][0]));
    d <= HERMITIAN_TOL && s <= HERMITIAN_TOL
}

/// True iff `(A^{ab})^* = A^{ba}` entrywise to [`HERMITIAN_TOL`].
pub fn hermitian_block_check(c: &BlockCoefficient) -> bool {
    for al in 0..2 {
        for be in 0..2 {
            if max_modulus(&(c.a[al][be].adjoint() - &c.a[be][al])) > HERMITIAN_TOL {
                return false;
            }
        }
    }
    true
}

/// `sum_{ab} [A^{ab} xi_b]^* xi_a`.
pub fn eval_quadratic_form(c: &BlockCoefficient, xi: &[CVec; 2]) -> Result<C64> {
    let m = c.m();
    if xi[0].len() != m || xi[1].len() != m {
        return Err(Error::Dimension(format!(
            "direction slots have lengths {} and {}, expected {m}",
            xi[0].len(),
            xi[1].len()
        )));
    }
    let mut acc = C64::new(0.0, 0.0);
    for al in 0..2 {
        for be in 0..2 {
            acc += (&c.a[al][be] * &xi[be]).dotc(&xi[al]);
        }
    }
    Ok(acc)
}

#[derive(Clone, Debug)]
pub struct EllipticityReport {
    pub c1_est: f64,
    pub c2_est: f64,
    pub violated: bool,
    pub witness_point: Option<Point>,
    pub witness_direction: Option<(CVec, CVec)>,
}

/// Deterministic set of unit complex m-vectors: coordinate vectors and
/// normalized real/imaginary pair combinations.
fn component_directions(m: usize) -> Vec<CVec> {
    let mut out = Vec::new();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for p in 0..m {
        out.push(CVec::from_fn(m, |i, _| C64::new(if i == p { 1.0 } else { 0.0 }, 0.0)));
    }
    for p in 0..m {
        for q in p + 1..m {
            let mut re = CVec::zeros(m);
            re[p] = C64::new(s, 0.0);
            re[q] = C64::new(s, 0.0);
            let mut im = CVec::zeros(m);
            im[p] = C64::new(s, 0.0);
            im[q] = C64::new(0.0, s);
            out.push(re);
            out.push(im);
        }
    }
    out
}

/// Coordinate axes followed by `count` golden-ratio angles in `[0, pi)`.
pub fn direction_angles(count: usize) -> Vec<f64> {
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut out = vec![0.0, std::f64::consts::FRAC_PI_2];
    out.extend((0..count).map(|k| std::f64::consts::PI * ((k as f64 * golden) % 1.0)));
    out
}

/// Empirical ellipticity constants over sample points and rank-one directions
/// `xi = (cos(phi) eta, sin(phi) eta)`, together with `Re (B eta)^* eta`.
pub fn ellipticity_scan(
    field: &CoefficientField,
    samples: &[Point],
    directions: usize,
) -> Result<EllipticityReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let etas = component_directions(field.m);
    let angles = direction_angles(directions);
    let mut c1 = f64::INFINITY;
    let mut c2 = f64::NEG_INFINITY;
    let mut witness: Option<(Point, CVec, CVec)> = None;
    for y in samples {
        let c = field.eval(*y)?;
        for eta in &etas {
            for &phi in &angles {
                let xi = [eta * C64::new(phi.cos(), 0.0), eta * C64::new(phi.sin(), 0.0)];
                let v = eval_quadratic_form(&c, &xi)?.re;
                if v < c1 {
                    c1 = v;
                    witness = Some((*y, xi[0].clone(), xi[1].clone()));
                }
                c2 = c2.max(v);
            }
            let vb = (&c.b * eta).dotc(eta).re;
            if vb < c1 {
                c1 = vb;
                witness = Some((*y, eta.clone(), CVec::zeros(field.m)));
            }
            c2 = c2.max(vb);
        }
    }
    let violated = c1 <= 0.0;
    let (witness_point, witness_direction) = match (violated, witness) {
        (true, Some((p, a, b))) => (Some(p), Some((a, b))),
        _ => (None, None),
    };
    Ok(EllipticityReport { c1_est: c1, c2_est: c2, violated, witness_point, witness_direction })
}

/// Blocks of `A` along `y/|y|` and its perpendicular for a radial field.
pub fn radial_tangential_eigen(field: &CoefficientField, y: Point) -> Result<(CMat, CMat)> {
    radial_tangential_at(field, &Probe::at(y))
}

pub fn radial_tangential_at(field: &CoefficientField, p: &Probe) -> Result<(CMat, CMat)> {
    if !field.is_radial {
        return Err(Error::InvalidParameter("field is not radial".into()));
    }
    let c = field.eval_probe(p)?;
    Ok(c.frame_blocks(&p.unit_direction()))
}
