//! Quadrature of the sesquilinear form and the change-of-variables check.

use std::f64::consts::PI;

use rand::Rng;

use crate::coeffs::{CoefficientField, Domain};
use crate::quadrature::{trapezoid_angles, uniform_cells, Rule1d};
use crate::xform::{pushforward_coefficients, DiffeoMap};
use crate::{CVec, Error, Mat2, Point, Result, C64};

/// Field value with its Cartesian gradient `(d_1 u, d_2 u)`.
pub type Jet = (CVec, [CVec; 2]);

/// Sum of plane waves `sum_k c_k exp(i w_k . x)` in each component.
#[derive(Clone, Debug)]
pub struct SmoothField {
    pub terms: Vec<(CVec, Point)>,
}

impl SmoothField {
    /// Three random plane waves with wave numbers up to 2 and amplitudes up to 1.
    pub fn random<R: Rng>(m: usize, rng: &mut R) -> Self {
        let terms = (0..3)
            .map(|_| {
                let amp = CVec::from_fn(m, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
                let w = Point::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                (amp, w)
            })
            .collect();
        SmoothField { terms }
    }

    pub fn jet(&self, x: Point) -> Jet {
        let m = self.terms[0].0.len();
        let mut u = CVec::zeros(m);
        let mut g = [CVec::zeros(m), CVec::zeros(m)];
        for (amp, w) in &self.terms {
            let e = C64::from_polar(1.0, w.dot(&x));
            u += amp * e;
            for a in 0..2 {
                g[a] += amp * (e * C64::new(0.0, w[a]));
            }
        }
        (u, g)
    }
}

/// Tensor polar rule on `y = M (r cos t, r sin t)`, `r < radius`, with radial
/// cells split at `splits`.
#[derive(Clone, Debug)]
pub struct PolarRule {
    pub matrix: Mat2,
    pub radius: f64,
    pub splits: Vec<f64>,
    pub cells_per_segment: usize,
    pub order: usize,
    pub angles: usize,
}

impl PolarRule {
    pub fn for_domain(domain: &Domain, splits: &[f64]) -> Result<Self> {
        let (matrix, radius) = match domain {
            Domain::Disk { radius } => (Mat2::identity(), *radius),
            Domain::LinearImage { radius, matrix } => (*matrix, *radius),
            Domain::Annulus { .. } => {
                return Err(Error::InvalidParameter("polar rule needs a disk-like domain".into()));
            }
        };
        let mut s: Vec<f64> = splits.iter().copied().filter(|&r| r > 0.0 && r < radius).collect();
        s.sort_by(f64::total_cmp);
        Ok(PolarRule { matrix, radius, splits: s, cells_per_segment: 4, order: 8, angles: 64 })
    }

    fn refined(&self) -> Self {
        PolarRule { cells_per_segment: self.cells_per_segment * 2, angles: self.angles * 2, ..self.clone() }
    }

    /// Points with weights (including the Jacobian of the parametrization).
    pub fn points(&self) -> Vec<(Point, f64)> {
        let mut edges = vec![0.0];
        edges.extend(&self.splits);
        edges.push(self.radius);
        let cells: Vec<(f64, f64)> =
            edges.windows(2).flat_map(|w| uniform_cells(w[0], w[1], self.cells_per_segment)).collect();
        let radial = Rule1d::on_cells(&cells, self.order);
        let det = self.matrix.determinant();
        let dt = 2.0 * PI / self.angles as f64;
        let mut out = Vec::with_capacity(radial.len() * self.angles);
        for (&r, &w) in radial.nodes.iter().zip(&radial.weights) {
            for t in trapezoid_angles(self.angles) {
                out.push((self.matrix * Point::new(r * t.cos(), r * t.sin()), w * r * dt * det));
            }
        }
        out
    }
}

/// `sum_ab (A^{ab} d_b u)^* d_a v - omega^2 (B u)^* v` at one point.
pub fn form_density(c: &crate::coeffs::BlockCoefficient, omega: f64, u: &Jet, v: &Jet) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for a in 0..2 {
        for b in 0..2 {
            s += (&c.a[a][b] * &u.1[b]).dotc(&v.1[a]);
        }
    }
    s - (&c.b * &u.0).dotc(&v.0) * (omega * omega)
}

/// `Q(u, v)` by the given rule.
pub fn sesquilinear_form<U, V>(field: &CoefficientField, omega: f64, u: U, v: V, rule: &PolarRule) -> Result<C64>
where
    U: Fn(Point) -> Result<Jet>,
    V: Fn(Point) -> Result<Jet>,
{
    let mut s = C64::new(0.0, 0.0);
    for (y, w) in rule.points() {
        let c = field.eval(y)?;
        s += form_density(&c, omega, &u(y)?, &v(y)?) * w;
    }
    Ok(s)
}

/// Form value with rules doubled until successive values agree to `tol` (relative).
pub fn stabilized_form<U, V>(
    field: &CoefficientField,
    omega: f64,
    u: U,
    v: V,
    rule: &PolarRule,
    tol: f64,
) -> Result<(C64, f64)>
where
    U: Fn(Point) -> Result<Jet> + Copy,
    V: Fn(Point) -> Result<Jet> + Copy,
{
    let mut r = rule.clone();
    let mut prev = sesquilinear_form(field, omega, u, v, &r)?;
    for _ in 0..4 {
        r = r.refined();
        let next = sesquilinear_form(field, omega, u, v, &r)?;
        let change = (next - prev).norm();
        if change <= tol * next.norm().max(1.0) {
            return Ok((next, change));
        }
        prev = next;
    }
    Err(Error::Quadrature(format!("form quadrature did not stabilize to {tol:e}")))
}

/// Pushed-forward jet `u o F^{-1}` with gradient `DF^{-T} grad u`.
pub fn pushed_jet(map: &DiffeoMap, u: &SmoothField, y: Point) -> Result<Jet> {
    let x = map.inverse(y)?;
    let (val, g) = u.jet(x);
    let dinv = map
        .jacobian(x)?
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("singular Jacobian".into()))?;
    let mut out = [CVec::zeros(val.len()), CVec::zeros(val.len())];
    for (p, o) in out.iter_mut().enumerate() {
        for a in 0..2 {
            *o += &g[a] * C64::new(dinv[(a, p)], 0.0);
        }
    }
    Ok((val, out))
}

#[derive(Clone, Debug)]
pub struct FormInvarianceResult {
    pub reference: C64,
    pub pushed: C64,
    /// `|pushed - reference| / max(|reference|, 1)`.
    pub defect: f64,
}

/// Compare `Q_[A,B](u, v)` on the domain of `map` with `Q_[F*A, F*B](u o F^-1, v o F^-1)`
/// on its codomain. `splits` are the radii (in the polar parameter of each
/// domain) where the integrands have kinks.
pub fn form_invariance(
    map: &DiffeoMap,
    field: &CoefficientField,
    omega: f64,
    u: &SmoothField,
    v: &SmoothField,
    reference_splits: &[f64],
    image_splits: &[f64],
) -> Result<FormInvarianceResult> {
    const TOL: f64 = 1e-10;
    let pushed_field = pushforward_coefficients(map, field)?;
    let rr = PolarRule::for_domain(&map.domain, reference_splits)?;
    let ri = PolarRule::for_domain(&map.codomain, image_splits)?;
    let (reference, _) = stabilized_form(field, omega, |x| Ok(u.jet(x)), |x| Ok(v.jet(x)), &rr, TOL)?;
    let (pushed, _) = stabilized_form(
        &pushed_field,
        omega,
        |y| pushed_jet(map, u, y),
        |y| pushed_jet(map, v, y),
        &ri,
        TOL,
    )?;
    Ok(FormInvarianceResult { reference, pushed, defect: (pushed - reference).norm() / reference.norm().max(1.0) })
}

/// Smooth Hermitian medium used by the invariance checks:
/// `A = (1 + s(x)/4) I` plus a Hermitian off-diagonal coupling, `B = 1 + c(x)/10`.
pub fn smooth_hermitian_medium(domain: Domain, m: usize) -> CoefficientField {
    CoefficientField::from_fn(domain, m, false, move |p| {
        let x = p.y;
        let s = (0.7 * x[0] - 0.4 * x[1]).sin();
        let c = (0.5 * x[0] * x[1]).cos();
        let id = crate::CMat::identity(m, m);
        let diag = &id * C64::new(1.0 + 0.25 * s, 0.0);
        let off = &id * C64::new(0.2 * c, 0.1 * s);
        crate::coeffs::BlockCoefficient::new(
            [[diag.clone(), off.clone()], [off.adjoint(), diag * C64::new(1.1, 0.0)]],
            &id * C64::new(1.0 + 0.1 * c, 0.0),
        )
    })
}
