//! Diffeomorphisms of the plane and push-forward of media and sources.
//!
//! Push-forward under `y = F(x)` with `DF = [dy_p/dx_a]` and `J = det DF`:
//!
//! ```text
//! A~^{pq}(y) = sum_{a,b} DF_{pa} DF_{qb} A^{ab}(x) / J,   B~(y) = B(x) / J,   f~(y) = f(x) / J
//! ```
//!
//! evaluated at `x = F^{-1}(y)`. This is the index placement for which
//! `Q_{[A,B]}(u, v) = Q_{[A~,B~]}(u o F^{-1}, v o F^{-1})` holds for every
//! Hermitian block structure.

use std::fmt;
use std::sync::Arc;

use crate::coeffs::{BlockCoefficient, CoefficientField, Domain, Interface};
use crate::source::{SourceField, Support};
use crate::{CMat, Error, Mat2, Point, Probe, Result, C64};
#[cfg(test)]
use crate::max_modulus;

/// Radial laws `x -> rho(|x|) x/|x|` used by the cloak maps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RadialLaw {
    /// `rho = 1 + r/2` on the punctured disk of radius 2.
    Blowup,
    /// `rho = r/eps` for `r < eps`, `rho = a + b r` otherwise, with
    /// `a = (2 - 2 eps)/(2 - eps)`, `b = 1/(2 - eps)`.
    Regularized { eps: f64 },
}

impl RadialLaw {
    fn affine(eps: f64) -> (f64, f64) {
        ((2.0 - 2.0 * eps) / (2.0 - eps), 1.0 / (2.0 - eps))
    }

    pub fn radius(&self, r: f64) -> f64 {
        match *self {
            RadialLaw::Blowup => 1.0 + r / 2.0,
            RadialLaw::Regularized { eps } => {
                if r < eps {
                    r / eps
                } else {
                    let (a, b) = Self::affine(eps);
                    a + b * r
                }
            }
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            RadialLaw::Blowup => 0.5,
            RadialLaw::Regularized { eps } => {
                if r < eps {
                    1.0 / eps
                } else {
                    Self::affine(eps).1
                }
            }
        }
    }

    /// `rho(r) / r`, finite at `r = 0` for the regularized law.
    pub fn stretch(&self, r: f64) -> f64 {
        match *self {
            RadialLaw::Blowup => (1.0 + r / 2.0) / r,
            RadialLaw::Regularized { eps } => {
                if r < eps {
                    1.0 / eps
                } else {
                    self.radius(r) / r
                }
            }
        }
    }

    /// Preimage radius of a probe, computed from its gap `|y| - 1`.
    pub fn inverse_radius(&self, p: &Probe) -> f64 {
        match *self {
            RadialLaw::Blowup => 2.0 * p.gap,
            RadialLaw::Regularized { eps } => {
                if p.gap < 0.0 {
                    eps * p.radius
                } else {
                    (2.0 - eps) * p.gap + eps
                }
            }
        }
    }

    /// Radii where the law is not smooth (images in the target).
    pub fn image_kinks(&self) -> Vec<f64> {
        match self {
            RadialLaw::Blowup => vec![],
            RadialLaw::Regularized { .. } => vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MapKind {
    Radial(RadialLaw),
    Linear(Mat2),
    General,
}

type PointFn = dyn Fn(Point) -> Result<Point> + Send + Sync;
type InverseFn = dyn Fn(&Probe) -> Result<Point> + Send + Sync;
type JacobianFn = dyn Fn(Point) -> Result<Mat2> + Send + Sync;

/// Orientation-preserving map with analytic inverse and Jacobian.
#[derive(Clone)]
pub struct DiffeoMap {
    pub name: String,
    pub kind: MapKind,
    pub domain: Domain,
    pub codomain: Domain,
    /// Point of the domain the map is not defined at (blown up).
    pub puncture: Option<Point>,
    forward: Arc<PointFn>,
    inverse: Arc<InverseFn>,
    jacobian: Arc<JacobianFn>,
}

impl fmt::Debug for DiffeoMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffeoMap")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("domain", &self.domain)
            .field("codomain", &self.codomain)
            .field("puncture", &self.puncture)
            .finish()
    }
}

fn radial_jacobian(law: RadialLaw, x: Point) -> Mat2 {
    let r = x.norm();
    let s = law.stretch(r);
    if r == 0.0 {
        return Mat2::identity() * s;
    }
    let u = x / r;
    let pi = u * u.transpose();
    pi * law.derivative(r) + (Mat2::identity() - pi) * s
}

fn linear_codomain(m: &Mat2, radius: f64) -> Domain {
    let s = m[(0, 0)];
    if m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0 && m[(1, 1)] == s && s > 0.0 {
        Domain::Disk { radius: s * radius }
    } else {
        Domain::LinearImage { radius, matrix: *m }
    }
}

impl DiffeoMap {
    pub fn forward(&self, x: Point) -> Result<Point> {
        (self.forward)(x)
    }

    pub fn inverse(&self, y: Point) -> Result<Point> {
        (self.inverse)(&Probe::at(y))
    }

    pub fn inverse_probe(&self, p: &Probe) -> Result<Point> {
        (self.inverse)(p)
    }

    /// `DF(x) = [dy_p/dx_a]`.
    pub fn jacobian(&self, x: Point) -> Result<Mat2> {
        (self.jacobian)(x)
    }

    pub fn radial_law(&self) -> Option<RadialLaw> {
        match self.kind {
            MapKind::Radial(law) => Some(law),
            _ => None,
        }
    }

    /// True for maps that commute with rotations about the origin.
    pub fn preserves_radial_media(&self) -> bool {
        match &self.kind {
            MapKind::Radial(_) => true,
            MapKind::Linear(m) => m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0 && m[(0, 0)] == m[(1, 1)],
            MapKind::General => false,
        }
    }

    pub fn linear(matrix: Mat2, radius: f64, name: &str) -> Result<Self> {
        let inv = matrix
            .try_inverse()
            .filter(|_| matrix.determinant() > 0.0)
            .ok_or_else(|| Error::InvalidParameter("linear map must have positive determinant".into()))?;
        Ok(DiffeoMap {
            name: name.to_string(),
            kind: MapKind::Linear(matrix),
            domain: Domain::Disk { radius },
            codomain: linear_codomain(&matrix, radius),
            puncture: None,
            forward: Arc::new(move |x| Ok(matrix * x)),
            inverse: Arc::new(move |p| Ok(inv * p.y)),
            jacobian: Arc::new(move |_| Ok(matrix)),
        })
    }

    fn radial(law: RadialLaw, name: String, codomain: Domain, puncture: Option<Point>) -> Self {
        DiffeoMap {
            name,
            kind: MapKind::Radial(law),
            domain: Domain::Disk { radius: 2.0 },
            codomain,
            puncture,
            forward: Arc::new(move |x: Point| {
                let r = x.norm();
                if r == 0.0 {
                    return match law {
                        RadialLaw::Blowup => Err(Error::InvalidParameter(
                            "blow-up map is undefined at the origin".into(),
                        )),
                        RadialLaw::Regularized { .. } => Ok(x),
                    };
                }
                Ok(x * (law.radius(r) / r))
            }),
            inverse: Arc::new(move |p: &Probe| {
                if p.radius == 0.0 {
                    return match law {
                        RadialLaw::Blowup => Err(Error::OutsideDomain(0.0, 0.0)),
                        RadialLaw::Regularized { .. } => Ok(Point::zeros()),
                    };
                }
                Ok(p.unit_direction() * law.inverse_radius(p))
            }),
            jacobian: Arc::new(move |x: Point| {
                if x.norm() == 0.0 && law == RadialLaw::Blowup {
                    return Err(Error::InvalidParameter("blow-up map is undefined at the origin".into()));
                }
                Ok(radial_jacobian(law, x))
            }),
        }
    }

    /// The inverse map as a map in its own right.
    pub fn inverted(&self) -> DiffeoMap {
        let fwd = self.clone();
        let inv = self.clone();
        let jac = self.clone();
        DiffeoMap {
            name: format!("inverse({})", self.name),
            kind: MapKind::General,
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            puncture: None,
            forward: Arc::new(move |y| fwd.inverse(y)),
            inverse: Arc::new(move |p| inv.forward(p.y)),
            jacobian: Arc::new(move |y| {
                let x = jac.inverse(y)?;
                jac.jacobian(x)?
                    .try_inverse()
                    .ok_or_else(|| Error::InvalidParameter("singular Jacobian".into()))
            }),
        }
    }
}

pub fn identity_map(radius: f64) -> DiffeoMap {
    DiffeoMap::linear(Mat2::identity(), radius, "identity").expect("identity is invertible")
}

/// `x -> factor * x` on the disk of radius 2.
pub fn scaling_map(factor: f64) -> Result<DiffeoMap> {
    if !(factor > 0.0) {
        return Err(Error::InvalidParameter(format!("scaling factor {factor} must be positive")));
    }
    DiffeoMap::linear(Mat2::identity() * factor, 2.0, "scaling")
}

/// `(x1, x2) -> (2 x1, x2)` on the disk of radius 2 (image: an ellipse).
pub fn ellipse_map() -> DiffeoMap {
    DiffeoMap::linear(Mat2::new(2.0, 0.0, 0.0, 1.0), 2.0, "ellipse").expect("ellipse map is invertible")
}

/// `F(x) = (1 + |x|/2) x/|x|` from the punctured disk of radius 2 onto `1 < |y| <= 2`.
pub fn blowup_map() -> DiffeoMap {
    DiffeoMap::radial(
        RadialLaw::Blowup,
        "blowup".into(),
        Domain::Annulus { inner: 1.0, outer: 2.0 },
        Some(Point::zeros()),
    )
}

/// Piecewise linear radial map blowing the disk of radius `eps` up to the unit disk.
pub fn regularized_blowup(eps: f64) -> Result<DiffeoMap> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon {eps} must lie in (0, 1)")));
    }
    Ok(DiffeoMap::radial(
        RadialLaw::Regularized { eps },
        format!("regularized_blowup({eps})"),
        Domain::Disk { radius: 2.0 },
        None,
    ))
}

/// `outer o inner`.
pub fn compose(outer: &DiffeoMap, inner: &DiffeoMap) -> Result<DiffeoMap> {
    if outer.domain != inner.codomain {
        return Err(Error::InvalidParameter(format!(
            "cannot compose {} after {}: domain mismatch",
            outer.name, inner.name
        )));
    }
    let puncture = inner.puncture;
    let (o1, i1) = (outer.clone(), inner.clone());
    let (o2, i2) = (outer.clone(), inner.clone());
    let (o3, i3) = (outer.clone(), inner.clone());
    Ok(DiffeoMap {
        name: format!("{} o {}", outer.name, inner.name),
        kind: MapKind::General,
        domain: inner.domain.clone(),
        codomain: outer.codomain.clone(),
        puncture,
        forward: Arc::new(move |x| o1.forward(i1.forward(x)?)),
        inverse: Arc::new(move |p| i2.inverse_probe(&Probe::at(o2.inverse_probe(p)?))),
        jacobian: Arc::new(move |x| {
            let z = i3.forward(x)?;
            Ok(o3.jacobian(z)? * i3.jacobian(x)?)
        }),
    })
}

/// `K = G o inner o G^{-1}`.
pub fn conjugated_map(g: &DiffeoMap, inner: &DiffeoMap) -> Result<DiffeoMap> {
    if g.domain != inner.codomain || inner.domain != inner.codomain {
        return Err(Error::InvalidParameter(format!(
            "conjugation of {} by {}: domain mismatch",
            inner.name, g.name
        )));
    }
    let puncture = match inner.puncture {
        Some(p) => Some(g.forward(p)?),
        None => None,
    };
    let (g1, i1) = (g.clone(), inner.clone());
    let (g2, i2) = (g.clone(), inner.clone());
    let (g3, i3) = (g.clone(), inner.clone());
    Ok(DiffeoMap {
        name: format!("{} o {} o inverse({})", g.name, inner.name, g.name),
        kind: MapKind::General,
        domain: g.codomain.clone(),
        codomain: g.codomain.clone(),
        puncture,
        forward: Arc::new(move |y| g1.forward(i1.forward(g1.inverse(y)?)?)),
        inverse: Arc::new(move |p| {
            let z = g2.inverse_probe(p)?;
            g2.forward(i2.inverse(z)?)
        }),
        jacobian: Arc::new(move |y| {
            let x = g3.inverse(y)?;
            let z = i3.forward(x)?;
            let dg_inv = g3
                .jacobian(x)?
                .try_inverse()
                .ok_or_else(|| Error::InvalidParameter("singular Jacobian".into()))?;
            Ok(g3.jacobian(z)? * i3.jacobian(x)? * dg_inv)
        }),
    })
}

fn covers(outer: &Domain, inner: &Domain) -> bool {
    match (outer, inner) {
        (Domain::Disk { radius: a }, Domain::Disk { radius: b }) => a >= b,
        (Domain::Disk { radius: a }, Domain::Annulus { outer: b, .. }) => a >= b,
        _ => outer == inner,
    }
}

/// Push-forward of a block coefficient by the Jacobian `d` (with `det d > 0`).
pub fn pushforward_block(c: &BlockCoefficient, d: &Mat2) -> Result<BlockCoefficient> {
    let j = d.determinant();
    if !(j > 0.0) || !j.is_finite() {
        return Err(Error::InvalidParameter(format!("Jacobian determinant {j} is not positive")));
    }
    // Scale before contracting so that strongly stretched frames do not overflow.
    let ds = d / j.sqrt();
    let m = c.m();
    let mut a: [[CMat; 2]; 2] = Default::default();
    for p in 0..2 {
        for q in 0..2 {
            let mut blk = CMat::zeros(m, m);
            for al in 0..2 {
                for be in 0..2 {
                    let w = ds[(p, al)] * ds[(q, be)];
                    if w != 0.0 {
                        blk += &c.a[al][be] * C64::new(w, 0.0);
                    }
                }
            }
            a[p][q] = blk;
        }
    }
    Ok(BlockCoefficient { a, b: &c.b * C64::new(1.0 / j, 0.0) })
}

/// `F_* (A, B)` as a field on the codomain of `F`.
pub fn pushforward_coefficients(f: &DiffeoMap, field: &CoefficientField) -> Result<CoefficientField> {
    if !covers(&field.domain, &f.domain) {
        return Err(Error::InvalidParameter(format!(
            "field domain {:?} does not contain the domain of {}",
            field.domain, f.name
        )));
    }
    let mut breakpoints: Vec<f64> = Vec::new();
    match f.kind {
        MapKind::Radial(law) => {
            breakpoints.extend(field.breakpoints.iter().map(|&r| law.radius(r)));
            breakpoints.extend(law.image_kinks());
        }
        MapKind::Linear(m) if f.preserves_radial_media() => {
            breakpoints.extend(field.breakpoints.iter().map(|&r| r * m[(0, 0)]));
        }
        _ => {}
    }
    breakpoints.retain(|r| r.is_finite() && *r > 0.0);
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    let is_radial = field.is_radial && f.preserves_radial_media();
    let (map, inner) = (f.clone(), field.clone());
    let out = CoefficientField::from_fn(f.codomain.clone(), field.m, is_radial, move |p| {
        let x = map.inverse_probe(p)?;
        let d = map.jacobian(x)?;
        let c = inner.eval_probe(&Probe::at(x))?;
        pushforward_block(&c, &d)
    })
    .with_breakpoints(breakpoints);
    Ok(if f.puncture.is_some() && f.radial_law() == Some(RadialLaw::Blowup) {
        out.with_interface(Interface::Circle { radius: 1.0 })
    } else {
        out
    })
}

/// `F_* f = f(F^{-1}(y)) / J`.
pub fn pushforward_source(f: &DiffeoMap, src: &SourceField) -> Result<SourceField> {
    if src.is_zero() {
        return Ok(src.clone());
    }
    if let Some(p) = f.puncture {
        if src.support.touches(&p) {
            return Err(Error::InvalidParameter(format!(
                "source support touches the puncture of {}",
                f.name
            )));
        }
    }
    let (map, inner) = (f.clone(), src.clone());
    Ok(SourceField::from_fn(src.m, Support::Everywhere, move |p| {
        let x = map.inverse_probe(p)?;
        let j = map.jacobian(x)?.determinant();
        if !(j > 0.0) {
            return Err(Error::InvalidParameter(format!("Jacobian determinant {j} is not positive")));
        }
        Ok(inner.eval_probe(&Probe::at(x))? * C64::new(1.0 / j, 0.0))
    }))
}

/// Ideal cloak medium on `1 < |y| < 2` from the projection formula with
/// `Pi = y y^T / |y|^2`:
/// `A_c = g/r P A P + P A Q + r/g Q A Q + Q A P`, `B_c = 4 g/r B`,
/// where `r = |y|`, `g = |y| - 1`, `P = Pi (x) I_m`, `Q = I - P`, and the
/// background is evaluated at `F^{-1}(y) = 2 g y/|y|`.
pub fn closed_form_radial_cloak(background: &CoefficientField) -> Result<CoefficientField> {
    if !covers(&background.domain, &Domain::Disk { radius: 2.0 }) {
        return Err(Error::InvalidParameter("background must cover the disk of radius 2".into()));
    }
    let bg = background.clone();
    let m = background.m;
    Ok(CoefficientField::from_fn(Domain::Annulus { inner: 1.0, outer: 2.0 }, m, bg.is_radial, move |p| {
        if !(p.gap > 0.0) || p.radius >= 2.0 {
            return Err(Error::OutsideDomain(p.y[0], p.y[1]));
        }
        let u = p.unit_direction();
        let x = u * (2.0 * p.gap);
        let cb = bg.eval_probe(&Probe::at(x))?;
        let big = cb.block_matrix();
        let pi = u * u.transpose();
        let mut proj = CMat::zeros(2 * m, 2 * m);
        for al in 0..2 {
            for be in 0..2 {
                for k in 0..m {
                    proj[(al * m + k, be * m + k)] = C64::new(pi[(al, be)], 0.0);
                }
            }
        }
        let q = CMat::identity(2 * m, 2 * m) - &proj;
        let g_over_r = C64::new(p.gap / p.radius, 0.0);
        let r_over_g = C64::new(p.radius / p.gap, 0.0);
        let a = &proj * &big * &proj * g_over_r
            + &proj * &big * &q
            + &q * &big * &q * r_over_g
            + &q * &big * &proj;
        BlockCoefficient::from_block_matrix(&a, &cb.b * (g_over_r * 4.0))
    })
    .with_interface(Interface::Circle { radius: 1.0 }))
}

/// Values of a radial profile at one radius.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileValue {
    pub a_r: CMat,
    pub a_theta: CMat,
    pub b: CMat,
}

pub type ProfileFn = dyn Fn(f64) -> Result<ProfileValue> + Send + Sync;

/// Smooth piece of a radial profile on `[lo, hi]`.
#[derive(Clone)]
pub struct ProfilePiece {
    pub lo: f64,
    pub hi: f64,
    eval: Arc<ProfileFn>,
}

impl ProfilePiece {
    pub fn new<F>(lo: f64, hi: f64, eval: F) -> Self
    where
        F: Fn(f64) -> Result<ProfileValue> + Send + Sync + 'static,
    {
        ProfilePiece { lo, hi, eval: Arc::new(eval) }
    }

    /// Evaluate with `r` clamped to the closed piece.
    pub fn eval(&self, r: f64) -> Result<ProfileValue> {
        (self.eval)(r.clamp(self.lo, self.hi))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Below,
    Above,
}

/// Radial medium `A = a_r Pi + a_theta (I - Pi)`, `B = b`, piecewise smooth in `|y|`.
#[derive(Clone)]
pub struct RadialProfile {
    pub m: usize,
    pieces: Vec<ProfilePiece>,
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialProfile")
            .field("m", &self.m)
            .field("breakpoints", &self.breakpoints())
            .finish()
    }
}

impl RadialProfile {
    pub fn new(m: usize, pieces: Vec<ProfilePiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidParameter("radial profile needs at least one piece".into()));
        }
        for w in pieces.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(Error::InvalidParameter("radial profile pieces must be contiguous".into()));
            }
        }
        if pieces.iter().any(|p| !(p.hi > p.lo)) {
            return Err(Error::InvalidParameter("radial profile pieces must have positive length".into()));
        }
        Ok(RadialProfile { m, pieces })
    }

    pub fn constant(m: usize, radius: f64, a: CMat, b: CMat) -> Result<Self> {
        let v = ProfileValue { a_r: a.clone(), a_theta: a, b };
        Self::new(m, vec![ProfilePiece::new(0.0, radius, move |_| Ok(v.clone()))])
    }

    pub fn pieces(&self) -> &[ProfilePiece] {
        &self.pieces
    }

    pub fn inner_radius(&self) -> f64 {
        self.pieces[0].lo
    }

    pub fn outer_radius(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].hi
    }

    /// Interior radii at which pieces join.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces[..self.pieces.len() - 1].iter().map(|p| p.hi).collect()
    }

    /// Evaluate at `r`; at a breakpoint `side` selects the one-sided limit.
    pub fn eval(&self, r: f64, side: Side) -> Result<ProfileValue> {
        let idx = self
            .pieces
            .iter()
            .position(|p| match side {
                Side::Below => r > p.lo && r <= p.hi,
                Side::Above => r >= p.lo && r < p.hi,
            })
            .or_else(|| {
                if r <= self.inner_radius() {
                    Some(0)
                } else if r >= self.outer_radius() {
                    Some(self.pieces.len() - 1)
                } else {
                    None
                }
            })
            .ok_or_else(|| Error::InvalidParameter(format!("radius {r} outside profile")))?;
        self.pieces[idx].eval(r)
    }
}

/// Frame decomposition of a radial field, sampled along the positive x-axis.
/// Each piece is evaluated strictly inside its interval so that one-sided
/// limits at breakpoints come from the correct layer.
pub fn radial_profile_of(field: &CoefficientField) -> Result<RadialProfile> {
    if !field.is_radial {
        return Err(Error::InvalidParameter("field is not radial".into()));
    }
    let (lo, hi) = match field.domain {
        Domain::Disk { radius } => (0.0, radius),
        Domain::Annulus { inner, outer } => (inner, outer),
        _ => return Err(Error::InvalidParameter("radial field needs a disk or annulus domain".into())),
    };
    let mut edges = vec![lo];
    edges.extend(field.breakpoints.iter().copied().filter(|&r| r > lo && r < hi));
    edges.push(hi);
    let pieces = edges
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let nudge = 1e-13 * b.max(1.0);
            let f = field.clone();
            ProfilePiece::new(a, b, move |r| {
                let r = r.clamp(a + nudge, b - nudge);
                let p = if (r - 1.0).abs() < 0.5 {
                    Probe::from_gap(r - 1.0, 0.0)
                } else {
                    Probe::polar(r, 0.0)
                };
                let c = f.eval_probe(&p)?;
                let dir = Point::new(1.0, 0.0);
                let (a_r, a_theta) = c.frame_blocks(&dir);
                Ok(ProfileValue { a_r, a_theta, b: c.b })
            })
        })
        .collect();
    RadialProfile::new(field.m, pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::hermitian_block_check;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn identity_bg() -> CoefficientField {
        CoefficientField::identity(Domain::Disk { radius: 2.0 }, 1)
    }

    fn finite_difference_jacobian(f: &DiffeoMap, x: Point) -> Mat2 {
        let h = 1e-6;
        let mut d = Mat2::zeros();
        for k in 0..2 {
            let mut e = Point::zeros();
            e[k] = h;
            let col = (f.forward(x + e).unwrap() - f.forward(x - e).unwrap()) / (2.0 * h);
            d.set_column(k, &col);
        }
        d
    }

    #[test]
    fn blowup_examples() {
        let f = blowup_map();
        let y = f.forward(Point::new(0.5, 0.0)).unwrap();
        assert!(close(y[0], 1.25, 1e-15) && y[1] == 0.0);
        let x = Point::new(2.0f64.sqrt(), 2.0f64.sqrt());
        assert!((f.forward(x).unwrap() - x).norm() < 1e-15);
        let y = f.forward(Point::new(1e-9, 0.0)).unwrap();
        assert!(close(y.norm(), 1.0 + 5e-10, 1e-16));
        assert!(f.forward(Point::zeros()).is_err());
    }

    #[test]
    fn regularized_examples() {
        let eps = 1e-3;
        let f = regularized_blowup(eps).unwrap();
        let law = f.radial_law().unwrap();
        let (a, b) = RadialLaw::affine(eps);
        assert!(close(eps / eps, a + b * eps, 1e-15));
        assert!(close(law.radius(2.0), 2.0, 1e-15));
        let y = f.forward(Point::new(1.0, 0.0)).unwrap();
        assert!(close(y[0], (2.0 - 2.0 * eps) / (2.0 - eps) + 1.0 / (2.0 - eps), 1e-15));
        assert!(close(y[0], 1.49975, 1e-6));
        assert!(regularized_blowup(0.0).is_err() && regularized_blowup(1.0).is_err());
    }

    #[test]
    fn regularized_converges_to_blowup() {
        let f = blowup_map();
        for eps in [1e-1, 1e-2, 1e-3] {
            let fe = regularized_blowup(eps).unwrap();
            for k in 0..50 {
                let r = 0.1 + 1.9 * k as f64 / 49.0;
                let x = Point::new(r * (0.3 * k as f64).cos(), r * (0.3 * k as f64).sin());
                let d = (fe.forward(x).unwrap() - f.forward(x).unwrap()).norm();
                assert!(d <= eps, "eps {eps} r {r} diff {d}");
            }
        }
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        let maps = [
            blowup_map(),
            regularized_blowup(0.3).unwrap(),
            ellipse_map(),
            conjugated_map(&ellipse_map(), &regularized_blowup(0.3).unwrap()).unwrap(),
        ];
        let pts = [Point::new(0.7, 0.4), Point::new(-1.1, 0.9), Point::new(0.2, -0.5)];
        for f in &maps {
            for x in pts {
                let x = if matches!(f.domain, Domain::LinearImage { .. }) { Point::new(2.0 * x[0], x[1]) } else { x };
                let d = f.jacobian(x).unwrap();
                let fd = finite_difference_jacobian(f, x);
                assert!((d - fd).amax() < 1e-6, "{}: {d} vs {fd}", f.name);
                assert!(d.determinant() > 0.0);
            }
        }
    }

    #[test]
    fn conjugation_by_identity_is_inner() {
        let inner = regularized_blowup(0.05).unwrap();
        let k = conjugated_map(&identity_map(2.0), &inner).unwrap();
        for t in 0..20 {
            let x = Point::new(1.5 * (t as f64).cos(), 1.5 * (t as f64).sin()) * (t as f64 / 20.0);
            assert!((k.forward(x).unwrap() - inner.forward(x).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn conjugation_fixes_mapped_boundary() {
        let inner = regularized_blowup(0.05).unwrap();
        let s = conjugated_map(&scaling_map(2.0).unwrap(), &inner).unwrap();
        assert_eq!(s.domain, Domain::Disk { radius: 4.0 });
        let e = conjugated_map(&ellipse_map(), &inner).unwrap();
        for t in 0..16 {
            let th = t as f64 * 0.4;
            let y = Point::new(4.0 * th.cos(), 4.0 * th.sin());
            assert!((s.forward(y).unwrap() - y).norm() < 1e-12);
            let y = Point::new(4.0 * th.cos(), 2.0 * th.sin());
            assert!((e.forward(y).unwrap() - y).norm() < 1e-12);
        }
    }

    #[test]
    fn conjugation_domain_mismatch() {
        let g = DiffeoMap::linear(Mat2::identity(), 3.0, "wide").unwrap();
        assert!(conjugated_map(&g, &regularized_blowup(0.1).unwrap()).is_err());
    }

    #[test]
    fn pushforward_by_identity_is_unchanged() {
        let t = Mat2::new(2.0, 0.3, 0.3, 1.0);
        let bg = CoefficientField::constant(
            Domain::Disk { radius: 2.0 },
            BlockCoefficient::scalar_tensor(&t, C64::new(1.5, 0.0), 2),
        );
        let pf = pushforward_coefficients(&identity_map(2.0), &bg).unwrap();
        let y = Point::new(0.4, -0.9);
        let (a, b) = (pf.eval(y).unwrap(), bg.eval(y).unwrap());
        assert!(max_modulus(&(a.block_matrix() - b.block_matrix())) < 1e-14);
        assert!(max_modulus(&(a.b - b.b)) < 1e-14);
    }

    #[test]
    fn blowup_pushforward_at_three_halves() {
        let pf = pushforward_coefficients(&blowup_map(), &identity_bg()).unwrap();
        let c = pf.eval(Point::new(1.5, 0.0)).unwrap();
        assert!(close(c.a[0][0][(0, 0)].re, 1.0 / 3.0, 1e-14));
        assert!(close(c.a[1][1][(0, 0)].re, 3.0, 1e-14));
        assert!(close(c.b[(0, 0)].re, 4.0 / 3.0, 1e-14));
        assert!(pf.eval(Point::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn closed_form_values() {
        let cf = closed_form_radial_cloak(&identity_bg()).unwrap();
        let c = cf.eval(Point::new(0.0, 1.5)).unwrap();
        let (r, t) = c.frame_blocks(&Point::new(0.0, 1.0));
        assert!(close(r[(0, 0)].re, 1.0 / 3.0, 1e-14) && close(t[(0, 0)].re, 3.0, 1e-14));
        assert!(close(c.b[(0, 0)].re, 4.0 / 3.0, 1e-14));
        let c = cf.eval(Point::new(2.0 - 1e-12, 0.0)).unwrap();
        assert!(close(c.a[0][0][(0, 0)].re, 0.5, 1e-11) && close(c.a[1][1][(0, 0)].re, 2.0, 1e-11));
        assert!(close(c.b[(0, 0)].re, 2.0, 1e-11));
        assert!(cf.eval(Point::new(0.9, 0.0)).is_err() && cf.eval(Point::new(2.0, 0.0)).is_err());
        assert!(hermitian_block_check(&c));
    }

    #[test]
    fn source_pushforward() {
        let one = SourceField::from_fn(1, Support::Ball { center: Point::new(1.0, 0.0), radius: 0.5 }, |_| {
            Ok(crate::CVec::from_element(1, C64::new(1.0, 0.0)))
        });
        let fc = pushforward_source(&blowup_map(), &one).unwrap();
        let y = Point::new(1.5, 0.0);
        assert!(close(fc.eval(y).unwrap()[0].re, 4.0 * 0.5 / 1.5, 1e-14));
        let id = pushforward_source(&identity_map(2.0), &one).unwrap();
        assert_eq!(id.eval(y).unwrap(), one.eval(y).unwrap());
        let g = SourceField::gaussian(1, Point::zeros(), 0.2, 1.0);
        assert!(pushforward_source(&blowup_map(), &g).is_err());
    }

    #[test]
    fn profile_of_identity_and_cloak_shell() {
        let p = radial_profile_of(&identity_bg()).unwrap();
        let v = p.eval(1.3, Side::Above).unwrap();
        assert_eq!((v.a_r[(0, 0)], v.a_theta[(0, 0)], v.b[(0, 0)]), (C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0)));

        let cloak = closed_form_radial_cloak(&identity_bg()).unwrap();
        let p = radial_profile_of(&cloak).unwrap();
        for rho in [1.1, 1.5, 1.9] {
            let v = p.eval(rho, Side::Above).unwrap();
            assert!(close(v.a_r[(0, 0)].re, (rho - 1.0) / rho, 1e-12));
            assert!(close(v.a_theta[(0, 0)].re, rho / (rho - 1.0), 1e-11));
            assert!(close(v.b[(0, 0)].re, 4.0 * (rho - 1.0) / rho, 1e-12));
        }
        assert!(radial_profile_of(&CoefficientField::constant(
            Domain::Disk { radius: 2.0 },
            BlockCoefficient::scalar_tensor(&Mat2::new(2.0, 0.0, 0.0, 1.0), C64::new(1.0, 0.0), 1)
        ))
        .is_err());
    }

    #[test]
    fn regularized_shell_profile_formula() {
        let eps = 1e-2;
        let pf = pushforward_coefficients(&regularized_blowup(eps).unwrap(), &identity_bg()).unwrap();
        assert_eq!(pf.breakpoints, vec![1.0]);
        let prof = radial_profile_of(&pf).unwrap();
        let (a, b) = RadialLaw::affine(eps);
        for rho in [1.0, 1.001, 1.3, 1.99] {
            let r = (rho - a) / b;
            let v = prof.eval(rho, Side::Above).unwrap();
            assert!(close(v.a_r[(0, 0)].re, b * r / rho, 1e-10));
            assert!(close(v.a_theta[(0, 0)].re, rho / (b * r), 1e-8 * rho / (b * r)));
            assert!(close(v.b[(0, 0)].re, r / (b * rho), 1e-10));
        }
        let inner = prof.eval(1.0, Side::Below).unwrap();
        assert!(close(inner.b[(0, 0)].re, eps * eps, 1e-15));
    }

    proptest! {
        #[test]
        fn closed_form_matches_pushforward(rho in 1.0001f64..1.9999, th in 0.0f64..6.283) {
            let pf = pushforward_coefficients(&blowup_map(), &identity_bg()).unwrap();
            let cf = closed_form_radial_cloak(&identity_bg()).unwrap();
            let y = Point::new(rho * th.cos(), rho * th.sin());
            let (a, b) = (pf.eval(y).unwrap(), cf.eval(y).unwrap());
            let scale = max_modulus(&a.block_matrix());
            prop_assert!(max_modulus(&(a.block_matrix() - b.block_matrix())) <= 1e-10 * scale);
            prop_assert!(max_modulus(&(a.b - b.b)) <= 1e-12);
        }

        #[test]
        fn pushforward_preserves_hermitian_blocks(
            vals in proptest::collection::vec(-1.0f64..1.0, 8),
            rho in 1.001f64..1.999, th in 0.0f64..6.283,
        ) {
            let a12 = CMat::from_vec(1, 1, vec![C64::new(vals[0], vals[1])]);
            let blk = BlockCoefficient::new(
                [[CMat::from_element(1, 1, C64::new(2.0 + vals[2], 0.0)), a12.clone()],
                 [a12.adjoint(), CMat::from_element(1, 1, C64::new(2.0 + vals[3], 0.0))]],
                CMat::from_element(1, 1, C64::new(1.0, 0.0)),
            ).unwrap();
            let bg = CoefficientField::constant(Domain::Disk { radius: 2.0 }, blk);
            for f in [blowup_map(), regularized_blowup(0.1).unwrap()] {
                let pf = pushforward_coefficients(&f, &bg).unwrap();
                let c = pf.eval(Point::new(rho * th.cos(), rho * th.sin())).unwrap();
                prop_assert!(hermitian_block_check(&c));
            }
        }

        #[test]
        fn round_trip_inverse(r in 0.05f64..1.95, th in 0.0f64..6.283, eps in 0.01f64..0.5) {
            let x = Point::new(r * th.cos(), r * th.sin());
            for f in [blowup_map(), regularized_blowup(eps).unwrap(), ellipse_map()] {
                let back = f.inverse(f.forward(x).unwrap()).unwrap();
                prop_assert!((back - x).norm() <= 1e-10);
            }
        }

        #[test]
        fn pushforward_round_trip(r in 0.05f64..1.9, th in 0.0f64..6.283) {
            let t = Mat2::new(1.5, 0.2, 0.2, 0.8);
            let bg = CoefficientField::constant(
                Domain::Disk { radius: 2.0 },
                BlockCoefficient::scalar_tensor(&t, C64::new(1.3, 0.0), 1),
            );
            let f = regularized_blowup(0.2).unwrap();
            let there = pushforward_coefficients(&f, &bg).unwrap();
            let back = pushforward_coefficients(&f.inverted(), &there).unwrap();
            let x = Point::new(r * th.cos(), r * th.sin());
            let (a, b) = (back.eval(x).unwrap(), bg.eval(x).unwrap());
            prop_assert!(max_modulus(&(a.block_matrix() - b.block_matrix())) <= 1e-10);
            prop_assert!(max_modulus(&(a.b - b.b)) <= 1e-10);
        }
    }
}
