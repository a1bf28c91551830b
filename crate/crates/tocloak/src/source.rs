//! Source terms `f` (complex m-vector fields).

use std::fmt;
use std::sync::Arc;

use crate::{CVec, Point, Probe, Result, C64};

/// Region outside which a source vanishes identically.
#[derive(Clone, Debug, PartialEq)]
pub enum Support {
    Empty,
    Everywhere,
    Ball { center: Point, radius: f64 },
}

impl Support {
    /// True if the closed support contains `p`.
    pub fn touches(&self, p: &Point) -> bool {
        match self {
            Support::Empty => false,
            Support::Everywhere => true,
            Support::Ball { center, radius } => (p - center).norm() <= *radius,
        }
    }
}

pub type SourceFn = dyn Fn(&Probe) -> Result<CVec> + Send + Sync;

#[derive(Clone)]
pub struct SourceField {
    pub m: usize,
    pub support: Support,
    /// True if the field depends on `|y|` only (only the zeroth Fourier mode is nonzero).
    pub is_radial: bool,
    eval: Arc<SourceFn>,
}

impl fmt::Debug for SourceField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceField")
            .field("m", &self.m)
            .field("support", &self.support)
            .field("is_radial", &self.is_radial)
            .finish()
    }
}

impl SourceField {
    pub fn from_fn<F>(m: usize, support: Support, eval: F) -> Self
    where
        F: Fn(&Probe) -> Result<CVec> + Send + Sync + 'static,
    {
        SourceField { m, support, is_radial: false, eval: Arc::new(eval) }
    }

    pub fn radial(mut self) -> Self {
        self.is_radial = true;
        self
    }

    pub fn zero(m: usize) -> Self {
        SourceField::from_fn(m, Support::Empty, move |_| Ok(CVec::zeros(m))).radial()
    }

    /// `amplitude * exp(-|y - center|^2 / (2 sigma^2))` in every component.
    pub fn gaussian(m: usize, center: Point, sigma: f64, amplitude: f64) -> Self {
        let f = SourceField::from_fn(m, Support::Everywhere, move |p| {
            let d2 = (p.y - center).norm_squared();
            let v = amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
            Ok(CVec::from_element(m, C64::new(v, 0.0)))
        });
        if center == Point::zeros() {
            f.radial()
        } else {
            f
        }
    }

    /// `amplitude * |y|^|n| * exp(i n theta)` in every component.
    pub fn angular_mode(m: usize, n: i64, amplitude: f64) -> Self {
        SourceField::from_fn(m, Support::Everywhere, move |p| {
            let theta = p.y[1].atan2(p.y[0]);
            let v = C64::from_polar(amplitude * p.radius.powi(n.unsigned_abs() as i32), n as f64 * theta);
            Ok(CVec::from_element(m, v))
        })
    }

    /// Smooth compactly supported bump `amplitude * exp(1 - 1/(1 - s^2))`,
    /// `s = |y - center| / radius`, in every component.
    pub fn bump(m: usize, center: Point, radius: f64, amplitude: f64) -> Self {
        SourceField::from_fn(m, Support::Ball { center, radius }, move |p| {
            let s2 = (p.y - center).norm_squared() / (radius * radius);
            let v = if s2 < 1.0 { amplitude * (1.0 - 1.0 / (1.0 - s2)).exp() } else { 0.0 };
            Ok(CVec::from_element(m, C64::new(v, 0.0)))
        })
    }

    pub fn eval_probe(&self, p: &Probe) -> Result<CVec> {
        if self.support == Support::Empty {
            return Ok(CVec::zeros(self.m));
        }
        (self.eval)(p)
    }

    pub fn eval(&self, y: Point) -> Result<CVec> {
        self.eval_probe(&Probe::at(y))
    }

    pub fn is_zero(&self) -> bool {
        self.support == Support::Empty
    }

    /// Pointwise sum (the support is the union, coarsened to `Everywhere`).
    pub fn plus(&self, other: &SourceField) -> SourceField {
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.clone();
        }
        let (a, b) = (self.clone(), other.clone());
        let out = SourceField::from_fn(self.m, Support::Everywhere, move |p| {
            Ok(a.eval_probe(p)? + b.eval_probe(p)?)
        });
        if self.is_radial && other.is_radial {
            out.radial()
        } else {
            out
        }
    }

    /// `self` on `|y| < radius`, zero outside.
    pub fn restricted_to_disk(&self, radius: f64) -> SourceField {
        if self.is_zero() {
            return self.clone();
        }
        let a = self.clone();
        let m = self.m;
        let is_radial = self.is_radial;
        let support = match &self.support {
            Support::Ball { center, radius: r } if center.norm() + r <= radius => self.support.clone(),
            _ => Support::Everywhere,
        };
        let out = SourceField::from_fn(m, support, move |p| {
            let inside = if radius == 1.0 { p.gap < 0.0 } else { p.radius < radius };
            if inside {
                a.eval_probe(p)
            } else {
                Ok(CVec::zeros(m))
            }
        });
        if is_radial {
            out.radial()
        } else {
            out
        }
    }
}

/// `inner` on `|y| < radius`, `outer` elsewhere.
pub fn layered_source(inner: &SourceField, outer: &SourceField, radius: f64) -> SourceField {
    if inner.is_zero() && outer.is_zero() {
        return inner.clone();
    }
    let (a, b) = (inner.clone(), outer.clone());
    let is_radial = inner.is_radial && outer.is_radial;
    let out = SourceField::from_fn(inner.m, Support::Everywhere, move |p| {
        let inside = if radius == 1.0 { p.gap < 0.0 } else { p.radius < radius };
        if inside {
            a.eval_probe(p)
        } else {
            b.eval_probe(p)
        }
    });
    if is_radial {
        out.radial()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_vanishes_outside_ball() {
        let f = SourceField::bump(1, Point::new(1.0, 0.0), 0.5, 2.0);
        assert_eq!(f.eval(Point::new(1.6, 0.0)).unwrap()[0], C64::new(0.0, 0.0));
        assert!((f.eval(Point::new(1.0, 0.0)).unwrap()[0].re - 2.0).abs() < 1e-15);
        assert!(!f.support.touches(&Point::new(0.0, 0.0)));
    }

    #[test]
    fn angular_mode_phase() {
        let f = SourceField::angular_mode(1, 2, 1.0);
        let v = f.eval(Point::new(0.0, 0.5)).unwrap()[0];
        assert!((v - C64::new(-0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn restriction_cuts_outside() {
        let f = SourceField::gaussian(2, Point::new(0.0, 0.0), 1.0, 1.0).restricted_to_disk(1.0);
        assert_eq!(f.eval(Point::new(1.5, 0.0)).unwrap(), CVec::zeros(2));
        assert!(f.eval(Point::new(0.5, 0.0)).unwrap()[1].re > 0.8);
    }
}
