//! Transformation-optics cloaking in two dimensions.
//!
//! Media are described by block coefficients `(A, B)` of the operator
//! `-div(A grad u) - omega^2 B u = f` acting on `m`-component complex fields.
//! Cloaking media are obtained by pushing a background medium forward under
//! the blow-up map (or its regularized version) and compared through their
//! Dirichlet-to-Neumann maps, computed either mode by mode for radial media
//! ([`radial`]) or with P1 finite elements ([`fem`]).

pub mod coeffs;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod quadrature;
pub mod radial;
pub mod source;
pub mod verify;
pub mod xform;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMat = nalgebra::DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;
pub type Point = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;

/// Evaluation location carrying the exact distance to the unit circle.
///
/// Near the cloaking interface `|y| - 1` cannot be recovered from `y` in
/// floating point, so callers that resolve the interface (graded quadrature)
/// construct probes from the gap directly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub y: Point,
    pub radius: f64,
    pub gap: f64,
}

impl Probe {
    pub fn at(y: Point) -> Self {
        let radius = y.norm();
        Probe { y, radius, gap: radius - 1.0 }
    }

    pub fn polar(radius: f64, theta: f64) -> Self {
        Probe {
            y: Point::new(radius * theta.cos(), radius * theta.sin()),
            radius,
            gap: radius - 1.0,
        }
    }

    /// Point at signed distance `gap` outside the unit circle, at angle `theta`.
    pub fn from_gap(gap: f64, theta: f64) -> Self {
        let radius = 1.0 + gap;
        Probe {
            y: Point::new(radius * theta.cos(), radius * theta.sin()),
            radius,
            gap,
        }
    }

    pub fn unit_direction(&self) -> Point {
        if self.radius > 0.0 {
            self.y / self.radius
        } else {
            Point::new(1.0, 0.0)
        }
    }
}

/// Largest entry modulus of a complex matrix.
pub fn max_modulus(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}
