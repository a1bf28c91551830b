//! Experiment descriptions and the media they induce.

use crate::coeffs::{CoefficientField, Domain};
use crate::source::{layered_source, SourceField, Support};
use crate::xform::{conjugated_map, identity_map, pushforward_coefficients, pushforward_source, regularized_blowup, DiffeoMap, MapKind};
use crate::{Error, Mat2, Probe, Result};

/// Coefficients plus source.
#[derive(Clone, Debug)]
pub struct Medium {
    pub field: CoefficientField,
    pub source: SourceField,
}

impl Medium {
    pub fn new(field: CoefficientField, source: SourceField) -> Result<Self> {
        if field.m != source.m {
            return Err(Error::Dimension(format!(
                "medium has {} components, source {}",
                field.m, source.m
            )));
        }
        Ok(Medium { field, source })
    }

    /// Identity coefficients, no source.
    pub fn identity(domain: Domain, m: usize) -> Self {
        Medium { field: CoefficientField::identity(domain, m), source: SourceField::zero(m) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverChoice {
    Spectral { n_max: usize },
    Fem { h: f64 },
}

/// A cloaking experiment: background on the reference disk of radius 2, cloak
/// parameters `(epsilon, G)` and the interior filling on the unit disk (before `G`).
#[derive(Clone, Debug)]
pub struct Scenario {
    pub omega: f64,
    pub m: usize,
    pub background: Medium,
    pub epsilon: f64,
    pub g: DiffeoMap,
    pub interior: Medium,
    pub solver: SolverChoice,
}

pub fn is_identity(g: &DiffeoMap) -> bool {
    matches!(g.kind, MapKind::Linear(m) if m == Mat2::identity())
}

impl Scenario {
    /// Identity background and filling, `omega = 1`, spectral solver with `n_max = 16`.
    pub fn radial_default(m: usize, epsilon: f64) -> Self {
        Scenario {
            omega: 1.0,
            m,
            background: Medium::identity(Domain::Disk { radius: 2.0 }, m),
            epsilon,
            g: identity_map(2.0),
            interior: Medium::identity(Domain::Disk { radius: 1.0 }, m),
            solver: SolverChoice::Spectral { n_max: 16 },
        }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Scenario { epsilon, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega {} must be finite and nonnegative", self.omega)));
        }
        for (name, f, s) in [
            ("background", &self.background.field, &self.background.source),
            ("interior", &self.interior.field, &self.interior.source),
        ] {
            if f.m != self.m || s.m != self.m {
                return Err(Error::Dimension(format!("{name} does not have {} components", self.m)));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon {} must lie in [0, 1)", self.epsilon)));
        }
        if self.g.domain != (Domain::Disk { radius: 2.0 }) {
            return Err(Error::InvalidParameter(format!("G ({}) must be defined on the disk of radius 2", self.g.name)));
        }
        if let Support::Ball { center, radius } = &self.background.source.support {
            if center.norm() <= *radius {
                return Err(Error::InvalidParameter("background source support contains the blow-up point".into()));
            }
        }
        Ok(())
    }

    /// Cloaked medium before `G`: the interior filling on `|y| < 1` and the
    /// `F_eps` push-forward of the background on `1 < |y| < 2`.
    pub fn cloaked_reference_medium(&self) -> Result<Medium> {
        let f = regularized_blowup(self.epsilon)?;
        let shell = pushforward_coefficients(&f, &self.background.field)?;
        let shell_src = pushforward_source(&f, &self.background.source)?;
        let field = CoefficientField::layered(self.interior.field.clone(), shell, 1.0)?;
        let source = layered_source(&self.interior.source, &shell_src, 1.0);
        Medium::new(field, source)
    }

    /// Background medium on `G(disk of radius 2)`.
    pub fn physical_background(&self) -> Result<Medium> {
        if is_identity(&self.g) {
            return Ok(self.background.clone());
        }
        Medium::new(
            pushforward_coefficients(&self.g, &self.background.field)?,
            pushforward_source(&self.g, &self.background.source)?,
        )
    }

    /// Near-cloak medium on `G(disk of radius 2)`: the shell is the push-forward
    /// of the mapped background by `K = G o F_eps o G^{-1}`, the cloaked region
    /// holds the mapped interior filling.
    pub fn physical_cloak(&self) -> Result<Medium> {
        if is_identity(&self.g) {
            return self.cloaked_reference_medium();
        }
        let bg = self.physical_background()?;
        let k = conjugated_map(&self.g, &regularized_blowup(self.epsilon)?)?;
        let shell = pushforward_coefficients(&k, &bg.field)?;
        let shell_src = pushforward_source(&k, &bg.source)?;
        let interior = pushforward_coefficients(&self.g, &self.interior_on_reference_disk()?)?;
        let interior_src = pushforward_source(&self.g, &self.interior.source)?;
        let g = self.g.clone();
        let inside = move |p: &Probe| -> Result<bool> { Ok(g.inverse_probe(p)?.norm() < 1.0) };
        let inside_f = inside.clone();
        let field = CoefficientField::from_fn(shell.domain.clone(), self.m, false, move |p| {
            if inside_f(p)? {
                interior.eval_probe(p)
            } else {
                shell.eval_probe(p)
            }
        });
        let source = if interior_src.is_zero() && shell_src.is_zero() {
            SourceField::zero(self.m)
        } else {
            SourceField::from_fn(self.m, Support::Everywhere, move |p| {
                if inside(p)? {
                    interior_src.eval_probe(p)
                } else {
                    shell_src.eval_probe(p)
                }
            })
        };
        Medium::new(field, source)
    }

    /// The interior filling extended to the disk of radius 2 (values outside
    /// the unit disk are never used) so that it can be mapped by `G`.
    fn interior_on_reference_disk(&self) -> Result<CoefficientField> {
        let inner = self.interior.field.clone();
        Ok(CoefficientField::from_fn(Domain::Disk { radius: 2.0 }, self.m, inner.is_radial, move |p| {
            let q = if p.radius < 1.0 { *p } else { Probe::polar(1.0 - 1e-12, p.y[1].atan2(p.y[0])) };
            inner.eval_probe(&q)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xform::ellipse_map;
    use crate::Point;

    #[test]
    fn mapped_cloak_agrees_with_mapped_reference_cloak() {
        let mut s = Scenario::radial_default(1, 0.1);
        s.g = ellipse_map();
        let phys = s.physical_cloak().unwrap();
        let reference = s.cloaked_reference_medium().unwrap();
        let via_g = pushforward_coefficients(&s.g, &reference.field).unwrap();
        for y in [Point::new(3.0, 0.5), Point::new(0.4, 0.2), Point::new(-1.0, 1.5)] {
            let a = phys.field.eval(y).unwrap();
            let b = via_g.eval(y).unwrap();
            assert!(crate::max_modulus(&(a.block_matrix() - b.block_matrix())) < 1e-10);
        }
    }

    #[test]
    fn source_near_origin_is_rejected() {
        let mut s = Scenario::radial_default(1, 0.1);
        s.background.source = SourceField::bump(1, Point::new(0.1, 0.0), 0.3, 1.0);
        assert!(s.validate().is_err());
    }
}
