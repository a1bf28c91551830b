//! Energy functional near the cloaking interface, cutoff sequences, the
//! tangential dichotomy and shell integrals of the conormal gradient.

use std::f64::consts::PI;

use rand::Rng;

use crate::coeffs::{BlockCoefficient, CoefficientField};
use crate::quadrature::{geometric_cells, trapezoid_angles, Rule1d};
use crate::verify::form::Jet;
use crate::{CVec, Error, Point, Probe, Result, C64};

/// Annulus-graded rule in the gap `g = |y| - 1`: cells grow by `ratio` from
/// `fine_floor` up, and by `deep_ratio` from `floor` to `fine_floor`.
#[derive(Clone, Debug)]
pub struct ShellQuadrature {
    pub floor: f64,
    pub fine_floor: f64,
    pub ratio: f64,
    pub deep_ratio: f64,
    pub order: usize,
    pub angles: usize,
    /// Relative tolerance on the difference between orders `order` and `order + 2`.
    pub tol: f64,
}

impl Default for ShellQuadrature {
    fn default() -> Self {
        ShellQuadrature { floor: 1e-10, fine_floor: 1e-10, ratio: 1.2, deep_ratio: 10.0, order: 6, angles: 32, tol: 1e-6 }
    }
}

impl ShellQuadrature {
    pub fn with_floor(&self, floor: f64) -> Self {
        ShellQuadrature { floor, ..self.clone() }
    }

    fn cells(&self, top: f64) -> Vec<(f64, f64)> {
        let split = self.fine_floor.min(top);
        let mut cells = Vec::new();
        if self.floor < split {
            cells.extend(geometric_cells(self.floor, split, self.deep_ratio));
        }
        if split < top {
            cells.extend(geometric_cells(split.max(self.floor), top, self.ratio));
        }
        cells
    }

    /// `int_{floor < g < top} int_theta f(probe) (1 + g) dtheta dg` with two
    /// Gauss orders; returns (value, |difference|).
    pub fn integrate<F>(&self, top: f64, f: F) -> Result<(f64, f64)>
    where
        F: Fn(&Probe) -> Result<f64>,
    {
        let cells = self.cells(top);
        let angles = trapezoid_angles(self.angles);
        let dt = 2.0 * PI / self.angles as f64;
        let mut vals = [0.0; 2];
        for (k, order) in [self.order, self.order + 2].into_iter().enumerate() {
            let rule = Rule1d::on_cells(&cells, order);
            let mut s = 0.0;
            for (&g, &w) in rule.nodes.iter().zip(&rule.weights) {
                let mut ring = 0.0;
                for &t in &angles {
                    ring += f(&Probe::from_gap(g, t))?;
                }
                s += w * (1.0 + g) * ring * dt;
            }
            vals[k] = s;
        }
        Ok((vals[1], (vals[1] - vals[0]).abs()))
    }
}

/// `sum_ab (A^{ab} d_b phi)^* d_a phi + (B phi)^* phi`.
pub fn energy_density(c: &BlockCoefficient, phi: &Jet) -> C64 {
    let mut s = (&c.b * &phi.0).dotc(&phi.0);
    for a in 0..2 {
        for b in 0..2 {
            s += (&c.a[a][b] * &phi.1[b]).dotc(&phi.1[a]);
        }
    }
    s
}

#[derive(Clone, Debug)]
pub struct EnergyValue {
    /// `E = |int energy density|^{1/2}`.
    pub energy: f64,
    pub energy_sq: f64,
    pub error_estimate: f64,
}

/// Energy of `phi` over the shell `1 < |y| < outer`.
pub fn energy_functional<P>(phi: P, field: &CoefficientField, outer: f64, quad: &ShellQuadrature) -> Result<EnergyValue>
where
    P: Fn(&Probe) -> Result<Jet>,
{
    let (re, err) = quad.integrate(outer - 1.0, |p| Ok(energy_density(&field.eval_probe(p)?, &phi(p)?).re))?;
    if err > quad.tol * re.abs().max(1e-300) {
        return Err(Error::Quadrature(format!(
            "energy quadrature estimate {err:.3e} exceeds {:.1e} relative",
            quad.tol
        )));
    }
    let energy_sq = re.abs();
    Ok(EnergyValue { energy: energy_sq.sqrt(), energy_sq, error_estimate: err })
}

/// Jet of a field given in shell coordinates `(g, theta)` from its partials.
pub fn polar_jet(p: &Probe, value: CVec, d_gap: CVec, d_theta: CVec) -> Jet {
    let u = p.unit_direction();
    let t = Point::new(-u[1], u[0]);
    let inv_r = 1.0 / p.radius;
    let g1 = &d_gap * C64::new(u[0], 0.0) + &d_theta * C64::new(t[0] * inv_r, 0.0);
    let g2 = &d_gap * C64::new(u[1], 0.0) + &d_theta * C64::new(t[1] * inv_r, 0.0);
    (value, [g1, g2])
}

/// Smooth cutoff: 1 on `s <= 1/2`, 0 on `s >= 1`, built from `exp(-1/t)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SmoothCutoff;

impl SmoothCutoff {
    fn psi(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        if s <= 0.5 {
            return 1.0;
        }
        if s >= 1.0 {
            return 0.0;
        }
        let (a, b) = (Self::psi(1.0 - s), Self::psi(s - 0.5));
        a / (a + b)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        if s <= 0.5 || s >= 1.0 {
            return 0.0;
        }
        let (a, b) = (Self::psi(1.0 - s), Self::psi(s - 0.5));
        -a * b * (1.0 / (1.0 - s).powi(2) + 1.0 / (s - 0.5).powi(2)) / (a + b).powi(2)
    }
}

/// `phi_eps = rho(ln eps / ln g) c` on the shell (`c` the first unit vector).
pub fn cutoff_field(eps: f64, rho: SmoothCutoff, m: usize, p: &Probe) -> Jet {
    let g = p.gap;
    let l = eps.ln();
    let mut e = CVec::zeros(m);
    e[0] = C64::new(1.0, 0.0);
    let (v, dv) = if g <= 0.0 {
        (1.0, 0.0)
    } else if g >= 1.0 {
        (0.0, 0.0)
    } else {
        let lg = g.ln();
        let s = l / lg;
        (rho.value(s), rho.derivative(s) * (-l / (g * lg * lg)))
    };
    polar_jet(p, &e * C64::new(v, 0.0), &e * C64::new(dv, 0.0), CVec::zeros(m))
}

#[derive(Clone, Debug)]
pub struct CutoffRow {
    pub epsilon: f64,
    pub energy_sq: f64,
    pub energy_sq_times_log: f64,
    pub error_estimate: f64,
}

/// `E^2(phi_eps)` over the shell `1 < |y| < 2` of `field` for each `eps`.
pub fn cutoff_decay_experiment(
    field: &CoefficientField,
    eps_list: &[f64],
    rho: SmoothCutoff,
    quad: &ShellQuadrature,
) -> Result<Vec<CutoffRow>> {
    for w in eps_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidParameter("epsilon list must be decreasing".into()));
        }
    }
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::InvalidParameter(format!("epsilon {eps} must lie in (0, 1)")));
            }
            // below g = eps^2 the field is constant; resolve the transition with the fine ratio
            let floor = (eps * eps * 1e-2).min(quad.floor);
            // For a rotation-invariant medium the integrand does not depend on
            // theta; at theta = 0 the Cartesian frame is the polar one, which
            // keeps the g/r radial entry free of cancellation against r/g.
            let angles = if field.is_radial { 1 } else { quad.angles };
            let q = ShellQuadrature { floor, fine_floor: floor, angles, ..quad.clone() };
            let e = energy_functional(|p| Ok(cutoff_field(eps, rho, field.m, p)), field, 2.0, &q)?;
            Ok(CutoffRow {
                epsilon: eps,
                energy_sq: e.energy_sq,
                energy_sq_times_log: e.energy_sq * eps.ln().abs(),
                error_estimate: e.error_estimate,
            })
        })
        .collect()
}

/// Smooth shell field `c0 + d g + w(g) sum_k (a_k + b_k g) e^{i k theta}`
/// (`k = 1..3`), with `w(g) = g` when `tangential_zero`, else `w = 1`.
#[derive(Clone, Debug)]
pub struct ShellField {
    pub c0: C64,
    pub d: C64,
    pub a: [C64; 3],
    pub b: [C64; 3],
    pub tangential_zero: bool,
}

impl ShellField {
    pub fn random<R: Rng>(rng: &mut R, tangential_zero: bool) -> Self {
        let mut c = || C64::from_polar(rng.random_range(0.5..1.0), rng.random_range(0.0..2.0 * PI));
        ShellField { c0: c(), d: c(), a: [c(), c(), c()], b: [c(), c(), c()], tangential_zero }
    }

    pub fn value(&self, g: f64, theta: f64) -> C64 {
        let w = if self.tangential_zero { g } else { 1.0 };
        let mut s = self.c0 + self.d * g;
        for k in 0..3 {
            s += (self.a[k] + self.b[k] * g) * w * C64::from_polar(1.0, (k + 1) as f64 * theta);
        }
        s
    }

    pub fn jet(&self, p: &Probe) -> Jet {
        let g = p.gap;
        let theta = p.y[1].atan2(p.y[0]);
        let (w, dw) = if self.tangential_zero { (g, 1.0) } else { (1.0, 0.0) };
        let mut dg = self.d;
        let mut dt = C64::new(0.0, 0.0);
        for k in 0..3 {
            let e = C64::from_polar(1.0, (k + 1) as f64 * theta);
            let amp = self.a[k] + self.b[k] * g;
            dg += (self.b[k] * w + amp * dw) * e;
            dt += amp * w * e * C64::new(0.0, (k + 1) as f64);
        }
        let one = |z: C64| CVec::from_element(1, z);
        polar_jet(p, one(self.value(g, theta)), one(dg), one(dt))
    }
}

/// `max_j |phi(theta_{j+1}) - phi(theta_j)| / dtheta` on the interface.
pub fn interface_angular_derivative<F: Fn(f64) -> C64>(trace: F, samples: usize) -> f64 {
    let dt = 2.0 * PI / samples as f64;
    (0..samples)
        .map(|j| (trace((j + 1) as f64 * dt) - trace(j as f64 * dt)).norm() / dt)
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Stabilizes,
    Diverges,
    Inconclusive,
}

/// Gap floors `1e-10, 1e-20, 1e-40, 1e-80, 1e-160` used by the dichotomy.
pub const DICHOTOMY_FLOORS: [f64; 5] = [1e-10, 1e-20, 1e-40, 1e-80, 1e-160];

#[derive(Clone, Debug)]
pub struct DichotomyResult {
    pub energies_sq: Vec<f64>,
    pub stability: Stability,
    pub angular_derivative: f64,
}

/// Energy quadrature of `phi` over the floors in [`DICHOTOMY_FLOORS`]:
/// diverges if the value grows by at least 10% at each of the last three
/// levels, stabilizes if the last level changes it by at most `1e-6` relative.
pub fn tangential_dichotomy(phi: &ShellField, field: &CoefficientField, quad: &ShellQuadrature) -> Result<DichotomyResult> {
    let mut energies = Vec::with_capacity(DICHOTOMY_FLOORS.len());
    let base = ShellQuadrature { floor: DICHOTOMY_FLOORS[0], fine_floor: DICHOTOMY_FLOORS[0], ..quad.clone() };
    let density = |p: &Probe| Ok(energy_density(&field.eval_probe(p)?, &phi.jet(p)).re);
    let (mut total, _) = base.integrate(1.0, density)?;
    energies.push(total);
    for w in DICHOTOMY_FLOORS.windows(2) {
        let q = ShellQuadrature { floor: w[1], fine_floor: w[1], ratio: quad.deep_ratio, ..quad.clone() };
        let (add, _) = q.integrate(w[0], density)?;
        total += add;
        energies.push(total);
    }
    let k = energies.len();
    let growth = |i: usize| (energies[i] - energies[i - 1]) / energies[i - 1].abs().max(1e-300);
    let stability = if (k - 3..k).all(|i| growth(i) >= 0.1) {
        Stability::Diverges
    } else if growth(k - 1).abs() <= 1e-6 {
        Stability::Stabilizes
    } else {
        Stability::Inconclusive
    };
    let angular_derivative = interface_angular_derivative(|t| phi.value(0.0, t), 256);
    Ok(DichotomyResult { energies_sq: energies, stability, angular_derivative })
}

/// Shell integrals `int_{1 < |y| < 1 + delta} |D_A u| dy` with
/// `|D_A u| = (sum_a |sum_b A^{ab} d_b u|^2)^{1/2}`.
pub fn interface_measure_check<U>(u: U, field: &CoefficientField, deltas: &[f64], quad: &ShellQuadrature) -> Result<Vec<f64>>
where
    U: Fn(&Probe) -> Result<Jet>,
{
    deltas
        .iter()
        .map(|&delta| {
            let (v, _) = quad.integrate(delta, |p| {
                let c = field.eval_probe(p)?;
                let (_, g) = u(p)?;
                let mut s = 0.0;
                for a in 0..2 {
                    let flux = &c.a[a][0] * &g[0] + &c.a[a][1] * &g[1];
                    s += flux.norm_squared();
                }
                Ok(s.sqrt())
            })?;
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Domain;
    use crate::xform::closed_form_radial_cloak;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloak() -> CoefficientField {
        closed_form_radial_cloak(&CoefficientField::identity(Domain::Disk { radius: 2.0 }, 1)).unwrap()
    }

    #[test]
    fn cutoff_derivative_matches_differences() {
        let r = SmoothCutoff;
        for s in [0.55, 0.7, 0.85, 0.95] {
            let fd = (r.value(s + 1e-6) - r.value(s - 1e-6)) / 2e-6;
            assert!((fd - r.derivative(s)).abs() < 1e-6);
        }
        assert_eq!(r.value(0.4), 1.0);
        assert_eq!(r.value(1.2), 0.0);
    }

    #[test]
    fn constant_field_energy_is_b_integral() {
        // regular medium B = 1 on the shell 1 < |y| < 2: E^2 = |c|^2 * 3 pi
        let field = CoefficientField::identity(Domain::Disk { radius: 2.0 }, 1);
        let phi = |_: &Probe| Ok((CVec::from_element(1, C64::new(2.0, 0.0)), [CVec::zeros(1), CVec::zeros(1)]));
        let e = energy_functional(phi, &field, 2.0, &ShellQuadrature::default()).unwrap();
        assert!((e.energy_sq - 4.0 * 3.0 * PI).abs() < 1e-8, "{e:?}");
    }

    #[test]
    fn constant_field_has_zero_shell_flux() {
        let phi = |_: &Probe| Ok((CVec::from_element(1, C64::new(1.0, 0.0)), [CVec::zeros(1), CVec::zeros(1)]));
        let v = interface_measure_check(phi, &cloak(), &[0.1, 0.01], &ShellQuadrature::default()).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn dichotomy_on_both_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = cloak();
        let quad = ShellQuadrature::default();
        let good = tangential_dichotomy(&ShellField::random(&mut rng, true), &field, &quad).unwrap();
        assert_eq!(good.stability, Stability::Stabilizes, "{good:?}");
        assert!(good.angular_derivative <= 1e-8);
        let bad = tangential_dichotomy(&ShellField::random(&mut rng, false), &field, &quad).unwrap();
        assert_eq!(bad.stability, Stability::Diverges, "{bad:?}");
        assert!(bad.angular_derivative > 1e-8);
    }
}
