//! Mode-by-mode solution of radial media.
//!
//! For `A = a_r Pi + a_theta (I - Pi)`, `B = b` depending on `r = |y|` only, the
//! Fourier mode `u(r) e^{i n theta}` satisfies
//! `-(1/r)(r a_r u')' + (n^2/r^2) a_theta u - omega^2 b u = f_n`.
//! It is integrated outward as the first-order system in `(u, q = r a_r u')`
//! from the regular solutions at the origin, so the mode DtN block is
//! `Lambda_n = (Q(R)/R) U(R)^{-1}`.
//!
//! Fourier convention: `u(theta) = (2 pi)^{-1/2} sum_n u_n e^{i n theta}`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use ode_solvers::{DVector, Dop853, OutputType, System};
use rayon::prelude::*;

use crate::source::SourceField;
use crate::xform::{ProfilePiece, RadialProfile};
use crate::{CMat, CVec, Error, Probe, Result, C64};

/// Smallest column-normalized singular value of `U(R)` accepted as non-resonant.
pub const RESONANCE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct RadialOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Starting radius of the outward integration.
    pub r0: f64,
    /// Angular samples used to extract source modes.
    pub theta_samples: usize,
    pub parallel: bool,
    /// Repeat each solve at 1/16 of the tolerances and report the difference.
    pub estimate_error: bool,
}

impl Default for RadialOptions {
    fn default() -> Self {
        RadialOptions {
            rtol: 1e-10,
            atol: 1e-12,
            r0: 1e-6,
            theta_samples: 256,
            parallel: true,
            estimate_error: false,
        }
    }
}

/// Fourier coefficients `u_n`, `|n| <= n_max`, of equispaced samples
/// `u(2 pi j / N)`. Needs `N >= 4 n_max` samples.
pub fn fourier_decompose(samples: &[CVec], n_max: usize) -> Result<BTreeMap<i64, CVec>> {
    let count = samples.len();
    if count == 0 {
        return Err(Error::EmptySamples);
    }
    if count < 4 * n_max.max(1) {
        return Err(Error::InvalidParameter(format!(
            "{count} samples cannot resolve modes up to {n_max}"
        )));
    }
    let m = samples[0].len();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::Dimension("samples have different lengths".into()));
    }
    let scale = (2.0 * PI).sqrt() / count as f64;
    let n_max = n_max as i64;
    Ok((-n_max..=n_max)
        .map(|n| {
            let mut acc = CVec::zeros(m);
            for (j, s) in samples.iter().enumerate() {
                let theta = 2.0 * PI * j as f64 / count as f64;
                acc += s * C64::from_polar(scale, -(n as f64) * theta);
            }
            (n, acc)
        })
        .collect())
}

pub fn fourier_reconstruct(modes: &BTreeMap<i64, CVec>, theta: f64) -> CVec {
    let m = modes.values().next().map_or(0, |v| v.len());
    let mut out = CVec::zeros(m);
    for (&n, v) in modes {
        out += v * C64::from_polar((2.0 * PI).powf(-0.5), n as f64 * theta);
    }
    out
}

/// Mode `n` of a source on the circle of radius `r`.
pub fn source_mode(src: &SourceField, n: i64, r: f64, theta_samples: usize) -> Result<CVec> {
    if src.is_zero() {
        return Ok(CVec::zeros(src.m));
    }
    let probe = |theta: f64| {
        if (r - 1.0).abs() < 0.5 {
            Probe::from_gap(r - 1.0, theta)
        } else {
            Probe::polar(r, theta)
        }
    };
    if src.is_radial {
        if n != 0 {
            return Ok(CVec::zeros(src.m));
        }
        return Ok(src.eval_probe(&probe(0.0))? * C64::new((2.0 * PI).sqrt(), 0.0));
    }
    let count = theta_samples.max(8);
    let scale = (2.0 * PI).sqrt() / count as f64;
    let mut acc = CVec::zeros(src.m);
    for j in 0..count {
        let theta = 2.0 * PI * j as f64 / count as f64;
        acc += src.eval_probe(&probe(theta))? * C64::from_polar(scale, -(n as f64) * theta);
    }
    Ok(acc)
}

/// Mode solution at one radius; `flux = a_r u'`.
#[derive(Clone, Debug)]
pub struct ModeSample {
    pub r: f64,
    pub u: CVec,
    pub flux: CVec,
}

#[derive(Clone, Debug)]
pub struct ModeSolution {
    pub n: i64,
    pub omega: f64,
    pub samples: Vec<ModeSample>,
}

impl ModeSolution {
    /// Linear interpolation between integrator steps (constant below the first step).
    pub fn value_at(&self, r: f64) -> CVec {
        let s = &self.samples;
        let k = s.partition_point(|p| p.r < r);
        if k == 0 {
            return s[0].u.clone();
        }
        if k == s.len() {
            return s[k - 1].u.clone();
        }
        let (a, b) = (&s[k - 1], &s[k]);
        let t = (r - a.r) / (b.r - a.r);
        &a.u * C64::new(1.0 - t, 0.0) + &b.u * C64::new(t, 0.0)
    }

    pub fn boundary_flux(&self) -> &CVec {
        &self.samples[self.samples.len() - 1].flux
    }
}

/// DtN block of one mode: boundary flux = `lambda g + offset`.
#[derive(Clone, Debug)]
pub struct ModeDtn {
    pub n: i64,
    pub lambda: CMat,
    /// Flux produced by the source with zero boundary data.
    pub offset: Option<CVec>,
    /// Change of `lambda` (and `offset`) under a 16x tighter tolerance, if requested.
    pub error_estimate: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DtnSpectrum {
    pub omega: f64,
    pub n_max: usize,
    pub modes: Vec<ModeDtn>,
}

impl DtnSpectrum {
    pub fn get(&self, n: i64) -> Option<&ModeDtn> {
        self.modes.iter().find(|d| d.n == n)
    }

    /// `max_n max|lambda_n - other.lambda_n|` over common modes.
    pub fn max_lambda_difference(&self, other: &DtnSpectrum) -> f64 {
        self.modes
            .iter()
            .filter_map(|d| other.get(d.n).map(|e| max_abs(&(&d.lambda - &e.lambda))))
            .fold(0.0, f64::max)
    }

    /// Modal l2 norm of the difference of source offsets (zero offsets if absent).
    pub fn offset_difference(&self, other: &DtnSpectrum) -> f64 {
        self.modes
            .iter()
            .filter_map(|d| {
                let e = other.get(d.n)?;
                let m = d.lambda.nrows();
                let a = d.offset.clone().unwrap_or_else(|| CVec::zeros(m));
                let b = e.offset.clone().unwrap_or_else(|| CVec::zeros(m));
                Some((a - b).norm_squared())
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_error_estimate(&self) -> Option<f64> {
        self.modes.iter().map(|d| d.error_estimate).try_fold(0.0, |acc: f64, e| e.map(|e| acc.max(e)))
    }
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// Right-hand side for all columns of one sub-interval.
struct ModeRhs<'a> {
    piece: &'a ProfilePiece,
    source: Option<&'a SourceField>,
    n: i64,
    omega2: f64,
    m: usize,
    ncols: usize,
    theta_samples: usize,
    failure: &'a RefCell<Option<Error>>,
}

impl ModeRhs<'_> {
    fn eval(&self, r: f64, y: &DVector<f64>, dy: &mut DVector<f64>) -> Result<()> {
        let m = self.m;
        let pv = self.piece.eval(r)?;
        let inv = (&pv.a_r * C64::new(r, 0.0))
            .try_inverse()
            .ok_or_else(|| Error::Integration(format!("a_r is singular at r = {r}")))?;
        let n2 = (self.n * self.n) as f64;
        let k = &pv.a_theta * C64::new(n2 / r, 0.0) - &pv.b * C64::new(self.omega2 * r, 0.0);
        let f = match self.source {
            Some(src) if self.ncols > m => {
                let nudge = 1e-13 * self.piece.hi.max(1.0);
                let rs = r.clamp(self.piece.lo + nudge, self.piece.hi - nudge);
                Some(source_mode(src, self.n, rs, self.theta_samples)?)
            }
            _ => None,
        };
        for c in 0..self.ncols {
            let (u, q) = read_column(y, c, m);
            let du = &inv * &q;
            let mut dq = &k * &u;
            if c == m {
                if let Some(f) = &f {
                    dq -= f * C64::new(r, 0.0);
                }
            }
            write_column(dy, c, m, &du, &dq);
        }
        Ok(())
    }
}

// The radius is carried as the last state component (with derivative 1):
// ode_solvers 0.6 Dop853 mis-times the stages of non-autonomous systems.
impl System<f64, DVector<f64>> for ModeRhs<'_> {
    fn system(&self, _x: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let last = y.len() - 1;
        dy[last] = 1.0;
        if let Err(e) = self.eval(y[last], y, dy) {
            dy.fill(0.0);
            dy[last] = 1.0;
            let mut slot = self.failure.borrow_mut();
            if slot.is_none() {
                *slot = Some(e);
            }
        }
    }
}

fn read_column(y: &DVector<f64>, c: usize, m: usize) -> (CVec, CVec) {
    let o = 4 * m * c;
    let u = CVec::from_fn(m, |i, _| C64::new(y[o + i], y[o + m + i]));
    let q = CVec::from_fn(m, |i, _| C64::new(y[o + 2 * m + i], y[o + 3 * m + i]));
    (u, q)
}

fn write_column(y: &mut DVector<f64>, c: usize, m: usize, u: &CVec, q: &CVec) {
    let o = 4 * m * c;
    for i in 0..m {
        y[o + i] = u[i].re;
        y[o + m + i] = u[i].im;
        y[o + 2 * m + i] = q[i].re;
        y[o + 3 * m + i] = q[i].im;
    }
}

/// Outward integration of the regular homogeneous solutions (and a particular
/// solution vanishing at the start) with per-column logarithmic scales.
struct Run {
    m: usize,
    radii: Vec<f64>,
    states: Vec<DVector<f64>>,
    /// Column log-scales in force for each stored state.
    logs: Vec<Vec<f64>>,
    path_max_log: Vec<f64>,
    has_particular: bool,
}

impl Run {
    fn last(&self) -> (&DVector<f64>, &[f64]) {
        (&self.states[self.states.len() - 1], &self.logs[self.logs.len() - 1])
    }

    fn boundary(&self) -> (CMat, CMat, Option<(CVec, CVec)>) {
        let m = self.m;
        let (y, _) = self.last();
        let mut u = CMat::zeros(m, m);
        let mut q = CMat::zeros(m, m);
        for c in 0..m {
            let (uc, qc) = read_column(y, c, m);
            u.set_column(c, &uc);
            q.set_column(c, &qc);
        }
        let p = self.has_particular.then(|| read_column(y, m, m));
        (u, q, p)
    }

    /// Smallest singular value of `U(R)` with columns scaled by their largest
    /// modulus along the path.
    fn normalized_sigma_min(&self) -> f64 {
        let (u, _, _) = self.boundary();
        let (_, logs) = self.last();
        let mut un = u.clone();
        for c in 0..self.m {
            let s = (logs[c] - self.path_max_log[c]).exp();
            un.column_mut(c).scale_mut(s);
        }
        let sv = un.singular_values();
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn start_exponent(n: i64, a_r: &CMat, a_theta: &CMat) -> Result<f64> {
    let nn = n.unsigned_abs() as f64;
    if a_r.nrows() == 1 {
        let ratio = (a_theta[(0, 0)] / a_r[(0, 0)]).re;
        if !(ratio > 0.0) {
            return Err(Error::InvalidParameter("profile is not elliptic at the origin".into()));
        }
        return Ok(nn * ratio.sqrt());
    }
    let scale = max_abs(a_r).max(1e-300);
    if max_abs(&(a_r - a_theta)) > 1e-8 * scale {
        return Err(Error::InvalidParameter(
            "matrix-valued profiles must be isotropic at the origin".into(),
        ));
    }
    Ok(nn)
}

fn sub_intervals(piece: &ProfilePiece, first: bool, r0: f64) -> Vec<(f64, f64)> {
    let mut edges = Vec::new();
    if first {
        let mut r = r0;
        edges.push(r);
        while r * 10.0 < piece.hi * 0.9 {
            r *= 10.0;
            edges.push(r);
        }
    } else {
        let count = 8;
        edges.extend((0..count).map(|k| piece.lo + (piece.hi - piece.lo) * k as f64 / count as f64));
    }
    edges.push(piece.hi);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

fn integrate(
    profile: &RadialProfile,
    n: i64,
    omega: f64,
    source: Option<&SourceField>,
    opts: &RadialOptions,
) -> Result<Run> {
    let m = profile.m;
    let pieces = profile.pieces();
    if pieces[0].lo != 0.0 {
        return Err(Error::InvalidParameter("radial profiles must start at the origin".into()));
    }
    let source = source.filter(|s| !s.is_zero());
    if let Some(s) = source {
        if s.m != m {
            return Err(Error::Dimension(format!("source has {} components, medium {m}", s.m)));
        }
    }
    let r0 = opts.r0.min(pieces[0].hi * 1e-2);
    let v0 = pieces[0].eval(r0)?;
    let s = start_exponent(n, &v0.a_r, &v0.a_theta)?;
    let ar_inv = v0
        .a_r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Integration("a_r is singular at the origin".into()))?;
    let cmat = &ar_inv * &v0.b * C64::new(omega * omega / (4.0 * (s + 1.0)), 0.0);
    let eye = CMat::identity(m, m);
    let u_start = &eye - &cmat * C64::new(r0 * r0, 0.0);
    let q_start = &v0.a_r * (&eye * C64::new(s, 0.0) - &cmat * C64::new((s + 2.0) * r0 * r0, 0.0));

    let ncols = m + usize::from(source.is_some());
    let mut y = DVector::<f64>::zeros(4 * m * ncols + 1);
    y[4 * m * ncols] = r0;
    for c in 0..m {
        write_column(&mut y, c, m, &u_start.column(c).into_owned(), &q_start.column(c).into_owned());
    }
    let mut logs = vec![s * r0.ln(); m];
    let mut run = Run {
        m,
        radii: vec![r0],
        states: vec![y.clone()],
        logs: vec![logs.clone()],
        path_max_log: vec![f64::NEG_INFINITY; m],
        has_particular: source.is_some(),
    };
    let failure = RefCell::new(None);
    for (ip, piece) in pieces.iter().enumerate() {
        for (a, b) in sub_intervals(piece, ip == 0, r0) {
            let rhs = ModeRhs {
                piece,
                source,
                n,
                omega2: omega * omega,
                m,
                ncols,
                theta_samples: opts.theta_samples,
                failure: &failure,
            };
            let mut solver = Dop853::from_param(
                rhs,
                a,
                b,
                0.0,
                y.clone(),
                opts.rtol,
                opts.atol,
                0.9,
                0.0,
                0.333,
                6.0,
                b - a,
                0.0,
                1_000_000,
                u32::MAX,
                OutputType::Sparse,
            );
            solver
                .integrate()
                .map_err(|e| Error::Integration(format!("mode {n} on [{a}, {b}]: {e:?}")))?;
            if let Some(e) = failure.borrow_mut().take() {
                return Err(e);
            }
            log::trace!("mode {n} on [{a}, {b}]: {} steps", solver.x_out().len());
            let xs = solver.x_out();
            let ys = solver.y_out();
            for (x, state) in xs.iter().zip(ys).skip(1) {
                if state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Integration(format!("mode {n} overflowed at r = {x}")));
                }
                run.radii.push(*x);
                run.states.push(state.clone());
                run.logs.push(logs.clone());
            }
            y = ys[ys.len() - 1].clone();
            y[4 * m * ncols] = b;
            if let Some(last) = run.radii.last_mut() {
                *last = b;
            }
            for c in 0..m {
                let (u, q) = read_column(&y, c, m);
                let scale = u.iter().chain(q.iter()).map(|v| v.norm()).fold(0.0, f64::max);
                if scale > 0.0 {
                    write_column(&mut y, c, m, &(u / C64::new(scale, 0.0)), &(q / C64::new(scale, 0.0)));
                    logs[c] += scale.ln();
                }
            }
        }
    }
    for (state, lg) in run.states.iter().zip(&run.logs) {
        for c in 0..m {
            let (u, _) = read_column(state, c, m);
            let mx = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if mx > 0.0 {
                run.path_max_log[c] = run.path_max_log[c].max(mx.ln() + lg[c]);
            }
        }
    }
    // the stored final state is in the pre-renormalization units of `logs`
    Ok(run)
}

struct Boundary {
    lambda: CMat,
    u: CMat,
    particular: Option<(CVec, CVec)>,
    offset: Option<CVec>,
}

fn boundary_operator(run: &Run, n: i64, omega: f64, radius: f64) -> Result<Boundary> {
    if run.normalized_sigma_min() < RESONANCE_TOL {
        return Err(Error::Resonance { n, omega });
    }
    let (u, q, p) = run.boundary();
    let u_inv = u.clone().try_inverse().ok_or(Error::Resonance { n, omega })?;
    let lambda = &q * &u_inv / C64::new(radius, 0.0);
    let offset = p.as_ref().map(|(up, qp)| qp / C64::new(radius, 0.0) - &lambda * up);
    Ok(Boundary { lambda, u, particular: p, offset })
}

fn tighter(opts: &RadialOptions) -> RadialOptions {
    RadialOptions { rtol: opts.rtol / 16.0, atol: opts.atol / 16.0, ..*opts }
}

/// DtN block of mode `n` (with the source offset if a source is given).
pub fn mode_dtn(
    profile: &RadialProfile,
    n: i64,
    omega: f64,
    source: Option<&SourceField>,
    opts: &RadialOptions,
) -> Result<ModeDtn> {
    let radius = profile.outer_radius();
    let run = integrate(profile, n, omega, source, opts)?;
    let b = boundary_operator(&run, n, omega, radius)?;
    let error_estimate = if opts.estimate_error {
        let fine_run = integrate(profile, n, omega, source, &tighter(opts))?;
        let fine = boundary_operator(&fine_run, n, omega, radius)?;
        let mut e = max_abs(&(&b.lambda - &fine.lambda));
        if let (Some(a), Some(c)) = (&b.offset, &fine.offset) {
            e = e.max((a - c).iter().map(|v| v.norm()).fold(0.0, f64::max));
        }
        Some(e)
    } else {
        None
    };
    Ok(ModeDtn { n, lambda: b.lambda, offset: b.offset, error_estimate })
}

/// Solution of mode `n` with boundary value `g` at the outer radius.
pub fn solve_radial_mode(
    profile: &RadialProfile,
    n: i64,
    omega: f64,
    g: &CVec,
    source: Option<&SourceField>,
    opts: &RadialOptions,
) -> Result<ModeSolution> {
    let m = profile.m;
    if g.len() != m {
        return Err(Error::Dimension(format!("boundary value has {} components, medium {m}", g.len())));
    }
    let radius = profile.outer_radius();
    let run = integrate(profile, n, omega, source, opts)?;
    let b = boundary_operator(&run, n, omega, radius)?;
    let up = b.particular.as_ref().map_or_else(|| CVec::zeros(m), |p| p.0.clone());
    let coef = b
        .u
        .clone()
        .lu()
        .solve(&(g - &up))
        .ok_or(Error::Resonance { n, omega })?;
    let final_logs = run.last().1.to_vec();
    let samples = run
        .radii
        .iter()
        .zip(&run.states)
        .zip(&run.logs)
        .map(|((&r, state), lg)| {
            let (mut u, mut q) = if run.has_particular {
                read_column(state, m, m)
            } else {
                (CVec::zeros(m), CVec::zeros(m))
            };
            for c in 0..m {
                let w = coef[c] * (lg[c] - final_logs[c]).exp();
                let (uc, qc) = read_column(state, c, m);
                u += uc * w;
                q += qc * w;
            }
            ModeSample { r, u, flux: q / C64::new(r, 0.0) }
        })
        .collect();
    Ok(ModeSolution { n, omega, samples })
}

/// DtN blocks for `|n| <= n_max`.
pub fn dtn_spectrum(
    profile: &RadialProfile,
    omega: f64,
    n_max: usize,
    source: Option<&SourceField>,
    opts: &RadialOptions,
) -> Result<DtnSpectrum> {
    let ns: Vec<i64> = (-(n_max as i64)..=n_max as i64).collect();
    let one = |&n: &i64| {
        mode_dtn(profile, n, omega, source, opts).map_err(|e| match e {
            Error::Resonance { .. } => e,
            other => Error::Mode { n, source: Box::new(other) },
        })
    };
    let modes: Result<Vec<ModeDtn>> = if opts.parallel {
        ns.par_iter().map(one).collect()
    } else {
        ns.iter().map(one).collect()
    };
    Ok(DtnSpectrum { omega, n_max, modes: modes? })
}

/// Boundary values `(U(R), Q(R))` of the regular solutions of mode `n`, columns
/// scaled to unit path maximum. Used to locate Dirichlet or Neumann resonances.
pub fn regular_boundary_values(
    profile: &RadialProfile,
    n: i64,
    omega: f64,
    opts: &RadialOptions,
) -> Result<(CMat, CMat)> {
    let run = integrate(profile, n, omega, None, opts)?;
    let (mut u, mut q, _) = run.boundary();
    let (_, logs) = run.last();
    for c in 0..run.m {
        let s = (logs[c] - run.path_max_log[c]).exp();
        u.column_mut(c).scale_mut(s);
        q.column_mut(c).scale_mut(s);
    }
    Ok((u, q))
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect_root<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a)?, f(b)?);
    if fa * fb > 0.0 {
        return Err(Error::InvalidParameter(format!("no sign change on [{lo}, {hi}]")));
    }
    while b - a > tol {
        let c = 0.5 * (a + b);
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if fa * fc < 0.0 {
            b = c;
        } else {
            a = c;
            fa = fc;
        }
    }
    Ok(0.5 * (a + b))
}

/// Dense `m x m` identity, convenient for constant profiles.
pub fn identity_block(m: usize) -> CMat {
    DMatrix::identity(m, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientField, Domain};
    use crate::xform::{radial_profile_of, ProfileValue};
    use crate::Point;

    fn unit(m: usize, radius: f64) -> RadialProfile {
        RadialProfile::constant(m, radius, identity_block(m), identity_block(m)).unwrap()
    }

    fn serial() -> RadialOptions {
        RadialOptions { parallel: false, ..RadialOptions::default() }
    }

    /// Power series of `J_n(x)`.
    fn bessel_j(n: u32, x: f64) -> f64 {
        let mut term = (0.5 * x).powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
        let mut sum = term;
        for k in 1..60 {
            term *= -(0.25 * x * x) / (k as f64 * (k + n) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn laplace_modes_are_harmonic() {
        let p = unit(1, 2.0);
        for n in [-3i64, 0, 1, 2, 5] {
            let d = mode_dtn(&p, n, 0.0, None, &serial()).unwrap();
            assert!((d.lambda[(0, 0)] - C64::new(n.abs() as f64 / 2.0, 0.0)).norm() < 1e-9, "n = {n}");
        }
        let g = CVec::from_element(1, C64::new(1.0, 0.0));
        let sol = solve_radial_mode(&p, 2, 0.0, &g, None, &serial()).unwrap();
        for s in &sol.samples {
            let exact = (s.r / 2.0).powi(2);
            assert!((s.u[0].re - exact).abs() < 1e-10, "r = {}", s.r);
        }
    }

    #[test]
    fn helmholtz_mode_matches_bessel_ratio() {
        let p = unit(1, 1.0);
        let d = mode_dtn(&p, 0, 2.0, None, &serial()).unwrap();
        let exact = -2.0 * bessel_j(1, 2.0) / bessel_j(0, 2.0);
        assert!((d.lambda[(0, 0)].re - exact).abs() < 1e-8);
        let d3 = mode_dtn(&p, 3, 2.0, None, &serial()).unwrap();
        let j3p = 0.5 * (bessel_j(2, 2.0) - bessel_j(4, 2.0));
        assert!((d3.lambda[(0, 0)].re - 2.0 * j3p / bessel_j(3, 2.0)).abs() < 1e-8);
    }

    #[test]
    fn reflection_symmetry_and_error_estimate() {
        let p = unit(2, 2.0);
        let opts = RadialOptions { estimate_error: true, ..serial() };
        let spec = dtn_spectrum(&p, 1.0, 3, None, &opts).unwrap();
        for n in 1..=3 {
            let diff = max_abs(&(&spec.get(n).unwrap().lambda - &spec.get(-n).unwrap().lambda));
            assert!(diff < 1e-12);
        }
        assert!(spec.max_error_estimate().unwrap() < 1e-8);
    }

    #[test]
    fn dirichlet_resonance_is_detected() {
        let p = unit(1, 1.0);
        let root = bisect_root(
            |w| Ok(regular_boundary_values(&p, 1, w, &serial())?.0[(0, 0)].re),
            3.0,
            4.5,
            1e-11,
        )
        .unwrap();
        assert!((root - 3.831_705_970_207_512).abs() < 1e-8);
        let err = mode_dtn(&p, 1, root, None, &serial()).unwrap_err();
        assert!(matches!(err, Error::Resonance { n: 1, .. }));
    }

    #[test]
    fn layered_profile_matches_transmission_solution() {
        // a = 4 on r < 1, a = 1 on 1 < r < 2, omega = 0, mode n:
        // u = c r^n inside, u = r^n + d r^-n outside, continuity of u and a u'.
        let inner = ProfilePiece::new(0.0, 1.0, |_| {
            let a = CMat::from_element(1, 1, C64::new(4.0, 0.0));
            Ok(ProfileValue { a_r: a.clone(), a_theta: a, b: identity_block(1) })
        });
        let outer = ProfilePiece::new(1.0, 2.0, |_| {
            Ok(ProfileValue { a_r: identity_block(1), a_theta: identity_block(1), b: identity_block(1) })
        });
        let p = RadialProfile::new(1, vec![inner, outer]).unwrap();
        let n = 2i64;
        // c = 1 + d, 4 c = 1 - d  => d = -3/5
        let d = -0.6;
        let (u, du) = (4.0 + d / 4.0, 2.0 * (2.0 - d / 8.0));
        let lam = mode_dtn(&p, n, 0.0, None, &serial()).unwrap().lambda[(0, 0)].re;
        assert!((lam - du / u).abs() < 1e-9);
    }

    #[test]
    fn radial_source_offset_matches_closed_form() {
        // -Lap u = 1 on the unit disk, u = 0 on the boundary: u = (1 - r^2)/4, u_r(1) = -1/2.
        let p = unit(1, 1.0);
        let f = SourceField::from_fn(1, crate::source::Support::Everywhere, |_| {
            Ok(CVec::from_element(1, C64::new(1.0, 0.0)))
        })
        .radial();
        let d = mode_dtn(&p, 0, 0.0, Some(&f), &serial()).unwrap();
        let expected = -0.5 * (2.0 * PI).sqrt();
        assert!((d.offset.unwrap()[0].re - expected).abs() < 1e-9);
        // same answer through angular sampling
        let g = SourceField::from_fn(1, crate::source::Support::Everywhere, |_| {
            Ok(CVec::from_element(1, C64::new(1.0, 0.0)))
        });
        let d = mode_dtn(&p, 0, 0.0, Some(&g), &serial()).unwrap();
        assert!((d.offset.unwrap()[0].re - expected).abs() < 1e-9);
    }

    #[test]
    fn fourier_round_trip() {
        let n_max = 4;
        let samples: Vec<CVec> = (0..32)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / 32.0;
                CVec::from_vec(vec![C64::new(t.cos() + 0.5, (3.0 * t).sin())])
            })
            .collect();
        let modes = fourier_decompose(&samples, n_max).unwrap();
        let c = (2.0 * PI).sqrt();
        assert!((modes[&1][0] - C64::new(0.5 * c, 0.0)).norm() < 1e-13);
        assert!((modes[&0][0] - C64::new(0.5 * c, 0.0)).norm() < 1e-13);
        assert!((modes[&3][0] - C64::new(0.5 * c, 0.0)).norm() < 1e-13);
        assert!((modes[&-3][0] - C64::new(-0.5 * c, 0.0)).norm() < 1e-13);
        let back = fourier_reconstruct(&modes, 0.3);
        assert!((back[0] - samples_at(0.3)).norm() < 1e-12);
        assert!(fourier_decompose(&samples[..12], n_max).is_err());

        fn samples_at(t: f64) -> C64 {
            C64::new(t.cos() + 0.5, (3.0 * t).sin())
        }
    }

    #[test]
    fn profile_from_identity_field() {
        let field = CoefficientField::identity(Domain::Disk { radius: 2.0 }, 1);
        let p = radial_profile_of(&field).unwrap();
        let d = mode_dtn(&p, 1, 1.0, None, &serial()).unwrap();
        let j1p = 0.5 * (bessel_j(0, 2.0) - bessel_j(2, 2.0));
        assert!((d.lambda[(0, 0)].re - j1p / bessel_j(1, 2.0)).abs() < 1e-8);
        let _ = Point::zeros();
    }
}
