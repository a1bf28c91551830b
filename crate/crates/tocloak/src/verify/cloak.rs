//! Near-cloak DtN sweeps (spectral and FEM) and the FEM/spectral cross-check.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::fem::assemble::assemble;
use crate::fem::mesh::{generate_disk_mesh, generate_layered_mesh_for_map, Mesh};
use crate::fem::solve::{project_dtn, spectral_norm, ProjectedDtn};
use crate::radial::{dtn_spectrum, DtnSpectrum, RadialOptions};
use crate::verify::scenario::{is_identity, Medium, Scenario, SolverChoice};
use crate::xform::{compose, radial_profile_of, regularized_blowup, RadialLaw};
use crate::{Error, Result};

/// Fourier modes `|n| <= FEM_MODES` used to compare FEM DtN matrices.
pub const FEM_MODES: i64 = 4;

#[derive(Clone, Debug)]
pub enum DtnOperator {
    Modal(DtnSpectrum),
    Projected(ProjectedDtn),
}

#[derive(Clone, Debug)]
pub struct CloakReport {
    pub epsilon: f64,
    pub dtn_background: DtnOperator,
    pub dtn_cloaked: DtnOperator,
    /// Per-mode `|lambda_cloak - lambda_bg|` (spectral norm for `m > 1`).
    pub mode_errors: Vec<(i64, f64)>,
    /// Maximum mode error (spectral) or relative operator-norm error (FEM).
    pub error: f64,
    /// Difference of the source-induced Neumann data (modal l2 norm).
    pub offset_error: f64,
    pub elapsed: Duration,
}

fn modal_errors(a: &DtnSpectrum, b: &DtnSpectrum) -> Vec<(i64, f64)> {
    a.modes
        .iter()
        .filter_map(|ma| b.get(ma.n).map(|mb| (ma.n, spectral_norm(&(&ma.lambda - &mb.lambda)))))
        .collect()
}

/// Difference between two DtN operators of the same kind: the larger of the
/// homogeneous part (max mode error, or relative operator norm) and the
/// source-induced part.
pub fn dtn_difference(a: &DtnOperator, b: &DtnOperator) -> Result<f64> {
    match (a, b) {
        (DtnOperator::Modal(a), DtnOperator::Modal(b)) => Ok(a.max_lambda_difference(b).max(a.offset_difference(b))),
        (DtnOperator::Projected(a), DtnOperator::Projected(b)) => {
            Ok(a.relative_difference(b).max((&a.offset - &b.offset).norm() / b.norm()))
        }
        _ => Err(Error::InvalidParameter("DtN operators of different kinds".into())),
    }
}

/// Spectral DtN of a radial medium on the disk of radius 2.
pub fn spectral_dtn(medium: &Medium, omega: f64, n_max: usize, opts: &RadialOptions) -> Result<DtnSpectrum> {
    let profile = radial_profile_of(&medium.field)?;
    let src = (!medium.source.is_zero()).then_some(&medium.source);
    dtn_spectrum(&profile, omega, n_max, src, opts)
}

/// Mesh of `G(disk of radius 2)` for the background.
pub fn background_mesh(scenario: &Scenario, h: f64) -> Result<Mesh> {
    let mesh = generate_disk_mesh(&[2.0], h)?;
    if is_identity(&scenario.g) {
        Ok(mesh)
    } else {
        mesh.mapped(&scenario.g)
    }
}

/// Ring chord sagitta allowed in the cloak shell, relative to the radial gap, per unit `h`.
pub const CLOAK_FLATNESS_PER_H: f64 = 0.2;

/// Mesh of the near-cloak geometry: a reference disk mesh with a ring at
/// `epsilon` (element size `epsilon * h` inside it) mapped by `G o F_eps`, so
/// the interface `G(unit circle)` is resolved and the shell elements follow
/// the stretching of the cloak. Ring counts in the shell are raised so that
/// the mapped rings stay flat on the scale of the radial spacing.
pub fn cloak_mesh(scenario: &Scenario, h: f64) -> Result<Mesh> {
    let eps = scenario.epsilon;
    let law = RadialLaw::Regularized { eps };
    let reference =
        generate_layered_mesh_for_map(&[(eps, eps * h), (2.0, h)], &|r| law.radius(r), CLOAK_FLATNESS_PER_H * h)?;
    let f = regularized_blowup(eps)?;
    if is_identity(&scenario.g) {
        reference.mapped(&f)
    } else {
        reference.mapped(&compose(&scenario.g, &f)?)
    }
}

pub fn fem_dtn(mesh: Mesh, medium: &Medium, omega: f64, modes: &[i64]) -> Result<ProjectedDtn> {
    let mesh = Arc::new(mesh);
    let sys = assemble(&mesh, &medium.field, omega, &medium.source)?;
    project_dtn(&sys, modes)
}

fn fem_modes() -> Vec<i64> {
    (-FEM_MODES..=FEM_MODES).collect()
}

fn background_dtn(scenario: &Scenario, opts: &RadialOptions) -> Result<DtnOperator> {
    match scenario.solver {
        SolverChoice::Spectral { n_max } => {
            if !is_identity(&scenario.g) {
                return Err(Error::InvalidParameter("the spectral solver needs G = identity".into()));
            }
            Ok(DtnOperator::Modal(spectral_dtn(&scenario.background, scenario.omega, n_max, opts)?))
        }
        SolverChoice::Fem { h } => Ok(DtnOperator::Projected(fem_dtn(
            background_mesh(scenario, h)?,
            &scenario.physical_background()?,
            scenario.omega,
            &fem_modes(),
        )?)),
    }
}

fn cloak_report(scenario: &Scenario, background: &DtnOperator, opts: &RadialOptions) -> Result<CloakReport> {
    let start = Instant::now();
    let eps = scenario.epsilon;
    let cloaked = match scenario.solver {
        SolverChoice::Spectral { n_max } => DtnOperator::Modal(spectral_dtn(
            &scenario.cloaked_reference_medium()?,
            scenario.omega,
            n_max,
            opts,
        )?),
        SolverChoice::Fem { h } => DtnOperator::Projected(fem_dtn(
            cloak_mesh(scenario, h)?,
            &scenario.physical_cloak()?,
            scenario.omega,
            &fem_modes(),
        )?),
    };
    let (mode_errors, error, offset_error) = match (background, &cloaked) {
        (DtnOperator::Modal(b), DtnOperator::Modal(c)) => {
            let errs = modal_errors(c, b);
            let max = errs.iter().map(|e| e.1).fold(0.0, f64::max);
            (errs, max, c.offset_difference(b))
        }
        (DtnOperator::Projected(b), DtnOperator::Projected(c)) => {
            let errs = b
                .modes
                .iter()
                .map(|&n| {
                    let d = c.block(n).expect("same modes") - b.block(n).expect("same modes");
                    (n, spectral_norm(&d))
                })
                .collect();
            (errs, c.relative_difference(b), (&c.offset - &b.offset).norm() / b.norm())
        }
        _ => unreachable!("background and cloak use the same solver"),
    };
    log::info!("epsilon {eps:e}: DtN error {error:.6e}");
    Ok(CloakReport {
        epsilon: eps,
        dtn_background: background.clone(),
        dtn_cloaked: cloaked,
        mode_errors,
        error,
        offset_error,
        elapsed: start.elapsed(),
    })
}

fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("empty epsilon list".into()));
    }
    for w in eps_list.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::InvalidParameter("epsilon list must be decreasing".into()));
        }
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidParameter("epsilon values must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Cloaked-vs-background DtN errors for each `epsilon` (spectral when the
/// scenario asks for it, FEM otherwise). A resonance of the background at
/// `omega` is reported as an error.
pub fn near_cloak_sweep(template: &Scenario, eps_list: &[f64], opts: &RadialOptions) -> Result<Vec<CloakReport>> {
    check_eps_list(eps_list)?;
    template.with_epsilon(eps_list[0]).validate()?;
    let background = background_dtn(template, opts)?;
    eps_list.iter().map(|&eps| cloak_report(&template.with_epsilon(eps), &background, opts)).collect()
}

/// FEM sweep for a general `G` (`K = G o F_eps o G^{-1}`).
pub fn general_cloak_experiment(template: &Scenario, eps_list: &[f64], h: f64) -> Result<Vec<CloakReport>> {
    let scenario = Scenario { solver: SolverChoice::Fem { h }, ..template.clone() };
    near_cloak_sweep(&scenario, eps_list, &RadialOptions::default())
}

/// DtN difference between two interior fillings at one `epsilon` (spectral).
pub fn filling_difference(a: &Scenario, b: &Scenario, opts: &RadialOptions) -> Result<f64> {
    let n_max = match a.solver {
        SolverChoice::Spectral { n_max } => n_max,
        SolverChoice::Fem { .. } => return Err(Error::InvalidParameter("filling comparison is spectral".into())),
    };
    let da = spectral_dtn(&a.cloaked_reference_medium()?, a.omega, n_max, opts)?;
    let db = spectral_dtn(&b.cloaked_reference_medium()?, b.omega, n_max, opts)?;
    dtn_difference(&DtnOperator::Modal(da), &DtnOperator::Modal(db))
}

/// Per-mode comparison of the FEM DtN with the spectral one.
#[derive(Clone, Debug)]
pub struct CrossSolverReport {
    pub h: f64,
    /// `(n, lambda_spectral, lambda_fem, relative error)` for `m = 1` entries.
    pub modes: Vec<(i64, crate::C64, crate::C64, f64)>,
    pub max_relative_error: f64,
    /// Largest off-mode to on-mode energy ratio over the modes.
    pub max_off_mode_ratio: f64,
}

/// FEM vs spectral DtN for a radial scenario (the near cloak if `epsilon > 0`,
/// else the background), modes `|n| <= n_max`.
pub fn cross_solver_check(scenario: &Scenario, h: f64, n_max: i64, opts: &RadialOptions) -> Result<CrossSolverReport> {
    if scenario.m != 1 || !is_identity(&scenario.g) {
        return Err(Error::InvalidParameter("cross-solver check needs m = 1 and G = identity".into()));
    }
    let (medium, mesh) = if scenario.epsilon > 0.0 {
        (scenario.cloaked_reference_medium()?, cloak_mesh(scenario, h)?)
    } else {
        (scenario.background.clone(), background_mesh(scenario, h)?)
    };
    let spectral = spectral_dtn(&medium, scenario.omega, n_max as usize, opts)?;
    let modes: Vec<i64> = (-n_max..=n_max).collect();
    let fem = fem_dtn(mesh, &medium, scenario.omega, &modes)?;
    let mut out = Vec::new();
    let mut worst: f64 = 0.0;
    let mut off: f64 = 0.0;
    for &n in &modes {
        let ls = spectral.get(n).expect("mode computed").lambda[(0, 0)];
        let lf = fem.block(n).expect("mode projected")[(0, 0)];
        let rel = (lf - ls).norm() / ls.norm().max(1e-300);
        worst = worst.max(rel);
        off = off.max(fem.off_mode_ratio(n).unwrap_or(0.0));
        out.push((n, ls, lf, rel));
    }
    Ok(CrossSolverReport { h, modes: out, max_relative_error: worst, max_off_mode_ratio: off })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{BlockCoefficient, CoefficientField, Domain};
    use crate::source::SourceField;
    use crate::{CMat, C64};

    fn opts() -> RadialOptions {
        RadialOptions { parallel: false, ..Default::default() }
    }

    #[test]
    fn cloak_mesh_stays_valid_for_small_epsilon() {
        let mut s = Scenario::radial_default(1, 0.01);
        s.g = crate::xform::ellipse_map();
        for h in [0.1, 0.05] {
            let m = cloak_mesh(&s, h).unwrap();
            m.validate().unwrap();
        }
    }

    #[test]
    fn spectral_sweep_decreases() {
        let s = Scenario { solver: SolverChoice::Spectral { n_max: 4 }, ..Scenario::radial_default(1, 0.1) };
        let reps = near_cloak_sweep(&s, &[1e-1, 1e-2, 1e-3], &opts()).unwrap();
        assert!(reps[0].error > reps[1].error && reps[1].error > reps[2].error);
        let n0 = reps[2].mode_errors.iter().find(|e| e.0 == 0).unwrap().1;
        assert!(n0 == reps[2].error);
    }

    #[test]
    fn fillings_differ_less_as_epsilon_shrinks() {
        let a = Scenario { solver: SolverChoice::Spectral { n_max: 2 }, ..Scenario::radial_default(1, 1e-1) };
        let mut b = a.clone();
        let c = BlockCoefficient::isotropic(
            &CMat::from_element(1, 1, C64::new(5.0, 0.0)),
            &CMat::from_element(1, 1, C64::new(2.0, 0.0)),
        );
        b.interior = Medium::new(
            CoefficientField::constant(Domain::Disk { radius: 1.0 }, c),
            SourceField::gaussian(1, crate::Point::zeros(), 0.25, 1.0),
        )
        .unwrap();
        let d1 = filling_difference(&a, &b, &opts()).unwrap();
        let d2 = filling_difference(&a.with_epsilon(1e-3), &b.with_epsilon(1e-3), &opts()).unwrap();
        assert!(d2 < d1, "{d1} {d2}");
    }

    #[test]
    fn fem_background_matches_spectral_coarsely() {
        let s = Scenario::radial_default(1, 0.0);
        let r = cross_solver_check(&s, 0.2, 2, &opts()).unwrap();
        assert!(r.max_relative_error < 0.1, "{r:?}");
        assert!(r.max_off_mode_ratio < 1e-2, "{r:?}");
    }

    #[test]
    fn mapped_cloak_mesh_resolves_interface() {
        let mut s = Scenario::radial_default(1, 0.1);
        s.g = crate::xform::ellipse_map();
        let mesh = cloak_mesh(&s, 0.3).unwrap();
        let iface = mesh.tagged_nodes(crate::fem::mesh::BoundaryTag::Interface);
        for i in iface {
            let p = mesh.nodes[i];
            assert!(((p[0] / 2.0).powi(2) + p[1].powi(2) - 1.0).abs() < 1e-10);
        }
    }
}
