use tocloak::fem::{generate_disk_mesh, Mesh};
use tocloak::radial::RadialOptions;
use tocloak::verify::cloak::{cross_solver_check, near_cloak_sweep};
use tocloak::verify::scenario::{Scenario, SolverChoice};

fn serial() -> RadialOptions {
    RadialOptions { parallel: false, ..Default::default() }
}

#[test]
fn mesh_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("disk.mesh");
    let mesh = generate_disk_mesh(&[1.0, 2.0], 0.2).unwrap();
    mesh.write(&path).unwrap();
    let back = Mesh::read(&path).unwrap();
    assert_eq!(back.to_text(), mesh.to_text());
    assert_eq!(back.nodes, mesh.nodes);
}

#[test]
fn spectral_sweep_is_monotone_and_deterministic() {
    let t = Scenario { solver: SolverChoice::Spectral { n_max: 4 }, ..Scenario::radial_default(1, 0.1) };
    let eps = [1e-1, 1e-2, 1e-3];
    let a = near_cloak_sweep(&t, &eps, &serial()).unwrap();
    let b = near_cloak_sweep(&t, &eps, &RadialOptions::default()).unwrap();
    let errs: Vec<f64> = a.iter().map(|r| r.error).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.error.to_bits(), y.error.to_bits());
    }
}

#[test]
fn fem_background_matches_spectral() {
    let s = Scenario::radial_default(1, 0.0);
    let r = cross_solver_check(&s, 0.1, 2, &serial()).unwrap();
    assert!(r.max_relative_error < 2e-2, "{}", r.max_relative_error);
    assert!(r.max_off_mode_ratio < 1e-6, "{}", r.max_off_mode_ratio);
}
