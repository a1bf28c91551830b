//! P1 finite elements.

pub mod assemble;
pub mod fredholm;
pub mod mesh;
pub mod solve;

pub use assemble::{assemble, AssembledSystem, FieldSolution, Locator};
pub use mesh::{generate_disk_mesh, generate_layered_mesh, generate_layered_mesh_for_map, BoundaryTag, Mesh};
pub use solve::{dtn_matrix, flux_integral, project_dtn, solve_dirichlet, BoundaryDtN, DirichletSolver, ProjectedDtn};
pub use fredholm::{
    fredholm_diagnose, solve_compatible, solve_constant_trace, ConstantTraceOutcome, ConstantTraceSolution,
    ConstantTraceSystem, FredholmOptions, FredholmReport,
};
