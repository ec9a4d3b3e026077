//! Saint-Venant-Kirchhoff hexahedral finite elements (statics).

pub mod assembly;
pub mod element;
pub mod material;
pub mod newton;
pub mod pcg;
pub mod sparse;

pub use assembly::{internal_forces, tangent_stiffness, Assembler};
pub use element::deformation_gradient_at as deformation_gradient;
pub use material::{green_lagrange, lame_constants, pk2_stress, strain_energy_density, MaterialParams};
pub use newton::{newton_solve, FemSolver, ReportDigest, SolveReport, SolverOptions};
pub use pcg::{solve_pcg, solve_pcg_observed, PcgResult};
pub use sparse::{apply_dirichlet, CsrMatrix, SparseSystem};
