//! Newton-Raphson with incremental load continuation.
//!
//! The load is applied in increments, starting with one. An increment fails
//! when the residual grows for `divergence_window` consecutive iterations, hits
//! the iteration cap, or the linear solve breaks down; the increment is then
//! halved and retried from the last converged state, down to
//! `2^-max_increment_halvings` of the full load.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::assembly::Assembler;
use super::material::MaterialParams;
use super::pcg::{norm, solve_pcg};
use super::sparse::{apply_dirichlet, SparseSystem};
use crate::domain::HexMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative residual tolerance of Newton.
    pub newton_tol: f64,
    /// Relative residual tolerance of each PCG solve.
    pub cg_tol: f64,
    /// Newton iteration cap per increment.
    pub max_newton_iters: usize,
    pub max_increment_halvings: u32,
    /// Number of equal increments to start with.
    pub initial_increments: usize,
    pub divergence_window: usize,
    /// Absolute floor (N) for the residual scale.
    pub residual_floor: f64,
    /// PCG cap; `None` means ten times the system size.
    pub max_cg_iters: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-6,
            cg_tol: 1e-8,
            max_newton_iters: 50,
            max_increment_halvings: 6,
            initial_increments: 1,
            divergence_window: 3,
            residual_floor: 1e-12,
            max_cg_iters: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub newton_iterations: usize,
    pub load_increments: usize,
    pub halvings: u32,
    pub final_residual: f64,
    pub cg_iterations: usize,
    /// Elements with an inverted Gauss point in the returned state.
    pub inverted_elements: usize,
    /// Residual norms of the last increment, one per Newton iterate.
    pub residual_trace: Vec<f64>,
    pub wall_time: f64,
}

/// Timing-free summary of a [`SolveReport`], stable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDigest {
    pub newton_iterations: usize,
    pub load_increments: usize,
    pub final_residual: f64,
    pub cg_iterations: usize,
}

impl SolveReport {
    pub fn digest(&self) -> ReportDigest {
        ReportDigest {
            newton_iterations: self.newton_iterations,
            load_increments: self.load_increments,
            final_residual: self.final_residual,
            cg_iterations: self.cg_iterations,
        }
    }
}

/// Discrete equilibrium problem in some set of coordinates.
pub(crate) trait NonlinearProblem {
    fn size(&self) -> usize;

    /// Norm of the full external load in the problem's coordinates.
    fn external_norm(&self) -> f64;

    /// Writes `load * f_ext - r(q)`.
    fn residual(&mut self, q: &[f64], load: f64, out: &mut [f64]);

    /// Solves `K(q) δ = rhs`; returns the correction and linear iterations.
    fn solve_linearized(&mut self, q: &[f64], rhs: &[f64]) -> Result<(Vec<f64>, usize)>;
}

enum Increment {
    Converged(Vec<f64>),
    Diverged(f64),
}

pub(crate) fn solve_continuation<P: NonlinearProblem>(
    problem: &mut P,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let n = problem.size();
    let fnorm = problem.external_norm();
    let min_step = 0.5f64.powi(opts.max_increment_halvings as i32);
    let mut report = SolveReport::default();
    let mut state = vec![0.0; n];
    let mut done = 0.0f64;
    let mut step = 1.0 / opts.initial_increments.max(1) as f64;
    let mut untouched = true;
    let mut last_residual = 0.0;

    while done < 1.0 {
        let mut target = (done + step).min(1.0);
        if 1.0 - target < 1e-12 {
            target = 1.0;
        }
        let mut trial = state.clone();
        match newton_increment(problem, &mut trial, target, fnorm, opts, &mut report, &mut untouched)? {
            Increment::Converged(trace) => {
                last_residual = *trace.last().unwrap();
                report.residual_trace = trace;
                report.load_increments += 1;
                state = trial;
                done = target;
            }
            Increment::Diverged(residual) => {
                step *= 0.5;
                report.halvings += 1;
                log::debug!("increment to {target:.4} diverged (residual {residual:.3e}); step now {step}");
                if step < min_step {
                    return Err(Error::NewtonNotConverged {
                        load_fraction: done,
                        residual,
                        best_state: state,
                    });
                }
            }
        }
    }
    report.final_residual = last_residual;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((state, report))
}

fn newton_increment<P: NonlinearProblem>(
    problem: &mut P,
    q: &mut [f64],
    load: f64,
    fnorm: f64,
    opts: &SolverOptions,
    report: &mut SolveReport,
    untouched: &mut bool,
) -> Result<Increment> {
    let mut res = vec![0.0; q.len()];
    problem.residual(q, load, &mut res);
    let mut rnorm = norm(&res);
    let threshold = opts.newton_tol * (load * fnorm).max(opts.residual_floor);
    let mut trace = vec![rnorm];
    let mut increases = 0;
    for _ in 0..opts.max_newton_iters {
        if rnorm <= threshold {
            return Ok(Increment::Converged(trace));
        }
        let (delta, cg) = match problem.solve_linearized(q, &res) {
            Ok(v) => v,
            Err(e @ (Error::CgBreakdown { .. } | Error::CgNotConverged { .. } | Error::DenseSolve)) => {
                if *untouched {
                    log::debug!("linear solve failed at the reference state: {e}");
                    return Err(Error::SingularSystem);
                }
                return Ok(Increment::Diverged(rnorm));
            }
            Err(e) => return Err(e),
        };
        *untouched = false;
        report.newton_iterations += 1;
        report.cg_iterations += cg;
        for (qi, di) in q.iter_mut().zip(&delta) {
            *qi += di;
        }
        problem.residual(q, load, &mut res);
        let next = norm(&res);
        if !next.is_finite() {
            return Ok(Increment::Diverged(next));
        }
        if next > rnorm {
            increases += 1;
            if increases >= opts.divergence_window {
                return Ok(Increment::Diverged(next));
            }
        } else {
            increases = 0;
        }
        rnorm = next;
        trace.push(rnorm);
    }
    if rnorm <= threshold {
        Ok(Increment::Converged(trace))
    } else {
        Ok(Increment::Diverged(rnorm))
    }
}

/// Full-order static solver for one mesh and material; reusable across loads.
#[derive(Debug, Clone)]
pub struct FemSolver {
    assembler: Assembler,
    material: MaterialParams,
    constrained: Vec<bool>,
}

impl FemSolver {
    pub fn new(mesh: &HexMesh, material: MaterialParams) -> Result<Self> {
        Ok(Self {
            assembler: Assembler::new(mesh)?,
            material,
            constrained: mesh.constrained_dofs(),
        })
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn material(&self) -> &MaterialParams {
        &self.material
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    /// Static equilibrium under nodal forces `f_ext` (length `3 * nodes`).
    ///
    /// Force components on constrained dofs are carried by the support and
    /// ignored.
    pub fn solve(&self, f_ext: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
        if f_ext.len() != self.assembler.dof_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} force components", self.assembler.dof_count()),
                actual: f_ext.len().to_string(),
            });
        }
        let mut f = f_ext.to_vec();
        for (fi, &c) in f.iter_mut().zip(&self.constrained) {
            if c {
                *fi = 0.0;
            }
        }
        let mut problem = FullProblem {
            solver: self,
            f_ext: f,
            opts,
        };
        let (u, mut report) = solve_continuation(&mut problem, opts)?;
        report.inverted_elements = self.assembler.inverted_elements(&u);
        Ok((u, report))
    }
}

struct FullProblem<'a> {
    solver: &'a FemSolver,
    f_ext: Vec<f64>,
    opts: &'a SolverOptions,
}

impl NonlinearProblem for FullProblem<'_> {
    fn size(&self) -> usize {
        self.f_ext.len()
    }

    fn external_norm(&self) -> f64 {
        norm(&self.f_ext)
    }

    fn residual(&mut self, q: &[f64], load: f64, out: &mut [f64]) {
        let r = self.solver.assembler.internal_forces(q, &self.solver.material);
        for i in 0..out.len() {
            out[i] = if self.solver.constrained[i] {
                0.0
            } else {
                load * self.f_ext[i] - r[i]
            };
        }
    }

    fn solve_linearized(&mut self, q: &[f64], rhs: &[f64]) -> Result<(Vec<f64>, usize)> {
        let (_, k) = self.solver.assembler.tangent(q, &self.solver.material);
        let mut system = SparseSystem {
            matrix: k,
            rhs: rhs.to_vec(),
        };
        apply_dirichlet(&mut system, &self.solver.constrained);
        let cap = self.opts.max_cg_iters.unwrap_or(10 * rhs.len());
        let r = solve_pcg(&system.matrix, &system.rhs, self.opts.cg_tol, cap)?;
        Ok((r.solution, r.iterations))
    }
}

/// Solves the static problem for one load case.
pub fn newton_solve(
    mesh: &HexMesh,
    material: &MaterialParams,
    f_ext: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    FemSolver::new(mesh, *material)?.solve(f_ext, opts)
}
