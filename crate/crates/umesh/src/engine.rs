//! Displacement predictors that can be evaluated and benchmarked side by side.

use std::time::Instant;

use umesh_core::datagen::{force_vector, Sample};
use umesh_core::domain::extract_field;
use umesh_core::fem::{FemSolver, SolverOptions};
use umesh_core::pod::PodSolver;
use umesh_core::scenario::Scenario;
use umesh_core::Error as CoreError;
use umesh_nn::{predict, UNet};

use crate::error::Result;

pub enum Engine {
    /// Full-order Newton solve.
    Fem(Box<FemSolver>, SolverOptions),
    /// Galerkin-reduced solve on a POD basis.
    Pod(Box<PodSolver>, SolverOptions),
    Network { model: Box<UNet<f32>>, mask: Vec<bool> },
    /// Returns the stored reference displacement.
    Truth,
    /// Always predicts zero displacement.
    Zero,
}

/// One engine run: nodal displacement and timings.
#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub displacement: Vec<f64>,
    /// End-to-end wall time (ms).
    pub total_ms: f64,
    /// Network forward pass alone (ms); equals `total_ms` for solvers.
    pub core_ms: f64,
    /// False when a solver stopped early and returned its last converged state.
    pub converged: bool,
}

impl Engine {
    pub fn fem(scenario: &Scenario) -> Result<Self> {
        Ok(Engine::Fem(
            Box::new(FemSolver::new(&scenario.mesh, scenario.material)?),
            scenario.solver_options().clone(),
        ))
    }

    pub fn pod(scenario: &Scenario, basis: umesh_core::pod::PodBasis) -> Result<Self> {
        Ok(Engine::Pod(
            Box::new(PodSolver::new(basis, &scenario.mesh, scenario.material)?),
            scenario.solver_options().clone(),
        ))
    }

    pub fn network(scenario: &Scenario, model: UNet<f32>) -> Self {
        Engine::Network {
            model: Box::new(model),
            mask: scenario.node_mask(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Fem(..) => "fem",
            Engine::Pod(..) => "pod",
            Engine::Network { .. } => "network",
            Engine::Truth => "truth",
            Engine::Zero => "zero",
        }
    }

    pub fn run(&self, scenario: &Scenario, sample: &Sample) -> Result<EngineOutput> {
        match self {
            Engine::Fem(solver, opts) => {
                let f = force_vector(&scenario.mesh, &sample.meta.forces)?;
                let start = Instant::now();
                let solved = solver.solve(&f, opts);
                let ms = start.elapsed().as_secs_f64() * 1e3;
                solver_output(solved.map(|(u, _)| u), ms)
            }
            Engine::Pod(solver, opts) => {
                let f = force_vector(&scenario.mesh, &sample.meta.forces)?;
                let start = Instant::now();
                let solved = solver.solve(&f, opts);
                let ms = start.elapsed().as_secs_f64() * 1e3;
                solver_output(solved.map(|(u, _)| u), ms)
            }
            Engine::Network { model, mask } => {
                let p = predict(model, &sample.force, mask)?;
                Ok(EngineOutput {
                    displacement: extract_field(&p.displacement, &scenario.mesh, &scenario.padded)?,
                    total_ms: p.total_ms,
                    core_ms: p.forward_ms,
                    converged: true,
                })
            }
            Engine::Truth => Ok(EngineOutput {
                displacement: extract_field(&sample.displacement, &scenario.mesh, &scenario.padded)?,
                total_ms: 0.0,
                core_ms: 0.0,
                converged: true,
            }),
            Engine::Zero => Ok(EngineOutput {
                displacement: vec![0.0; scenario.mesh.dof_count()],
                total_ms: 0.0,
                core_ms: 0.0,
                converged: true,
            }),
        }
    }
}

fn solver_output(solved: umesh_core::Result<Vec<f64>>, ms: f64) -> Result<EngineOutput> {
    let (displacement, converged) = match solved {
        Ok(u) => (u, true),
        Err(CoreError::NewtonNotConverged { best_state, .. }) => (best_state, false),
        Err(e) => return Err(e.into()),
    };
    Ok(EngineOutput {
        displacement,
        total_ms: ms,
        core_ms: ms,
        converged,
    })
}
