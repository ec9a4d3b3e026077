//! Dataset generation: random surface loads solved with the FEM and stored
//! as padded (force, displacement) tensor pairs.

mod dataset;
mod sampling;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{
    append_dataset, read_dataset, write_dataset, Dataset, ForceSpec, HeaderInfo, Sample, SampleMeta, Split,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use sampling::{admissible_combinations, enumerate_regions, sample_multi_regions, sample_unit_direction, Region};

use crate::domain::{embed_field, HexMesh};
use crate::error::{Error, Result};
use crate::fem::{FemSolver, SolveReport};
use crate::scenario::Scenario;

const MAX_RETRIES: u32 = 3;
const MAX_SKIP_RATIO: f64 = 0.05;

fn default_n_forces() -> usize {
    1
}

fn default_min_separation() -> usize {
    3
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_target_deflection() -> f64 {
    1.0
}

/// Sampling protocol, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    /// Samples per region (single force) or per combination (multi-force).
    pub lambda: usize,
    /// Upper bound of the uniform magnitude draw (N). Calibrated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude_max: Option<f64>,
    /// Calibration target for the largest nodal deflection (m).
    #[serde(default = "default_target_deflection")]
    pub target_max_deflection: f64,
    #[serde(default = "default_n_forces")]
    pub n_forces: usize,
    /// Minimum Chebyshev grid distance between simultaneous load centres.
    #[serde(default = "default_min_separation")]
    pub min_separation: usize,
    #[serde(default)]
    pub region_radius: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fixed sample count instead of the per-region / per-combination plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<usize>,
}

impl Protocol {
    pub fn single(lambda: usize) -> Self {
        Self {
            lambda,
            magnitude_max: None,
            target_max_deflection: default_target_deflection(),
            n_forces: 1,
            min_separation: default_min_separation(),
            region_radius: 0,
            test_fraction: default_test_fraction(),
            seed: 0,
            sample_count: None,
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Protocol = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_forces == 0 {
            return Err(Error::Config("n_forces must be at least 1".into()));
        }
        if self.n_forces > 1 && self.min_separation == 0 {
            return Err(Error::Config("min_separation must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction {} outside [0, 1)", self.test_fraction)));
        }
        if let Some(m) = self.magnitude_max {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::Config(format!("magnitude_max {m} must be positive")));
            }
        }
        if !(self.target_max_deflection.is_finite() && self.target_max_deflection > 0.0) {
            return Err(Error::Config("target_max_deflection must be positive".into()));
        }
        Ok(())
    }
}

/// Nodal force vector (length `3 * nodes`) for a set of loads.
pub fn force_vector(mesh: &HexMesh, forces: &[ForceSpec]) -> Result<Vec<f64>> {
    let mut candidate = vec![false; mesh.node_count()];
    for &n in mesh.neumann_candidates() {
        candidate[n] = true;
    }
    let mut f = vec![0.0; mesh.dof_count()];
    for spec in forces {
        let d = spec.direction;
        let dn = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if (dn - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("force direction {d:?} is not a unit vector")));
        }
        if !(spec.magnitude.is_finite() && spec.magnitude >= 0.0) {
            return Err(Error::Config(format!("force magnitude {} must be non-negative", spec.magnitude)));
        }
        if spec.region.is_empty() {
            return Err(Error::Config("force region is empty".into()));
        }
        let share = spec.magnitude / spec.region.len() as f64;
        for &ijk in &spec.region {
            let n = mesh
                .node_at(ijk)
                .filter(|&n| candidate[n])
                .ok_or_else(|| Error::Boundary(format!("node {ijk:?} is not a load candidate")))?;
            for c in 0..3 {
                f[3 * n + c] += share * d[c];
            }
        }
    }
    Ok(f)
}

fn max_nodal_norm(u: &[f64]) -> f64 {
    u.chunks_exact(3)
        .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
        .fold(0.0, f64::max)
}

fn region_spec(mesh: &HexMesh, region: &Region, direction: [f64; 3], magnitude: f64) -> ForceSpec {
    let idx = mesh.node_grid_index();
    ForceSpec {
        region: region.nodes.iter().map(|&n| idx[n]).collect(),
        direction,
        magnitude,
    }
}

/// Region whose centre is farthest from every fixed node.
fn farthest_region(mesh: &HexMesh, regions: &[Region]) -> usize {
    let x = mesh.node_coords();
    let dist = |r: &Region| {
        mesh.dirichlet_nodes()
            .iter()
            .map(|&d| (0..3).map(|c| (x[r.center][c] - x[d][c]).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    };
    let mut best = 0;
    for (i, r) in regions.iter().enumerate() {
        if dist(r) > dist(&regions[best]) {
            best = i;
        }
    }
    best
}

/// Load magnitude for which the stiffest-loaded axis direction at the region
/// farthest from the support deflects by `target` (largest nodal norm).
pub fn calibrate_magnitude(scenario: &Scenario, solver: &FemSolver, regions: &[Region], target: f64) -> Result<f64> {
    let mesh = &scenario.mesh;
    let opts = scenario.solver_options();
    let region = &regions[farthest_region(mesh, regions)];
    let h = scenario.config.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let probe = 1e-6 * scenario.material.young_modulus * h * h;

    let mut best = f64::INFINITY;
    for axis in 0..3 {
        let mut dir = [0.0; 3];
        dir[axis] = 1.0;
        let deflect = |p: f64| -> Result<f64> {
            let f = force_vector(mesh, &[region_spec(mesh, region, dir, p)])?;
            Ok(max_nodal_norm(&solver.solve(&f, opts)?.0))
        };
        let d0 = deflect(probe)?;
        if d0 <= 0.0 {
            continue;
        }
        let mut p = probe * target / d0;
        for _ in 0..6 {
            match deflect(p) {
                Ok(d) => {
                    let ratio = target / d;
                    p *= ratio;
                    if (ratio - 1.0).abs() < 0.01 {
                        break;
                    }
                }
                Err(e) if e.is_numerical() => p *= 0.5,
                Err(e) => return Err(e),
            }
        }
        log::debug!("calibration axis {axis}: magnitude {p:.4e}");
        best = best.min(p);
    }
    if !best.is_finite() {
        return Err(Error::Config("magnitude calibration found no deflecting load direction".into()));
    }
    Ok(best)
}

/// Per-sample RNG: stream `index` of the master seed.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

enum Job {
    Fixed(Vec<usize>),
    Drawn,
}

fn plan_jobs(mesh: &HexMesh, regions: &[Region], p: &Protocol) -> Result<Vec<Job>> {
    if p.n_forces == 1 {
        let r = regions.len();
        return Ok(match p.sample_count {
            Some(n) => (0..n).map(|i| Job::Fixed(vec![i % r])).collect(),
            None => (0..r * p.lambda).map(|i| Job::Fixed(vec![i / p.lambda])).collect(),
        });
    }
    if let Some(n) = p.sample_count {
        return Ok((0..n).map(|_| Job::Drawn).collect());
    }
    let combos = admissible_combinations(mesh, regions, p.n_forces, p.min_separation);
    if combos.is_empty() && p.lambda > 0 {
        return Err(Error::Infeasible(format!(
            "no admissible combination of {} regions with separation {}",
            p.n_forces, p.min_separation
        )));
    }
    log::info!(
        "{} admissible {}-region combinations at separation {}",
        combos.len(),
        p.n_forces,
        p.min_separation
    );
    Ok(combos
        .into_iter()
        .flat_map(|c| std::iter::repeat_n(c, p.lambda))
        .map(Job::Fixed)
        .collect())
}

struct Context<'a> {
    scenario: &'a Scenario,
    solver: &'a FemSolver,
    regions: &'a [Region],
    protocol: &'a Protocol,
    magnitude_max: f64,
    seed: u64,
}

fn run_job(ctx: &Context, index: usize, job: &Job) -> Result<Option<Sample>> {
    let mesh = &ctx.scenario.mesh;
    let mut rng = sample_rng(ctx.seed, index);
    let picks = match job {
        Job::Fixed(p) => p.clone(),
        Job::Drawn => sample_multi_regions(mesh, ctx.regions, ctx.protocol.n_forces, ctx.protocol.min_separation, &mut rng)?,
    };
    let mut forces: Vec<ForceSpec> = picks
        .iter()
        .map(|&r| {
            let dir = sample_unit_direction(&mut rng);
            let mag = rng.random::<f64>() * ctx.magnitude_max;
            region_spec(mesh, &ctx.regions[r], dir, mag)
        })
        .collect();
    for retries in 0..=MAX_RETRIES {
        let f = force_vector(mesh, &forces)?;
        match ctx.solver.solve(&f, ctx.scenario.solver_options()) {
            Ok((u, report)) => return build_sample(ctx, index, forces, &f, &u, &report, retries).map(Some),
            Err(e) if e.is_numerical() => {
                log::warn!("sample {index}: {e}; halving magnitudes");
                for s in &mut forces {
                    s.magnitude *= 0.5;
                }
            }
            Err(e) => return Err(e),
        }
    }
    log::warn!("sample {index}: skipped after {MAX_RETRIES} retries");
    Ok(None)
}

fn build_sample(
    ctx: &Context,
    index: usize,
    forces: Vec<ForceSpec>,
    f: &[f64],
    u: &[f64],
    report: &SolveReport,
    retries: u32,
) -> Result<Sample> {
    let mesh = &ctx.scenario.mesh;
    let shape = &ctx.scenario.padded;
    Ok(Sample {
        split: Split::Train,
        force: embed_field(mesh, shape, f)?,
        displacement: embed_field(mesh, shape, u)?,
        meta: SampleMeta {
            index,
            seed: ctx.seed,
            forces,
            report: report.digest(),
            retries,
        },
    })
}

/// Generates and splits a dataset. Identical inputs give identical datasets
/// regardless of thread count: each sample draws from its own RNG stream and
/// results are merged by sample index.
pub fn generate_dataset(scenario: &Scenario, protocol: &Protocol, seed: u64) -> Result<Dataset> {
    protocol.validate()?;
    let mesh = &scenario.mesh;
    let regions = enumerate_regions(mesh, protocol.region_radius);
    if regions.is_empty() {
        return Err(Error::Boundary("scenario has no load candidates".into()));
    }
    let jobs = plan_jobs(mesh, &regions, protocol)?;
    let solver = FemSolver::new(mesh, scenario.material)?;
    let magnitude_max = match (protocol.magnitude_max, jobs.is_empty()) {
        (Some(m), _) => m,
        (None, true) => 0.0,
        (None, false) => {
            let m = calibrate_magnitude(scenario, &solver, &regions, protocol.target_max_deflection)?;
            log::info!("calibrated magnitude_max = {m:.6e} N");
            m
        }
    };
    let ctx = Context {
        scenario,
        solver: &solver,
        regions: &regions,
        protocol,
        magnitude_max,
        seed,
    };
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let results: Vec<Option<Sample>> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| {
            let r = run_job(&ctx, i, job);
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n % 100 == 0 || n == total {
                log::info!("generated {n}/{total} samples");
            }
            r
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Sample> = results.into_iter().flatten().collect();
    let skipped = total - samples.len();
    if total > 0 && skipped as f64 > MAX_SKIP_RATIO * total as f64 {
        return Err(Error::TooManySkipped(format!(
            "{skipped} of {total} samples failed to solve (limit {:.0}%)",
            100.0 * MAX_SKIP_RATIO
        )));
    }
    let mut ds = Dataset {
        scenario_digest: scenario.digest(),
        padded_dims: scenario.padded.dims,
        info: HeaderInfo {
            scenario: serde_json::from_str(scenario.canonical_json())?,
            protocol: serde_json::to_value(protocol)?,
            magnitude_max,
            seed,
            skipped,
        },
        samples,
    };
    if protocol.test_fraction > 0.0 && ds.len() > 1 {
        split_dataset(&mut ds, protocol.test_fraction, seed)?;
    }
    Ok(ds)
}

/// Marks `round(n * test_fraction)` randomly chosen samples as test.
pub fn split_dataset(ds: &mut Dataset, test_fraction: f64, seed: u64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    let n = ds.samples.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample_rng(seed, usize::MAX));
    for s in &mut ds.samples {
        s.split = Split::Train;
    }
    for &i in &order[..n_test] {
        ds.samples[i].split = Split::Test;
    }
    Ok(())
}

/// Re-solves a stored sample from its load description.
pub fn resolve_sample(scenario: &Scenario, meta: &SampleMeta) -> Result<(Vec<f64>, SolveReport)> {
    let f = force_vector(&scenario.mesh, &meta.forces)?;
    FemSolver::new(&scenario.mesh, scenario.material)?.solve(&f, scenario.solver_options())
}
