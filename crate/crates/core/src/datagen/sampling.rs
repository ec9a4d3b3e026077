//! Random load directions, load regions and multi-force region combinations.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::HexMesh;
use crate::error::{Error, Result};

/// Isotropic unit vector from a normalised Gaussian draw.
pub fn sample_unit_direction<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n >= 1e-8 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// A load patch: mesh nodes sharing one force, around a centre node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub center: usize,
    pub nodes: Vec<usize>,
}

fn chebyshev(a: [usize; 3], b: [usize; 3]) -> usize {
    (0..3).map(|i| a[i].abs_diff(b[i])).max().unwrap()
}

/// One region per load candidate: the candidates within Chebyshev grid
/// distance `radius` of it.
pub fn enumerate_regions(mesh: &HexMesh, radius: usize) -> Vec<Region> {
    let idx = mesh.node_grid_index();
    let cands = mesh.neumann_candidates();
    cands
        .iter()
        .map(|&c| Region {
            center: c,
            nodes: if radius == 0 {
                vec![c]
            } else {
                cands
                    .iter()
                    .copied()
                    .filter(|&n| chebyshev(idx[n], idx[c]) <= radius)
                    .collect()
            },
        })
        .collect()
}

fn admissible(mesh: &HexMesh, regions: &[Region], picks: &[usize], min_separation: usize) -> bool {
    let idx = mesh.node_grid_index();
    for (i, &a) in picks.iter().enumerate() {
        for &b in &picks[i + 1..] {
            if chebyshev(idx[regions[a].center], idx[regions[b].center]) < min_separation {
                return false;
            }
        }
    }
    true
}

const MAX_REJECTIONS: usize = 100_000;

/// Uniformly drawn set of `n_forces` distinct regions whose centres are
/// pairwise at least `min_separation` apart (Chebyshev, grid indices).
/// Returns sorted region indices.
pub fn sample_multi_regions<R: Rng + ?Sized>(
    mesh: &HexMesh,
    regions: &[Region],
    n_forces: usize,
    min_separation: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n_forces == 0 || n_forces > regions.len() {
        return Err(Error::Infeasible(format!(
            "{n_forces} forces requested over {} regions",
            regions.len()
        )));
    }
    for _ in 0..MAX_REJECTIONS {
        let mut picks = sample_indices(rng, regions.len(), n_forces).into_vec();
        if n_forces == 1 || admissible(mesh, regions, &picks, min_separation) {
            picks.sort_unstable();
            return Ok(picks);
        }
    }
    Err(Error::Infeasible(format!(
        "no admissible combination of {n_forces} regions with separation {min_separation} found in {MAX_REJECTIONS} draws"
    )))
}

/// Every admissible combination, in lexicographic order of region indices.
pub fn admissible_combinations(
    mesh: &HexMesh,
    regions: &[Region],
    n_forces: usize,
    min_separation: usize,
) -> Vec<Vec<usize>> {
    fn rec(
        mesh: &HexMesh,
        regions: &[Region],
        n: usize,
        sep: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for r in start..regions.len() {
            cur.push(r);
            if admissible(mesh, regions, cur, sep) {
                rec(mesh, regions, n, sep, r + 1, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n_forces > 0 {
        rec(mesh, regions, n_forces, min_separation, 0, &mut Vec::new(), &mut out);
    }
    out
}
