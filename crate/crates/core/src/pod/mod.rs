//! Proper orthogonal decomposition: snapshot bases and Galerkin-reduced
//! Newton solves.

mod eigen;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use eigen::symmetric_eigen;

use crate::domain::HexMesh;
use crate::error::{Error, Result};
use crate::fem::newton::{solve_continuation, NonlinearProblem};
use crate::fem::pcg::norm;
use crate::fem::{Assembler, MaterialParams, SolveReport, SolverOptions};

pub const BASIS_MAGIC: &[u8; 4] = b"UMPB";
pub const BASIS_VERSION: u32 = 1;

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Keep this many leading modes (clamped to the numerical rank).
    Modes(usize),
    /// Smallest mode count capturing this fraction of `Σσ²`.
    Energy(f64),
}

/// Orthonormal displacement modes with their singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    pub scenario_digest: [u8; 32],
    ndof: usize,
    /// Column-major `ndof x r`.
    modes: Vec<f64>,
    singular_values: Vec<f64>,
}

impl PodBasis {
    pub fn from_parts(scenario_digest: [u8; 32], ndof: usize, modes: Vec<f64>, singular_values: Vec<f64>) -> Result<Self> {
        if ndof == 0 || modes.len() != ndof * singular_values.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{ndof} x {} modes", singular_values.len()),
                actual: format!("{} values", modes.len()),
            });
        }
        Ok(Self {
            scenario_digest,
            ndof,
            modes,
            singular_values,
        })
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn mode(&self, i: usize) -> &[f64] {
        &self.modes[i * self.ndof..(i + 1) * self.ndof]
    }

    pub fn modes(&self) -> &[f64] {
        &self.modes
    }

    /// Leading `r` modes (nested in this basis).
    pub fn truncated(&self, r: usize) -> PodBasis {
        let r = r.min(self.rank());
        PodBasis {
            scenario_digest: self.scenario_digest,
            ndof: self.ndof,
            modes: self.modes[..r * self.ndof].to_vec(),
            singular_values: self.singular_values[..r].to_vec(),
        }
    }

    /// Reduced coordinates `Φᵀu`.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rank()).map(|i| dot(self.mode(i), u)).collect()
    }

    /// Full vector `Φq`.
    pub fn lift(&self, q: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.ndof];
        for (i, &qi) in q.iter().enumerate() {
            for (ui, phi) in u.iter_mut().zip(self.mode(i)) {
                *ui += qi * phi;
            }
        }
        u
    }

    /// `max |ΦᵀΦ - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        let mut worst: f64 = 0.0;
        for i in 0..r {
            for j in 0..=i {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.mode(i), self.mode(j)) - target).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn modes_for(truncation: Truncation, sigma: &[f64]) -> Result<usize> {
    match truncation {
        Truncation::Modes(r) => {
            if r == 0 {
                return Err(Error::Config("mode count must be at least 1".into()));
            }
            if r > sigma.len() {
                log::warn!("requested {r} modes but snapshot rank is {}; clamping", sigma.len());
            }
            Ok(r.min(sigma.len()))
        }
        Truncation::Energy(eta) => {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("energy fraction {eta} outside (0, 1]")));
            }
            let total: f64 = sigma.iter().map(|s| s * s).sum();
            let mut acc = 0.0;
            for (i, s) in sigma.iter().enumerate() {
                acc += s * s;
                if acc >= eta * total * (1.0 - 1e-14) {
                    return Ok(i + 1);
                }
            }
            Ok(sigma.len())
        }
    }
}

fn mgs(modes: &mut [f64], ndof: usize, r: usize) {
    for i in 0..r {
        for _ in 0..2 {
            for j in 0..i {
                let (done, rest) = modes.split_at_mut(i * ndof);
                let qj = &done[j * ndof..(j + 1) * ndof];
                let qi = &mut rest[..ndof];
                let c = dot(qj, qi);
                for (a, b) in qi.iter_mut().zip(qj) {
                    *a -= c * b;
                }
            }
        }
        let qi = &mut modes[i * ndof..(i + 1) * ndof];
        let n = norm(qi);
        for a in qi.iter_mut() {
            *a /= n;
        }
    }
}

/// Thin SVD of the snapshot matrix (columns = `snapshots`) truncated as
/// requested. Uses the smaller of the two Gram matrices.
pub fn build_basis(snapshots: &[Vec<f64>], truncation: Truncation, scenario_digest: [u8; 32]) -> Result<PodBasis> {
    let ns = snapshots.len();
    if ns == 0 {
        return Err(Error::Config("no snapshots".into()));
    }
    let ndof = snapshots[0].len();
    if ndof == 0 || snapshots.iter().any(|s| s.len() != ndof) {
        return Err(Error::ShapeMismatch {
            expected: format!("{ndof} entries per snapshot"),
            actual: "ragged snapshot set".into(),
        });
    }

    let (sigma, modes) = if ndof <= ns {
        // S Sᵀ: eigenvectors are the left singular vectors.
        let mut c = vec![0.0; ndof * ndof];
        for s in snapshots {
            for i in 0..ndof {
                let si = s[i];
                if si == 0.0 {
                    continue;
                }
                let row = &mut c[i * ndof..i * ndof + i + 1];
                for (cij, sj) in row.iter_mut().zip(&s[..=i]) {
                    *cij += si * sj;
                }
            }
        }
        for i in 0..ndof {
            for j in 0..i {
                c[j * ndof + i] = c[i * ndof + j];
            }
        }
        let (w, v) = symmetric_eigen(&c, ndof);
        let sigma: Vec<f64> = w.iter().map(|&x| x.max(0.0).sqrt()).collect();
        let mut modes = vec![0.0; ndof * ndof];
        for col in 0..ndof {
            for row in 0..ndof {
                modes[col * ndof + row] = v[row * ndof + col];
            }
        }
        (sigma, modes)
    } else {
        // SᵀS: right singular vectors, then U = S V / σ.
        let mut g = vec![0.0; ns * ns];
        for i in 0..ns {
            for j in 0..=i {
                let x = dot(&snapshots[i], &snapshots[j]);
                g[i * ns + j] = x;
                g[j * ns + i] = x;
            }
        }
        let (w, v) = symmetric_eigen(&g, ns);
        let sigma: Vec<f64> = w.iter().map(|&x| x.max(0.0).sqrt()).collect();
        let mut modes = vec![0.0; ndof * ns];
        for col in 0..ns {
            if sigma[col] == 0.0 {
                continue;
            }
            let m = &mut modes[col * ndof..(col + 1) * ndof];
            for (k, s) in snapshots.iter().enumerate() {
                let c = v[k * ns + col] / sigma[col];
                for (mi, si) in m.iter_mut().zip(s) {
                    *mi += c * si;
                }
            }
        }
        (sigma, modes)
    };

    let rank = sigma.iter().take_while(|&&s| s > RANK_TOLERANCE * sigma[0]).count();
    if rank == 0 {
        return Err(Error::Config("snapshot matrix is zero".into()));
    }
    let sigma = &sigma[..rank];
    let r = modes_for(truncation, sigma)?;
    let mut modes = modes[..r * ndof].to_vec();
    mgs(&mut modes, ndof, r);
    PodBasis::from_parts(scenario_digest, ndof, modes, sigma[..r].to_vec())
}

/// `‖u − ΦΦᵀu‖ / √n_nodes`.
pub fn projection_error(basis: &PodBasis, u: &[f64]) -> f64 {
    let back = basis.lift(&basis.project(u));
    let diff: f64 = u.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum();
    diff.sqrt() / ((u.len() / 3) as f64).sqrt()
}

/// Galerkin-reduced static solver on a fixed basis.
#[derive(Debug, Clone)]
pub struct PodSolver {
    basis: PodBasis,
    assembler: Assembler,
    material: MaterialParams,
    constrained: Vec<bool>,
}

impl PodSolver {
    pub fn new(basis: PodBasis, mesh: &HexMesh, material: MaterialParams) -> Result<Self> {
        if basis.ndof() != mesh.dof_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} dofs", mesh.dof_count()),
                actual: format!("basis with {} dofs", basis.ndof()),
            });
        }
        Ok(Self {
            basis,
            assembler: Assembler::new(mesh)?,
            material,
            constrained: mesh.constrained_dofs(),
        })
    }

    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    /// Solves `Φᵀ(f − r(Φq)) = 0`; returns the nodal displacement `Φq`.
    pub fn solve(&self, f_ext: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
        if f_ext.len() != self.basis.ndof() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} force components", self.basis.ndof()),
                actual: f_ext.len().to_string(),
            });
        }
        let mut f = f_ext.to_vec();
        for (fi, &c) in f.iter_mut().zip(&self.constrained) {
            if c {
                *fi = 0.0;
            }
        }
        let mut problem = ReducedProblem {
            solver: self,
            f_reduced: self.basis.project(&f),
        };
        let (q, mut report) = solve_continuation(&mut problem, opts).map_err(|e| match e {
            Error::NewtonNotConverged {
                load_fraction,
                residual,
                best_state,
            } => Error::NewtonNotConverged {
                load_fraction,
                residual,
                best_state: self.basis.lift(&best_state),
            },
            e => e,
        })?;
        let u = self.basis.lift(&q);
        report.inverted_elements = self.assembler.inverted_elements(&u);
        Ok((u, report))
    }
}

struct ReducedProblem<'a> {
    solver: &'a PodSolver,
    f_reduced: Vec<f64>,
}

impl NonlinearProblem for ReducedProblem<'_> {
    fn size(&self) -> usize {
        self.f_reduced.len()
    }

    fn external_norm(&self) -> f64 {
        norm(&self.f_reduced)
    }

    fn residual(&mut self, q: &[f64], load: f64, out: &mut [f64]) {
        let s = self.solver;
        let mut r = s.assembler.internal_forces(&s.basis.lift(q), &s.material);
        for (ri, &c) in r.iter_mut().zip(&s.constrained) {
            if c {
                *ri = 0.0;
            }
        }
        let rr = s.basis.project(&r);
        for i in 0..out.len() {
            out[i] = load * self.f_reduced[i] - rr[i];
        }
    }

    fn solve_linearized(&mut self, q: &[f64], rhs: &[f64]) -> Result<(Vec<f64>, usize)> {
        let s = self.solver;
        let b = &s.basis;
        let (r, n) = (b.rank(), b.ndof());
        let u = b.lift(q);
        let mut kr = DMatrix::<f64>::zeros(r, r);
        let mut phi_e = vec![0.0; 24 * r];
        let mut kphi = vec![0.0; 24 * r];
        s.assembler.for_each_element_tangent(&u, &s.material, |conn, _, ke| {
            for (a, &node) in conn.iter().enumerate() {
                for c in 0..3 {
                    let dof = 3 * node + c;
                    let row = 3 * a + c;
                    let free = !s.constrained[dof];
                    for m in 0..r {
                        phi_e[row * r + m] = if free { b.modes[m * n + dof] } else { 0.0 };
                    }
                }
            }
            kphi.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..24 {
                for j in 0..24 {
                    let kij = ke[i * 24 + j];
                    if kij == 0.0 {
                        continue;
                    }
                    for m in 0..r {
                        kphi[i * r + m] += kij * phi_e[j * r + m];
                    }
                }
            }
            for i in 0..24 {
                for l in 0..r {
                    let p = phi_e[i * r + l];
                    if p == 0.0 {
                        continue;
                    }
                    for m in 0..r {
                        kr[(l, m)] += p * kphi[i * r + m];
                    }
                }
            }
        });
        let rhs = DVector::from_column_slice(rhs);
        let delta = match kr.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => kr.lu().solve(&rhs).ok_or(Error::DenseSolve)?,
        };
        if delta.iter().any(|x| !x.is_finite()) {
            return Err(Error::DenseSolve);
        }
        Ok((delta.iter().copied().collect(), 0))
    }
}

/// Convenience wrapper around [`PodSolver`] for a single load case.
pub fn reduced_newton_solve(
    basis: &PodBasis,
    mesh: &HexMesh,
    material: &MaterialParams,
    f_ext: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    PodSolver::new(basis.clone(), mesh, *material)?.solve(f_ext, opts)
}

pub fn write_basis(basis: &PodBasis, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut buf = Vec::with_capacity(48 + 8 * (basis.modes.len() + basis.rank()));
    buf.extend_from_slice(BASIS_MAGIC);
    buf.extend_from_slice(&BASIS_VERSION.to_le_bytes());
    buf.extend_from_slice(&basis.scenario_digest);
    buf.extend_from_slice(&(basis.ndof as u32).to_le_bytes());
    buf.extend_from_slice(&(basis.rank() as u32).to_le_bytes());
    for v in basis.singular_values.iter().chain(&basis.modes) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_basis(path: impl AsRef<Path>) -> Result<PodBasis> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 48 || &bytes[..4] != BASIS_MAGIC {
        return Err(Error::format(path, "not a UMPB basis file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    if u32_at(4) != BASIS_VERSION as usize {
        return Err(Error::format(path, format!("unsupported basis version {}", u32_at(4))));
    }
    let digest: [u8; 32] = bytes[8..40].try_into().unwrap();
    let (ndof, r) = (u32_at(40), u32_at(44));
    let expected = 48 + 8 * (r + ndof * r);
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let floats: Vec<f64> = bytes[48..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PodBasis::from_parts(digest, ndof, floats[r..].to_vec(), floats[..r].to_vec())
}
