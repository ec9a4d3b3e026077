//! Jacobi-preconditioned conjugate gradients.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcgResult {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` to `‖r‖/‖b‖ <= tol`, starting from zero.
pub fn solve_pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<PcgResult> {
    solve_pcg_observed(a, b, tol, max_iter, |_, _| {})
}

/// [`solve_pcg`] calling `observe(iteration, x)` after every update.
pub fn solve_pcg_observed(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(usize, &[f64]),
) -> Result<PcgResult> {
    let n = a.size();
    assert_eq!(b.len(), n);
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(PcgResult {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        log::debug!("non-positive diagonal entry at row {i}");
        return Err(Error::CgBreakdown { iteration: 0 });
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut rel = 1.0;
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut q);
        let curvature = dot(&p, &q);
        if !(curvature > 0.0) {
            return Err(Error::CgBreakdown { iteration: it });
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        observe(it, &x);
        rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok(PcgResult {
                solution: x,
                iterations: it,
                relative_residual: rel,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged {
        iterations: max_iter,
        residual: rel,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
