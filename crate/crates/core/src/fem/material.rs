//! Saint-Venant-Kirchhoff constitutive law.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    pub lame_lambda: f64,
    pub lame_mu: f64,
}

impl MaterialParams {
    pub fn new(young_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        let (lame_lambda, lame_mu) = lame_constants(young_modulus, poisson_ratio)?;
        Ok(Self {
            young_modulus,
            poisson_ratio,
            lame_lambda,
            lame_mu,
        })
    }
}

/// Isotropic Lamé constants `(λ, μ)` from Young's modulus and Poisson's ratio.
pub fn lame_constants(young_modulus: f64, poisson_ratio: f64) -> Result<(f64, f64)> {
    if !(young_modulus > 0.0) || !young_modulus.is_finite() {
        return Err(Error::Material(format!(
            "Young's modulus must be positive, got {young_modulus}"
        )));
    }
    if !(0.0..0.5).contains(&poisson_ratio) {
        return Err(Error::Material(format!(
            "Poisson's ratio must lie in [0, 0.5), got {poisson_ratio}"
        )));
    }
    let (y, nu) = (young_modulus, poisson_ratio);
    let lambda = y * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = y / (2.0 * (1.0 + nu));
    Ok((lambda, mu))
}

/// `E = ½(FᵀF − I)`.
pub fn green_lagrange(f: &Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (f.transpose() * f - Matrix3::identity())
}

/// `W = λ/2 tr(E)² + μ tr(E²)`.
pub fn strain_energy_density(e: &Matrix3<f64>, m: &MaterialParams) -> f64 {
    let tr = e.trace();
    0.5 * m.lame_lambda * tr * tr + m.lame_mu * (e * e).trace()
}

/// `S = λ tr(E) I + 2μ E`.
pub fn pk2_stress(e: &Matrix3<f64>, m: &MaterialParams) -> Matrix3<f64> {
    Matrix3::identity() * (m.lame_lambda * e.trace()) + e * (2.0 * m.lame_mu)
}
