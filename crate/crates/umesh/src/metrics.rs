//! Error measures over nodal displacement vectors (length `3 * nodes`).

use crate::error::{HarnessError, Result};

/// Mean absolute component difference over all degrees of freedom.
pub fn mean_norm_error(u_ref: &[f64], u_pred: &[f64]) -> Result<f64> {
    check_same(u_ref, u_pred)?;
    if u_ref.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = u_ref.iter().zip(u_pred).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / u_ref.len() as f64)
}

/// Mean, sample standard deviation (`None` for a single value) and maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    pub std: Option<f64>,
    pub max: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(HarnessError::Data("cannot aggregate an empty error list".into()));
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let std = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|e| (e - mean) * (e - mean)).sum();
        (ss / (m - 1.0)).sqrt()
    });
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Aggregate {
        count: values.len(),
        mean,
        std,
        max,
    })
}

/// Percentage error of the displacement vector at node `probe`; `None` when
/// the reference displacement there is zero.
pub fn relative_l2_at_probe(u_ref: &[f64], u_pred: &[f64], probe: usize) -> Result<Option<f64>> {
    check_same(u_ref, u_pred)?;
    if 3 * probe + 3 > u_ref.len() {
        return Err(HarnessError::Data(format!("probe node {probe} outside the mesh")));
    }
    let r = &u_ref[3 * probe..3 * probe + 3];
    let p = &u_pred[3 * probe..3 * probe + 3];
    let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    if rn == 0.0 {
        return Ok(None);
    }
    let dn = r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(Some(100.0 * dn / rn))
}

/// Least-squares slope of a line through the origin, `Σxy / Σx²`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(HarnessError::Data("slope fit needs at least two points".into()));
    }
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Data("slope fit needs a non-zero abscissa".into()));
    }
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    Ok(sxy / sxx)
}

/// Largest nodal displacement norm.
pub fn max_nodal_deformation(u: &[f64]) -> f64 {
    u.chunks_exact(3)
        .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
        .fold(0.0, f64::max)
}

fn check_same(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(HarnessError::Data(format!(
            "displacement lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}
