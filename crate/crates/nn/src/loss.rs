use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean squared error over the voxels flagged in `mask` (all channels),
/// with its gradient with respect to `pred`.
pub fn masked_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, mask: &[bool]) -> Result<(f64, Tensor<T>)> {
    if pred.channels() != target.channels() || pred.dims() != target.dims() {
        return Err(NnError::Shape("prediction and target shapes differ".into()));
    }
    let v = pred.voxels();
    if mask.len() != v {
        return Err(NnError::Shape(format!("mask has {} entries for {v} voxels", mask.len())));
    }
    let active = mask.iter().filter(|&&m| m).count() * pred.channels();
    let mut grad = Tensor::zeros(pred.channels(), pred.dims());
    if active == 0 {
        return Ok((0.0, grad));
    }
    let scale = 2.0 / active as f64;
    let mut sum = 0.0;
    let (p, t, g) = (pred.as_slice(), target.as_slice(), grad.as_mut_slice());
    for c in 0..pred.channels() {
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let j = c * v + i;
            let d = p[j].as_f64() - t[j].as_f64();
            sum += d * d;
            g[j] = T::from_f64(scale * d);
        }
    }
    Ok((sum / active as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_cases() {
        let mask = vec![true, false, true, true];
        let a = Tensor::from_vec(3, [2, 2, 1], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(masked_mse(&a, &a, &mask).unwrap().0, 0.0);
        let b = Tensor::from_vec(3, [2, 2, 1], a.as_slice().iter().map(|v| v + 0.5).collect()).unwrap();
        let (l, g) = masked_mse(&b, &a, &mask).unwrap();
        assert!((l - 0.25).abs() < 1e-15);
        assert_eq!(g.as_slice()[1], 0.0);
        assert!((g.as_slice()[0] - 2.0 * 0.5 / 9.0).abs() < 1e-15);
    }
}
