use std::time::Instant;

use umesh_core::domain::{zero_outside_mesh, FieldTensor};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;
use crate::unet::UNet;

#[derive(Debug, Clone)]
pub struct Prediction {
    pub displacement: FieldTensor,
    /// Network forward pass only (ms).
    pub forward_ms: f64,
    /// Including scaling and masking (ms).
    pub total_ms: f64,
}

/// Displacement field for a force field; entries off the mesh are zeroed.
pub fn predict(model: &UNet<f32>, force: &FieldTensor, mask: &[bool]) -> Result<Prediction> {
    let start = Instant::now();
    if force.dims() != model.config.dims || mask.len() != force.voxel_count() {
        return Err(NnError::Shape(format!(
            "force grid {:?} (mask {}) does not match model dims {:?}",
            force.dims(),
            mask.len(),
            model.config.dims
        )));
    }
    let x = Tensor::<f32>::from_field(force, model.force_scale);
    let t0 = Instant::now();
    let y = model.forward(&x)?;
    let forward_ms = t0.elapsed().as_secs_f64() * 1e3;
    let mut displacement = y.to_field(model.disp_scale)?;
    zero_outside_mesh(&mut displacement, mask);
    Ok(Prediction {
        displacement,
        forward_ms,
        total_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
