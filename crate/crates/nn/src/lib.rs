//! A dense 3D U-Net written from scratch: convolution, pooling and
//! transposed-convolution layers with exact backward passes, masked MSE,
//! Adam, a deterministic training loop and a binary model format.
//!
//! Tensors are channel-major with x fastest, matching
//! [`umesh_core::domain::FieldTensor`].

pub mod adam;
pub mod error;
pub mod io;
pub mod layers;
pub mod loss;
pub mod predict;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod unet;

pub use adam::{adam_step, Adam, AdamConfig};
pub use error::{NnError, Result};
pub use io::{load_model, load_model_for, save_model, weights_digest};
pub use layers::{
    conv3d_backward, conv3d_forward, maxpool3d_backward, maxpool3d_forward, tconv3d_backward, tconv3d_forward,
    Conv3d, TConv3d,
};
pub use loss::masked_mse;
pub use predict::{predict, Prediction};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use train::{train, BatchSampling, train_on, write_loss_csv, LossRecord, LrSchedule, TrainConfig, TrainingSet};
pub use unet::{trace_shapes, Gradients, LayerShape, ShapeTrace, UNet, UNetConfig};
