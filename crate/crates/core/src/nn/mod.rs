//! Trainable segmentation network, frozen feature extractors, optimizer,
//! and checkpoints, implemented on plain `f32` buffers.

pub mod backbone;
pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod unet;

pub use backbone::{BackboneConfig, ConvBackbone, FeatureExtractor};
pub use checkpoint::Checkpoint;
pub use optim::Adam;
pub use tensor::Tensor;
pub use unet::{input_tensor, Gradients, Trace, UNet, UNetDescriptor};
