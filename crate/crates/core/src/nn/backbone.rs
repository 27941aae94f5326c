//! Frozen convolutional feature extractors (VGG16 at stride 16, or seeded random).
//!
//! The reference configuration is VGG16 tapped at `relu5_3` (512 channels),
//! loaded from a safetensors file with torchvision parameter names. A seeded
//! random-weight backbone with the same layout is available for runs where
//! pretrained weights cannot be obtained.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{maxpool2, relu_inplace, Conv2d};
use super::unet::input_tensor;
use crate::diffusion::{CoarseFeatureMap, FeatureMap};
use crate::error::{Error, Result};
use crate::frame::{FrameSample, RgbImage};
use crate::map::ImageShape;

/// VGG16 convolution widths per block; the tap is the last ReLU of block 5.
const VGG16_BLOCKS: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];

pub const VGG16_FETCH_HINT: &str = "export ImageNet VGG16 weights with torchvision, e.g. \
python -c \"import torchvision; from safetensors.torch import save_file; \
m = torchvision.models.vgg16(weights='IMAGENET1K_V1'); \
save_file({k: v.contiguous() for k, v in m.state_dict().items() if k.startswith('features.')}, 'vgg16.safetensors')\"";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    /// Pretrained VGG16, tapped at relu5_3.
    Vgg16 { weights: PathBuf },
    /// Seeded random weights; `blocks` lists conv widths per block, with 2x2
    /// max pooling between blocks (5 blocks give stride 16). Later blocks may
    /// be empty, which pools without convolving.
    RandomConv { seed: u64, blocks: Vec<Vec<usize>> },
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig::Vgg16 {
            weights: PathBuf::from("weights/vgg16.safetensors"),
        }
    }
}

impl BackboneConfig {
    /// Lightweight frozen random backbone used by the synthetic benchmark.
    pub fn random_default(seed: u64) -> Self {
        BackboneConfig::RandomConv {
            seed,
            blocks: vec![vec![32], vec![64]],
        }
    }

    pub fn build(&self) -> Result<ConvBackbone> {
        match self {
            BackboneConfig::Vgg16 { weights } => ConvBackbone::vgg16(weights),
            BackboneConfig::RandomConv { seed, blocks } => ConvBackbone::random(blocks, *seed),
        }
    }
}

/// Produces frozen semantic features for a frame.
pub trait FeatureExtractor: Send + Sync {
    /// Feature channel count D.
    fn channels(&self) -> usize;

    fn stride(&self) -> usize;

    /// Features at backbone resolution, pixel-major `(h, w, D)`.
    fn extract_coarse(&self, rgb: &RgbImage) -> Result<(ImageShape, Vec<f64>)>;

    /// Features kept coarse but bound to an output resolution.
    fn extract_for(&self, frame: &FrameSample, out_shape: ImageShape) -> Result<CoarseFeatureMap> {
        let (coarse, values) = self.extract_coarse(&frame.rgb)?;
        CoarseFeatureMap::new(coarse, self.channels(), values, out_shape)
    }

    /// Dense features bilinearly upsampled to `out_shape`.
    fn extract_features(&self, frame: &FrameSample, out_shape: ImageShape) -> Result<FeatureMap> {
        Ok(self.extract_for(frame, out_shape)?.upsample())
    }
}

/// VGG-style stack: blocks of 3x3 conv + ReLU separated by 2x2 max pooling.
#[derive(Debug, Clone)]
pub struct ConvBackbone {
    blocks: Vec<Vec<Conv2d>>,
    name: String,
}

impl ConvBackbone {
    pub fn random(blocks: &[Vec<usize>], seed: u64) -> Result<Self> {
        if blocks.first().is_none_or(|b| b.is_empty()) || blocks.iter().any(|b| b.contains(&0)) {
            return Err(Error::InvalidArgument(
                "backbone blocks must be lists of positive widths with a non-empty first block".into(),
            ));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let blocks = blocks
            .iter()
            .map(|widths| {
                widths
                    .iter()
                    .map(|&w| {
                        let conv = Conv2d::new(cin, w, 3, &mut rng);
                        cin = w;
                        conv
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            blocks,
            name: format!("random-conv(seed={seed})"),
        })
    }

    /// Loads torchvision-named VGG16 `features.*` tensors from a safetensors file.
    pub fn vgg16(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingWeights {
                path: path.to_path_buf(),
                hint: VGG16_FETCH_HINT.into(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = SafeTensors::deserialize(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let read = |name: &str, expected: &[usize]| -> Result<Vec<f32>> {
            let view = tensors
                .tensor(name)
                .map_err(|e| Error::Checkpoint(format!("{}: tensor {name}: {e}", path.display())))?;
            if view.dtype() != Dtype::F32 || view.shape() != expected {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor {name} has dtype {:?} shape {:?}, expected F32 {:?}",
                    path.display(),
                    view.dtype(),
                    view.shape(),
                    expected
                )));
            }
            Ok(view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect())
        };
        let mut index = 0;
        let mut cin = 3;
        let mut blocks = Vec::new();
        for widths in VGG16_BLOCKS {
            let mut convs = Vec::new();
            for &w in widths {
                let weight = read(&format!("features.{index}.weight"), &[w, cin, 3, 3])?;
                let bias = read(&format!("features.{index}.bias"), &[w])?;
                convs.push(Conv2d {
                    in_channels: cin,
                    out_channels: w,
                    kernel: 3,
                    weight,
                    bias,
                });
                cin = w;
                index += 2; // conv, relu
            }
            index += 1; // max pool
            blocks.push(convs);
        }
        Ok(Self {
            blocks,
            name: "vgg16/relu5_3".into(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// SHA-256 over every weight and bias, in layer order.
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        for conv in self.blocks.iter().flatten() {
            for v in conv.weight.iter().chain(&conv.bias) {
                h.update(v.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}

impl FeatureExtractor for ConvBackbone {
    fn channels(&self) -> usize {
        self.blocks.iter().flatten().last().map_or(0, |c| c.out_channels)
    }

    fn stride(&self) -> usize {
        1 << (self.blocks.len() - 1)
    }

    fn extract_coarse(&self, rgb: &RgbImage) -> Result<(ImageShape, Vec<f64>)> {
        let shape = rgb.shape();
        if shape.height < self.stride() || shape.width < self.stride() {
            return Err(Error::InvalidArgument(format!(
                "frame {shape} is smaller than the backbone stride {}",
                self.stride()
            )));
        }
        let mut x = input_tensor(rgb);
        for (b, block) in self.blocks.iter().enumerate() {
            if b > 0 {
                x = maxpool2(&x).0;
            }
            for conv in block {
                x = conv.forward(&x);
                relu_inplace(&mut x);
            }
        }
        let coarse = ImageShape::new(x.height, x.width)?;
        let d = x.channels;
        let n = coarse.len();
        let mut values = vec![0.0f64; n * d];
        for c in 0..d {
            for (i, v) in x.channel(c).iter().enumerate() {
                values[i * d + c] = f64::from(*v);
            }
        }
        Ok((coarse, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn frame() -> FrameSample {
        let shape = ImageShape::new(32, 48).unwrap();
        let data = (0..shape.len() * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        FrameSample::new("v", 0, RgbImage::new(shape, data).unwrap())
    }

    #[test]
    fn random_backbone_is_stride_2_and_deterministic() {
        let b = BackboneConfig::random_default(3).build().unwrap();
        assert_eq!(b.stride(), 2);
        assert_eq!(b.channels(), 64);
        let out = ImageShape::new(32, 48).unwrap();
        let f1 = b.extract_features(&frame(), out).unwrap();
        let f2 = b.extract_features(&frame(), out).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.shape(), out);
        let (coarse, _) = b.extract_coarse(&frame().rgb).unwrap();
        assert_eq!(coarse, ImageShape::new(16, 24).unwrap());
    }

    #[test]
    fn missing_weights_explain_how_to_fetch() {
        let err = ConvBackbone::vgg16(Path::new("/nonexistent/vgg16.safetensors")).unwrap_err();
        assert!(matches!(err, Error::MissingWeights { .. }));
        assert!(err.to_string().contains("torchvision"));
    }

    #[test]
    fn vgg16_layout_loads_from_safetensors() {
        // Small-valued synthetic weights with the exact torchvision names and shapes.
        let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        let (mut index, mut cin) = (0, 3);
        for widths in VGG16_BLOCKS {
            for &w in widths {
                let n = w * cin * 9;
                let wb: Vec<u8> = (0..n).flat_map(|i| (((i % 7) as f32 - 3.0) * 1e-3).to_le_bytes()).collect();
                tensors.push((format!("features.{index}.weight"), vec![w, cin, 3, 3], wb));
                tensors.push((format!("features.{index}.bias"), vec![w], vec![0u8; 4 * w]));
                cin = w;
                index += 2;
            }
            index += 1;
        }
        let views: Vec<(String, safetensors::tensor::TensorView)> = tensors
            .iter()
            .map(|(n, s, d)| (n.clone(), safetensors::tensor::TensorView::new(Dtype::F32, s.clone(), d).unwrap()))
            .collect();
        let bytes = safetensors::serialize(views, None::<HashMap<String, String>>).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg16.safetensors");
        std::fs::write(&path, bytes).unwrap();

        let b = BackboneConfig::Vgg16 { weights: path }.build().unwrap();
        assert_eq!(b.channels(), 512);
        assert_eq!(b.stride(), 16);
        let f = b.extract_features(&frame(), ImageShape::new(32, 48).unwrap()).unwrap();
        assert_eq!(f.channels(), 512);
        assert_eq!(f.shape(), ImageShape::new(32, 48).unwrap());
    }
}
