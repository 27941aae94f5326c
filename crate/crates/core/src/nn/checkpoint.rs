//! Checkpoint container: a safetensors file whose metadata carries the
//! architecture descriptor and a snapshot of the training configuration.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::layers::{Conv2d, InstanceNorm};
use super::unet::{UNet, UNetDescriptor};
use crate::error::{Error, Result};

const FORMAT: &str = "anchorseg-unet/2";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: UNet,
    /// Free-form JSON snapshot of the configuration that produced the weights.
    pub config: serde_json::Value,
}

fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn new(network: UNet, config: serde_json::Value) -> Self {
        Self { network, config }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let convs = self.network.convs();
        let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = convs
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                [
                    (
                        format!("conv{i:02}.weight"),
                        vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                        f32_bytes(&c.weight),
                    ),
                    (format!("conv{i:02}.bias"), vec![c.out_channels], f32_bytes(&c.bias)),
                ]
            })
            .chain(self.network.norms().iter().enumerate().flat_map(|(i, n)| {
                [
                    (format!("norm{i:02}.gamma"), vec![n.channels()], f32_bytes(&n.gamma)),
                    (format!("norm{i:02}.beta"), vec![n.channels()], f32_bytes(&n.beta)),
                ]
            }))
            .collect();
        let views = buffers
            .iter()
            .map(|(name, shape, data)| {
                TensorView::new(Dtype::F32, shape.clone(), data)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert(
            "architecture".to_string(),
            serde_json::to_string(&self.network.descriptor()).expect("descriptor serializes"),
        );
        meta.insert("config".to_string(), self.config.to_string());
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, header) =
            SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let meta = header
            .metadata()
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("missing metadata".into()))?;
        if meta.get("format").map(String::as_str) != Some(FORMAT) {
            return Err(Error::Checkpoint(format!(
                "unrecognized checkpoint format {:?}",
                meta.get("format")
            )));
        }
        let descriptor: UNetDescriptor = serde_json::from_str(
            meta.get("architecture")
                .ok_or_else(|| Error::Checkpoint("missing architecture".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
        let config = match meta.get("config") {
            Some(s) => serde_json::from_str(s).map_err(|e| Error::Checkpoint(format!("config: {e}")))?,
            None => serde_json::Value::Null,
        };
        let tensors = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let template = UNet::new(descriptor, 0)?;
        let read = |name: String| -> Result<(Vec<usize>, Vec<f32>)> {
            let view = tensors
                .tensor(&name)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            if view.dtype() != Dtype::F32 {
                return Err(Error::Checkpoint(format!("tensor {name} is not F32")));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok((view.shape().to_vec(), data))
        };
        let mut convs = Vec::with_capacity(template.convs().len());
        for i in 0..template.convs().len() {
            let (shape, weight) = read(format!("conv{i:02}.weight"))?;
            let (_, bias) = read(format!("conv{i:02}.bias"))?;
            if shape.len() != 4 || shape[2] != shape[3] {
                return Err(Error::Checkpoint(format!("conv{i:02}.weight has shape {shape:?}")));
            }
            convs.push(Conv2d {
                in_channels: shape[1],
                out_channels: shape[0],
                kernel: shape[2],
                weight,
                bias,
            });
        }
        let mut norms = Vec::with_capacity(template.norms().len());
        for i in 0..template.norms().len() {
            let (_, gamma) = read(format!("norm{i:02}.gamma"))?;
            let (_, beta) = read(format!("norm{i:02}.beta"))?;
            norms.push(InstanceNorm { gamma, beta });
        }
        Ok(Self {
            network: UNet::from_parts(descriptor, convs, norms)?,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Checkpoint(format!("no checkpoint at {}", path.display())));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_network_and_config() {
        let d = UNetDescriptor {
            depth: 2,
            base_width: 3,
            in_channels: 3,
        };
        let net = UNet::new(d, 9).unwrap();
        let config = serde_json::json!({"epochs": 3, "margins": [0.2, 0.8]});
        let ck = Checkpoint::new(net.clone(), config.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.network, net);
        assert_eq!(back.config, config);
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = Checkpoint::load(Path::new("/nonexistent/ck.safetensors")).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(Checkpoint::from_bytes(b"0123456789abcdef").is_err());
    }
}
