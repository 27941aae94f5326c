//! Encoder-decoder segmentation network with skip connections.
//!
//! Each level is two 3x3 convolutions, each followed by per-frame channel
//! normalization and a leaky ReLU. The encoder halves the
//! resolution with 2x2 max pooling, the decoder doubles it with bilinear
//! upsampling and concatenates the matching encoder output. A 1x1
//! convolution followed by a sigmoid produces the probability map.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, flush_subnormal, leaky_relu_backward, leaky_relu_inplace, maxpool2, maxpool2_backward, sigmoid,
    split_channels, upsample2, upsample2_backward, Conv2d, ConvGrad, InstanceNorm, NormCache, NormGrad,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::frame::{FrameSample, RgbImage};
use crate::map::{ImageShape, ProbMap};

/// Per-channel input normalization (ImageNet statistics).
pub const INPUT_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const INPUT_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetDescriptor {
    /// Number of pooling stages.
    pub depth: usize,
    /// Channel width of the first level; doubles per stage.
    pub base_width: usize,
    pub in_channels: usize,
}

impl Default for UNetDescriptor {
    fn default() -> Self {
        Self {
            depth: 4,
            base_width: 32,
            in_channels: 3,
        }
    }
}

impl UNetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 || self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "unsupported network descriptor {self:?}"
            )));
        }
        Ok(())
    }

    pub fn downsampling_factor(&self) -> usize {
        1 << self.depth
    }

    /// Errors unless both sides are divisible by the downsampling factor.
    pub fn check_resolution(&self, shape: ImageShape) -> Result<()> {
        let f = self.downsampling_factor();
        if shape.height % f != 0 || shape.width % f != 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {shape} is not divisible by the network downsampling factor {f}"
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    fn conv_count(&self) -> usize {
        4 * self.depth + 3
    }
}

/// Normalizes an RGB raster into the network's input tensor.
pub fn input_tensor(rgb: &RgbImage) -> Tensor {
    let shape = rgb.shape();
    let n = shape.len();
    let mut data = vec![0.0f32; 3 * n];
    for (i, p) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = (p[c] - INPUT_MEAN[c]) / INPUT_STD[c];
        }
    }
    Tensor::from_data(3, shape.height, shape.width, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    descriptor: UNetDescriptor,
    convs: Vec<Conv2d>,
    /// One per convolution except the head.
    norms: Vec<InstanceNorm>,
}

/// Activations kept from a training-mode forward pass.
pub struct Trace {
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
    norms: Vec<Option<NormCache>>,
    pool_indices: Vec<Vec<u32>>,
    pool_input_shapes: Vec<(usize, usize, usize)>,
    probabilities: Vec<f32>,
    shape: ImageShape,
}

impl Trace {
    pub fn probabilities(&self) -> &[f32] {
        &self.probabilities
    }

    pub fn prob_map(&self) -> ProbMap {
        prob_map(self.shape, &self.probabilities)
    }
}

fn prob_map(shape: ImageShape, probs: &[f32]) -> ProbMap {
    ProbMap::new(shape, probs.iter().map(|v| f64::from(*v)).collect())
        .expect("sigmoid outputs lie in [0, 1]")
}

/// Parameter gradients, one entry per convolution.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub convs: Vec<ConvGrad>,
    pub norms: Vec<NormGrad>,
}

impl Gradients {
    pub fn scale(&mut self, factor: f32) {
        for g in &mut self.convs {
            g.weight.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= factor);
        }
        for g in &mut self.norms {
            g.gamma.iter_mut().chain(g.beta.iter_mut()).for_each(|v| *v *= factor);
        }
    }
}

impl UNet {
    pub fn new(descriptor: UNetDescriptor, seed: u64) -> Result<Self> {
        descriptor.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = &descriptor;
        let mut convs = Vec::with_capacity(d.conv_count());
        let mut cin = d.in_channels;
        for level in 0..=d.depth {
            let w = d.width(level);
            convs.push(Conv2d::new(cin, w, 3, &mut rng));
            convs.push(Conv2d::new(w, w, 3, &mut rng));
            cin = w;
        }
        for level in (0..d.depth).rev() {
            let w = d.width(level);
            convs.push(Conv2d::new(d.width(level + 1) + w, w, 3, &mut rng));
            convs.push(Conv2d::new(w, w, 3, &mut rng));
        }
        let mut head = Conv2d::new(d.width(0), 1, 1, &mut rng);
        head.weight.iter_mut().for_each(|v| *v *= 0.1);
        convs.push(head);
        let norms = convs[..convs.len() - 1].iter().map(|c| InstanceNorm::new(c.out_channels)).collect();
        Ok(Self { descriptor, convs, norms })
    }

    /// Rebuilds a network from stored convolutions.
    pub fn from_parts(descriptor: UNetDescriptor, convs: Vec<Conv2d>, norms: Vec<InstanceNorm>) -> Result<Self> {
        let reference = Self::new(descriptor, 0)?;
        if convs.len() != reference.convs.len()
            || convs.iter().zip(&reference.convs).any(|(a, b)| {
                (a.in_channels, a.out_channels, a.kernel) != (b.in_channels, b.out_channels, b.kernel)
                    || a.weight.len() != b.weight.len()
                    || a.bias.len() != b.bias.len()
            })
            || norms.len() != reference.norms.len()
            || norms
                .iter()
                .zip(&reference.norms)
                .any(|(a, b)| a.channels() != b.channels() || a.beta.len() != b.beta.len())
        {
            return Err(Error::Checkpoint(
                "stored layers do not match the architecture descriptor".into(),
            ));
        }
        Ok(Self { descriptor, convs, norms })
    }

    pub fn descriptor(&self) -> UNetDescriptor {
        self.descriptor
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [Conv2d] {
        &mut self.convs
    }

    pub fn norms(&self) -> &[InstanceNorm] {
        &self.norms
    }

    pub fn parts_mut(&mut self) -> (&mut [Conv2d], &mut [InstanceNorm]) {
        (&mut self.convs, &mut self.norms)
    }

    pub fn parameter_count(&self) -> usize {
        let convs: usize = self.convs.iter().map(|c| c.weight.len() + c.bias.len()).sum();
        convs + self.norms.iter().map(|n| 2 * n.channels()).sum::<usize>()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            convs: self.convs.iter().map(ConvGrad::zeros_like).collect(),
            norms: self.norms.iter().map(NormGrad::zeros_like).collect(),
        }
    }

    fn bottleneck(&self) -> usize {
        2 * self.descriptor.depth
    }

    fn decoder(&self, level: usize) -> usize {
        // Decoder levels are stored deepest first.
        2 * self.descriptor.depth + 2 + 2 * (self.descriptor.depth - 1 - level)
    }

    fn head(&self) -> usize {
        self.convs.len() - 1
    }

    fn run(&self, input: &Tensor, mut trace: Option<&mut Trace>) -> Vec<f32> {
        let depth = self.descriptor.depth;
        let conv_relu = |index: usize, x: Tensor, trace: &mut Option<&mut Trace>| -> Tensor {
            let (mut y, cache) = self.norms[index].forward(&self.convs[index].forward(&x));
            leaky_relu_inplace(&mut y);
            if let Some(t) = trace.as_deref_mut() {
                t.inputs[index] = x;
                t.outputs[index] = y.clone();
                t.norms[index] = Some(cache);
            }
            y
        };
        let mut skips = Vec::with_capacity(depth);
        let mut x = input.clone();
        for level in 0..depth {
            let a = conv_relu(2 * level, x, &mut trace);
            let b = conv_relu(2 * level + 1, a, &mut trace);
            let (pooled, idx) = maxpool2(&b);
            if let Some(t) = trace.as_deref_mut() {
                t.pool_indices[level] = idx;
                t.pool_input_shapes[level] = (b.channels, b.height, b.width);
            }
            skips.push(b);
            x = pooled;
        }
        let a = conv_relu(self.bottleneck(), x, &mut trace);
        x = conv_relu(self.bottleneck() + 1, a, &mut trace);
        for level in (0..depth).rev() {
            let cat = concat_channels(&upsample2(&x), &skips[level]);
            let first = self.decoder(level);
            let a = conv_relu(first, cat, &mut trace);
            x = conv_relu(first + 1, a, &mut trace);
        }
        let logits = self.convs[self.head()].forward(&x);
        if let Some(t) = trace.as_deref_mut() {
            t.inputs[self.head()] = x;
        }
        logits
            .data
            .iter()
            .map(|v| sigmoid(*v))
            .collect()
    }

    /// Evaluation-mode forward pass on a prepared input tensor.
    pub fn forward(&self, input: &Tensor) -> Result<ProbMap> {
        let shape = ImageShape::new(input.height, input.width)?;
        self.descriptor.check_resolution(shape)?;
        if input.channels != self.descriptor.in_channels {
            return Err(Error::InvalidArgument(format!(
                "network expects {} input channels, got {}",
                self.descriptor.in_channels, input.channels
            )));
        }
        Ok(prob_map(shape, &self.run(input, None)))
    }

    /// Prediction map of one frame.
    pub fn predict(&self, frame: &FrameSample) -> Result<ProbMap> {
        self.forward(&input_tensor(&frame.rgb))
    }

    /// Training-mode forward pass that records activations for [`UNet::backward`].
    pub fn forward_train(&self, input: &Tensor) -> Result<Trace> {
        let shape = ImageShape::new(input.height, input.width)?;
        self.descriptor.check_resolution(shape)?;
        let n = self.convs.len();
        let empty = Tensor::zeros(0, 0, 0);
        let mut trace = Trace {
            inputs: vec![empty.clone(); n],
            outputs: vec![empty; n],
            norms: vec![None; n - 1],
            pool_indices: vec![Vec::new(); self.descriptor.depth],
            pool_input_shapes: vec![(0, 0, 0); self.descriptor.depth],
            probabilities: Vec::new(),
            shape,
        };
        trace.probabilities = self.run(input, Some(&mut trace));
        Ok(trace)
    }

    /// Backpropagates `dL/dp` (per pixel) and accumulates into `grads`.
    pub fn backward(&self, trace: &Trace, d_prob: &[f64], grads: &mut Gradients) {
        let depth = self.descriptor.depth;
        let (h, w) = (trace.shape.height, trace.shape.width);
        let d_logit: Vec<f32> = d_prob
            .iter()
            .zip(&trace.probabilities)
            .map(|(g, p)| flush_subnormal((*g as f32) * p * (1.0 - p)))
            .collect();
        let d_logit = Tensor::from_data(1, h, w, d_logit);

        let conv_back = |index: usize, mut dy: Tensor, grads: &mut Gradients, need_dx: bool| {
            leaky_relu_backward(&mut dy, &trace.outputs[index]);
            let cache = trace.norms[index].as_ref().expect("training trace");
            let dz = self.norms[index].backward(cache, &dy, &mut grads.norms[index]);
            self.convs[index].backward(&trace.inputs[index], &dz, &mut grads.convs[index], need_dx)
        };

        let head = self.head();
        let mut dx = self.convs[head]
            .backward(&trace.inputs[head], &d_logit, &mut grads.convs[head], true)
            .expect("input gradient requested");
        let mut d_skips: Vec<Option<Tensor>> = vec![None; depth];
        for (level, d_skip) in d_skips.iter_mut().enumerate() {
            let first = self.decoder(level);
            let da = conv_back(first + 1, dx, grads, true).expect("input gradient requested");
            let d_cat = conv_back(first, da, grads, true).expect("input gradient requested");
            let up_channels = self.descriptor.width(level + 1);
            let (d_up, ds) = split_channels(d_cat, up_channels);
            *d_skip = Some(ds);
            dx = upsample2_backward(&d_up);
        }
        let da = conv_back(self.bottleneck() + 1, dx, grads, true).expect("input gradient requested");
        dx = conv_back(self.bottleneck(), da, grads, true).expect("input gradient requested");
        for level in (0..depth).rev() {
            let mut db = maxpool2_backward(&dx, &trace.pool_indices[level], trace.pool_input_shapes[level]);
            db.add_assign(d_skips[level].as_ref().expect("decoder visited every level"));
            let da = conv_back(2 * level + 1, db, grads, true).expect("input gradient requested");
            match conv_back(2 * level, da, grads, level > 0) {
                Some(d) => dx = d,
                None => break,
            }
        }
    }
}
