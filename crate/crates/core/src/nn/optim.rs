use serde::{Deserialize, Serialize};

use super::layers::flush_subnormal;
use super::unet::{Gradients, UNet};

/// Adaptive-moment optimizer over every convolution of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &UNet, learning_rate: f32) -> Self {
        let sizes: Vec<usize> = net
            .convs()
            .iter()
            .flat_map(|c| [c.weight.len(), c.bias.len()])
            .chain(net.norms().iter().flat_map(|n| [n.gamma.len(), n.beta.len()]))
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            second: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn update(&mut self, net: &mut UNet, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (convs, norms) = net.parts_mut();
        let slots = convs
            .iter_mut()
            .zip(&grads.convs)
            .flat_map(|(c, g)| [(&mut c.weight, &g.weight), (&mut c.bias, &g.bias)])
            .chain(
                norms
                    .iter_mut()
                    .zip(&grads.norms)
                    .flat_map(|(n, g)| [(&mut n.gamma, &g.gamma), (&mut n.beta, &g.beta)]),
            );
        for ((params, grad), (m, v)) in slots.zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for (((p, g), m), v) in params.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = flush_subnormal(self.beta1 * *m + (1.0 - self.beta1) * g);
                *v = flush_subnormal(self.beta2 * *v + (1.0 - self.beta2) * g * g);
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::unet::UNetDescriptor;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let d = UNetDescriptor {
            depth: 1,
            base_width: 2,
            in_channels: 3,
        };
        let mut net = UNet::new(d, 0).unwrap();
        let before = net.clone();
        let mut grads = net.zero_gradients();
        grads.convs[0].weight[0] = 0.5;
        grads.convs[0].bias[1] = -2.0;
        let mut adam = Adam::new(&net, 1e-3);
        adam.update(&mut net, &grads);
        let dw = net.convs()[0].weight[0] - before.convs()[0].weight[0];
        let db = net.convs()[0].bias[1] - before.convs()[0].bias[1];
        assert!((dw + 1e-3).abs() < 1e-6);
        assert!((db - 1e-3).abs() < 1e-6);
        // Zero gradients leave parameters untouched.
        assert_eq!(net.convs()[1], before.convs()[1]);
        assert_eq!(adam.steps(), 1);
    }
}
