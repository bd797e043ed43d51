//! Adam optimizer with bias correction; moment state persists across steps.

use crate::error::{Error, Result};
use crate::nn::conv::LayerGrad;
use crate::nn::net::{GradientTape, PolicyValueNet};

pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl Adam {
    pub fn new(net: &PolicyValueNet, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        let zeros: Vec<LayerGrad> = net.layers().map(LayerGrad::zeros_like).collect();
        Ok(Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one descent step of the supplied gradients.
    pub fn step(&mut self, net: &mut PolicyValueNet, tape: &GradientTape) -> Result<()> {
        if !tape.is_finite() {
            return Err(Error::Numerical("non-finite gradient in Adam step".into()));
        }
        if tape.layers.len() != self.m.len() {
            return Err(Error::InvalidArgument(
                "gradient tape does not match optimizer state".into(),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);

        for ((layer, grad), (m, v)) in net
            .layers_mut()
            .zip(tape.layers.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&grad.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&grad.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}
