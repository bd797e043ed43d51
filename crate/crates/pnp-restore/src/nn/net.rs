//! Shared-encoder fully convolutional network with a per-pixel categorical
//! policy head (27 residual actions) and a scalar value head.

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::nn::conv::{ConvCache, ConvLayer, LayerGrad};

/// Number of discrete residual actions (-13..=13).
pub const NUM_ACTIONS: usize = 27;

/// Architecture knobs. The default configuration stays under the 0.45M
/// parameter budget; smaller settings are used for fast experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// Channel width of the encoder and head hidden layers.
    pub channels: usize,
    /// Number of encoder conv layers; layer i uses dilation i+1.
    pub encoder_layers: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            channels: 96,
            encoder_layers: 4,
        }
    }
}

impl NetConfig {
    /// Compact configuration for smoke tests and desk-scale training.
    pub fn small(channels: usize, encoder_layers: usize) -> Self {
        NetConfig {
            channels,
            encoder_layers,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyValueNet {
    pub config: NetConfig,
    encoder: Vec<ConvLayer>,
    policy_head: Vec<ConvLayer>,
    value_head: Vec<ConvLayer>,
}

/// Forward outputs: per-pixel action probabilities and value estimates.
pub struct ForwardOutput {
    /// Shape (27, H, W); each pixel's channel vector sums to 1.
    pub policy: Array3<f64>,
    /// Shape (H, W).
    pub value: Array2<f64>,
    pub cache: Option<NetCache>,
}

/// Activation caches for one forward pass, consumed by `backward`.
pub struct NetCache {
    encoder: Vec<ConvCache>,
    policy_head: Vec<ConvCache>,
    value_head: Vec<ConvCache>,
    /// Softmax output, needed to map probability gradients to logit space.
    policy: Array3<f64>,
}

/// Per-parameter gradients in the same layer order as `layers()`.
#[derive(Debug, Clone)]
pub struct GradientTape {
    pub layers: Vec<LayerGrad>,
}

impl GradientTape {
    pub fn zeros_like(net: &PolicyValueNet) -> Self {
        GradientTape {
            layers: net.layers().map(LayerGrad::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientTape) {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.layers {
            g.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|g| g.is_finite())
    }
}

impl PolicyValueNet {
    /// Build a randomly initialized network. The final policy layer starts at
    /// zero so the initial policy is uniform over all actions.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if config.channels == 0 || config.encoder_layers == 0 {
            return Err(Error::InvalidArgument(
                "channels and encoder_layers must be >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let mut encoder = Vec::new();
        for i in 0..config.encoder_layers {
            let in_ch = if i == 0 { 1 } else { c };
            encoder.push(ConvLayer::new(in_ch, c, 3, i + 1, true, false, &mut rng)?);
        }
        let policy_head = vec![
            ConvLayer::new(c, c, 3, 1, true, false, &mut rng)?,
            ConvLayer::new(c, NUM_ACTIONS, 1, 1, false, true, &mut rng)?,
        ];
        let value_head = vec![
            ConvLayer::new(c, c, 3, 1, true, false, &mut rng)?,
            ConvLayer::new(c, 1, 1, 1, false, false, &mut rng)?,
        ];
        Ok(PolicyValueNet {
            config,
            encoder,
            policy_head,
            value_head,
        })
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder
            .iter()
            .chain(self.policy_head.iter())
            .chain(self.value_head.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.encoder
            .iter_mut()
            .chain(self.policy_head.iter_mut())
            .chain(self.value_head.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    /// Run the network on an image in [0, 255] units; normalization to [0, 1]
    /// happens here at the boundary. Set `keep_cache` for a training pass.
    pub fn forward(&self, state: &ImageGray, keep_cache: bool) -> Result<ForwardOutput> {
        let (h, w) = (state.height(), state.width());
        let mut x = Array3::zeros((1, h, w));
        x.index_axis_mut(Axis(0), 0).assign(&(state.data() / 255.0));

        let mut encoder_caches = Vec::new();
        for (idx, layer) in self.encoder.iter().enumerate() {
            let (out, cache) = layer.forward(&x, keep_cache);
            check_finite(&out, "encoder", idx)?;
            if let Some(c) = cache {
                encoder_caches.push(c);
            }
            x = out;
        }

        let mut p = x.clone();
        let mut policy_caches = Vec::new();
        for (idx, layer) in self.policy_head.iter().enumerate() {
            let (out, cache) = layer.forward(&p, keep_cache);
            check_finite(&out, "policy_head", idx)?;
            if let Some(c) = cache {
                policy_caches.push(c);
            }
            p = out;
        }
        let policy = softmax_channels(&p);

        let mut v = x;
        let mut value_caches = Vec::new();
        for (idx, layer) in self.value_head.iter().enumerate() {
            let (out, cache) = layer.forward(&v, keep_cache);
            check_finite(&out, "value_head", idx)?;
            if let Some(c) = cache {
                value_caches.push(c);
            }
            v = out;
        }
        let value = v.index_axis(Axis(0), 0).to_owned();

        let cache = keep_cache.then(|| NetCache {
            encoder: encoder_caches,
            policy_head: policy_caches,
            value_head: value_caches,
            policy: policy.clone(),
        });
        Ok(ForwardOutput {
            policy,
            value,
            cache,
        })
    }

    /// Reverse-mode gradients of a scalar loss given its gradients with
    /// respect to the policy probabilities and the value output.
    pub fn backward(
        &self,
        cache: &NetCache,
        policy_grad: &Array3<f64>,
        value_grad: &Array2<f64>,
    ) -> Result<GradientTape> {
        if policy_grad.dim() != cache.policy.dim() {
            return Err(Error::shape(
                format!("{:?}", cache.policy.dim()),
                format!("{:?}", policy_grad.dim()),
            ));
        }
        // probability-space gradient -> logit-space via the softmax Jacobian:
        // g_z[a] = p[a] * g_p[a] - p[a] * sum_k p[k] * g_p[k]
        let p = &cache.policy;
        let dlogits = {
            let mut out = p * policy_grad;
            let (a, h, w) = out.dim();
            for i in 0..h {
                for j in 0..w {
                    let mut s = 0.0;
                    for k in 0..a {
                        s += out[(k, i, j)];
                    }
                    for k in 0..a {
                        out[(k, i, j)] -= p[(k, i, j)] * s;
                    }
                }
            }
            out
        };

        // policy head backward
        let mut grads_policy: Vec<LayerGrad> = Vec::new();
        let mut d = dlogits;
        for (layer, cache_l) in self
            .policy_head
            .iter()
            .zip(cache.policy_head.iter())
            .rev()
        {
            let (dx, g) = layer.backward(&d, cache_l);
            grads_policy.push(g);
            d = dx;
        }
        grads_policy.reverse();
        let d_encoder_from_policy = d;

        // value head backward
        let (h, w) = value_grad.dim();
        let mut dv = Array3::zeros((1, h, w));
        dv.index_axis_mut(Axis(0), 0).assign(value_grad);
        let mut grads_value: Vec<LayerGrad> = Vec::new();
        let mut d = dv;
        for (layer, cache_l) in self.value_head.iter().zip(cache.value_head.iter()).rev() {
            let (dx, g) = layer.backward(&d, cache_l);
            grads_value.push(g);
            d = dx;
        }
        grads_value.reverse();

        // encoder backward with summed head gradients
        let mut grads_encoder: Vec<LayerGrad> = Vec::new();
        let mut d = d_encoder_from_policy + d;
        for (layer, cache_l) in self.encoder.iter().zip(cache.encoder.iter()).rev() {
            let (dx, g) = layer.backward(&d, cache_l);
            grads_encoder.push(g);
            d = dx;
        }
        grads_encoder.reverse();

        let mut layers = grads_encoder;
        layers.extend(grads_policy);
        layers.extend(grads_value);
        let tape = GradientTape { layers };
        if !tape.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        Ok(tape)
    }
}

fn check_finite(a: &Array3<f64>, stage: &str, idx: usize) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "non-finite activation in {stage} layer {idx}"
        )))
    }
}

/// Per-pixel softmax over the channel axis, with max subtraction.
fn softmax_channels(logits: &Array3<f64>) -> Array3<f64> {
    let (a, h, w) = logits.dim();
    let mut out = logits.clone();
    for i in 0..h {
        for j in 0..w {
            let mut max = f64::NEG_INFINITY;
            for k in 0..a {
                max = max.max(out[(k, i, j)]);
            }
            let mut sum = 0.0;
            for k in 0..a {
                let e = (out[(k, i, j)] - max).exp();
                out[(k, i, j)] = e;
                sum += e;
            }
            for k in 0..a {
                out[(k, i, j)] /= sum;
            }
        }
    }
    out
}
