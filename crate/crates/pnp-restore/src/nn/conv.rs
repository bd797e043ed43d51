//! Dilated 2-D convolution layer with same-size zero padding, implemented as
//! im2col + matrix multiply for both the forward and backward passes.

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub relu: bool,
    /// Shape (out, in, k, k).
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
}

/// Activations retained by a training-mode forward pass.
pub struct ConvCache {
    /// im2col matrix of the input, (in*k*k, H*W).
    col: Array2<f64>,
    /// Pre-activation output, kept only when the layer applies ReLU.
    preact: Option<Array3<f64>>,
    spatial: (usize, usize),
}

/// Per-layer parameter gradients, congruent with `ConvLayer` parameters.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weights: Array4<f64>,
    pub bias: Array1<f64>,
}

impl ConvLayer {
    /// He fan-in initialization; `zero_init` forces all-zero parameters.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
        relu: bool,
        zero_init: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv kernel size must be odd, got {kernel_size}"
            )));
        }
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be >= 1".into()));
        }
        let fan_in = (in_channels * kernel_size * kernel_size) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weights = if zero_init {
            Array4::zeros((out_channels, in_channels, kernel_size, kernel_size))
        } else {
            Array4::from_shape_fn(
                (out_channels, in_channels, kernel_size, kernel_size),
                |_| {
                    let n: f64 = rng.sample(StandardNormal);
                    n * std
                },
            )
        };
        Ok(ConvLayer {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
            relu,
            weights,
            bias: Array1::zeros(out_channels),
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn im2col(&self, input: &Array3<f64>) -> Array2<f64> {
        let (c_in, h, w) = input.dim();
        let k = self.kernel_size;
        let d = self.dilation as isize;
        let r = (k / 2) as isize;
        let mut col = Array2::zeros((c_in * k * k, h * w));
        for c in 0..c_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let oi = (ki as isize - r) * d;
                    let oj = (kj as isize - r) * d;
                    let mut col_row = col.row_mut(row);
                    for i in 0..h as isize {
                        let si = i + oi;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for j in 0..w as isize {
                            let sj = j + oj;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            col_row[(i * w as isize + j) as usize] =
                                input[(c, si as usize, sj as usize)];
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
        let c_in = self.in_channels;
        let k = self.kernel_size;
        let d = self.dilation as isize;
        let r = (k / 2) as isize;
        let mut dx = Array3::zeros((c_in, h, w));
        for c in 0..c_in {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let oi = (ki as isize - r) * d;
                    let oj = (kj as isize - r) * d;
                    let dcol_row = dcol.row(row);
                    for i in 0..h as isize {
                        let si = i + oi;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for j in 0..w as isize {
                            let sj = j + oj;
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            dx[(c, si as usize, sj as usize)] +=
                                dcol_row[(i * w as isize + j) as usize];
                        }
                    }
                }
            }
        }
        dx
    }

    fn weight_matrix(&self) -> Array2<f64> {
        let (o, i, k, _) = self.weights.dim();
        self.weights
            .view()
            .into_shape_with_order((o, i * k * k))
            .expect("standard layout")
            .to_owned()
    }

    pub fn forward(&self, input: &Array3<f64>, keep_cache: bool) -> (Array3<f64>, Option<ConvCache>) {
        let (_, h, w) = input.dim();
        let col = self.im2col(input);
        let mut out_mat = self.weight_matrix().dot(&col);
        for (mut row, b) in out_mat.rows_mut().into_iter().zip(self.bias.iter()) {
            row += *b;
        }
        let preact = out_mat
            .into_shape_with_order((self.out_channels, h, w))
            .expect("standard layout");
        let output = if self.relu {
            preact.mapv(|v| v.max(0.0))
        } else {
            preact.clone()
        };
        let cache = keep_cache.then(|| ConvCache {
            col,
            preact: self.relu.then(|| preact),
            spatial: (h, w),
        });
        (output, cache)
    }

    /// Reverse-mode step: returns the input gradient and this layer's
    /// parameter gradients given the output gradient.
    pub fn backward(&self, dout: &Array3<f64>, cache: &ConvCache) -> (Array3<f64>, LayerGrad) {
        let (h, w) = cache.spatial;
        let mut dy = dout.clone();
        if let Some(preact) = &cache.preact {
            ndarray::Zip::from(&mut dy).and(preact).for_each(|g, &p| {
                if p <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let dy_mat = dy
            .into_shape_with_order((self.out_channels, h * w))
            .expect("standard layout");
        let dw_mat = dy_mat.dot(&cache.col.t());
        let (o, i, k, _) = self.weights.dim();
        let dweights = dw_mat
            .into_shape_with_order((o, i, k, k))
            .expect("standard layout");
        let dbias = dy_mat.sum_axis(Axis(1));
        let dcol = self.weight_matrix().t().dot(&dy_mat);
        let dx = self.col2im(&dcol, h, w);
        (
            dx,
            LayerGrad {
                weights: dweights,
                bias: dbias,
            },
        )
    }
}

impl LayerGrad {
    pub fn zeros_like(layer: &ConvLayer) -> Self {
        LayerGrad {
            weights: Array4::zeros(layer.weights.dim()),
            bias: Array1::zeros(layer.bias.len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &LayerGrad) {
        self.weights += &other.weights;
        self.bias += &other.bias;
    }

    pub fn scale(&mut self, s: f64) {
        self.weights *= s;
        self.bias *= s;
    }
}
