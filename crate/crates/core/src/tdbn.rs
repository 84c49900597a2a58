//! Threshold-dependent batch normalization.
//!
//! Normalizes the postsynaptic current per channel over the joint
//! (time, batch, spatial) axes and rescales by `alpha * v_th`, followed by
//! a learnable per-channel affine transform.
//!
//! Input layout: a slice of `T` tensors shaped `[B, C]` or `[B, C, H, W]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdBnParams {
    pub alpha: f64,
    pub v_th: f64,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl TdBnParams {
    pub fn new(channels: usize, alpha: f64, v_th: f64) -> TdBnParams {
        TdBnParams {
            alpha,
            v_th,
            lambda: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.lambda.len()
    }
}

/// Per-channel geometry of a `[B, C, spatial...]` tensor.
fn geometry(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[1] != channels {
        return Err(Error::ShapeMismatch(format!(
            "tdBN wants [B, C={}, ...], got {:?}",
            channels, shape
        )));
    }
    let batch = shape[0];
    let spatial: usize = shape[2..].iter().product();
    if batch * spatial == 0 {
        return Err(Error::ShapeMismatch("tdBN channel with zero elements".into()));
    }
    Ok((batch, spatial))
}

#[derive(Debug, Clone)]
pub struct TdBnCache {
    /// Standard-normalized values (x - mean) / sqrt(var + eps), per timestep.
    pub y: Vec<Tensor>,
    pub inv_std: Vec<f64>,
    pub n_per_channel: usize,
    /// True when the statistics came from this batch (training mode); false
    /// when they are frozen running statistics (eval mode), in which case the
    /// backward pass must not differentiate through them.
    pub batch_stats: bool,
}

impl TdBnParams {
    /// Forward pass over the full time stack.
    ///
    /// In training mode the statistics come from the batch (and the running
    /// stats are updated); in eval mode the frozen running statistics are
    /// used. A cache is produced either way so gradients can flow through
    /// eval-mode forwards (with fixed statistics).
    pub fn forward(
        &mut self,
        input: &[Tensor],
        training: bool,
    ) -> Result<(Vec<Tensor>, Option<TdBnCache>)> {
        let c = self.channels();
        let t_steps = input.len();
        if t_steps == 0 {
            return Err(Error::InvalidArg("tdBN forward with empty time stack".into()));
        }
        let (batch, spatial) = geometry(input[0].shape(), c)?;
        for t in input {
            if t.shape() != input[0].shape() {
                return Err(Error::ShapeMismatch("tdBN timesteps differ in shape".into()));
            }
        }
        let s = self.alpha * self.v_th;

        let (mean, var) = if training {
            let n = (t_steps * batch * spatial) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for x in input {
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * spatial;
                        for sp in 0..spatial {
                            mean[ch] += x.data()[base + sp];
                        }
                    }
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            for x in input {
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * spatial;
                        for sp in 0..spatial {
                            let d = x.data()[base + sp] - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                }
            }
            for v in var.iter_mut() {
                *v /= n;
            }
            for ch in 0..c {
                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean[ch];
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var[ch];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut out = Vec::with_capacity(t_steps);
        let mut ys = Vec::with_capacity(t_steps);
        for x in input {
            let mut o = Tensor::zeros(x.shape());
            let mut y = Tensor::zeros(x.shape());
            for b in 0..batch {
                for ch in 0..c {
                    let base = (b * c + ch) * spatial;
                    for sp in 0..spatial {
                        let yn = (x.data()[base + sp] - mean[ch]) * inv_std[ch];
                        y.data_mut()[base + sp] = yn;
                        o.data_mut()[base + sp] = self.lambda[ch] * s * yn + self.beta[ch];
                    }
                }
            }
            out.push(o);
            ys.push(y);
        }
        let cache = TdBnCache {
            y: ys,
            inv_std,
            n_per_channel: t_steps * batch * spatial,
            batch_stats: training,
        };
        Ok((out, Some(cache)))
    }

    /// Backward pass. With batch statistics (training-mode cache) the mean
    /// and variance are differentiated; with frozen statistics the transform
    /// is a fixed per-channel affine map.
    ///
    /// Returns per-timestep input gradients plus gradients for lambda and
    /// beta.
    pub fn backward(
        &self,
        cache: &TdBnCache,
        grad_out: &[Tensor],
    ) -> Result<(Vec<Tensor>, Vec<f64>, Vec<f64>)> {
        let c = self.channels();
        if grad_out.len() != cache.y.len() {
            return Err(Error::ShapeMismatch("tdBN backward trace length".into()));
        }
        let (batch, spatial) = geometry(cache.y[0].shape(), c)?;
        let s = self.alpha * self.v_th;
        let n = cache.n_per_channel as f64;

        let mut sum_g = vec![0.0; c];
        let mut sum_gy = vec![0.0; c];
        for (g, y) in grad_out.iter().zip(cache.y.iter()) {
            for b in 0..batch {
                for ch in 0..c {
                    let base = (b * c + ch) * spatial;
                    for sp in 0..spatial {
                        sum_g[ch] += g.data()[base + sp];
                        sum_gy[ch] += g.data()[base + sp] * y.data()[base + sp];
                    }
                }
            }
        }
        let d_beta = sum_g.clone();
        let d_lambda: Vec<f64> = sum_gy.iter().map(|v| v * s).collect();

        let mut grad_in = Vec::with_capacity(grad_out.len());
        for (g, y) in grad_out.iter().zip(cache.y.iter()) {
            let mut gi = Tensor::zeros(g.shape());
            for b in 0..batch {
                for ch in 0..c {
                    let scale = self.lambda[ch] * s * cache.inv_std[ch] / n;
                    let base = (b * c + ch) * spatial;
                    for sp in 0..spatial {
                        let gv = g.data()[base + sp];
                        let yv = y.data()[base + sp];
                        gi.data_mut()[base + sp] = if cache.batch_stats {
                            scale * (n * gv - sum_g[ch] - yv * sum_gy[ch])
                        } else {
                            scale * n * gv
                        };
                    }
                }
            }
            grad_in.push(gi);
        }
        Ok((grad_in, d_lambda, d_beta))
    }
}
