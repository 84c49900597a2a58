//! Explicit reverse passes through the unrolled spiking network.
//!
//! `bptt_backward` walks the recorded trace backwards in time, replacing
//! the spike derivative with the surrogate factor h(u_bar). For soft reset
//! the temporal factor keeps the reset-path term tau * (1 - v_th * h);
//! for hard reset the reset-spike coupling is detached, giving
//! tau * (1 - O). `bptr_backward` is the rate-based approximation: one
//! backward pass over time-averaged firing rates with the inter-layer
//! rate derivative replaced by the constant 1/T.

use crate::error::{Error, Result};
use crate::lif::ResetMode;
use crate::model::{LayerKind, Model, Trace};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// Per hidden layer: same shape as the layer weight.
    pub layer_weights: Vec<Tensor>,
    pub tdbn_lambda: Vec<Vec<f64>>,
    pub tdbn_beta: Vec<Vec<f64>>,
    pub readout_w: Tensor,
    pub readout_b: Tensor,
    /// Input gradient, `[B, input...]`.
    pub input: Tensor,
    /// Per-timestep adjoints at the encoder output, before averaging.
    pub input_per_t: Vec<Tensor>,
}

impl GradientBundle {
    pub fn all_finite(&self) -> bool {
        self.layer_weights.iter().all(|t| t.all_finite())
            && self.readout_w.all_finite()
            && self.readout_b.all_finite()
            && self.input.all_finite()
            && self
                .tdbn_lambda
                .iter()
                .chain(self.tdbn_beta.iter())
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Softmax cross-entropy on time-averaged logits, averaged over the batch.
///
/// Returns the loss and d(loss)/d(logits).
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch {}",
            labels.len(),
            b
        )));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[b, k]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::InvalidArg(format!("label {} out of range {}", y, k)));
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += -(exps[y] / z).ln();
        for j in 0..k {
            let p = exps[j] / z;
            grad.data_mut()[i * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

fn temporal_factor(model: &Model, h: f64, o: f64) -> f64 {
    let lif = &model.spec.lif;
    match lif.reset {
        ResetMode::Soft => lif.tau * (1.0 - lif.v_th * h),
        ResetMode::Hard => lif.tau * (1.0 - o),
    }
}

/// Gradient of the linear op of layer `li` w.r.t. its weight, accumulated
/// into `dw`, plus the gradient passed to the layer input.
fn linear_backward(
    model: &Model,
    li: usize,
    input_act: &Tensor,
    d_out: &Tensor,
    dw: &mut Tensor,
) -> Result<Tensor> {
    let layer = &model.layers[li];
    let batch = input_act.shape()[0];
    match layer.kind {
        LayerKind::Dense => {
            let fan_in = layer.in_shape[0];
            let out_units = layer.out_shape[0];
            let x = input_act.reshape(&[batch, fan_in])?;
            let mut d_in = Tensor::zeros(&[batch, fan_in]);
            for b in 0..batch {
                let xrow = &x.data()[b * fan_in..(b + 1) * fan_in];
                let grow = &d_out.data()[b * out_units..(b + 1) * out_units];
                for (o, &g) in grow.iter().enumerate() {
                    let wrow = &layer.weight.data()[o * fan_in..(o + 1) * fan_in];
                    let dwrow = &mut dw.data_mut()[o * fan_in..(o + 1) * fan_in];
                    let din = &mut d_in.data_mut()[b * fan_in..(b + 1) * fan_in];
                    for i in 0..fan_in {
                        dwrow[i] += g * xrow[i];
                        din[i] += g * wrow[i];
                    }
                }
            }
            // restore the caller-side shape of the previous layer
            let mut shape = vec![batch];
            shape.extend_from_slice(&layer.in_shape);
            d_in.reshape(&shape)
        }
        LayerKind::Conv => {
            let (c_in, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
            let c_out = layer.out_shape[0];
            let per_in = c_in * h * w;
            let per_out = c_out * h * w;
            let mut d_in = Tensor::zeros(input_act.shape());
            for b in 0..batch {
                let xb = &input_act.data()[b * per_in..(b + 1) * per_in];
                let gb = &d_out.data()[b * per_out..(b + 1) * per_out];
                for co in 0..c_out {
                    for ci in 0..c_in {
                        let kbase = (co * c_in + ci) * 9;
                        for dy in 0..3isize {
                            for dx in 0..3isize {
                                let kval = layer.weight.data()[kbase + (dy * 3 + dx) as usize];
                                let mut kacc = 0.0;
                                for y in 0..h as isize {
                                    let iy = y + dy - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for x in 0..w as isize {
                                        let ix = x + dx - 1;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let g = gb[(co * h + y as usize) * w + x as usize];
                                        let xi = (ci * h + iy as usize) * w + ix as usize;
                                        kacc += g * xb[xi];
                                        d_in.data_mut()[b * per_in + xi] += g * kval;
                                    }
                                }
                                dw.data_mut()[kbase + (dy * 3 + dx) as usize] += kacc;
                            }
                        }
                    }
                }
            }
            Ok(d_in)
        }
    }
}

/// Backward pass through time with surrogate gradients.
///
/// `d_logits_mean` is the adjoint of the time-averaged readout.
/// `extra_u_adjoint`, when given, supplies additional per-layer,
/// per-timestep adjoints on the membrane potential U(t) (used to inject the
/// regularizer gradient).
pub fn bptt_backward(
    model: &Model,
    trace: &Trace,
    d_logits_mean: &Tensor,
    extra_u_adjoint: Option<&[Vec<Tensor>]>,
) -> Result<GradientBundle> {
    if trace.layers.len() != model.layers.len() {
        return Err(Error::InvalidArg("trace does not match model".into()));
    }
    if let Some(extra) = extra_u_adjoint {
        if extra.len() != model.layers.len() {
            return Err(Error::ShapeMismatch("extra adjoint layer count".into()));
        }
    }
    let t_steps = trace.t_steps;
    let batch = trace.input.shape()[0];
    let classes = model.spec.classes;
    let feat = model.feature_count();
    let n_layers = model.layers.len();

    // Readout: logits(t) = W_r o_flat(t) + b_r, averaged over t.
    let d_logit_t = d_logits_mean.scale(1.0 / t_steps as f64);
    let mut d_readout_w = Tensor::zeros(model.readout_w.shape());
    let mut d_readout_b = Tensor::zeros(model.readout_b.shape());
    let last = n_layers - 1;
    let mut d_o: Vec<Tensor> = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let o_flat = trace.layers[last].o[t].reshape(&[batch, feat])?;
        let mut d_of = Tensor::zeros(&[batch, feat]);
        for b in 0..batch {
            let grow = &d_logit_t.data()[b * classes..(b + 1) * classes];
            let orow = &o_flat.data()[b * feat..(b + 1) * feat];
            for (k, &g) in grow.iter().enumerate() {
                d_readout_b.data_mut()[k] += g;
                let wrow = &model.readout_w.data()[k * feat..(k + 1) * feat];
                let dwrow = &mut d_readout_w.data_mut()[k * feat..(k + 1) * feat];
                let dof = &mut d_of.data_mut()[b * feat..(b + 1) * feat];
                for i in 0..feat {
                    dwrow[i] += g * orow[i];
                    dof[i] += g * wrow[i];
                }
            }
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&model.layers[last].out_shape);
        d_o.push(d_of.reshape(&shape)?);
    }

    let mut layer_weight_grads: Vec<Tensor> = model
        .layers
        .iter()
        .map(|l| Tensor::zeros(l.weight.shape()))
        .collect();
    let mut tdbn_lambda = vec![Vec::new(); n_layers];
    let mut tdbn_beta = vec![Vec::new(); n_layers];
    let mut input_per_t: Vec<Tensor> = Vec::new();

    for li in (0..n_layers).rev() {
        let lt = &trace.layers[li];
        // Reverse LIF dynamics: accumulate dU(t) from the spike path, any
        // injected adjoint, and the next timestep's temporal coupling.
        let mut d_post_bn: Vec<Tensor> = vec![Tensor::zeros(lt.u[0].shape()); t_steps];
        let mut d_u_next = Tensor::zeros(lt.u[0].shape());
        for t in (0..t_steps).rev() {
            let mut d_u = Tensor::zeros(lt.u[t].shape());
            for i in 0..d_u.len() {
                let h = lt.h[t].data()[i];
                let o = lt.o[t].data()[i];
                let mut v = d_o[t].data()[i] * h;
                if let Some(extra) = extra_u_adjoint {
                    v += extra[li][t].data()[i];
                }
                v += d_u_next.data()[i] * temporal_factor(model, h, o);
                d_u.data_mut()[i] = v;
            }
            d_post_bn[t] = d_u.clone();
            d_u_next = d_u;
        }

        // tdBN backward couples all timesteps through the shared statistics.
        let cache = lt.bn_cache.as_ref().ok_or_else(|| {
            Error::InvalidArg("bptt_backward needs a training-mode trace (tdBN cache missing)".into())
        })?;
        let (d_pre_bn, d_lambda, d_beta) = model.layers[li].tdbn.backward(cache, &d_post_bn)?;
        tdbn_lambda[li] = d_lambda;
        tdbn_beta[li] = d_beta;

        // Linear op backward per timestep.
        let mut d_prev: Vec<Tensor> = Vec::with_capacity(t_steps);
        for t in 0..t_steps {
            let input_act = if li == 0 {
                &trace.spikes_in[t]
            } else {
                &trace.layers[li - 1].o[t]
            };
            let d_in = linear_backward(
                model,
                li,
                input_act,
                &d_pre_bn[t],
                &mut layer_weight_grads[li],
            )?;
            d_prev.push(d_in);
        }
        if li == 0 {
            input_per_t = d_prev;
        } else {
            d_o = d_prev;
        }
    }

    // Input gradient under direct coding: mean over t of the encoder adjoint.
    let mut input = Tensor::zeros(trace.input.shape());
    for t in &input_per_t {
        let t = t.reshape(trace.input.shape())?;
        input.add_assign(&t)?;
    }
    let input = input.scale(1.0 / t_steps as f64);

    Ok(GradientBundle {
        layer_weights: layer_weight_grads,
        tdbn_lambda,
        tdbn_beta,
        readout_w: d_readout_w,
        readout_b: d_readout_b,
        input,
        input_per_t,
    })
}

/// Rate-based backward pass (BPTR).
///
/// Works entirely on time-averaged quantities; the neuron stage contributes
/// the constant factor 1/T and the tdBN stage its per-channel affine gain.
pub fn bptr_backward(model: &Model, trace: &Trace, d_logits_mean: &Tensor) -> Result<GradientBundle> {
    let t_steps = trace.t_steps;
    let batch = trace.input.shape()[0];
    let classes = model.spec.classes;
    let feat = model.feature_count();
    let n_layers = model.layers.len();

    let mean_of = |ts: &[Tensor]| -> Tensor {
        let mut acc = Tensor::zeros(ts[0].shape());
        for t in ts {
            acc.add_assign(t).expect("uniform shapes");
        }
        acc.scale(1.0 / ts.len() as f64)
    };

    // Readout on the last layer's average rate.
    let rate_last = mean_of(&trace.layers[n_layers - 1].o).reshape(&[batch, feat])?;
    let mut d_readout_w = Tensor::zeros(model.readout_w.shape());
    let mut d_readout_b = Tensor::zeros(model.readout_b.shape());
    let mut d_rate = Tensor::zeros(&[batch, feat]);
    for b in 0..batch {
        let grow = &d_logits_mean.data()[b * classes..(b + 1) * classes];
        let rrow = &rate_last.data()[b * feat..(b + 1) * feat];
        for (k, &g) in grow.iter().enumerate() {
            d_readout_b.data_mut()[k] += g;
            let wrow = &model.readout_w.data()[k * feat..(k + 1) * feat];
            for i in 0..feat {
                d_readout_w.data_mut()[k * feat + i] += g * rrow[i];
                d_rate.data_mut()[b * feat + i] += g * wrow[i];
            }
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(&model.layers[n_layers - 1].out_shape);
    let mut d_rate = d_rate.reshape(&shape)?;

    let mut layer_weight_grads: Vec<Tensor> = model
        .layers
        .iter()
        .map(|l| Tensor::zeros(l.weight.shape()))
        .collect();
    let mut tdbn_lambda = vec![Vec::new(); n_layers];
    let mut tdbn_beta = vec![Vec::new(); n_layers];

    for li in (0..n_layers).rev() {
        let layer = &model.layers[li];
        let lt = &trace.layers[li];
        let c = layer.tdbn.channels();
        let spatial: usize = layer.out_shape[1..].iter().product::<usize>().max(1);

        // Neuron stage: constant rate derivative 1/T.
        let d_post_bn_rate = d_rate.scale(1.0 / t_steps as f64);

        // tdBN stage: per-channel affine gain (statistics treated as fixed).
        let inv_std: Vec<f64> = match lt.bn_cache.as_ref() {
            Some(cache) => cache.inv_std.clone(),
            None => layer
                .tdbn
                .running_var
                .iter()
                .map(|v| 1.0 / (v + layer.tdbn.eps).sqrt())
                .collect(),
        };
        let s = layer.tdbn.alpha * layer.tdbn.v_th;
        let mut d_pre_rate = Tensor::zeros(d_post_bn_rate.shape());
        let post_rate_est = mean_of(&lt.post_bn);
        let mut d_lambda = vec![0.0; c];
        let mut d_beta = vec![0.0; c];
        for b in 0..batch {
            for ch in 0..c {
                let gain = layer.tdbn.lambda[ch] * s * inv_std[ch];
                let base = (b * c + ch) * spatial;
                for sp in 0..spatial {
                    let g = d_post_bn_rate.data()[base + sp];
                    d_pre_rate.data_mut()[base + sp] = g * gain;
                    d_beta[ch] += g;
                    // d(out)/d(lambda) at fixed stats: s * normalized value
                    let norm = if layer.tdbn.lambda[ch] != 0.0 {
                        (post_rate_est.data()[base + sp] - layer.tdbn.beta[ch])
                            / layer.tdbn.lambda[ch]
                    } else {
                        0.0
                    };
                    d_lambda[ch] += g * norm;
                }
            }
        }
        tdbn_lambda[li] = d_lambda;
        tdbn_beta[li] = d_beta;

        let prev_rate = if li == 0 {
            mean_of(&trace.spikes_in)
        } else {
            mean_of(&trace.layers[li - 1].o)
        };
        let d_in = linear_backward(model, li, &prev_rate, &d_pre_rate, &mut layer_weight_grads[li])?;
        d_rate = d_in;
    }

    let input = d_rate.reshape(trace.input.shape())?;
    Ok(GradientBundle {
        layer_weights: layer_weight_grads,
        tdbn_lambda,
        tdbn_beta,
        readout_w: d_readout_w,
        readout_b: d_readout_b,
        input_per_t: vec![input.clone()],
        input,
    })
}

/// Per-layer magnitude of the running product of surrogate factors.
///
/// For layer l the per-timestep scalar is the product over layers v <= l of
/// the mean absolute surrogate factor; returned per layer, averaged over t.
pub fn p3_diagnostic(trace: &Trace) -> Vec<f64> {
    let t_steps = trace.t_steps;
    let mut running = vec![1.0; t_steps];
    let mut out = Vec::with_capacity(trace.layers.len());
    for lt in &trace.layers {
        for (t, r) in running.iter_mut().enumerate() {
            let h = &lt.h[t];
            let mean_abs: f64 =
                h.data().iter().map(|v| v.abs()).sum::<f64>() / h.len() as f64;
            *r *= mean_abs;
        }
        out.push(running.iter().sum::<f64>() / t_steps as f64);
    }
    out
}

impl Model {
    /// Plain SGD step.
    pub fn apply_gradients(&mut self, g: &GradientBundle, lr: f64) -> Result<()> {
        for (layer, gw) in self.layers.iter_mut().zip(g.layer_weights.iter()) {
            for (w, d) in layer.weight.data_mut().iter_mut().zip(gw.data().iter()) {
                *w -= lr * d;
            }
        }
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (w, d) in layer.tdbn.lambda.iter_mut().zip(g.tdbn_lambda[li].iter()) {
                *w -= lr * d;
            }
            for (w, d) in layer.tdbn.beta.iter_mut().zip(g.tdbn_beta[li].iter()) {
                *w -= lr * d;
            }
        }
        for (w, d) in self
            .readout_w
            .data_mut()
            .iter_mut()
            .zip(g.readout_w.data().iter())
        {
            *w -= lr * d;
        }
        for (w, d) in self
            .readout_b
            .data_mut()
            .iter_mut()
            .zip(g.readout_b.data().iter())
        {
            *w -= lr * d;
        }
        Ok(())
    }
}
