//! Forward-mode gradient oracle.
//!
//! Independently recomputes d(loss)/d(parameter) for one scalar at a time by
//! pushing dual numbers (value, derivative) through the whole pipeline:
//! linear -> tdBN (true derivatives through the batch statistics) -> LIF
//! with the spike derivative replaced by the surrogate factor, soft-reset
//! flow-through / hard-reset detachment included -> time-averaged readout ->
//! cross-entropy, optionally plus the membrane-overlap regularizer.
//!
//! Because it shares no code with the reverse pass beyond the tensor type,
//! agreement between the two is strong evidence both are right.

use crate::error::{Error, Result};
use crate::lif::ResetMode;
use crate::model::{LayerKind, Model};
use crate::regularizer::SIGMA_MIN;
use crate::tensor::Tensor;

/// Which scalar carries the unit derivative seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seed {
    Input(usize),
    LayerWeight(usize, usize),
    TdbnLambda(usize, usize),
    TdbnBeta(usize, usize),
    ReadoutW(usize),
    ReadoutB(usize),
}

/// Value/derivative pair over a whole tensor.
#[derive(Debug, Clone)]
struct DualTensor {
    v: Tensor,
    d: Tensor,
}

impl DualTensor {
    fn constant(v: Tensor) -> DualTensor {
        let d = Tensor::zeros(v.shape());
        DualTensor { v, d }
    }
}

/// d(loss)/d(seed) for softmax cross-entropy on time-averaged logits,
/// plus `eta` times the overlap regularizer when `eta > 0`.
///
/// Uses training-mode (batch) tdBN statistics without touching the model's
/// running buffers; only direct coding is supported since Poisson spikes are
/// not a function of the input intensities.
pub fn forward_grad(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    seed: Seed,
    eta: f64,
) -> Result<f64> {
    if model.spec.coding != crate::encode::Coding::Direct {
        return Err(Error::InvalidArg(
            "forward-mode oracle supports direct coding only".into(),
        ));
    }
    let t_steps = model.spec.t_steps;
    let batch = x.shape()[0];
    let lif = model.spec.lif;
    let sg = model.spec.surrogate;

    // Encoder: input replicated across time; seed the input if requested.
    let mut act: Vec<DualTensor> = {
        let mut dx = Tensor::zeros(x.shape());
        if let Seed::Input(i) = seed {
            dx.data_mut()[i] = 1.0;
        }
        (0..t_steps)
            .map(|_| DualTensor {
                v: x.clone(),
                d: dx.clone(),
            })
            .collect()
    };

    // Per-(l,c,t) membrane statistics for the regularizer, with duals.
    let mut sgr_terms: Vec<(f64, f64)> = Vec::new(); // (omega, d_omega)
    let gamma = sg.support_halfwidth();

    for li in 0..model.layers.len() {
        let layer = &model.layers[li];
        // linear
        let mut pre: Vec<DualTensor> = Vec::with_capacity(t_steps);
        for a in &act {
            pre.push(linear_dual(model, li, a, seed)?);
        }
        // tdBN with true derivatives through batch statistics
        let post = tdbn_dual(model, li, &pre, seed)?;

        // LIF unroll
        let shape = post[0].v.shape().to_vec();
        let mut u_prev = DualTensor::constant(Tensor::zeros(&shape));
        let mut o_prev = DualTensor::constant(Tensor::zeros(&shape));
        let mut us: Vec<DualTensor> = Vec::with_capacity(t_steps);
        let mut os: Vec<DualTensor> = Vec::with_capacity(t_steps);
        for t in 0..t_steps {
            let mut u = DualTensor::constant(Tensor::zeros(&shape));
            let mut o = DualTensor::constant(Tensor::zeros(&shape));
            for i in 0..u.v.len() {
                let (uv, du);
                match lif.reset {
                    ResetMode::Soft => {
                        uv = lif.tau * (u_prev.v.data()[i] - o_prev.v.data()[i] * lif.v_th)
                            + post[t].v.data()[i];
                        du = lif.tau * (u_prev.d.data()[i] - o_prev.d.data()[i] * lif.v_th)
                            + post[t].d.data()[i];
                    }
                    ResetMode::Hard => {
                        uv = lif.tau
                            * (u_prev.v.data()[i] - o_prev.v.data()[i] * u_prev.v.data()[i])
                            + post[t].v.data()[i];
                        // reset-spike coupling detached: o_prev treated as a
                        // constant gate on u_prev
                        du = lif.tau * (1.0 - o_prev.v.data()[i]) * u_prev.d.data()[i]
                            + post[t].d.data()[i];
                    }
                }
                let ov = if uv >= lif.v_th { 1.0 } else { 0.0 };
                let dov = sg.grad(uv - lif.v_th) * du;
                u.v.data_mut()[i] = uv;
                u.d.data_mut()[i] = du;
                o.v.data_mut()[i] = ov;
                o.d.data_mut()[i] = dov;
            }
            u_prev = u.clone();
            o_prev = o.clone();
            us.push(u);
            os.push(o);
        }

        if eta > 0.0 {
            sgr_overlap_dual(layer.tdbn.channels(), &us, lif.v_th, gamma, &mut sgr_terms)?;
        }
        act = os;
    }

    // Readout averaged over time.
    let classes = model.spec.classes;
    let feat = model.feature_count();
    let mut lv = Tensor::zeros(&[batch, classes]);
    let mut ld = Tensor::zeros(&[batch, classes]);
    for a in &act {
        let fv = a.v.reshape(&[batch, feat])?;
        let fd = a.d.reshape(&[batch, feat])?;
        for b in 0..batch {
            for k in 0..classes {
                let mut sv = model.readout_b.data()[k];
                let mut sd = 0.0;
                if seed == Seed::ReadoutB(k) {
                    sd += 1.0;
                }
                for i in 0..feat {
                    let w = model.readout_w.data()[k * feat + i];
                    sv += w * fv.data()[b * feat + i];
                    sd += w * fd.data()[b * feat + i];
                    if seed == Seed::ReadoutW(k * feat + i) {
                        sd += fv.data()[b * feat + i];
                    }
                }
                lv.data_mut()[b * classes + k] += sv / t_steps as f64;
                ld.data_mut()[b * classes + k] += sd / t_steps as f64;
            }
        }
    }

    // Cross-entropy: dloss = sum (p - onehot) * dlogit / B.
    let mut dloss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = &lv.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for k in 0..classes {
            let p = exps[k] / z;
            let onehot = if k == y { 1.0 } else { 0.0 };
            dloss += (p - onehot) * ld.data()[b * classes + k] / batch as f64;
        }
    }

    // Regularizer gradients use the unnormalized overlap sum, matching
    // the adjoints that mpd_sgr_loss injects into the backward pass.
    if eta > 0.0 && !sgr_terms.is_empty() {
        let d_sgr: f64 = sgr_terms.iter().map(|&(_, d)| d).sum::<f64>();
        dloss += eta * d_sgr;
    }
    // Input gradients follow the model's convention: the mean (not sum) of
    // the per-timestep encoder adjoints. Seeding all T replicas sums them.
    if matches!(seed, Seed::Input(_)) {
        dloss /= t_steps as f64;
    }
    Ok(dloss)
}

fn linear_dual(model: &Model, li: usize, a: &DualTensor, seed: Seed) -> Result<DualTensor> {
    let layer = &model.layers[li];
    let batch = a.v.shape()[0];
    let seeded_w = matches!(seed, Seed::LayerWeight(l, _) if l == li);
    match layer.kind {
        LayerKind::Dense => {
            let fan_in = layer.in_shape[0];
            let out_units = layer.out_shape[0];
            let xv = a.v.reshape(&[batch, fan_in])?;
            let xd = a.d.reshape(&[batch, fan_in])?;
            let mut ov = Tensor::zeros(&[batch, out_units]);
            let mut od = Tensor::zeros(&[batch, out_units]);
            for b in 0..batch {
                for o in 0..out_units {
                    let mut sv = 0.0;
                    let mut sd = 0.0;
                    for i in 0..fan_in {
                        let w = layer.weight.data()[o * fan_in + i];
                        sv += w * xv.data()[b * fan_in + i];
                        sd += w * xd.data()[b * fan_in + i];
                        if seeded_w && seed == Seed::LayerWeight(li, o * fan_in + i) {
                            sd += xv.data()[b * fan_in + i];
                        }
                    }
                    ov.data_mut()[b * out_units + o] = sv;
                    od.data_mut()[b * out_units + o] = sd;
                }
            }
            Ok(DualTensor { v: ov, d: od })
        }
        LayerKind::Conv => {
            let (c_in, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
            let c_out = layer.out_shape[0];
            let per_in = c_in * h * w;
            let per_out = c_out * h * w;
            let mut shape = vec![batch];
            shape.extend_from_slice(&layer.out_shape);
            let mut ov = Tensor::zeros(&shape);
            let mut od = Tensor::zeros(&shape);
            for b in 0..batch {
                for co in 0..c_out {
                    for y in 0..h as isize {
                        for x in 0..w as isize {
                            let mut sv = 0.0;
                            let mut sd = 0.0;
                            for ci in 0..c_in {
                                for dy in 0..3isize {
                                    let iy = y + dy - 1;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for dx in 0..3isize {
                                        let ix = x + dx - 1;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let ki = (co * c_in + ci) * 9 + (dy * 3 + dx) as usize;
                                        let kv = layer.weight.data()[ki];
                                        let xi = b * per_in
                                            + (ci * h + iy as usize) * w
                                            + ix as usize;
                                        sv += kv * a.v.data()[xi];
                                        sd += kv * a.d.data()[xi];
                                        if seeded_w && seed == Seed::LayerWeight(li, ki) {
                                            sd += a.v.data()[xi];
                                        }
                                    }
                                }
                            }
                            let oi = b * per_out + (co * h as usize + y as usize) * w
                                + x as usize;
                            ov.data_mut()[oi] = sv;
                            od.data_mut()[oi] = sd;
                        }
                    }
                }
            }
            Ok(DualTensor { v: ov, d: od })
        }
    }
}

/// Training-mode tdBN with derivatives carried through mean and variance.
fn tdbn_dual(
    model: &Model,
    li: usize,
    input: &[DualTensor],
    seed: Seed,
) -> Result<Vec<DualTensor>> {
    let p = &model.layers[li].tdbn;
    let c = p.channels();
    let shape = input[0].v.shape();
    let batch = shape[0];
    let spatial: usize = shape[2..].iter().product();
    let t_steps = input.len();
    let n = (t_steps * batch * spatial) as f64;
    let s = p.alpha * p.v_th;

    let mut mean = vec![0.0; c];
    let mut dmean = vec![0.0; c];
    for x in input {
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                for sp in 0..spatial {
                    mean[ch] += x.v.data()[base + sp];
                    dmean[ch] += x.d.data()[base + sp];
                }
            }
        }
    }
    for ch in 0..c {
        mean[ch] /= n;
        dmean[ch] /= n;
    }
    let mut var = vec![0.0; c];
    let mut dvar = vec![0.0; c];
    for x in input {
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                for sp in 0..spatial {
                    let d = x.v.data()[base + sp] - mean[ch];
                    var[ch] += d * d;
                    dvar[ch] += 2.0 * d * (x.d.data()[base + sp] - dmean[ch]);
                }
            }
        }
    }
    for ch in 0..c {
        var[ch] /= n;
        dvar[ch] /= n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + p.eps).sqrt()).collect();
    let dinv_std: Vec<f64> = (0..c)
        .map(|ch| -0.5 * inv_std[ch].powi(3) * dvar[ch])
        .collect();

    let mut out = Vec::with_capacity(t_steps);
    for x in input {
        let mut ov = Tensor::zeros(shape);
        let mut od = Tensor::zeros(shape);
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * spatial;
                for sp in 0..spatial {
                    let xc = x.v.data()[base + sp] - mean[ch];
                    let y = xc * inv_std[ch];
                    let dy = (x.d.data()[base + sp] - dmean[ch]) * inv_std[ch]
                        + xc * dinv_std[ch];
                    ov.data_mut()[base + sp] = p.lambda[ch] * s * y + p.beta[ch];
                    let mut d = p.lambda[ch] * s * dy;
                    if seed == Seed::TdbnLambda(li, ch) {
                        d += s * y;
                    }
                    if seed == Seed::TdbnBeta(li, ch) {
                        d += 1.0;
                    }
                    od.data_mut()[base + sp] = d;
                }
            }
        }
        out.push(DualTensor { v: ov, d: od });
    }
    Ok(out)
}

/// Dual-number overlap terms per (channel, timestep) for one layer.
fn sgr_overlap_dual(
    channels: usize,
    us: &[DualTensor],
    v_th: f64,
    gamma: f64,
    terms: &mut Vec<(f64, f64)>,
) -> Result<()> {
    let shape = us[0].v.shape();
    let batch = shape[0];
    let spatial: usize = shape[2..].iter().product();
    let n = (batch * spatial) as f64;
    for t in us {
        for ch in 0..channels {
            let mut mu = 0.0;
            let mut dmu = 0.0;
            for b in 0..batch {
                let base = (b * channels + ch) * spatial;
                for sp in 0..spatial {
                    mu += t.v.data()[base + sp] - v_th;
                    dmu += t.d.data()[base + sp];
                }
            }
            mu /= n;
            dmu /= n;
            let mut var = 0.0;
            let mut dvar = 0.0;
            for b in 0..batch {
                let base = (b * channels + ch) * spatial;
                for sp in 0..spatial {
                    let d = t.v.data()[base + sp] - v_th - mu;
                    var += d * d;
                    dvar += 2.0 * d * (t.d.data()[base + sp] - dmu);
                }
            }
            var /= n;
            dvar /= n;
            let sd = var.sqrt();
            let (sigma, dsigma) = if sd < SIGMA_MIN {
                (SIGMA_MIN, 0.0)
            } else {
                (sd, dvar / (2.0 * sd))
            };
            let r = crate::overlap::overlap(mu, sigma, gamma)?;
            terms.push((r.omega, r.d_mu * dmu + r.d_sigma * dsigma));
        }
    }
    Ok(())
}
