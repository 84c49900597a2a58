//! Membrane-potential-distribution regularizer.
//!
//! Per (layer, channel, timestep) the shifted membrane potential
//! u_bar = U - v_th is summarized by its batch statistics (mu, sigma), and
//! the regularizer penalizes the overlap of N(mu, sigma^2) with the
//! surrogate's gradient-available interval. Gradients flow through mu and
//! sigma back to every u_bar element.

use crate::error::{Error, Result};
use crate::model::{Model, Trace};
use crate::overlap::overlap;
use crate::surrogate::SurrogateSpec;
use crate::tensor::Tensor;

/// Variance floor keeping the overlap closed forms finite on degenerate
/// channels. Gradient through the floor is zero.
pub const SIGMA_MIN: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct ChannelStats {
    /// `[channels * t_steps]`, indexed `c * t_steps + t`.
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Whether the variance floor was active for each (c, t).
    pub floored: Vec<bool>,
    /// Elements per channel (batch * spatial).
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct MpdStats {
    pub layers: Vec<ChannelStats>,
    pub t_steps: usize,
}

/// Population statistics of u_bar per (layer, channel, timestep), computed
/// over the batch and spatial axes.
pub fn mpd_stats(model: &Model, trace: &Trace) -> Result<MpdStats> {
    let v_th = model.spec.lif.v_th;
    let t_steps = trace.t_steps;
    let mut layers = Vec::with_capacity(trace.layers.len());
    for (li, lt) in trace.layers.iter().enumerate() {
        let shape = lt.u[0].shape();
        let batch = shape[0];
        let channels = model.layers[li].tdbn.channels();
        let spatial: usize = shape[2..].iter().product();
        let n = batch * spatial;
        if n == 0 {
            return Err(Error::InvalidArg(format!("empty channel in layer {}", li)));
        }
        let mut mu = vec![0.0; channels * t_steps];
        let mut sigma = vec![0.0; channels * t_steps];
        let mut floored = vec![false; channels * t_steps];
        for t in 0..t_steps {
            let u = &lt.u[t];
            for c in 0..channels {
                let mut sum = 0.0;
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    for sp in 0..spatial {
                        sum += u.data()[base + sp] - v_th;
                    }
                }
                let m = sum / n as f64;
                let mut var = 0.0;
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    for sp in 0..spatial {
                        let d = u.data()[base + sp] - v_th - m;
                        var += d * d;
                    }
                }
                let sd = (var / n as f64).sqrt();
                let idx = c * t_steps + t;
                mu[idx] = m;
                if sd < SIGMA_MIN {
                    sigma[idx] = SIGMA_MIN;
                    floored[idx] = true;
                } else {
                    sigma[idx] = sd;
                }
            }
        }
        layers.push(ChannelStats {
            mu,
            sigma,
            floored,
            count: n,
        });
    }
    Ok(MpdStats {
        layers,
        t_steps,
    })
}

#[derive(Debug, Clone)]
pub struct SgrLoss {
    /// Mean overlap over (layers, channels, timesteps) — the reported loss.
    pub loss: f64,
    /// Unnormalized sum of overlaps; the antiderivative of `u_adjoints`.
    pub omega_sum: f64,
    /// d(omega_sum)/d(U element), same shapes as the trace's membrane tensors.
    pub u_adjoints: Vec<Vec<Tensor>>,
    /// Mean overlap per layer (diagnostic).
    pub per_layer: Vec<f64>,
}

/// Overlap loss and its gradient to every membrane element.
///
/// The interval half-width is taken from the surrogate's gradient-available
/// support. For a channel with stats (mu, sigma) and element u_i:
/// d(omega)/d(u_i) = d_mu / N + d_sigma * (u_i - mu) / (N * sigma).
///
/// The reported `loss` is the mean overlap over all (layer, channel,
/// timestep) terms, but the adjoints are the per-channel overlap gradients
/// without that averaging — i.e. the gradient of `omega_sum`. This keeps
/// the regularization pressure per channel independent of network width,
/// depth and timestep count, so a single eta transfers across model sizes.
pub fn mpd_sgr_loss(
    model: &Model,
    trace: &Trace,
    stats: &MpdStats,
    spec: &SurrogateSpec,
) -> Result<SgrLoss> {
    spec.validate()?;
    let gamma = spec.support_halfwidth();
    let v_th = model.spec.lif.v_th;
    let t_steps = stats.t_steps;
    let n_layers = stats.layers.len();
    let total_terms: usize = stats
        .layers
        .iter()
        .map(|l| l.mu.len())
        .sum();
    if total_terms == 0 {
        return Err(Error::InvalidArg("no channels to regularize".into()));
    }
    let norm = 1.0 / total_terms as f64;

    let mut loss = 0.0;
    let mut per_layer = Vec::with_capacity(n_layers);
    let mut u_adjoints = Vec::with_capacity(n_layers);
    for (li, ls) in stats.layers.iter().enumerate() {
        let lt = &trace.layers[li];
        let shape = lt.u[0].shape();
        let batch = shape[0];
        let channels = model.layers[li].tdbn.channels();
        let spatial: usize = shape[2..].iter().product();
        let n = ls.count as f64;
        let mut layer_sum = 0.0;
        let mut adj: Vec<Tensor> = (0..t_steps).map(|_| Tensor::zeros(shape)).collect();
        for c in 0..channels {
            for t in 0..t_steps {
                let idx = c * t_steps + t;
                let r = overlap(ls.mu[idx], ls.sigma[idx], gamma)?;
                layer_sum += r.omega;
                let d_mu = r.d_mu;
                // no gradient through the variance floor
                let d_sigma = if ls.floored[idx] { 0.0 } else { r.d_sigma };
                let u = &lt.u[t];
                let a = &mut adj[t];
                for b in 0..batch {
                    let base = (b * channels + c) * spatial;
                    for sp in 0..spatial {
                        let u_bar = u.data()[base + sp] - v_th;
                        a.data_mut()[base + sp] = d_mu / n
                            + d_sigma * (u_bar - ls.mu[idx]) / (n * ls.sigma[idx]);
                    }
                }
            }
        }
        loss += layer_sum;
        per_layer.push(layer_sum / (channels * t_steps) as f64);
        u_adjoints.push(adj);
    }
    Ok(SgrLoss {
        loss: loss * norm,
        omega_sum: loss,
        u_adjoints,
        per_layer,
    })
}

/// Total training loss: task + eta * regularizer.
pub fn total_loss(task_loss: f64, sgr_loss: f64, eta: f64) -> Result<f64> {
    if eta < 0.0 {
        return Err(Error::InvalidArg(format!("eta must be >= 0, got {}", eta)));
    }
    Ok(task_loss + eta * sgr_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::Coding;
    use crate::lif::{LifParams, ResetMode};
    use crate::model::{HiddenLayerSpec, ModelSpec};
    use crate::rng::Rng;

    fn spec(units: usize, t_steps: usize) -> ModelSpec {
        ModelSpec {
            input_shape: vec![3],
            hidden: vec![HiddenLayerSpec::Dense { units }],
            classes: 2,
            t_steps,
            lif: LifParams {
                tau: 1.0,
                v_th: 1.0,
                reset: ResetMode::Soft,
            },
            surrogate: SurrogateSpec::triangle(1.0),
            tdbn_alpha: 1.0,
            coding: Coding::Direct,
        }
    }

    fn forward(seed: u64, units: usize, t_steps: usize, batch: usize) -> (Model, Trace) {
        let mut model = Model::init(spec(units, t_steps), &Rng::new(seed)).unwrap();
        let mut rng = Rng::new(seed + 1);
        let x = rng.uniform_tensor(&[batch, 3], 0.0, 1.0);
        let trace = model.forward(&x, true, None).unwrap();
        (model, trace)
    }

    use crate::model::Model;
    use crate::model::Trace;

    #[test]
    fn constant_channel_hits_sigma_floor() {
        let (model, mut trace) = forward(1, 2, 1, 4);
        for u in trace.layers[0].u.iter_mut() {
            for v in u.data_mut() {
                *v = 1.3; // u_bar = 0.3 everywhere
            }
        }
        let stats = mpd_stats(&model, &trace).unwrap();
        let ls = &stats.layers[0];
        for c in 0..2 {
            assert!((ls.mu[c] - 0.3).abs() < 1e-12);
            assert_eq!(ls.sigma[c], SIGMA_MIN);
            assert!(ls.floored[c]);
        }
    }

    #[test]
    fn two_point_channel_stats() {
        let (model, mut trace) = forward(2, 1, 1, 2);
        // u_bar = {-1, +1}
        trace.layers[0].u[0].data_mut()[0] = 0.0;
        trace.layers[0].u[0].data_mut()[1] = 2.0;
        let stats = mpd_stats(&model, &trace).unwrap();
        assert!((stats.layers[0].mu[0]).abs() < 1e-12);
        assert!((stats.layers[0].sigma[0] - 1.0).abs() < 1e-12);
        // loss with a single (l,c,t) term equals the overlap itself
        let sgr = mpd_sgr_loss(&model, &trace, &stats, &model.spec.surrogate.clone()).unwrap();
        assert!((sgr.loss - 0.682_689).abs() < 1e-6);
    }

    #[test]
    fn batch_permutation_invariance() {
        let (model, trace) = forward(3, 4, 2, 6);
        let stats = mpd_stats(&model, &trace).unwrap();
        // permute batch elements of every stored tensor
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut permuted = trace.clone();
        for u in permuted.layers[0].u.iter_mut() {
            let src = u.clone();
            let per: usize = u.shape()[1..].iter().product();
            for (dst_b, &src_b) in perm.iter().enumerate() {
                u.data_mut()[dst_b * per..(dst_b + 1) * per]
                    .copy_from_slice(&src.data()[src_b * per..(src_b + 1) * per]);
            }
        }
        let stats2 = mpd_stats(&model, &permuted).unwrap();
        for (a, b) in stats.layers[0].mu.iter().zip(stats2.layers[0].mu.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in stats.layers[0].sigma.iter().zip(stats2.layers[0].sigma.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn far_channels_have_vanishing_loss() {
        let (model, mut trace) = forward(4, 2, 1, 4);
        for (i, u) in trace.layers[0].u[0].data_mut().iter_mut().enumerate() {
            *u = 50.0 + 0.1 * (i as f64); // |mu| >> gamma
        }
        let stats = mpd_stats(&model, &trace).unwrap();
        let sgr = mpd_sgr_loss(&model, &trace, &stats, &model.spec.surrogate.clone()).unwrap();
        assert!(sgr.loss < 1e-12);
    }

    #[test]
    fn element_gradients_match_finite_differences() {
        let (model, trace) = forward(5, 3, 2, 5);
        let sg = model.spec.surrogate;
        let eval = |trace: &Trace| -> f64 {
            let stats = mpd_stats(&model, trace).unwrap();
            mpd_sgr_loss(&model, trace, &stats, &sg).unwrap().omega_sum
        };
        let stats = mpd_stats(&model, &trace).unwrap();
        let sgr = mpd_sgr_loss(&model, &trace, &stats, &sg).unwrap();
        let h = 1e-4;
        for t in 0..2 {
            for i in 0..trace.layers[0].u[t].len() {
                let mut plus = trace.clone();
                plus.layers[0].u[t].data_mut()[i] += h;
                let mut minus = trace.clone();
                minus.layers[0].u[t].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = sgr.u_adjoints[0][t].data()[i];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(1e-4),
                    "t={} i={} fd {} vs {}",
                    t,
                    i,
                    fd,
                    an
                );
            }
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.5, 0.0).unwrap(), 1.0);
        assert!((total_loss(1.0, 0.5, 0.05).unwrap() - 1.025).abs() < 1e-15);
        assert!(total_loss(1.0, 0.5, -0.1).is_err());
    }
}
