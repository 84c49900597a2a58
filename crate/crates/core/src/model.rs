//! Feed-forward spiking network: linear layers (dense or 3x3 conv) each
//! followed by tdBN and a LIF neuron stage, with a linear readout averaged
//! over time.
//!
//! Batch layout: every per-timestep tensor is `[B, ...sample shape]`.

use crate::encode::{encode_direct, encode_poisson, Coding};
use crate::error::{Error, Result};
use crate::lif::{lif_step, LifParams};
use crate::rng::Rng;
use crate::surrogate::SurrogateSpec;
use crate::tdbn::{TdBnCache, TdBnParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum HiddenLayerSpec {
    Dense { units: usize },
    Conv { channels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Per-sample input shape: `[features]` or `[channels, h, w]`.
    pub input_shape: Vec<usize>,
    pub hidden: Vec<HiddenLayerSpec>,
    pub classes: usize,
    pub t_steps: usize,
    pub lif: LifParams,
    pub surrogate: SurrogateSpec,
    #[serde(default = "default_alpha")]
    pub tdbn_alpha: f64,
    pub coding: Coding,
}

fn default_alpha() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        self.surrogate.validate()?;
        if self.t_steps == 0 {
            return Err(Error::Config("t_steps must be >= 1".into()));
        }
        if self.classes == 0 {
            return Err(Error::Config("classes must be >= 1".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one hidden layer required".into()));
        }
        if self.input_shape.is_empty() {
            return Err(Error::Config("input_shape must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv,
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    /// Dense: `[out, in]`. Conv: `[c_out, c_in, 3, 3]`.
    pub weight: Tensor,
    pub tdbn: TdBnParams,
    /// Per-sample output shape.
    pub out_shape: Vec<usize>,
    /// Per-sample input shape seen by the linear op.
    pub in_shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
    /// `[classes, features_of_last_layer]`
    pub readout_w: Tensor,
    /// `[classes]`
    pub readout_b: Tensor,
}

/// Per-layer forward records kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerFwd {
    /// Postsynaptic current before tdBN, per timestep.
    pub pre_bn: Vec<Tensor>,
    pub bn_cache: Option<TdBnCache>,
    /// Normalized current fed to the LIF stage.
    pub post_bn: Vec<Tensor>,
    /// Pre-reset membrane potential U(t) (the value the firing rule reads).
    pub u: Vec<Tensor>,
    /// Binary spike outputs.
    pub o: Vec<Tensor>,
    /// Surrogate factors h(U(t) - v_th).
    pub h: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Tensor,
    /// Encoded input spikes O^0(t), `[B, input...]`.
    pub spikes_in: Vec<Tensor>,
    pub layers: Vec<LayerFwd>,
    /// Readout outputs per timestep, `[B, classes]`.
    pub logits_t: Vec<Tensor>,
    /// Time-averaged readout.
    pub logits_mean: Tensor,
    pub t_steps: usize,
    pub training: bool,
}

impl Model {
    /// Initialize weights deterministically from `rng` substreams.
    pub fn init(spec: ModelSpec, rng: &Rng) -> Result<Model> {
        spec.validate()?;
        let mut cur_shape = spec.input_shape.clone();
        let mut layers = Vec::with_capacity(spec.hidden.len());
        for (li, h) in spec.hidden.iter().enumerate() {
            let mut wrng = rng.fork_named("weights").fork(li as u64);
            let layer = match *h {
                HiddenLayerSpec::Dense { units } => {
                    let fan_in: usize = cur_shape.iter().product();
                    let std = (2.0 / fan_in as f64).sqrt();
                    let weight = wrng.gaussian(&[units, fan_in], 0.0, std);
                    Layer {
                        kind: LayerKind::Dense,
                        weight,
                        tdbn: TdBnParams::new(units, spec.tdbn_alpha, spec.lif.v_th),
                        out_shape: vec![units],
                        in_shape: vec![fan_in],
                    }
                }
                HiddenLayerSpec::Conv { channels } => {
                    if cur_shape.len() != 3 {
                        return Err(Error::Config(format!(
                            "conv layer {} needs [c,h,w] input, got {:?}",
                            li, cur_shape
                        )));
                    }
                    let c_in = cur_shape[0];
                    let std = (2.0 / (9.0 * c_in as f64)).sqrt();
                    let weight = wrng.gaussian(&[channels, c_in, 3, 3], 0.0, std);
                    Layer {
                        kind: LayerKind::Conv,
                        weight,
                        tdbn: TdBnParams::new(channels, spec.tdbn_alpha, spec.lif.v_th),
                        out_shape: vec![channels, cur_shape[1], cur_shape[2]],
                        in_shape: cur_shape.clone(),
                    }
                }
            };
            cur_shape = layer.out_shape.clone();
            layers.push(layer);
        }
        let feat: usize = cur_shape.iter().product();
        let mut rrng = rng.fork_named("readout");
        let readout_w = rrng.gaussian(&[spec.classes, feat], 0.0, (1.0 / feat as f64).sqrt());
        let readout_b = Tensor::zeros(&[spec.classes]);
        Ok(Model {
            spec,
            layers,
            readout_w,
            readout_b,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.readout_w.shape()[1]
    }

    /// Encode a `[B, input...]` batch into input spikes.
    pub fn encode(&self, x: &Tensor, rng: Option<&mut Rng>) -> Result<Vec<Tensor>> {
        match self.spec.coding {
            Coding::Direct => encode_direct(x, self.spec.t_steps),
            Coding::Poisson => {
                let rng = rng.ok_or_else(|| {
                    Error::InvalidArg("poisson coding requires an rng".into())
                })?;
                encode_poisson(rng, x, self.spec.t_steps)
            }
        }
    }

    /// Apply the linear op of layer `li` to a `[B, ...]` activation.
    fn linear(&self, li: usize, x: &Tensor) -> Result<Tensor> {
        let layer = &self.layers[li];
        let batch = x.shape()[0];
        match layer.kind {
            LayerKind::Dense => {
                let fan_in = layer.in_shape[0];
                let flat = x.reshape(&[batch, fan_in])?;
                // [B, in] x [in, out] computed as W [out,in] row-by-row
                let out_units = layer.out_shape[0];
                let mut out = Tensor::zeros(&[batch, out_units]);
                for b in 0..batch {
                    let row = &flat.data()[b * fan_in..(b + 1) * fan_in];
                    let y = layer.weight.matvec(row)?;
                    out.data_mut()[b * out_units..(b + 1) * out_units].copy_from_slice(&y);
                }
                Ok(out)
            }
            LayerKind::Conv => {
                let per: usize = layer.in_shape.iter().product();
                let mut out_shape = vec![batch];
                out_shape.extend_from_slice(&layer.out_shape);
                let out_per: usize = layer.out_shape.iter().product();
                let mut out = Tensor::zeros(&out_shape);
                for b in 0..batch {
                    let sample = Tensor::from_vec(
                        &layer.in_shape,
                        x.data()[b * per..(b + 1) * per].to_vec(),
                    )?;
                    let y = sample.conv2d(&layer.weight)?;
                    out.data_mut()[b * out_per..(b + 1) * out_per].copy_from_slice(y.data());
                }
                Ok(out)
            }
        }
    }

    /// Full forward pass over the time window, recording a trace.
    ///
    /// Training mode keeps tdBN caches and updates running statistics.
    pub fn forward(
        &mut self,
        x: &Tensor,
        training: bool,
        rng: Option<&mut Rng>,
    ) -> Result<Trace> {
        let batch = x.shape()[0];
        let expected: usize = self.spec.input_shape.iter().product();
        let got: usize = x.shape()[1..].iter().product();
        if got != expected {
            return Err(Error::ShapeMismatch(format!(
                "input sample size {} != model input {}",
                got, expected
            )));
        }
        let spikes_in = self.encode(x, rng)?;
        let t_steps = self.spec.t_steps;
        let lif = self.spec.lif;
        let sg = self.spec.surrogate;

        let mut activity = spikes_in.clone();
        let mut layer_traces = Vec::with_capacity(self.layers.len());
        for li in 0..self.layers.len() {
            let mut pre_bn = Vec::with_capacity(t_steps);
            for t in 0..t_steps {
                pre_bn.push(self.linear(li, &activity[t])?);
            }
            let (post_bn, bn_cache) = self.layers[li].tdbn.forward(&pre_bn, training)?;
            let mut u_prev = Tensor::zeros(post_bn[0].shape());
            let mut o_prev = Tensor::zeros(post_bn[0].shape());
            let mut us = Vec::with_capacity(t_steps);
            let mut os = Vec::with_capacity(t_steps);
            let mut hs = Vec::with_capacity(t_steps);
            for t in 0..t_steps {
                let (u, o) = lif_step(&u_prev, &o_prev, &lif, &post_bn[t])?;
                hs.push(u.map(|v| sg.grad(v - lif.v_th)));
                u_prev = u.clone();
                o_prev = o.clone();
                us.push(u);
                os.push(o);
            }
            activity = os.clone();
            layer_traces.push(LayerFwd {
                pre_bn,
                bn_cache,
                post_bn,
                u: us,
                o: os,
                h: hs,
            });
            if !activity[0].all_finite() {
                return Err(Error::Numeric(format!("non-finite activity in layer {}", li)));
            }
        }

        let feat = self.feature_count();
        let classes = self.spec.classes;
        let mut logits_t = Vec::with_capacity(t_steps);
        let mut logits_mean = Tensor::zeros(&[batch, classes]);
        for t in 0..t_steps {
            let flat = activity[t].reshape(&[batch, feat])?;
            let mut lt = Tensor::zeros(&[batch, classes]);
            for b in 0..batch {
                let y = self
                    .readout_w
                    .matvec(&flat.data()[b * feat..(b + 1) * feat])?;
                for k in 0..classes {
                    lt.data_mut()[b * classes + k] = y[k] + self.readout_b.data()[k];
                }
            }
            logits_mean.add_assign(&lt)?;
            logits_t.push(lt);
        }
        logits_mean = logits_mean.scale(1.0 / t_steps as f64);

        Ok(Trace {
            input: x.clone(),
            spikes_in,
            layers: layer_traces,
            logits_t,
            logits_mean,
            t_steps,
            training,
        })
    }

    /// Predicted class per batch element from time-averaged logits.
    pub fn predict(&mut self, x: &Tensor, rng: Option<&mut Rng>) -> Result<Vec<usize>> {
        let trace = self.forward(x, false, rng)?;
        Ok(argmax_rows(&trace.logits_mean))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    (0..b)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            row.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (j, &v)| {
                    if v > acc.1 {
                        (j, v)
                    } else {
                        acc
                    }
                })
                .0
        })
        .collect()
}
