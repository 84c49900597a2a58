//! Gradient-based and noise attacks on spiking models.
//!
//! All attacks operate on the [0,1] input range; FGSM/PGD/BIM additionally
//! keep every iterate inside the L-infinity ball of radius epsilon around
//! the clean input, exactly.

use crate::backprop::{bptr_backward, bptt_backward, cross_entropy};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Bim,
    Cw,
    GaussNoise,
    UniformNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradApprox {
    Bptt,
    Bptr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_step_alpha")]
    pub step_alpha: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_approx")]
    pub approx: GradApprox,
    #[serde(default = "default_cw_c")]
    pub cw_c: f64,
    #[serde(default = "default_cw_steps")]
    pub cw_steps: usize,
    #[serde(default = "default_cw_lr")]
    pub cw_lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    8.0 / 255.0
}
fn default_step_alpha() -> f64 {
    0.01
}
fn default_steps() -> usize {
    7
}
fn default_approx() -> GradApprox {
    GradApprox::Bptt
}
fn default_cw_c() -> f64 {
    1.0
}
fn default_cw_steps() -> usize {
    50
}
fn default_cw_lr() -> f64 {
    0.05
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> AttackConfig {
        AttackConfig {
            kind,
            epsilon: default_epsilon(),
            step_alpha: default_step_alpha(),
            steps: default_steps(),
            approx: default_approx(),
            cw_c: default_cw_c(),
            cw_steps: default_cw_steps(),
            cw_lr: default_cw_lr(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::InvalidArg("attack epsilon must be >= 0".into()));
        }
        match self.kind {
            AttackKind::Pgd | AttackKind::Bim => {
                if self.steps == 0 {
                    return Err(Error::InvalidArg("iterative attack needs k >= 1".into()));
                }
            }
            AttackKind::Cw => {
                if self.cw_steps == 0 {
                    return Err(Error::InvalidArg("cw needs cw_steps >= 1".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// d(task loss)/d(input) under the chosen gradient approximation.
///
/// The forward pass runs in eval mode (frozen tdBN statistics), so attacking
/// never perturbs the model state.
pub fn input_gradient(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    approx: GradApprox,
) -> Result<Tensor> {
    let trace = model.forward(x, false, None)?;
    let (_, d_logits) = cross_entropy(&trace.logits_mean, labels)?;
    let g = match approx {
        GradApprox::Bptt => bptt_backward(model, &trace, &d_logits, None)?,
        GradApprox::Bptr => bptr_backward(model, &trace, &d_logits)?,
    };
    Ok(g.input)
}

fn clip01(x: &mut Tensor) {
    for v in x.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Project `x` onto the epsilon-ball around `center`, then clip to [0,1].
fn project(x: &mut Tensor, center: &Tensor, epsilon: f64) {
    for (v, &c) in x.data_mut().iter_mut().zip(center.data().iter()) {
        *v = v.clamp(c - epsilon, c + epsilon).clamp(0.0, 1.0);
    }
}

/// Single signed gradient step of size epsilon.
pub fn fgsm(model: &mut Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    let g = input_gradient(model, x, labels, cfg.approx)?;
    let mut adv = x.clone();
    for (v, &gv) in adv.data_mut().iter_mut().zip(g.data().iter()) {
        *v += cfg.epsilon * sign(gv);
    }
    project(&mut adv, x, cfg.epsilon);
    Ok(adv)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projected gradient descent with uniform random initialization.
pub fn pgd(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    let mut adv = x.clone();
    for v in adv.data_mut() {
        *v += rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    project(&mut adv, x, cfg.epsilon);
    iterate_signed(model, x, labels, cfg, adv)
}

/// Iterative FGSM starting from the clean input (no random init).
pub fn bim(model: &mut Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    iterate_signed(model, x, labels, cfg, x.clone())
}

fn iterate_signed(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    mut adv: Tensor,
) -> Result<Tensor> {
    for _ in 0..cfg.steps {
        let g = input_gradient(model, &adv, labels, cfg.approx)?;
        for (v, &gv) in adv.data_mut().iter_mut().zip(g.data().iter()) {
            *v += cfg.step_alpha * sign(gv);
        }
        project(&mut adv, x, cfg.epsilon);
    }
    Ok(adv)
}

/// Carlini-Wagner L2 attack in tanh space, untargeted, fixed trade-off c.
///
/// Objective per sample: 0.5 * ||x_hat - x||_2^2 + c * max(Z_y - max_{i!=y} Z_i, 0),
/// with x_hat = (tanh(w) + 1) / 2. Plain gradient descent with the learning
/// rate halved whenever a step fails to decrease the objective.
pub fn cw(model: &mut Model, x: &Tensor, labels: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    let batch = x.shape()[0];
    let per: usize = x.shape()[1..].iter().product();
    // w = atanh(2x - 1), nudged off the open-interval endpoints
    let mut w = x.clone();
    for v in w.data_mut() {
        let c = (2.0 * *v - 1.0).clamp(-0.999_999, 0.999_999);
        *v = c.atanh();
    }

    let objective = |model: &mut Model, w: &Tensor| -> Result<(Vec<f64>, Tensor)> {
        let mut x_hat = w.clone();
        for v in x_hat.data_mut() {
            *v = (v.tanh() + 1.0) / 2.0;
        }
        let trace = model.forward(&x_hat, false, None)?;
        let classes = model.spec.classes;
        let mut obj = vec![0.0; batch];
        let mut d_logits = Tensor::zeros(&[batch, classes]);
        for b in 0..batch {
            let mut dist = 0.0;
            for i in 0..per {
                let d = x_hat.data()[b * per + i] - x.data()[b * per + i];
                dist += d * d;
            }
            let row = &trace.logits_mean.data()[b * classes..(b + 1) * classes];
            let y = labels[b];
            let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
            for (i, &z) in row.iter().enumerate() {
                if i != y && z > best {
                    best = z;
                    best_i = i;
                }
            }
            let margin = row[y] - best;
            obj[b] = 0.5 * dist + cfg.cw_c * margin.max(0.0);
            if margin > 0.0 {
                d_logits.data_mut()[b * classes + y] = cfg.cw_c;
                d_logits.data_mut()[b * classes + best_i] = -cfg.cw_c;
            }
        }
        // gradient of the margin part w.r.t. the input, through the model
        let g = bptt_backward(model, &trace, &d_logits, None)?;
        // add distance gradient and map through tanh: dx_hat/dw = (1-tanh^2)/2
        let mut gw = Tensor::zeros(w.shape());
        for i in 0..w.len() {
            let th = w.data()[i].tanh();
            let x_hat_i = (th + 1.0) / 2.0;
            let dxi = g.input.data()[i] + (x_hat_i - x.data()[i]);
            gw.data_mut()[i] = dxi * (1.0 - th * th) / 2.0;
        }
        Ok((obj, gw))
    };

    let mut lr = cfg.cw_lr;
    let (mut obj, mut grad) = objective(model, &w)?;
    let total = |o: &[f64]| o.iter().sum::<f64>();
    for _ in 0..cfg.cw_steps {
        let mut w_next = w.clone();
        for (v, &g) in w_next.data_mut().iter_mut().zip(grad.data().iter()) {
            *v -= lr * g;
        }
        let (obj_next, grad_next) = objective(model, &w_next)?;
        if total(&obj_next) <= total(&obj) {
            w = w_next;
            obj = obj_next;
            grad = grad_next;
        } else {
            lr /= 2.0;
            if lr < 1e-12 {
                break;
            }
        }
    }

    let mut x_hat = w;
    for v in x_hat.data_mut() {
        *v = (v.tanh() + 1.0) / 2.0;
    }
    Ok(x_hat)
}

/// Additive noise baselines: gaussian delta ~ N(0, epsilon) or uniform
/// delta ~ U(-epsilon, epsilon), clipped to [0,1].
pub fn random_noise(
    rng: &mut Rng,
    x: &Tensor,
    kind: AttackKind,
    epsilon: f64,
) -> Result<Tensor> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArg("noise epsilon must be >= 0".into()));
    }
    let mut adv = x.clone();
    match kind {
        AttackKind::GaussNoise => {
            for v in adv.data_mut() {
                *v += rng.next_gaussian() * epsilon;
            }
        }
        AttackKind::UniformNoise => {
            for v in adv.data_mut() {
                *v += rng.uniform(-epsilon, epsilon);
            }
        }
        other => {
            return Err(Error::InvalidArg(format!(
                "random_noise does not handle {:?}",
                other
            )))
        }
    }
    clip01(&mut adv);
    Ok(adv)
}

/// Run any attack kind from its config; noise kinds draw from `rng`.
pub fn run_attack(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(model, x, labels, cfg),
        AttackKind::Pgd => pgd(model, x, labels, cfg, rng),
        AttackKind::Bim => bim(model, x, labels, cfg),
        AttackKind::Cw => cw(model, x, labels, cfg),
        AttackKind::GaussNoise | AttackKind::UniformNoise => {
            random_noise(rng, x, cfg.kind, cfg.epsilon)
        }
    }
}
