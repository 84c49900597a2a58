//! Training loop (SGD, cosine-annealed learning rate, optional membrane
//! overlap regularization and adversarial training) and attack-grid
//! evaluation.

use crate::attacks::{run_attack, AttackConfig, AttackKind};
use crate::backprop::{bptt_backward, cross_entropy, p3_diagnostic};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Model};
use crate::regularizer::{mpd_sgr_loss, mpd_stats, total_loss};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate of the cosine schedule.
    pub lr: f64,
    /// Regularizer weight; 0 disables it.
    pub eta: f64,
    /// Train on PGD-perturbed inputs regenerated every step.
    pub adversarial: bool,
    pub at_epsilon: f64,
    pub at_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 64,
            lr: 0.1,
            eta: 0.0,
            adversarial: false,
            at_epsilon: 2.0 / 255.0,
            at_steps: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if self.eta < 0.0 {
            return Err(Error::Config("eta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate: lr(e) = lr0 * (1 + cos(pi e / T_max)) / 2.
pub fn cosine_lr(lr0: f64, epoch: usize, t_max: usize) -> f64 {
    lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / t_max as f64).cos()) / 2.0
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub task_loss: f64,
    pub total_loss: f64,
    /// Mean overlap over all (layer, channel, timestep) cells.
    pub mean_omega: f64,
    pub train_acc: f64,
    /// Per layer, per timestep: channel-mean of mu (last batch of the epoch).
    pub layer_mu: Vec<Vec<f64>>,
    /// Per layer, per timestep: channel-mean of sigma.
    pub layer_sigma: Vec<Vec<f64>>,
    /// Running surrogate-factor product per layer.
    pub p3: Vec<f64>,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,lr,task_loss,total_loss,mean_omega,train_acc\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.lr, m.task_loss, m.total_loss, m.mean_omega, m.train_acc
        ));
    }
    out
}

/// SGD training with a cosine learning-rate schedule.
///
/// With `eta > 0` the overlap gradient is injected into the membrane
/// adjoints each step. With `adversarial` each batch is replaced by PGD
/// examples generated against the current model.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArg("empty training set".into()));
    }
    let sg = model.spec.surrogate;
    let at_cfg = AttackConfig {
        epsilon: cfg.at_epsilon,
        steps: cfg.at_steps,
        step_alpha: cfg.at_epsilon / cfg.at_steps.max(1) as f64,
        ..AttackConfig::new(AttackKind::Pgd)
    };
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let mut erng = rng.fork_named("epoch").fork(epoch as u64);
        let order = erng.permutation(data.len());
        let mut task_sum = 0.0;
        let mut total_sum = 0.0;
        let mut omega_sum = 0.0;
        let mut omega_batches = 0usize;
        let mut correct = 0usize;
        let mut n_batches = 0usize;
        let mut last_mu: Vec<Vec<f64>> = Vec::new();
        let mut last_sigma: Vec<Vec<f64>> = Vec::new();
        let mut last_p3: Vec<f64> = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk)?;
            let x = if cfg.adversarial {
                let mut arng = erng.fork_named("at").fork(n_batches as u64);
                run_attack(model, &x, &y, &at_cfg, &mut arng)?
            } else {
                x
            };
            let trace = model.forward(&x, true, None)?;
            let (task, d_logits) = cross_entropy(&trace.logits_mean, &y)?;
            if !task.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {} batch {}",
                    epoch, n_batches
                )));
            }
            for (p, &t) in argmax_rows(&trace.logits_mean).iter().zip(y.iter()) {
                if *p == t {
                    correct += 1;
                }
            }
            let stats = mpd_stats(model, &trace)?;
            let sgr = mpd_sgr_loss(model, &trace, &stats, &sg)?;
            omega_sum += sgr.loss;
            omega_batches += 1;
            let total = total_loss(task, sgr.loss, cfg.eta)?;
            task_sum += task;
            total_sum += total;

            let g = if cfg.eta > 0.0 {
                let extra: Vec<Vec<Tensor>> = sgr
                    .u_adjoints
                    .iter()
                    .map(|lay| lay.iter().map(|t| t.scale(cfg.eta)).collect())
                    .collect();
                bptt_backward(model, &trace, &d_logits, Some(&extra))?
            } else {
                bptt_backward(model, &trace, &d_logits, None)?
            };
            if !g.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at epoch {} batch {}",
                    epoch, n_batches
                )));
            }
            model.apply_gradients(&g, lr)?;
            n_batches += 1;

            // Appendix-style observables from the freshest batch
            let t_steps = stats.t_steps;
            last_mu = stats
                .layers
                .iter()
                .map(|l| {
                    let c = l.mu.len() / t_steps;
                    (0..t_steps)
                        .map(|t| {
                            (0..c).map(|ch| l.mu[ch * t_steps + t]).sum::<f64>() / c as f64
                        })
                        .collect()
                })
                .collect();
            last_sigma = stats
                .layers
                .iter()
                .map(|l| {
                    let c = l.sigma.len() / t_steps;
                    (0..t_steps)
                        .map(|t| {
                            (0..c).map(|ch| l.sigma[ch * t_steps + t]).sum::<f64>()
                                / c as f64
                        })
                        .collect()
                })
                .collect();
            last_p3 = p3_diagnostic(&trace);
        }
        metrics.push(EpochMetrics {
            epoch,
            lr,
            task_loss: task_sum / n_batches as f64,
            total_loss: total_sum / n_batches as f64,
            mean_omega: omega_sum / omega_batches as f64,
            train_acc: correct as f64 / data.len() as f64,
            layer_mu: last_mu,
            layer_sigma: last_sigma,
            p3: last_p3,
        });
    }
    Ok(metrics)
}

/// Classification accuracy over a dataset, in batches.
pub fn accuracy(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<f64> {
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (x, y) = data.batch(chunk)?;
        for (p, &t) in model.predict(&x, None)?.iter().zip(y.iter()) {
            if *p == t {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy under a given attack.
pub fn attacked_accuracy(
    model: &mut Model,
    data: &Dataset,
    cfg: &AttackConfig,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for (bi, chunk) in idx.chunks(batch_size).enumerate() {
        let (x, y) = data.batch(chunk)?;
        let mut brng = rng.fork(bi as u64);
        let adv = run_attack(model, &x, &y, cfg, &mut brng)?;
        for (p, &t) in model.predict(&adv, None)?.iter().zip(y.iter()) {
            if *p == t {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackResult {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub steps: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub clean_accuracy: f64,
    pub attacks: Vec<AttackResult>,
}

/// Clean accuracy plus accuracy under each configured attack.
pub fn evaluate(
    model: &mut Model,
    data: &Dataset,
    attack_cfgs: &[AttackConfig],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<EvalReport> {
    let clean = accuracy(model, data, batch_size)?;
    let mut attacks = Vec::with_capacity(attack_cfgs.len());
    for (ai, cfg) in attack_cfgs.iter().enumerate() {
        let mut arng = rng.fork_named("attack").fork(ai as u64);
        let acc = attacked_accuracy(model, data, cfg, batch_size, &mut arng)?;
        attacks.push(AttackResult {
            kind: cfg.kind,
            epsilon: cfg.epsilon,
            steps: cfg.steps,
            accuracy: acc,
        });
    }
    Ok(EvalReport {
        clean_accuracy: clean,
        attacks,
    })
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("attack,epsilon,steps,accuracy\n");
    out.push_str(&format!("clean,0,0,{}\n", report.clean_accuracy));
    for a in &report.attacks {
        out.push_str(&format!(
            "{:?},{},{},{}\n",
            a.kind, a.epsilon, a.steps, a.accuracy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::encode::Coding;
    use crate::lif::LifParams;
    use crate::model::{HiddenLayerSpec, ModelSpec};
    use crate::surrogate::SurrogateSpec;

    fn blob_spec(dim: usize, classes: usize) -> ModelSpec {
        ModelSpec {
            input_shape: vec![dim],
            hidden: vec![HiddenLayerSpec::Dense { units: 16 }],
            classes,
            t_steps: 2,
            lif: LifParams::default(),
            surrogate: SurrogateSpec::triangle(1.0),
            tdbn_alpha: 1.0,
            coding: Coding::Direct,
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-15);
    }

    #[test]
    fn training_learns_separable_blobs() {
        // blobs in [0,1]-ish range after shifting
        let mut rng = Rng::new(1);
        let mut ds = synth_blobs(&mut rng, 200, 2, 4, 3.0).unwrap();
        // squash into [0,1]
        let (lo, hi) = ds
            .images
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        for v in ds.images.data_mut() {
            *v = (*v - lo) / (hi - lo);
        }
        let mut model = Model::init(blob_spec(4, 2), &Rng::new(2)).unwrap();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let metrics = train(&mut model, &ds, &cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(metrics.len(), 8);
        let acc = accuracy(&mut model, &ds, 50).unwrap();
        assert!(acc >= 0.9, "accuracy {}", acc);
        // loss went down overall
        assert!(metrics.last().unwrap().task_loss < metrics[0].task_loss);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = Rng::new(5);
        let ds = synth_blobs(&mut rng, 60, 3, 5, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            eta: 0.05,
            ..TrainConfig::default()
        };
        let mut m1 = Model::init(blob_spec(5, 3), &Rng::new(6)).unwrap();
        let mut m2 = Model::init(blob_spec(5, 3), &Rng::new(6)).unwrap();
        train(&mut m1, &ds, &cfg, &mut Rng::new(7)).unwrap();
        train(&mut m2, &ds, &cfg, &mut Rng::new(7)).unwrap();
        assert_eq!(m1.readout_w, m2.readout_w);
        assert_eq!(m1.layers[0].weight, m2.layers[0].weight);
    }

    #[test]
    fn eta_zero_matches_plain_path_until_regularized() {
        // identical seeds: eta=0 and eta>0 share init; first-step divergence
        // comes only from the regularizer gradient
        let mut rng = Rng::new(8);
        let ds = synth_blobs(&mut rng, 30, 2, 3, 1.0).unwrap();
        let base = TrainConfig {
            epochs: 1,
            batch_size: 30,
            ..TrainConfig::default()
        };
        let reg = TrainConfig { eta: 0.05, ..base.clone() };
        let mut m0 = Model::init(blob_spec(3, 2), &Rng::new(9)).unwrap();
        let mut m1 = Model::init(blob_spec(3, 2), &Rng::new(9)).unwrap();
        assert_eq!(m0.layers[0].weight, m1.layers[0].weight);
        train(&mut m0, &ds, &base, &mut Rng::new(10)).unwrap();
        train(&mut m1, &ds, &reg, &mut Rng::new(10)).unwrap();
        assert!(m0.layers[0].weight != m1.layers[0].weight);
    }

    #[test]
    fn metrics_contain_distribution_observables() {
        let mut rng = Rng::new(11);
        let ds = synth_blobs(&mut rng, 40, 2, 3, 1.0).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let mut m = Model::init(blob_spec(3, 2), &Rng::new(12)).unwrap();
        let metrics = train(&mut m, &ds, &cfg, &mut Rng::new(13)).unwrap();
        let m0 = &metrics[0];
        assert_eq!(m0.layer_mu.len(), 1);
        assert_eq!(m0.layer_mu[0].len(), 2); // per timestep
        assert_eq!(m0.layer_sigma[0].len(), 2);
        assert_eq!(m0.p3.len(), 1);
        assert!(m0.mean_omega >= 0.0 && m0.mean_omega <= 1.0);
        let csv = metrics_csv(&metrics);
        assert!(csv.starts_with("epoch,"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn adversarial_training_runs_and_stays_finite() {
        let mut rng = Rng::new(14);
        let mut ds = synth_blobs(&mut rng, 40, 2, 3, 2.0).unwrap();
        for v in ds.images.data_mut() {
            *v = (*v / 8.0 + 0.5).clamp(0.0, 1.0);
        }
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 20,
            adversarial: true,
            ..TrainConfig::default()
        };
        let mut m = Model::init(blob_spec(3, 2), &Rng::new(15)).unwrap();
        let metrics = train(&mut m, &ds, &cfg, &mut Rng::new(16)).unwrap();
        assert!(metrics.iter().all(|m| m.task_loss.is_finite()));
    }

    #[test]
    fn evaluate_empty_attack_list_is_clean_only() {
        let mut rng = Rng::new(17);
        let mut ds = synth_blobs(&mut rng, 20, 2, 3, 2.0).unwrap();
        for v in ds.images.data_mut() {
            *v = (*v / 8.0 + 0.5).clamp(0.0, 1.0);
        }
        let mut m = Model::init(blob_spec(3, 2), &Rng::new(18)).unwrap();
        let r = evaluate(&mut m, &ds, &[], 10, &mut Rng::new(19)).unwrap();
        assert!(r.attacks.is_empty());
        assert!((0.0..=1.0).contains(&r.clean_accuracy));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("clean_accuracy"));
    }
}
