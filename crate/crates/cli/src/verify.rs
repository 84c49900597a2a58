//! Numerical verification commands: overlap gradients against finite
//! differences, the closed-form membrane statistics against Monte Carlo,
//! and the adversarial sensitivity bound against direct sampling.

use serde::Serialize;
use spikegrad::encode::Coding;
use spikegrad::lif::{LifParams, ResetMode};
use spikegrad::model::{HiddenLayerSpec, Model, ModelSpec};
use spikegrad::overlap::overlap;
use spikegrad::rng::Rng;
use spikegrad::surrogate::SurrogateSpec;
use spikegrad::theory::{
    cumulative_decay, sensitivity_bound_check, theorem1_closed_form, theorem1_monte_carlo,
    variance_confidence_interval, SensitivityReport, Theorem1Params,
};
use spikegrad::Result;

fn grid() -> Vec<(f64, f64, f64)> {
    let mut pts = Vec::new();
    for mi in 0..17 {
        let mu = -2.0 + 0.25 * mi as f64;
        for &sigma in &[0.2, 0.5, 1.0, 2.0, 3.0] {
            for &gamma in &[0.5, 1.0, 2.0] {
                pts.push((mu, sigma, gamma));
            }
        }
    }
    pts
}

#[derive(Debug, Serialize)]
pub struct GradientVerdict {
    pub grid_points: usize,
    pub worst_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Analytic overlap gradients vs central finite differences over the
/// standard (mu, sigma, gamma) grid.
pub fn verify_gradients() -> Result<GradientVerdict> {
    let h = 1e-4;
    let mut worst = 0.0f64;
    let pts = grid();
    for &(mu, sigma, gamma) in &pts {
        let r = overlap(mu, sigma, gamma)?;
        let fd_mu =
            (overlap(mu + h, sigma, gamma)?.omega - overlap(mu - h, sigma, gamma)?.omega) / (2.0 * h);
        let fd_sigma =
            (overlap(mu, sigma + h, gamma)?.omega - overlap(mu, sigma - h, gamma)?.omega) / (2.0 * h);
        worst = worst
            .max((fd_mu - r.d_mu).abs() / r.d_mu.abs().max(1e-6))
            .max((fd_sigma - r.d_sigma).abs() / r.d_sigma.abs().max(1e-6));
    }
    Ok(GradientVerdict {
        grid_points: pts.len(),
        worst_rel_error: worst,
        tolerance: 1e-4,
        pass: worst <= 1e-4,
    })
}

#[derive(Debug, Serialize)]
pub struct Theorem1Verdict {
    pub n_trials: usize,
    pub t_steps: usize,
    pub taus: Vec<f64>,
    /// Worst |empirical - closed-form| mean deviation in standard errors.
    pub worst_mean_dev_se: f64,
    pub variance_ci_misses: usize,
    pub pass: bool,
}

/// Monte Carlo LIF trajectories against the closed-form membrane mean and
/// variance, in both the silent and the spiking regime.
pub fn verify_theorem1(n_trials: usize) -> Result<Theorem1Verdict> {
    let t_steps = 8;
    let taus = vec![1.0, 0.5];
    let mut misses = 0usize;
    let mut worst_dev = 0.0f64;
    for (ti, &tau) in taus.iter().enumerate() {
        let quiet = Theorem1Params {
            tau,
            t_steps,
            beta: 0.0,
            lambda: 1e-9,
            alpha: 1.0,
            v_th: 1e9,
            reset: ResetMode::Soft,
        };
        let mc = theorem1_monte_carlo(&mut Rng::new(0x7E01 + ti as u64), &quiet, n_trials)?;
        for t in 0..t_steps {
            let want = cumulative_decay(tau * tau, t + 1);
            let (lo, hi) = variance_confidence_interval(n_trials, mc.var[t], 0.99)?;
            if !(lo <= want && want <= hi) {
                misses += 1;
            }
        }
        let spiking = Theorem1Params {
            tau,
            t_steps,
            beta: 0.0,
            lambda: 1.0,
            alpha: 1.0,
            v_th: 1.0,
            reset: ResetMode::Soft,
        };
        let mc = theorem1_monte_carlo(&mut Rng::new(0x7E11 + ti as u64), &spiking, n_trials)?;
        let closed = theorem1_closed_form(&spiking, &mc.rates)?;
        for t in 0..t_steps {
            let se = (mc.var[t] / n_trials as f64).sqrt();
            worst_dev = worst_dev.max((mc.mean[t] - closed[t].0).abs() / se);
        }
    }
    Ok(Theorem1Verdict {
        n_trials,
        t_steps,
        taus,
        worst_mean_dev_se: worst_dev,
        variance_ci_misses: misses,
        pass: misses == 0 && worst_dev <= 5.0,
    })
}

#[derive(Debug, Serialize)]
pub struct Theorem2Verdict {
    pub net_seed: Option<u64>,
    pub report: Option<SensitivityReport>,
    pub pass: bool,
}

/// Sampled squared output sensitivity against the epsilon^2 * ||W_P||^2
/// bound, on a random 3-4-2 net whose epsilon-ball is certified to stay
/// inside one firing cell.
pub fn verify_theorem2(n_dirs: usize) -> Result<Theorem2Verdict> {
    let spec = ModelSpec {
        input_shape: vec![3],
        hidden: vec![HiddenLayerSpec::Dense { units: 4 }],
        classes: 2,
        t_steps: 2,
        lif: LifParams::default(),
        surrogate: SurrogateSpec::triangle(1.0),
        tdbn_alpha: 1.0,
        coding: Coding::Direct,
    };
    let eps = 0.05;
    for seed in 0..200u64 {
        let mut model = Model::init(spec.clone(), &Rng::new(0xC7 + seed))?;
        let x = Rng::new(0x1C7 + seed).uniform_tensor(&[1, 3], 0.0, 1.0);
        let report = match sensitivity_bound_check(&mut model, &x, eps, n_dirs, &mut Rng::new(42)) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if !report.certified_single_cell {
            continue;
        }
        let pass = report.violations == 0 && report.max_residual <= 1e-6;
        return Ok(Theorem2Verdict {
            net_seed: Some(seed),
            report: Some(report),
            pass,
        });
    }
    Ok(Theorem2Verdict {
        net_seed: None,
        report: None,
        pass: false,
    })
}
