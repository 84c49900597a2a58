//! Numerical verification of the closed-form membrane statistics and the
//! local sensitivity bound.
//!
//! Theorem 1 side: closed-form mean/variance of the membrane potential under
//! Gaussian input current, a Monte Carlo simulator to check it, chi-squared
//! confidence intervals for the variance, and a Gaussian-fit diagnostic.
//!
//! Theorem 2 side: firing patterns, per-cell affine extraction, the exact
//! infinity-to-2 operator norm, an interval-arithmetic single-cell
//! certificate, and the sensitivity bound check itself.

use crate::error::{Error, Result};
use crate::lif::ResetMode;
use crate::model::{LayerKind, Model};
use crate::overlap::normal_cdf;
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::Serialize;

// ---------------------------------------------------------------------------
// Theorem 1: membrane potential distribution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Theorem1Params {
    pub tau: f64,
    pub t_steps: usize,
    pub beta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub v_th: f64,
    pub reset: ResetMode,
}

impl Theorem1Params {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::InvalidArg("theorem 1 needs T >= 1".into()));
        }
        if self.v_th <= 0.0 {
            return Err(Error::InvalidArg("v_th must be > 0".into()));
        }
        Ok(())
    }

    fn noise_scale(&self) -> f64 {
        self.lambda * self.alpha * self.v_th
    }
}

/// D(tau, t) = sum_{i=1}^{t} tau^{t-i}.
pub fn cumulative_decay(tau: f64, t: usize) -> f64 {
    (1..=t).map(|i| tau.powi((t - i) as i32)).sum()
}

/// Closed-form mean and variance of U(t) for t = 1..T under soft reset,
/// with input current I(t) ~ N(beta, (lambda * alpha * v_th)^2) i.i.d.
///
/// mean(t) = beta * D(tau, t) - v_th * sum_{i=1}^{t-1} tau^{t-i} f(i)
/// var(t)  = (lambda * alpha * v_th)^2 * D(tau^2, t)
///
/// `rates[i]` is the firing rate at timestep i+1 (mean-field spike
/// expectation); pass zeros for the no-spike regime.
pub fn theorem1_closed_form(
    params: &Theorem1Params,
    rates: &[f64],
) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    if params.reset == ResetMode::Hard {
        return Err(Error::InvalidArg(
            "theorem 1 covers soft reset only".into(),
        ));
    }
    if rates.len() != params.t_steps {
        return Err(Error::ShapeMismatch(format!(
            "{} rates for T={}",
            rates.len(),
            params.t_steps
        )));
    }
    if rates.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(Error::InvalidArg("firing rates must lie in [0,1]".into()));
    }
    let sig2 = params.noise_scale() * params.noise_scale();
    let mut out = Vec::with_capacity(params.t_steps);
    for t in 1..=params.t_steps {
        let mut s = 0.0;
        for i in 1..t {
            s += params.tau.powi((t - i) as i32) * rates[i - 1] * params.v_th;
        }
        let mean = params.beta * cumulative_decay(params.tau, t) - s;
        let var = sig2 * cumulative_decay(params.tau * params.tau, t);
        out.push((mean, var));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloStats {
    /// Empirical mean of U(t), t = 1..T.
    pub mean: Vec<f64>,
    /// Sample variance (n-1 denominator) of U(t).
    pub var: Vec<f64>,
    /// Measured firing rate per timestep.
    pub rates: Vec<f64>,
    pub n_trials: usize,
}

/// Simulate independent soft-reset LIF neurons under Gaussian input current
/// and return empirical membrane statistics plus measured rates.
pub fn theorem1_monte_carlo(
    rng: &mut Rng,
    params: &Theorem1Params,
    n_trials: usize,
) -> Result<MonteCarloStats> {
    params.validate()?;
    if params.reset == ResetMode::Hard {
        return Err(Error::InvalidArg(
            "theorem 1 covers soft reset only".into(),
        ));
    }
    if n_trials < 2 {
        return Err(Error::InvalidArg("need at least 2 trials".into()));
    }
    let t_steps = params.t_steps;
    let scale = params.noise_scale();
    let mut sum = vec![0.0; t_steps];
    let mut sum_sq = vec![0.0; t_steps];
    let mut spikes = vec![0usize; t_steps];
    for trial in 0..n_trials {
        let mut trng = rng.fork(trial as u64);
        let mut u = 0.0;
        let mut o = 0.0;
        for t in 0..t_steps {
            let i = params.beta + scale * trng.next_gaussian();
            u = params.tau * (u - o * params.v_th) + i;
            o = if u >= params.v_th { 1.0 } else { 0.0 };
            sum[t] += u;
            sum_sq[t] += u * u;
            if o == 1.0 {
                spikes[t] += 1;
            }
        }
    }
    let n = n_trials as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = sum_sq
        .iter()
        .zip(mean.iter())
        .map(|(&sq, &m)| (sq - n * m * m) / (n - 1.0))
        .collect();
    let rates: Vec<f64> = spikes.iter().map(|&s| s as f64 / n).collect();
    Ok(MonteCarloStats {
        mean,
        var,
        rates,
        n_trials,
    })
}

/// Standard normal quantile by bisection on the CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidArg(format!("quantile needs p in (0,1), got {}", p)));
    }
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Chi-squared quantile via the Wilson-Hilferty cube approximation.
pub fn chi2_quantile(dof: f64, p: f64) -> Result<f64> {
    if dof <= 0.0 {
        return Err(Error::InvalidArg("chi2 dof must be > 0".into()));
    }
    let z = normal_quantile(p)?;
    let a = 2.0 / (9.0 * dof);
    let c = 1.0 - a + z * a.sqrt();
    Ok(dof * c * c * c)
}

/// Confidence interval for the population variance given a sample variance
/// `s2` from `n` observations: [(n-1)s2/chi2_hi, (n-1)s2/chi2_lo].
pub fn variance_confidence_interval(n: usize, s2: f64, confidence: f64) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(Error::InvalidArg("variance CI needs n >= 2".into()));
    }
    if !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::InvalidArg("confidence must be in (0,1)".into()));
    }
    let dof = (n - 1) as f64;
    let tail = (1.0 - confidence) / 2.0;
    let hi_q = chi2_quantile(dof, 1.0 - tail)?;
    let lo_q = chi2_quantile(dof, tail)?;
    Ok((dof * s2 / hi_q, dof * s2 / lo_q))
}

#[derive(Debug, Clone, Serialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    /// Kolmogorov-Smirnov statistic against the fitted normal.
    pub max_cdf_dev: f64,
    /// Set when sigma collapses to zero and no fit is meaningful.
    pub degenerate: bool,
}

/// Moment fit plus KS distance between the empirical CDF and the fitted
/// normal CDF.
pub fn gaussian_fit(samples: &[f64]) -> Result<GaussianFit> {
    if samples.len() < 100 {
        return Err(Error::InvalidArg(format!(
            "gaussian_fit needs >= 100 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let sigma = (samples.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n).sqrt();
    if sigma == 0.0 {
        return Ok(GaussianFit {
            mu,
            sigma: 0.0,
            max_cdf_dev: 1.0,
            degenerate: true,
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut dev: f64 = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        let f = normal_cdf((s - mu) / sigma);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        dev = dev.max(hi.abs().max(lo.abs()));
    }
    Ok(GaussianFit {
        mu,
        sigma,
        max_cdf_dev: dev,
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// Theorem 2: firing patterns, cells, sensitivity bound
// ---------------------------------------------------------------------------

/// The set of (layer, flat neuron index, timestep) triples whose membrane
/// potential reaches threshold; determines the polyhedral cell of the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FiringPattern {
    pub triples: Vec<(usize, usize, usize)>,
}

/// Firing pattern of a single sample (batch of one) plus the smallest
/// |U - v_th| margin over all neurons and timesteps.
pub fn firing_pattern(model: &mut Model, x: &Tensor) -> Result<(FiringPattern, f64)> {
    if x.shape()[0] != 1 {
        return Err(Error::InvalidArg("firing_pattern expects a single sample".into()));
    }
    let v_th = model.spec.lif.v_th;
    let trace = model.forward(x, false, None)?;
    let mut triples = Vec::new();
    let mut margin = f64::INFINITY;
    for (li, lt) in trace.layers.iter().enumerate() {
        for (t, u) in lt.u.iter().enumerate() {
            for (i, &uv) in u.data().iter().enumerate() {
                margin = margin.min((uv - v_th).abs());
                if uv >= v_th {
                    triples.push((li, i, t));
                }
            }
        }
    }
    Ok((FiringPattern { triples }, margin))
}

#[derive(Debug, Clone, Serialize)]
pub struct CellAffine {
    pub pattern: FiringPattern,
    /// `[classes, input_dim]`
    pub w_p: Tensor,
    pub b_p: Vec<f64>,
    /// Largest deviation from affinity observed on in-cell probe points.
    pub residual: f64,
}

fn logits_of(model: &mut Model, x: &Tensor) -> Result<Vec<f64>> {
    let trace = model.forward(x, false, None)?;
    Ok(trace.logits_mean.data().to_vec())
}

/// Extract the affine map of the cell containing `x` by central finite
/// probes along the input basis, verifying that every probe stays in-cell
/// (identical firing pattern). The probe scale is halved on a pattern
/// change; falling below 1e-9 is reported as a boundary failure.
pub fn extract_affine(
    model: &mut Model,
    x: &Tensor,
    probe_scale: f64,
    rng: &mut Rng,
) -> Result<CellAffine> {
    if x.shape()[0] != 1 {
        return Err(Error::InvalidArg("extract_affine expects a single sample".into()));
    }
    if probe_scale <= 0.0 {
        return Err(Error::InvalidArg("probe_scale must be > 0".into()));
    }
    let n = x.len();
    let classes = model.spec.classes;
    let (pattern, _) = firing_pattern(model, x)?;
    let f0 = logits_of(model, x)?;

    let mut h = probe_scale;
    let mut w_p = Tensor::zeros(&[classes, n]);
    'outer: loop {
        for j in 0..n {
            let mut plus = x.clone();
            plus.data_mut()[j] += h;
            let mut minus = x.clone();
            minus.data_mut()[j] -= h;
            let (pp, _) = firing_pattern(model, &plus)?;
            let (pm, _) = firing_pattern(model, &minus)?;
            if pp != pattern || pm != pattern {
                h /= 2.0;
                if h < 1e-9 {
                    return Err(Error::Numeric(
                        "extract_affine: probe cannot stay in-cell (boundary point)".into(),
                    ));
                }
                continue 'outer;
            }
            let fp = logits_of(model, &plus)?;
            let fm = logits_of(model, &minus)?;
            for k in 0..classes {
                w_p.data_mut()[k * n + j] = (fp[k] - fm[k]) / (2.0 * h);
            }
        }
        break;
    }

    let mut b_p = vec![0.0; classes];
    for k in 0..classes {
        let wx: f64 = (0..n).map(|j| w_p.data()[k * n + j] * x.data()[j]).sum();
        b_p[k] = f0[k] - wx;
    }

    // residual from random in-cell probes
    let mut residual: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 100 && attempts < 1000 {
        attempts += 1;
        let mut p = x.clone();
        for v in p.data_mut() {
            *v += rng.uniform(-h, h);
        }
        let (pp, m) = firing_pattern(model, &p)?;
        if pp != pattern || m < 1e-9 {
            continue;
        }
        let f = logits_of(model, &p)?;
        for k in 0..classes {
            let wx: f64 = (0..n).map(|j| w_p.data()[k * n + j] * p.data()[j]).sum();
            residual = residual.max((f[k] - (wx + b_p[k])).abs());
        }
        checked += 1;
    }
    Ok(CellAffine {
        pattern,
        w_p,
        b_p,
        residual,
    })
}

/// Exact infinity-to-2 operator norm: max over the 2^n sign vertices of
/// ||W delta||_2. Convexity puts the maximum at a vertex.
pub fn opnorm_inf_to_2(w: &Tensor) -> Result<f64> {
    if w.shape().len() != 2 {
        return Err(Error::ShapeMismatch("opnorm expects a matrix".into()));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if n > 20 {
        return Err(Error::InvalidArg(format!(
            "exact opnorm limited to n <= 20 inputs, got {}",
            n
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut best: f64 = 0.0;
    for mask in 0u64..(1u64 << n) {
        let mut sq = 0.0;
        for row in 0..m {
            let r = &w.data()[row * n..(row + 1) * n];
            let mut dot = 0.0;
            for (j, &v) in r.iter().enumerate() {
                dot += if mask >> j & 1 == 1 { v } else { -v };
            }
            sq += dot * dot;
        }
        best = best.max(sq);
    }
    Ok(best.sqrt())
}

/// Sampling lower bound and analytic upper bound sqrt(n) * ||W||_F for
/// matrices too wide for the exact scan.
pub fn opnorm_inf_to_2_bounds(w: &Tensor, rng: &mut Rng, n_samples: usize) -> Result<(f64, f64)> {
    if w.shape().len() != 2 {
        return Err(Error::ShapeMismatch("opnorm expects a matrix".into()));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let mut lower: f64 = 0.0;
    for _ in 0..n_samples {
        let delta: Vec<f64> = (0..n)
            .map(|_| if rng.next_f64() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        let mut sq = 0.0;
        for row in 0..m {
            let r = &w.data()[row * n..(row + 1) * n];
            let dot: f64 = r.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
            sq += dot * dot;
        }
        lower = lower.max(sq.sqrt());
    }
    let frob = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok((lower, (n as f64).sqrt() * frob))
}

/// Interval-arithmetic certificate that every input in the L-infinity ball
/// of radius `epsilon` around `x` produces the same firing pattern, i.e. the
/// whole ball lies in one cell. Sound but conservative; dense layers only.
pub fn certify_single_cell(model: &Model, x: &Tensor, epsilon: f64) -> Result<bool> {
    if x.shape()[0] != 1 {
        return Err(Error::InvalidArg("certify_single_cell expects a single sample".into()));
    }
    if epsilon < 0.0 {
        return Err(Error::InvalidArg("epsilon must be >= 0".into()));
    }
    let lif = model.spec.lif;
    let t_steps = model.spec.t_steps;

    // one box per timestep; identical at the input under direct coding
    let in_lo: Vec<f64> = x.data().iter().map(|v| v - epsilon).collect();
    let in_hi: Vec<f64> = x.data().iter().map(|v| v + epsilon).collect();
    let mut lo: Vec<Vec<f64>> = vec![in_lo; t_steps];
    let mut hi: Vec<Vec<f64>> = vec![in_hi; t_steps];

    for layer in &model.layers {
        if layer.kind != LayerKind::Dense {
            return Err(Error::InvalidArg(
                "certify_single_cell supports dense layers only".into(),
            ));
        }
        let fan_in = layer.in_shape[0];
        let units = layer.out_shape[0];
        if lo[0].len() != fan_in {
            return Err(Error::ShapeMismatch("certificate shape walk".into()));
        }
        // linear + eval-mode tdBN: per-unit affine with interval bounds
        let s = layer.tdbn.alpha * layer.tdbn.v_th;
        let mut cur_lo = vec![vec![0.0; units]; t_steps];
        let mut cur_hi = vec![vec![0.0; units]; t_steps];
        for t in 0..t_steps {
            for u in 0..units {
                let inv_std = 1.0 / (layer.tdbn.running_var[u] + layer.tdbn.eps).sqrt();
                let gain = layer.tdbn.lambda[u] * s * inv_std;
                let shift = layer.tdbn.beta[u] - gain * layer.tdbn.running_mean[u];
                let (mut a, mut b) = (0.0, 0.0);
                for j in 0..fan_in {
                    let w = layer.weight.data()[u * fan_in + j];
                    if w >= 0.0 {
                        a += w * lo[t][j];
                        b += w * hi[t][j];
                    } else {
                        a += w * hi[t][j];
                        b += w * lo[t][j];
                    }
                }
                let (a, b) = if gain >= 0.0 {
                    (gain * a + shift, gain * b + shift)
                } else {
                    (gain * b + shift, gain * a + shift)
                };
                cur_lo[t][u] = a;
                cur_hi[t][u] = b;
            }
        }

        // LIF over time; every spike decision must be certain, after which
        // the spike is an exact constant and the next layer sees point boxes
        let mut u_lo = vec![0.0; units];
        let mut u_hi = vec![0.0; units];
        let mut o = vec![0.0; units];
        let mut spikes = vec![vec![0.0; units]; t_steps];
        for t in 0..t_steps {
            for u in 0..units {
                let (a, b) = match lif.reset {
                    ResetMode::Soft => (
                        lif.tau * (u_lo[u] - o[u] * lif.v_th) + cur_lo[t][u],
                        lif.tau * (u_hi[u] - o[u] * lif.v_th) + cur_hi[t][u],
                    ),
                    ResetMode::Hard => {
                        let (r_lo, r_hi) = if o[u] == 1.0 {
                            (u_lo[u], u_hi[u])
                        } else {
                            (0.0, 0.0)
                        };
                        (
                            lif.tau * (u_lo[u] - r_hi) + cur_lo[t][u],
                            lif.tau * (u_hi[u] - r_lo) + cur_hi[t][u],
                        )
                    }
                };
                u_lo[u] = a;
                u_hi[u] = b;
                if a < lif.v_th && b >= lif.v_th {
                    return Ok(false); // spike undecided somewhere in the ball
                }
                o[u] = if a >= lif.v_th { 1.0 } else { 0.0 };
                spikes[t][u] = o[u];
            }
        }
        lo = spikes.clone();
        hi = spikes;
    }
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub epsilon: f64,
    pub n_dirs: usize,
    pub n_cells: usize,
    pub max_opnorm_sq: f64,
    pub bound: f64,
    pub max_sensitivity: f64,
    pub violations: usize,
    pub max_residual: f64,
    pub certified_single_cell: bool,
    pub boundary_skipped: usize,
}

/// Sample perturbation directions in the epsilon ball, enumerate the firing
/// patterns they reach, extract each cell's affine map, and check every
/// sampled squared sensitivity against epsilon^2 * max ||W_P||^2.
pub fn sensitivity_bound_check(
    model: &mut Model,
    x: &Tensor,
    epsilon: f64,
    n_dirs: usize,
    rng: &mut Rng,
) -> Result<SensitivityReport> {
    if x.shape()[0] != 1 {
        return Err(Error::InvalidArg("sensitivity check expects a single sample".into()));
    }
    let certified = certify_single_cell(model, x, epsilon).unwrap_or(false);
    let f0 = logits_of(model, x)?;

    let mut patterns: Vec<FiringPattern> = Vec::new();
    let mut reps: Vec<Tensor> = Vec::new();
    let mut max_sensitivity: f64 = 0.0;
    let mut sensitivities: Vec<f64> = Vec::with_capacity(n_dirs);
    let mut boundary_skipped = 0;
    for d in 0..n_dirs {
        let mut drng = rng.fork(d as u64);
        let mut xp = x.clone();
        for v in xp.data_mut() {
            *v += epsilon * drng.uniform(-1.0, 1.0);
        }
        let (p, margin) = firing_pattern(model, &xp)?;
        let f = logits_of(model, &xp)?;
        let s: f64 = f
            .iter()
            .zip(f0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        max_sensitivity = max_sensitivity.max(s);
        sensitivities.push(s);
        if !patterns.contains(&p) {
            if margin < 1e-9 {
                boundary_skipped += 1;
                continue;
            }
            patterns.push(p);
            reps.push(xp);
        }
    }

    let mut max_opnorm_sq: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    let probe = if epsilon > 0.0 { epsilon.min(1e-3) } else { 1e-6 };
    for rep in &reps {
        let cell = extract_affine(model, rep, probe, rng)?;
        if cell.residual > 1e-6 {
            return Err(Error::Numeric(format!(
                "cell affinity residual {} exceeds 1e-6",
                cell.residual
            )));
        }
        max_residual = max_residual.max(cell.residual);
        let norm = opnorm_inf_to_2(&cell.w_p)?;
        max_opnorm_sq = max_opnorm_sq.max(norm * norm);
    }
    let bound = epsilon * epsilon * max_opnorm_sq;
    let violations = sensitivities
        .iter()
        .filter(|&&s| s > bound + 1e-12)
        .count();
    Ok(SensitivityReport {
        epsilon,
        n_dirs,
        n_cells: patterns.len(),
        max_opnorm_sq,
        bound,
        max_sensitivity,
        violations,
        max_residual,
        certified_single_cell: certified,
        boundary_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::Coding;
    use crate::lif::LifParams;
    use crate::model::{HiddenLayerSpec, ModelSpec};
    use crate::surrogate::SurrogateSpec;

    fn t1(tau: f64, t_steps: usize) -> Theorem1Params {
        Theorem1Params {
            tau,
            t_steps,
            beta: 0.0,
            lambda: 1.0,
            alpha: 1.0,
            v_th: 1.0,
            reset: ResetMode::Soft,
        }
    }

    #[test]
    fn decay_hand_values() {
        assert_eq!(cumulative_decay(1.0, 5), 5.0);
        assert!((cumulative_decay(0.5, 3) - 1.75).abs() < 1e-15);
        assert_eq!(cumulative_decay(0.3, 1), 1.0);
    }

    #[test]
    fn closed_form_no_spike_regime() {
        let p = t1(1.0, 3);
        let out = theorem1_closed_form(&p, &[0.0; 3]).unwrap();
        for (m, _) in &out {
            assert_eq!(*m, 0.0);
        }
        assert!((out[2].1 - 3.0).abs() < 1e-15);
        let p = t1(0.5, 2);
        let out = theorem1_closed_form(&p, &[0.0; 2]).unwrap();
        assert!((out[1].1 - 1.25).abs() < 1e-15);
    }

    #[test]
    fn closed_form_rejects_hard_reset_and_bad_rates() {
        let mut p = t1(1.0, 2);
        p.reset = ResetMode::Hard;
        assert!(theorem1_closed_form(&p, &[0.0; 2]).is_err());
        let p = t1(1.0, 2);
        assert!(theorem1_closed_form(&p, &[0.5, 1.5]).is_err());
    }

    #[test]
    fn monte_carlo_no_spike_variance_in_ci() {
        let mut p = t1(1.0, 4);
        p.v_th = 1e9; // never fires
        p.lambda = 1e-9; // keep the input noise scale at 1
        let mut rng = Rng::new(1);
        let mc = theorem1_monte_carlo(&mut rng, &p, 20_000).unwrap();
        assert!(mc.rates.iter().all(|&r| r == 0.0));
        for t in 0..4 {
            let want = cumulative_decay(1.0, t + 1);
            let (lo, hi) = variance_confidence_interval(mc.n_trials, mc.var[t], 0.99).unwrap();
            assert!(lo <= want && want <= hi, "t={} var {} want {}", t, mc.var[t], want);
        }
    }

    #[test]
    fn monte_carlo_spiking_mean_field() {
        let p = Theorem1Params {
            beta: 0.5,
            ..t1(1.0, 6)
        };
        let mut rng = Rng::new(2);
        let n = 50_000;
        let mc = theorem1_monte_carlo(&mut rng, &p, n).unwrap();
        assert!(mc.rates.iter().any(|&r| r > 0.0));
        let cf = theorem1_closed_form(&p, &mc.rates).unwrap();
        for t in 0..6 {
            let se = (mc.var[t] / n as f64).sqrt();
            assert!(
                (mc.mean[t] - cf[t].0).abs() <= 5.0 * se,
                "t={} emp {} cf {} se {}",
                t,
                mc.mean[t],
                cf[t].0,
                se
            );
        }
    }

    #[test]
    fn monte_carlo_deterministic() {
        let p = t1(0.5, 3);
        let a = theorem1_monte_carlo(&mut Rng::new(7), &p, 5_000).unwrap();
        let b = theorem1_monte_carlo(&mut Rng::new(7), &p, 5_000).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.var, b.var);
        assert_eq!(a.rates, b.rates);
    }

    #[test]
    fn quantiles_match_references() {
        // standard normal quantiles
        assert!((normal_quantile(0.975).unwrap() - 1.959_964).abs() < 1e-5);
        assert!((normal_quantile(0.5).unwrap()).abs() < 1e-9);
        // chi2(10) median is about 9.342
        assert!((chi2_quantile(10.0, 0.5).unwrap() - 9.341_8).abs() < 0.05);
    }

    #[test]
    fn gaussian_fit_behaviours() {
        let mut rng = Rng::new(3);
        let samples: Vec<f64> = (0..100_000).map(|_| rng.next_gaussian()).collect();
        let fit = gaussian_fit(&samples).unwrap();
        assert!(fit.mu.abs() < 0.02);
        assert!((fit.sigma - 1.0).abs() < 0.02);
        assert!(fit.max_cdf_dev <= 0.01);
        assert!(!fit.degenerate);

        let constant = vec![2.5; 500];
        let fit = gaussian_fit(&constant).unwrap();
        assert_eq!(fit.sigma, 0.0);
        assert!(fit.degenerate);

        let bimodal: Vec<f64> = (0..1000)
            .map(|i| if i % 2 == 0 { -5.0 } else { 5.0 } + 0.01 * rng.next_gaussian())
            .collect();
        let fit = gaussian_fit(&bimodal).unwrap();
        assert!(fit.max_cdf_dev > 0.2);
    }

    fn tiny_model(seed: u64) -> Model {
        let spec = ModelSpec {
            input_shape: vec![3],
            hidden: vec![
                HiddenLayerSpec::Dense { units: 4 },
                HiddenLayerSpec::Dense { units: 3 },
            ],
            classes: 2,
            t_steps: 2,
            lif: LifParams::default(),
            surrogate: SurrogateSpec::triangle(1.0),
            tdbn_alpha: 1.0,
            coding: Coding::Direct,
        };
        let mut m = Model::init(spec, &Rng::new(seed)).unwrap();
        let mut rng = Rng::new(seed + 1);
        for _ in 0..4 {
            let x = rng.uniform_tensor(&[32, 3], 0.0, 1.0);
            m.forward(&x, true, None).unwrap();
        }
        m
    }

    #[test]
    fn zero_weights_give_empty_pattern() {
        let mut m = tiny_model(4);
        for layer in &mut m.layers {
            layer.weight = Tensor::zeros(layer.weight.shape());
            layer.tdbn.beta = vec![0.0; layer.tdbn.channels()];
            layer.tdbn.running_mean = vec![0.0; layer.tdbn.channels()];
        }
        let x = Tensor::from_vec(&[1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        let (p, _) = firing_pattern(&mut m, &x).unwrap();
        assert!(p.triples.is_empty());
    }

    #[test]
    fn pattern_stable_for_small_perturbations() {
        let mut m = tiny_model(5);
        let x = Tensor::from_vec(&[1, 3], vec![0.4, 0.6, 0.2]).unwrap();
        let (p0, margin) = firing_pattern(&mut m, &x).unwrap();
        assert!(margin > 0.0);
        let mut xp = x.clone();
        xp.data_mut()[0] += 1e-12;
        let (p1, _) = firing_pattern(&mut m, &xp).unwrap();
        assert_eq!(p0, p1);
    }

    #[test]
    fn threshold_boundary_fires() {
        // single neuron, w=1, identity normalization, x=1.0 = v_th
        let spec = ModelSpec {
            input_shape: vec![1],
            hidden: vec![HiddenLayerSpec::Dense { units: 1 }],
            classes: 2,
            t_steps: 1,
            lif: LifParams::default(),
            surrogate: SurrogateSpec::triangle(1.0),
            tdbn_alpha: 1.0,
            coding: Coding::Direct,
        };
        let mut m = Model::init(spec, &Rng::new(1)).unwrap();
        m.layers[0].weight = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        m.layers[0].tdbn.running_mean = vec![0.0];
        m.layers[0].tdbn.running_var = vec![1.0];
        m.layers[0].tdbn.eps = 0.0;
        let x = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let (p, margin) = firing_pattern(&mut m, &x).unwrap();
        assert_eq!(p.triples, vec![(0, 0, 0)]);
        assert_eq!(margin, 0.0);
    }

    #[test]
    fn extract_affine_interior_point() {
        let mut m = tiny_model(6);
        let mut rng = Rng::new(60);
        // find an interior point
        let mut x = Tensor::from_vec(&[1, 3], vec![0.3, 0.7, 0.5]).unwrap();
        loop {
            let (_, margin) = firing_pattern(&mut m, &x).unwrap();
            if margin > 1e-4 {
                break;
            }
            for v in x.data_mut() {
                *v = rng.uniform(0.1, 0.9);
            }
        }
        let cell = extract_affine(&mut m, &x, 1e-5, &mut rng).unwrap();
        assert!(cell.residual <= 1e-9);
        // spiking readout is constant within a cell
        assert_eq!(cell.w_p.max_abs(), 0.0);
    }

    #[test]
    fn opnorm_hand_cases() {
        let i2 = Tensor::identity(2);
        assert!((opnorm_inf_to_2(&i2).unwrap() - 2.0f64.sqrt()).abs() < 1e-12);
        let row = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        assert!((opnorm_inf_to_2(&row).unwrap() - 2.0).abs() < 1e-12);
        let z = Tensor::zeros(&[3, 4]);
        assert_eq!(opnorm_inf_to_2(&z).unwrap(), 0.0);
    }

    #[test]
    fn opnorm_bounds_bracket_exact() {
        let mut rng = Rng::new(8);
        for _ in 0..5 {
            let w = rng.gaussian(&[4, 6], 0.0, 1.0);
            let exact = opnorm_inf_to_2(&w).unwrap();
            let (lo, hi) = opnorm_inf_to_2_bounds(&w, &mut rng, 500).unwrap();
            assert!(lo <= exact + 1e-12);
            assert!(exact <= hi + 1e-12);
        }
    }

    #[test]
    fn opnorm_rejects_wide_matrices() {
        let w = Tensor::zeros(&[2, 21]);
        assert!(opnorm_inf_to_2(&w).is_err());
    }

    #[test]
    fn certificate_sound_against_sampling() {
        let mut m = tiny_model(9);
        let x = Tensor::from_vec(&[1, 3], vec![0.5, 0.4, 0.6]).unwrap();
        let mut rng = Rng::new(90);
        for &eps in &[1e-6, 1e-4, 1e-2, 0.05] {
            if certify_single_cell(&m, &x, eps).unwrap() {
                // certificate claims one cell: sampled patterns must agree
                let (p0, _) = firing_pattern(&mut m, &x).unwrap();
                for _ in 0..200 {
                    let mut xp = x.clone();
                    for v in xp.data_mut() {
                        *v += eps * rng.uniform(-1.0, 1.0);
                    }
                    let (p, _) = firing_pattern(&mut m, &xp).unwrap();
                    assert_eq!(p, p0, "eps={}", eps);
                }
            }
        }
    }

    #[test]
    fn certificate_holds_at_tiny_radius() {
        let mut m = tiny_model(10);
        let mut rng = Rng::new(100);
        let mut x = Tensor::from_vec(&[1, 3], vec![0.5, 0.5, 0.5]).unwrap();
        loop {
            let (_, margin) = firing_pattern(&mut m, &x).unwrap();
            if margin > 1e-3 {
                break;
            }
            for v in x.data_mut() {
                *v = rng.uniform(0.1, 0.9);
            }
        }
        assert!(certify_single_cell(&m, &x, 1e-9).unwrap());
    }

    #[test]
    fn sensitivity_zero_epsilon() {
        let mut m = tiny_model(11);
        let x = Tensor::from_vec(&[1, 3], vec![0.4, 0.5, 0.6]).unwrap();
        let mut rng = Rng::new(110);
        let r = sensitivity_bound_check(&mut m, &x, 0.0, 100, &mut rng).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.max_sensitivity, 0.0);
        assert_eq!(r.n_cells, 1);
    }
}
