//! Iterative leaky integrate-and-fire neuron.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau: f64,
    pub v_th: f64,
    pub reset: ResetMode,
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau: 1.0,
            v_th: 1.0,
            reset: ResetMode::Soft,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArg(format!("tau must be in [0,1]: {}", self.tau)));
        }
        if !(self.v_th > 0.0) {
            return Err(Error::InvalidArg(format!("v_th must be > 0: {}", self.v_th)));
        }
        Ok(())
    }
}

/// One membrane update step.
///
/// `u_prev` / `o_prev` are the potential and spike output of the previous
/// timestep (zeros at t = 0). Returns the pre-reset potential `u` consumed
/// by the firing rule and the spike output `o`. Firing uses `u >= v_th`,
/// i.e. the Heaviside convention H(0) = 1.
pub fn lif_step(
    u_prev: &Tensor,
    o_prev: &Tensor,
    params: &LifParams,
    input: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if u_prev.shape() != input.shape() || o_prev.shape() != input.shape() {
        return Err(Error::ShapeMismatch(format!(
            "lif_step state {:?}/{:?} vs input {:?}",
            u_prev.shape(),
            o_prev.shape(),
            input.shape()
        )));
    }
    let n = input.len();
    let mut u = Tensor::zeros(input.shape());
    let mut o = Tensor::zeros(input.shape());
    for i in 0..n {
        let up = u_prev.data()[i];
        let op = o_prev.data()[i];
        let r = match params.reset {
            ResetMode::Soft => params.v_th,
            ResetMode::Hard => up,
        };
        let v = params.tau * (up - op * r) + input.data()[i];
        u.data_mut()[i] = v;
        o.data_mut()[i] = if v >= params.v_th { 1.0 } else { 0.0 };
    }
    Ok((u, o))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(tau: f64, v_th: f64, reset: ResetMode) -> LifParams {
        LifParams { tau, v_th, reset }
    }

    #[test]
    fn subthreshold_accumulation() {
        let p = params(1.0, 1.0, ResetMode::Soft);
        let z = Tensor::zeros(&[1]);
        let i = Tensor::from_vec(&[1], vec![0.6]).unwrap();
        let (u, o) = lif_step(&z, &z, &p, &i).unwrap();
        assert_eq!(u.data()[0], 0.6);
        assert_eq!(o.data()[0], 0.0);
    }

    #[test]
    fn soft_reset_sequence() {
        let p = params(1.0, 1.0, ResetMode::Soft);
        let z = Tensor::zeros(&[1]);
        let i = Tensor::from_vec(&[1], vec![0.6]).unwrap();
        let (u1, o1) = lif_step(&z, &z, &p, &i).unwrap();
        let (u2, o2) = lif_step(&u1, &o1, &p, &i).unwrap();
        assert!((u2.data()[0] - 1.2).abs() < 1e-15);
        assert_eq!(o2.data()[0], 1.0);
        // pre-input potential next step: tau * (1.2 - 1.0) = 0.2
        let (u3, _) = lif_step(&u2, &o2, &p, &Tensor::zeros(&[1])).unwrap();
        assert!((u3.data()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn tau_zero_is_memoryless() {
        let p = params(0.0, 1.0, ResetMode::Soft);
        let u_prev = Tensor::from_vec(&[1], vec![123.0]).unwrap();
        let o_prev = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let i = Tensor::from_vec(&[1], vec![2.0]).unwrap();
        let (u, o) = lif_step(&u_prev, &o_prev, &p, &i).unwrap();
        assert_eq!(u.data()[0], 2.0);
        assert_eq!(o.data()[0], 1.0);
    }

    #[test]
    fn fires_exactly_at_threshold() {
        let p = params(1.0, 1.0, ResetMode::Soft);
        let z = Tensor::zeros(&[1]);
        let i = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let (_, o) = lif_step(&z, &z, &p, &i).unwrap();
        assert_eq!(o.data()[0], 1.0);
    }

    #[test]
    fn hard_reset_clears_potential() {
        let p = params(0.5, 1.0, ResetMode::Hard);
        let u_prev = Tensor::from_vec(&[1], vec![1.4]).unwrap();
        let o_prev = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let (u, _) = lif_step(&u_prev, &o_prev, &p, &Tensor::zeros(&[1])).unwrap();
        // tau * (u - o*u) = 0
        assert_eq!(u.data()[0], 0.0);
    }

    #[test]
    fn pure_integrator_sums_inputs() {
        // tau = 1, threshold effectively infinite: U(T) == sum_t I(t)
        let p = params(1.0, 1e12, ResetMode::Soft);
        let mut u = Tensor::zeros(&[3]);
        let mut o = Tensor::zeros(&[3]);
        let mut expect = [0.0; 3];
        let mut rng = crate::rng::Rng::new(11);
        for _ in 0..6 {
            let i = rng.gaussian(&[3], 0.0, 1.0);
            for (e, v) in expect.iter_mut().zip(i.data()) {
                *e += v;
            }
            let (nu, no) = lif_step(&u, &o, &p, &i).unwrap();
            u = nu;
            o = no;
        }
        for (got, want) in u.data().iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn spikes_are_binary() {
        let p = LifParams::default();
        let mut rng = crate::rng::Rng::new(2);
        let i = rng.gaussian(&[32], 0.0, 2.0);
        let z = Tensor::zeros(&[32]);
        let (_, o) = lif_step(&z, &z, &p, &i).unwrap();
        assert!(o.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = LifParams::default();
        let z = Tensor::zeros(&[2]);
        let i = Tensor::zeros(&[3]);
        assert!(lif_step(&z, &z, &p, &i).is_err());
    }
}
