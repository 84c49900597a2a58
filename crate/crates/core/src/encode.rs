//! Spike encoders: direct (input replicated over time) and Poisson
//! (per-timestep Bernoulli spikes with pixel-intensity rate).

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coding {
    Direct,
    Poisson,
}

/// Replicate `x` across `t_steps` timesteps.
pub fn encode_direct(x: &Tensor, t_steps: usize) -> Result<Vec<Tensor>> {
    if t_steps == 0 {
        return Err(Error::InvalidArg("encode_direct: T must be >= 1".into()));
    }
    Ok(vec![x.clone(); t_steps])
}

/// Bernoulli spike train with per-element rate `x`, i.i.d. over timesteps.
pub fn encode_poisson(rng: &mut Rng, x: &Tensor, t_steps: usize) -> Result<Vec<Tensor>> {
    if t_steps == 0 {
        return Err(Error::InvalidArg("encode_poisson: T must be >= 1".into()));
    }
    if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidArg(
            "encode_poisson: input values must lie in [0, 1]".into(),
        ));
    }
    let mut out = Vec::with_capacity(t_steps);
    for _ in 0..t_steps {
        let mut slice = Tensor::zeros(x.shape());
        for (o, &p) in slice.data_mut().iter_mut().zip(x.data().iter()) {
            *o = if rng.next_f64() < p { 1.0 } else { 0.0 };
        }
        out.push(slice);
    }
    Ok(out)
}
