//! Spiking-network training engine: LIF dynamics with tdBN, surrogate
//! gradients (BPTT and rate-based BPTR), a membrane-distribution overlap
//! regularizer, gradient-based attacks, and numerical checks for the
//! closed-form membrane statistics and local sensitivity bounds.

pub mod attacks;
pub mod backprop;
pub mod checkpoint;
pub mod data;
pub mod encode;
pub mod error;
pub mod lif;
pub mod model;
pub mod obfuscation;
pub mod oracle;
pub mod overlap;
pub mod regularizer;
pub mod rng;
pub mod surrogate;
pub mod tdbn;
pub mod tensor;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use lif::{LifParams, ResetMode};
pub use model::{HiddenLayerSpec, Model, ModelSpec, Trace};
pub use rng::Rng;
pub use surrogate::{SgFamily, SurrogateSpec};
pub use tensor::Tensor;
