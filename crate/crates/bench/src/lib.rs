//! Shared fixtures for the criterion benchmarks.

use spikegrad::encode::Coding;
use spikegrad::lif::LifParams;
use spikegrad::model::{HiddenLayerSpec, Model, ModelSpec};
use spikegrad::rng::Rng;
use spikegrad::surrogate::SurrogateSpec;
use spikegrad::Tensor;

pub fn mlp(input: usize, hidden: usize, classes: usize, t_steps: usize) -> Model {
    let spec = ModelSpec {
        input_shape: vec![input],
        hidden: vec![HiddenLayerSpec::Dense { units: hidden }],
        classes,
        t_steps,
        lif: LifParams::default(),
        surrogate: SurrogateSpec::triangle(1.0),
        tdbn_alpha: 1.0,
        coding: Coding::Direct,
    };
    Model::init(spec, &Rng::new(1)).expect("valid spec")
}

pub fn batch(model: &Model, n: usize) -> (Tensor, Vec<usize>) {
    let mut rng = Rng::new(2);
    let features: usize = model.spec.input_shape.iter().product();
    let x = rng.uniform_tensor(&[n, features], 0.0, 1.0);
    let y = (0..n).map(|i| i % model.spec.classes).collect();
    (x, y)
}
