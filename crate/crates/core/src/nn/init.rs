use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{decoder_layers, encoder_layers, Arch, InitScheme, LayerSpec, ModelParams, Result, SKIP_LAYER};
use crate::autodiff::Tensor;
use crate::rng::{stream, STREAM_INIT};

fn scaled_uniform(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> (Tensor<f32>, Tensor<f32>) {
    let bound = (6.0 / (spec.c_in + spec.c_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let w = (0..spec.c_in * spec.c_out).map(|_| dist.sample(rng) as f32).collect();
    (Tensor::new(vec![spec.c_out, spec.c_in], w), Tensor::zeros(vec![spec.c_out]))
}

fn normal(spec: &LayerSpec, mean: f64, std: f64, rng: &mut impl Rng) -> Tensor<f32> {
    let dist = Normal::new(mean, std).expect("positive std");
    let w = (0..spec.c_in * spec.c_out).map(|_| dist.sample(rng) as f32).collect();
    Tensor::new(vec![spec.c_out, spec.c_in], w)
}

/// Geometric initialisation: each ReLU layer roughly preserves the input
/// norm and the output layer averages the last features, so the decoder
/// starts out close to `f(x) = |x| - 1` at `z = 0`.
fn geometric_decoder(layers: &[LayerSpec], rng: &mut ChaCha8Rng) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    let last = layers.len() - 1;
    layers
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            if i == last {
                let mean = (std::f64::consts::PI / spec.c_in as f64).sqrt();
                (normal(spec, mean, 1e-6, rng), Tensor::full(vec![spec.c_out], -1.0))
            } else {
                let mut std = (2.0 / spec.c_out as f64).sqrt();
                // The skip concatenation doubles the squared input norm.
                if i == SKIP_LAYER {
                    std /= 2f64.sqrt();
                }
                (normal(spec, 0.0, std, rng), Tensor::zeros(vec![spec.c_out]))
            }
        })
        .collect()
}

/// Encoder and decoder parameters for `arch`, deterministic in `seed`.
/// The encoder always uses the scaled-uniform rule; `scheme` selects the
/// decoder's rule.
pub fn init_params(arch: Arch, scheme: InitScheme, seed: u64) -> Result<ModelParams> {
    let mut rng = stream(seed, STREAM_INIT);
    let mut params = ModelParams::empty(arch, scheme, seed);
    for spec in encoder_layers() {
        let (w, b) = scaled_uniform(&spec, &mut rng);
        params.insert(spec.weight_name(), w)?;
        params.insert(spec.bias_name(), b)?;
    }
    let dec = decoder_layers(arch);
    let tensors = match scheme {
        InitScheme::ScaledUniform => dec.iter().map(|s| scaled_uniform(s, &mut rng)).collect(),
        InitScheme::GeometricSphere => geometric_decoder(&dec, &mut rng),
    };
    for (spec, (w, b)) in dec.iter().zip(tensors) {
        params.insert(spec.weight_name(), w)?;
        params.insert(spec.bias_name(), b)?;
    }
    Ok(params)
}
