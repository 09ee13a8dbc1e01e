//! LightSAL encoder/decoder and the baseline SAL decoder, built from
//! [`crate::autodiff`] operations.
//!
//! All layers are shared affine maps (kernel-1 convolutions) applied to
//! `[channels, points]` tensors. Parameters live in a [`ModelParams`]
//! registry keyed by `<network>.<layer>.{weight,bias}` and are bound into a
//! fresh [`Graph`] for every forward pass.

mod init;
mod networks;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Real, Tensor, Var};

pub use init::init_params;
pub use networks::{
    baseline_decoder_forward, decoder_forward, encoder_forward, sample_latent, LatentMode,
};

pub const LATENT_DIM: usize = 256;
pub const POINT_DIM: usize = 3;
pub const DECODER_INPUT_DIM: usize = LATENT_DIM + POINT_DIM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected {expected}, got shape {got:?}")]
    Dimension { what: &'static str, expected: String, got: Vec<usize> },
    #[error("missing parameter tensor `{0}`")]
    MissingParam(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Which decoder the model uses. Both share the LightSAL encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    LightSal,
    SalBaseline,
}

impl Arch {
    pub fn tag(self) -> &'static str {
        match self {
            Arch::LightSal => "lightsal",
            Arch::SalBaseline => "sal-baseline",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Arch {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lightsal" => Ok(Arch::LightSal),
            "sal-baseline" => Ok(Arch::SalBaseline),
            other => Err(NnError::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitScheme {
    ScaledUniform,
    GeometricSphere,
}

impl InitScheme {
    pub fn tag(self) -> &'static str {
        match self {
            InitScheme::ScaledUniform => "scaled-uniform",
            InitScheme::GeometricSphere => "geometric-sphere",
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for InitScheme {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled-uniform" => Ok(InitScheme::ScaledUniform),
            "geometric-sphere" => Ok(InitScheme::GeometricSphere),
            other => Err(NnError::Config(format!("unknown init scheme `{other}`"))),
        }
    }
}

/// One shared affine layer `c_in -> c_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
}

impl LayerSpec {
    fn new(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        Self { name: name.into(), c_in, c_out }
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in + self.c_out
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }
}

/// Encoder layers in registration order. Each equivariant block `eK` owns an
/// `element` and a `pooled` branch.
pub fn encoder_layers() -> Vec<LayerSpec> {
    let widths = [(3, 128), (128, 128), (128, 128), (128, 256), (256, 256)];
    let mut layers = Vec::new();
    for (i, &(c_in, c_out)) in widths.iter().enumerate() {
        layers.push(LayerSpec::new(format!("encoder.e{}.element", i + 1), c_in, c_out));
        layers.push(LayerSpec::new(format!("encoder.e{}.pooled", i + 1), c_in, c_out));
    }
    layers.push(LayerSpec::new("encoder.c6", 256, 512));
    layers.push(LayerSpec::new("encoder.head_mu", 512, LATENT_DIM));
    layers.push(LayerSpec::new("encoder.head_eta", 512, LATENT_DIM));
    layers
}

/// Index of the decoder layer whose input is `[previous output ; decoder input]`.
pub const SKIP_LAYER: usize = 3;

pub fn decoder_layers(arch: Arch) -> Vec<LayerSpec> {
    let d = DECODER_INPUT_DIM;
    match arch {
        // Third layer is narrowed so that [d3 output ; input] is 512 wide.
        Arch::LightSal => vec![
            LayerSpec::new("decoder.d1", d, 128),
            LayerSpec::new("decoder.d2", 128, 256),
            LayerSpec::new("decoder.d3", 256, 512 - d),
            LayerSpec::new("decoder.d4", 512, 128),
            LayerSpec::new("decoder.d5", 128, 256),
            LayerSpec::new("decoder.d6", 256, 512),
            LayerSpec::new("decoder.out", 512, 1),
        ],
        Arch::SalBaseline => vec![
            LayerSpec::new("decoder.l1", d, 512),
            LayerSpec::new("decoder.l2", 512, 512),
            LayerSpec::new("decoder.l3", 512, 512),
            LayerSpec::new("decoder.l4", 512 + d, 512),
            LayerSpec::new("decoder.l5", 512, 512),
            LayerSpec::new("decoder.l6", 512, 512),
            LayerSpec::new("decoder.l7", 512, 512),
            LayerSpec::new("decoder.out", 512, 1),
        ],
    }
}

/// Named, ordered parameter tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub arch: Arch,
    pub scheme: InitScheme,
    pub seed: u64,
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn empty(arch: Arch, scheme: InitScheme, seed: u64) -> Self {
        Self { arch, scheme, seed, tensors: IndexMap::new() }
    }

    /// Registers a tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(NnError::Config(format!("duplicate parameter `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Count restricted to tensors whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.tensors.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.len()).sum()
    }

    pub fn has_encoder(&self) -> bool {
        self.tensors.keys().any(|k| k.starts_with("encoder."))
    }

    /// Drops every encoder tensor.
    pub fn into_decoder_only(mut self) -> Self {
        self.tensors.retain(|k, _| !k.starts_with("encoder."));
        self
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            arch: self.arch,
            scheme: self.scheme,
            seed: self.seed,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Places every tensor into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Graph handles for a [`ModelParams`] registry.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Var)>) -> Self {
        Self { vars: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub(crate) fn layer(&self, spec: &LayerSpec) -> Result<(Var, Var)> {
        Ok((self.get(&spec.weight_name())?, self.get(&spec.bias_name())?))
    }
}

/// Total element count of a registry.
pub fn param_count<T: Real>(params: &ModelParams<T>) -> usize {
    params.param_count()
}

pub fn encoder_param_count() -> usize {
    encoder_layers().iter().map(LayerSpec::param_count).sum()
}

pub fn decoder_param_count(arch: Arch) -> usize {
    decoder_layers(arch).iter().map(LayerSpec::param_count).sum()
}

/// Encoder size of the original point-network SAL model. That encoder is not
/// built here; the figure only completes the baseline-style total.
pub const SAL_ENCODER_PARAMS: usize = 2_365_952;

/// Encoder plus decoder size of the full model style named by `arch`.
pub fn model_style_total(arch: Arch) -> usize {
    let encoder = match arch {
        Arch::LightSal => encoder_param_count(),
        Arch::SalBaseline => SAL_ENCODER_PARAMS,
    };
    encoder + decoder_param_count(arch)
}
