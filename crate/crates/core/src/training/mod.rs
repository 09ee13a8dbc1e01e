//! Losses, Adam, the step-decay schedule, the training loop and checkpoints.

mod adam;
mod checkpoint;
mod loss;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Real, Tensor, Var};
use crate::nn::{self, Arch, BoundParams, InitScheme, LatentMode, ModelParams, NnError, LATENT_DIM};
use crate::rng::{stream, STREAM_DATA, STREAM_LATENT};
use crate::sdfield::{self, Manifest, SampleSet, SdfieldError, Split};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use loss::{kl_loss, sal_loss, total_loss};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("shape {id:?}: {source}")]
    Archive {
        id: String,
        #[source]
        source: SdfieldError,
    },
    #[error(transparent)]
    Sdfield(#[from] SdfieldError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss at epoch {epoch}, step {step}, shape {shape:?}")]
    NonFinite { epoch: u64, step: u64, shape: String },
    #[error("{path}: corrupt checkpoint ({what}): {msg}")]
    Checkpoint { path: String, what: String, msg: String },
}

pub type Result<T, E = TrainingError> = std::result::Result<T, E>;

/// Whether the encoder participates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Full,
    /// Fits one decoder with `z = 0`; no encoder, no KL term.
    DecoderOnly,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Full => "full",
            TrainMode::DecoderOnly => "decoder-only",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(TrainMode::Full),
            "decoder-only" => Ok(TrainMode::DecoderOnly),
            other => Err(format!("unknown training mode {other:?} (expected full or decoder-only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Arch,
    pub init: InitScheme,
    pub lr0: f64,
    /// Shapes per optimizer step.
    pub batch_size: usize,
    /// Queries drawn with replacement per shape per step.
    pub points_per_shape: usize,
    pub epochs: u64,
    pub schedule_period: u64,
    pub schedule_factor: f64,
    pub kl_weight: f64,
    pub seed: u64,
    pub mode: TrainMode,
    /// Epoch interval between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::LightSal,
            init: InitScheme::ScaledUniform,
            lr0: 0.0005,
            batch_size: 16,
            points_per_shape: 2048,
            epochs: 500,
            schedule_period: 200,
            schedule_factor: 0.5,
            kl_weight: 1e-3,
            seed: 0,
            mode: TrainMode::Full,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainingError::Config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch_size == 0 || self.points_per_shape == 0 || self.epochs == 0 || self.schedule_period == 0 {
            return bad("batch_size, points_per_shape, epochs and schedule_period must be positive");
        }
        if !(self.schedule_factor > 0.0 && self.schedule_factor <= 1.0) {
            return bad("schedule_factor must lie in (0, 1]");
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return bad("kl_weight must be finite and >= 0");
        }
        Ok(())
    }
}

/// Step-decayed learning rate `lr0 * factor^floor(epoch / period)`.
pub fn lr_at(epoch: u64, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.schedule_factor.powi((epoch / cfg.schedule_period) as i32)
}

/// Loss components of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub sal: Var,
    pub kl: Option<Var>,
}

/// `[3, n]` tensor from interleaved points.
pub fn points_tensor<T: Real>(points: &[[f32; 3]]) -> Tensor<T> {
    let n = points.len();
    let mut data = vec![T::zero(); 3 * n];
    for (i, p) in points.iter().enumerate() {
        for k in 0..3 {
            data[k * n + i] = T::lit(p[k] as f64);
        }
    }
    Tensor::new(vec![3, n], data)
}

/// Builds the per-shape objective. `input` is the encoder cloud and is
/// required unless the registry is decoder-only, in which case `z = 0`.
#[allow(clippy::too_many_arguments)]
pub fn shape_objective<T: Real, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    params: &BoundParams,
    arch: Arch,
    input: Option<Var>,
    queries: Var,
    h: Var,
    kl_weight: T,
    latent: (LatentMode, &mut R),
) -> Result<LossVars> {
    let (z, mu_eta) = match input {
        Some(x) => {
            let (mu, eta) = nn::encoder_forward(g, params, x)?;
            (nn::sample_latent(g, mu, eta, latent.1, latent.0)?, Some((mu, eta)))
        }
        None => (g.constant(Tensor::zeros(vec![LATENT_DIM])), None),
    };
    let f = arch.decode(g, params, z, queries)?;
    let sal = sal_loss(g, f, h)?;
    match mu_eta {
        Some((mu, eta)) => {
            let kl = kl_loss(g, mu, eta)?;
            let w = g.scale(kl, kl_weight);
            let total = g.add(sal, w)?;
            Ok(LossVars { total, sal, kl: Some(kl) })
        }
        None => Ok(LossVars { total: sal, sal, kl: None }),
    }
}

/// Batch-averaged loss components of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub epoch: u64,
    pub step: u64,
    pub loss: f64,
    pub sal: f64,
    pub kl: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,step,loss,sal,kl,lr,seconds";

/// Mutable training state: parameters, optimizer moments, counters and the
/// two random streams.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// Completed epochs.
    pub epoch: u64,
    pub step: u64,
    data_rng: ChaCha8Rng,
    latent_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut params = nn::init_params(config.arch, config.init, config.seed)?;
        if config.mode == TrainMode::DecoderOnly {
            params = params.into_decoder_only();
        }
        let adam = AdamState::new(&params);
        Ok(Self {
            data_rng: stream(config.seed, STREAM_DATA),
            latent_rng: stream(config.seed, STREAM_LATENT),
            config,
            params,
            adam,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Self {
        Self {
            data_rng: ck.data_rng.restore(),
            latent_rng: ck.latent_rng.restore(),
            config: ck.config,
            params: ck.params,
            adam: ck.adam,
            epoch: ck.epoch,
            step: ck.step,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            params: self.params.clone(),
            adam: self.adam.clone(),
            data_rng: crate::rng::RngState::capture(&self.data_rng),
            latent_rng: crate::rng::RngState::capture(&self.latent_rng),
        }
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.epoch, &self.config)
    }

    fn uses_encoder(&self) -> bool {
        self.params.has_encoder()
    }

    /// One optimizer step over `batch`; gradients are averaged over shapes.
    pub fn step_batch(&mut self, batch: &[&SampleSet]) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(TrainingError::Config("empty batch".into()));
        }
        let lr = self.lr();
        let inv = 1.0 / batch.len() as f32;
        let mut grads: Vec<Tensor<f32>> = self.params.iter().map(|(_, p)| Tensor::zeros(p.shape().to_vec())).collect();
        let (mut loss, mut sal, mut kl) = (0.0, 0.0, 0.0);
        for set in batch {
            if set.is_empty() || (self.uses_encoder() && set.input_cloud.is_empty()) {
                return Err(TrainingError::Config(format!("shape {:?} has no samples", set.shape_id)));
            }
            let mut picked = Vec::with_capacity(self.config.points_per_shape);
            let mut labels = Vec::with_capacity(self.config.points_per_shape);
            for _ in 0..self.config.points_per_shape {
                let i = self.data_rng.random_range(0..set.len());
                picked.push(set.queries[i]);
                labels.push(set.h[i]);
            }

            let mut g = Graph::<f32>::new();
            let bound = self.params.bind(&mut g, true);
            let input = self.uses_encoder().then(|| g.constant(points_tensor(&set.input_cloud)));
            let q = g.constant(points_tensor(&picked));
            let h = g.constant(Tensor::new(vec![labels.len()], labels));
            let lv = shape_objective(
                &mut g,
                &bound,
                self.config.arch,
                input,
                q,
                h,
                self.config.kl_weight as f32,
                (LatentMode::Stochastic, &mut self.latent_rng),
            )?;
            let total = g.value(lv.total).item() as f64;
            if !total.is_finite() {
                return Err(TrainingError::NonFinite {
                    epoch: self.epoch,
                    step: self.step,
                    shape: set.shape_id.clone(),
                });
            }
            loss += total;
            sal += g.value(lv.sal).item() as f64;
            kl += lv.kl.map_or(0.0, |k| g.value(k).item() as f64);

            g.backward_scaled(lv.total, inv)?;
            for (acc, (name, var)) in grads.iter_mut().zip(bound.iter()) {
                let Some(gr) = g.grad(var) else { continue };
                debug_assert_eq!(self.params.get(name).map(|p| p.shape()), Some(gr.shape()));
                for (a, b) in acc.data_mut().iter_mut().zip(gr.data()) {
                    *a += *b;
                }
            }
        }
        adam_step(&mut self.params, &grads, &mut self.adam, lr)?;
        let n = batch.len() as f64;
        let stats = StepStats { epoch: self.epoch, step: self.step, loss: loss / n, sal: sal / n, kl: kl / n, lr };
        self.step += 1;
        Ok(stats)
    }

    /// Shuffles shapes, runs one step per batch and advances the epoch.
    pub fn run_epoch(&mut self, sets: &[SampleSet], mut on_step: impl FnMut(&StepStats)) -> Result<()> {
        let mut order: Vec<usize> = (0..sets.len()).collect();
        for i in (1..order.len()).rev() {
            let j = self.data_rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&SampleSet> = chunk.iter().map(|&i| &sets[i]).collect();
            let stats = self.step_batch(&batch)?;
            on_step(&stats);
        }
        self.epoch += 1;
        Ok(())
    }

    /// Mean SAL loss over every query of `set`, with `z` from the encoder
    /// mean (or zero for decoder-only registries).
    pub fn evaluate_sal(&self, set: &SampleSet) -> Result<f64> {
        evaluate_sal(&self.params, set)
    }
}

/// Full-set SAL loss without gradients, chunked to bound memory.
pub fn evaluate_sal(params: &ModelParams<f32>, set: &SampleSet) -> Result<f64> {
    const CHUNK: usize = 8192;
    let z = latent_code(params, &set.input_cloud)?;
    let mut sum = 0.0;
    for (q, h) in set.queries.chunks(CHUNK).zip(set.h.chunks(CHUNK)) {
        let mut g = Graph::<f32>::new();
        let bound = params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let qv = g.constant(points_tensor(q));
        let f = params.arch.decode(&mut g, &bound, zv, qv)?;
        for (&fi, &hi) in g.value(f).data().iter().zip(h) {
            let d = fi.abs() as f64 - hi as f64;
            sum += d * d;
        }
    }
    Ok(sum / set.len().max(1) as f64)
}

/// Latent code used at inference: the encoder mean, or zero when the
/// registry has no encoder.
pub fn latent_code(params: &ModelParams<f32>, cloud: &[[f32; 3]]) -> Result<Tensor<f32>> {
    if !params.has_encoder() {
        return Ok(Tensor::zeros(vec![LATENT_DIM]));
    }
    if cloud.is_empty() {
        return Err(TrainingError::Config("encoder input cloud is empty".into()));
    }
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(points_tensor(cloud));
    let (mu, _) = nn::encoder_forward(&mut g, &bound, x)?;
    Ok(g.value(mu).clone())
}

/// Paths written by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub last: Option<StepStats>,
    pub trainer: Trainer,
}

pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<SampleSet>> {
    manifest
        .split(split)
        .map(|e| {
            sdfield::read_archive(&e.path).map_err(|source| TrainingError::Archive { id: e.id.clone(), source })
        })
        .collect()
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> TrainingError + '_ {
    move |source| TrainingError::Io { path: path.display().to_string(), source }
}

/// Trains on the `train` split, appending one metrics row per step and
/// writing `epoch-NNNNN.salc` every `checkpoint_every` epochs plus
/// `final.salc`. A `resume` checkpoint continues its own run; only the
/// epoch target is taken from `config`.
pub fn train(
    manifest: &Manifest,
    config: &TrainConfig,
    out_dir: &Path,
    resume: Option<Checkpoint>,
    mut progress: impl FnMut(&StepStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let sets = load_split(manifest, Split::Train)?;
    if sets.is_empty() {
        return Err(TrainingError::Config("manifest has no train shapes".into()));
    }
    let mut trainer = match resume {
        Some(ck) => {
            let mut t = Trainer::from_checkpoint(ck);
            t.config.epochs = config.epochs;
            t
        }
        None => Trainer::new(config.clone())?,
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let metrics_path = out_dir.join("metrics.csv");
    let append = trainer.epoch > 0 && metrics_path.exists();
    let mut metrics = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&metrics_path)
        .map_err(io(&metrics_path))?;
    if !append {
        writeln!(metrics, "{METRICS_HEADER}").map_err(io(&metrics_path))?;
    }

    let start = Instant::now();
    let mut last = None;
    let mut write_err = None;
    while trainer.epoch < trainer.config.epochs {
        trainer.run_epoch(&sets, |s| {
            let row = format!(
                "{},{},{},{},{},{},{:.3}",
                s.epoch,
                s.step,
                s.loss,
                s.sal,
                s.kl,
                s.lr,
                start.elapsed().as_secs_f64()
            );
            if let Err(e) = writeln!(metrics, "{row}") {
                write_err.get_or_insert(e);
            }
            last = Some(*s);
            progress(s);
        })?;
        if let Some(e) = write_err.take() {
            return Err(io(&metrics_path)(e));
        }
        let every = trainer.config.checkpoint_every;
        if every > 0 && trainer.epoch % every == 0 && trainer.epoch < trainer.config.epochs {
            save_checkpoint(&trainer.checkpoint(), &out_dir.join(format!("epoch-{:05}.salc", trainer.epoch)))?;
        }
    }
    metrics.flush().map_err(io(&metrics_path))?;
    let final_checkpoint = out_dir.join("final.salc");
    save_checkpoint(&trainer.checkpoint(), &final_checkpoint)?;
    Ok(TrainOutcome { final_checkpoint, metrics: metrics_path, last, trainer })
}

#[cfg(test)]
mod tests;
