//! INI-style run configuration with sections `[data]`, `[model]`, `[train]`
//! and `[reconstruct]`. Every key has a default; unknown keys are errors.

use std::fmt::{Display, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::reconstruct::ReconstructConfig;
use crate::sdfield::SamplingConfig;
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{name}:{line}: {msg}")]
    Syntax { name: String, line: usize, msg: String },
    #[error("{name}:{line}: unknown key `{key}` in [{section}]")]
    UnknownKey { name: String, line: usize, section: String, key: String },
    #[error("{name}:{line}: bad value for `{key}`: {msg}")]
    Value { name: String, line: usize, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub data: SamplingConfig,
    pub train: TrainConfig,
    pub reconstruct: ReconstructConfig,
}

struct Entry<'a> {
    section: &'a str,
    key: &'a str,
    value: &'a str,
    line: usize,
}

fn entries<'a>(text: &'a str, name: &str) -> Result<Vec<Entry<'a>>> {
    let mut out: Vec<Entry<'a>> = Vec::new();
    let mut section: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let syntax = |msg: String| ConfigError::Syntax { name: name.to_string(), line: i + 1, msg };
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let s = rest.strip_suffix(']').ok_or_else(|| syntax("unterminated section header".into()))?.trim();
            if !matches!(s, "data" | "model" | "train" | "reconstruct") {
                return Err(syntax(format!("unknown section [{s}]")));
            }
            section = Some(s);
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected `key = value`".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let section = section.ok_or_else(|| syntax(format!("key `{key}` outside any section")))?;
        if out.iter().any(|e| e.section == section && e.key == key) {
            return Err(syntax(format!("duplicate key `{key}` in [{section}]")));
        }
        out.push(Entry { section, key, value, line: i + 1 });
    }
    Ok(out)
}

fn set<T: FromStr>(slot: &mut T, e: &Entry, name: &str) -> Result<()>
where
    T::Err: Display,
{
    *slot = e.value.parse().map_err(|err: T::Err| ConfigError::Value {
        name: name.to_string(),
        line: e.line,
        key: e.key.to_string(),
        msg: err.to_string(),
    })?;
    Ok(())
}

impl Config {
    /// Parses and validates; `name` labels error messages.
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let cfg = Self::parse_unvalidated(text, name)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_unvalidated(text: &str, name: &str) -> Result<Self> {
        let mut c = Config::default();
        for e in entries(text, name)? {
            let (d, t, r) = (&mut c.data, &mut c.train, &mut c.reconstruct);
            match (e.section, e.key) {
                ("data", "n_input") => set(&mut d.n_input, &e, name)?,
                ("data", "n_near") => set(&mut d.n_near, &e, name)?,
                ("data", "n_uniform") => set(&mut d.n_uniform, &e, name)?,
                ("data", "sigma_small") => set(&mut d.sigma_small, &e, name)?,
                ("data", "sigma_large") => set(&mut d.sigma_large, &e, name)?,
                ("model", "arch") => set(&mut t.arch, &e, name)?,
                ("model", "init") => set(&mut t.init, &e, name)?,
                ("train", "lr0") => set(&mut t.lr0, &e, name)?,
                ("train", "batch_size") => set(&mut t.batch_size, &e, name)?,
                ("train", "points_per_shape") => set(&mut t.points_per_shape, &e, name)?,
                ("train", "epochs") => set(&mut t.epochs, &e, name)?,
                ("train", "schedule_period") => set(&mut t.schedule_period, &e, name)?,
                ("train", "schedule_factor") => set(&mut t.schedule_factor, &e, name)?,
                ("train", "kl_weight") => set(&mut t.kl_weight, &e, name)?,
                ("train", "seed") => set(&mut t.seed, &e, name)?,
                ("train", "mode") => set(&mut t.mode, &e, name)?,
                ("train", "checkpoint_every") => set(&mut t.checkpoint_every, &e, name)?,
                ("reconstruct", "resolution") => set(&mut r.resolution, &e, name)?,
                ("reconstruct", "bound") => set(&mut r.bound, &e, name)?,
                ("reconstruct", "eval_points") => set(&mut r.eval_points, &e, name)?,
                ("reconstruct", "input_points") => set(&mut r.input_points, &e, name)?,
                (section, key) => {
                    return Err(ConfigError::UnknownKey {
                        name: name.to_string(),
                        line: e.line,
                        section: section.to_string(),
                        key: key.to_string(),
                    })
                }
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: name.clone(), source })?;
        Self::parse(&text, &name)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.reconstruct.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Every key in fixed order; parsing the result yields `self`.
    pub fn canonical(&self) -> String {
        let d = &self.data;
        let r = &self.reconstruct;
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "n_input = {}", d.n_input);
        let _ = writeln!(s, "n_near = {}", d.n_near);
        let _ = writeln!(s, "n_uniform = {}", d.n_uniform);
        let _ = writeln!(s, "sigma_small = {}", d.sigma_small);
        let _ = writeln!(s, "sigma_large = {}", d.sigma_large);
        let _ = writeln!(s);
        s.push_str(&train_config_text(&self.train));
        let _ = writeln!(s);
        let _ = writeln!(s, "[reconstruct]");
        let _ = writeln!(s, "resolution = {}", r.resolution);
        let _ = writeln!(s, "bound = {}", r.bound);
        let _ = writeln!(s, "eval_points = {}", r.eval_points);
        let _ = writeln!(s, "input_points = {}", r.input_points);
        s
    }
}

/// The `[model]` and `[train]` sections alone.
pub fn train_config_text(t: &TrainConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[model]");
    let _ = writeln!(s, "arch = {}", t.arch);
    let _ = writeln!(s, "init = {}", t.init);
    let _ = writeln!(s);
    let _ = writeln!(s, "[train]");
    let _ = writeln!(s, "lr0 = {}", t.lr0);
    let _ = writeln!(s, "batch_size = {}", t.batch_size);
    let _ = writeln!(s, "points_per_shape = {}", t.points_per_shape);
    let _ = writeln!(s, "epochs = {}", t.epochs);
    let _ = writeln!(s, "schedule_period = {}", t.schedule_period);
    let _ = writeln!(s, "schedule_factor = {}", t.schedule_factor);
    let _ = writeln!(s, "kl_weight = {}", t.kl_weight);
    let _ = writeln!(s, "seed = {}", t.seed);
    let _ = writeln!(s, "mode = {}", t.mode);
    let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
    s
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let cfg = Config::parse_unvalidated(text, "<embedded>")?;
    cfg.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg.train)
}
