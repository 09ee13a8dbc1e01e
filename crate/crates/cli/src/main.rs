//! `salforge`: preprocessing, training, reconstruction and evaluation.
//!
//! Exit codes: 0 success, 1 operational failure, 2 usage or configuration
//! error.

mod preprocess;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use salforge::config::{Config, ConfigError};
use salforge::diagnostics::{self, CheckScope};
use salforge::geometry::{self, MeshFormat, PointCloud, TriangleSoup};
use salforge::nn::{self, Arch};
use salforge::reconstruct::{self, ReconstructConfig, Scan};
use salforge::sdfield::{load_manifest, Split};
use salforge::training::{self, load_checkpoint, Checkpoint, TrainMode, TrainingError};

#[derive(Parser)]
#[command(name = "salforge", version, about = "Sign-agnostic implicit surface learning")]
struct Cli {
    /// Run seed; overrides the configuration or checkpoint seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalise meshes and write sample archives plus a manifest.
    Preprocess {
        #[arg(long)]
        mesh_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads; falls back to SALFORGE_THREADS, then 1.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Train on the manifest's train split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint up to the configured epoch count.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Mesh the zero level set for one scan (mesh or point cloud).
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Chamfer report over one manifest split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: CheckScope,
    },
    /// Parameter counts of an architecture.
    Info {
        #[arg(long, default_value = "lightsal", value_parser = parse_arch)]
        arch: Arch,
    },
    /// Write synthetic meshes (icosphere, torus, box) to a directory.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Also place one copy of each shape under `test/`.
        #[arg(long)]
        with_test: bool,
    },
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: nn::NnError| e.to_string())
}

/// Error tagged with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome = Result<(), Failure>;

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn operational(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }
    fn operational(self) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, Failure> {
    match path {
        None => Ok(Config::default()),
        Some(p) => Config::load(p).map_err(|e| {
            let code = if matches!(e, ConfigError::Io { .. }) { 1 } else { 2 };
            Failure { code, error: e.into() }
        }),
    }
}

fn training_failure(e: TrainingError) -> Failure {
    let code = if matches!(e, TrainingError::Config(_)) { 2 } else { 1 };
    Failure { code, error: e.into() }
}

fn open_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display())).operational()
}

fn grouped(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn workers(flag: Option<usize>) -> Result<usize, Failure> {
    if let Some(w) = flag {
        return if w == 0 { Err(anyhow!("--workers must be at least 1")).usage() } else { Ok(w) };
    }
    match std::env::var("SALFORGE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(anyhow!("SALFORGE_THREADS must be a positive integer, got {v:?}")).usage(),
        },
        Err(_) => Ok(1),
    }
}

fn cmd_preprocess(seed: Option<u64>, mesh_dir: &Path, out_dir: &Path, config: Option<&Path>, w: Option<usize>) -> Outcome {
    let cfg = load_config(config)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let workers = workers(w)?;
    println!("seed: {seed}");
    let jobs = preprocess::discover(mesh_dir).operational()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display())).operational()?;
    let outcomes = preprocess::run(&jobs, out_dir, &cfg.data, seed, workers);
    let (mut written, mut skipped, mut failed) = (0, 0, 0);
    for (job, o) in jobs.iter().zip(&outcomes) {
        match o {
            preprocess::Outcome::Written => {
                written += 1;
                println!("wrote {} ({})", job.id, job.split);
            }
            preprocess::Outcome::Skipped => skipped += 1,
            preprocess::Outcome::Failed(msg) => {
                failed += 1;
                eprintln!("error: {}: {msg}", job.mesh.display());
            }
        }
    }
    let manifest = preprocess::manifest(&jobs, &outcomes);
    let path = out_dir.join(preprocess::MANIFEST_NAME);
    let text = manifest.to_text();
    if fs::read_to_string(&path).ok().as_deref() != Some(text.as_str()) {
        fs::write(&path, text).with_context(|| format!("writing {}", path.display())).operational()?;
    }
    println!("written: {written}");
    println!("skipped: {skipped}");
    println!("failed: {failed}");
    println!("manifest: {}", path.display());
    if failed > 0 {
        return Err(Failure { code: 1, error: anyhow!("{failed} of {} meshes failed", jobs.len()) });
    }
    Ok(())
}

fn cmd_train(seed: Option<u64>, manifest: &Path, config: Option<&Path>, out: &Path, resume: Option<&Path>) -> Outcome {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let t = &cfg.train;
    let resume = resume.map(open_checkpoint).transpose()?;
    let manifest = load_manifest(manifest).operational()?;
    let encoder = match t.mode {
        TrainMode::Full => nn::encoder_param_count(),
        TrainMode::DecoderOnly => 0,
    };
    println!("seed: {}", resume.as_ref().map_or(t.seed, |c| c.config.seed));
    println!("arch: {} ({}, {})", t.arch, t.init, t.mode);
    println!("parameters: encoder={} decoder={}", grouped(encoder), grouped(nn::decoder_param_count(t.arch)));
    let shapes = manifest.split(Split::Train).count();
    let mut last_epoch = None;
    let outcome = training::train(&manifest, t, out, resume, |s| {
        if last_epoch != Some(s.epoch) {
            last_epoch = Some(s.epoch);
            println!("epoch {} step {} loss {:.6e} sal {:.6e} kl {:.6e} lr {}", s.epoch, s.step, s.loss, s.sal, s.kl, s.lr);
        }
    })
    .map_err(training_failure)?;
    println!("shapes: {shapes}");
    if let Some(s) = outcome.last {
        println!("final loss: {:.6e}", s.loss);
    }
    println!("metrics: {}", outcome.metrics.display());
    println!("checkpoint: {}", outcome.final_checkpoint.display());
    Ok(())
}

fn reconstruct_config(config: Option<&Path>, resolution: Option<usize>) -> Result<ReconstructConfig, Failure> {
    let mut r = load_config(config)?.reconstruct;
    if let Some(res) = resolution {
        r.resolution = res;
    }
    r.validate().usage()?;
    Ok(r)
}

fn load_scan(path: &Path) -> anyhow::Result<Scan> {
    let soup = geometry::load_mesh(path)?;
    Ok(if soup.triangles.is_empty() { Scan::Cloud(PointCloud::new(soup.vertices)) } else { Scan::Mesh(soup) })
}

fn cmd_reconstruct(
    seed: Option<u64>,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    resolution: Option<usize>,
    config: Option<&Path>,
) -> Outcome {
    let rcfg = reconstruct_config(config, resolution)?;
    let format = MeshFormat::from_path(out).usage()?;
    let ck = open_checkpoint(checkpoint)?;
    let seed = seed.unwrap_or(ck.config.seed);
    println!("seed: {seed}");
    println!("resolution: {}", rcfg.resolution);
    let scan = load_scan(input).with_context(|| format!("cannot read scan {}", input.display())).operational()?;
    let (mesh, t) = reconstruct::reconstruct(&ck.params, &scan, &rcfg, seed).operational()?;
    write_output(out, &mesh, format, &reconstruct::transform_comments(&t, seed))?;
    println!("vertices: {} triangles: {}", mesh.vertices.len(), mesh.triangles.len());
    if mesh.is_empty() {
        eprintln!("warning: the decoder has no zero crossing inside the grid; wrote an empty mesh");
    }
    println!("mesh: {}", out.display());
    Ok(())
}

fn write_output(out: &Path, mesh: &TriangleSoup, format: MeshFormat, comments: &[String]) -> Outcome {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display())).operational()?;
    }
    geometry::write_mesh(out, mesh, format, comments).operational()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    seed: Option<u64>,
    checkpoint: &Path,
    manifest: &Path,
    split: Split,
    out: &Path,
    resolution: Option<usize>,
    config: Option<&Path>,
) -> Outcome {
    let rcfg = reconstruct_config(config, resolution)?;
    let ck = open_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest).operational()?;
    let seed = seed.unwrap_or(ck.config.seed);
    println!("seed: {seed}");
    println!("split: {split} resolution: {}", rcfg.resolution);
    if manifest.split(split).next().is_none() {
        return Err(anyhow!("manifest has no {split} shapes")).usage();
    }
    let report = reconstruct::evaluate(&ck.params, &manifest, split, &rcfg, seed, |s| {
        println!("{} chamfer_x1e3 {:.4}", s.id, s.chamfer_x1e3);
    })
    .operational()?;
    for (p, v) in report.percentiles {
        println!("p{p}: {v:.4}");
    }
    fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display())).operational()?;
    println!("report: {}", out.display());
    Ok(())
}

fn cmd_gradcheck(seed: Option<u64>, scope: CheckScope) -> Outcome {
    // Every check draws from its own fixed seed; --seed is reported only.
    println!("seed: {}", seed.unwrap_or(0));
    println!("module: {scope}");
    let out = diagnostics::run_gradchecks(scope).operational()?;
    for c in &out {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!("{verdict:4} {:40} {:.3e}", c.name, c.error);
    }
    let worst = diagnostics::worst(&out).ok_or_else(|| anyhow!("no checks ran")).operational()?;
    println!(
        "worst: {} error {:.3e} at block {} component {} (threshold {:e})",
        worst.name,
        worst.error,
        worst.worst.0,
        worst.worst.1,
        diagnostics::THRESHOLD
    );
    if out.iter().all(|c| c.passed()) {
        Ok(())
    } else {
        Err(anyhow!("gradient check above threshold")).operational()
    }
}

fn cmd_info(seed: Option<u64>, arch: Arch) {
    println!("seed: {}", seed.unwrap_or(0));
    println!("arch: {arch}");
    match arch {
        Arch::LightSal => println!("encoder: {}", grouped(nn::encoder_param_count())),
        Arch::SalBaseline => println!("encoder: {} (point-network encoder, not built)", grouped(nn::SAL_ENCODER_PARAMS)),
    }
    println!("decoder: {}", grouped(nn::decoder_param_count(arch)));
    println!("total: {}", grouped(nn::model_style_total(arch)));
    let light = nn::model_style_total(Arch::LightSal) as f64;
    let base = nn::model_style_total(Arch::SalBaseline) as f64;
    let ratio = light / base;
    let cmp = if ratio < 0.25 { "<" } else { ">=" };
    println!("lightsal/sal-baseline total = {ratio:.4} {cmp} 0.25");
}

fn cmd_synth(out_dir: &Path, with_test: bool) -> Outcome {
    use geometry::shapes;
    let meshes = [
        ("icosphere", shapes::icosphere(3)),
        ("torus", shapes::torus(0.7, 0.25, 48, 24)),
        ("box", shapes::cuboid(0.6, 0.4, 0.3)),
    ];
    let mut dirs = vec![out_dir.to_path_buf()];
    if with_test {
        dirs.push(out_dir.join("test"));
    }
    for (i, dir) in dirs.iter().enumerate() {
        for (name, soup) in &meshes {
            let file = if i == 0 { format!("{name}.obj") } else { format!("{name}-test.obj") };
            let path = dir.join(file);
            write_output(&path, soup, MeshFormat::Obj, &[format!("synthetic {name}")])?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Error chain joined by ": ", dropping causes already quoted by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Preprocess { mesh_dir, out_dir, config, workers } => {
            cmd_preprocess(seed, mesh_dir, out_dir, config.as_deref(), *workers)
        }
        Command::Train { manifest, config, out, resume } => {
            cmd_train(seed, manifest, config.as_deref(), out, resume.as_deref())
        }
        Command::Reconstruct { checkpoint, input, out, resolution, config } => {
            cmd_reconstruct(seed, checkpoint, input, out, *resolution, config.as_deref())
        }
        Command::Eval { checkpoint, manifest, split, out, resolution, config } => {
            cmd_eval(seed, checkpoint, manifest, *split, out, *resolution, config.as_deref())
        }
        Command::Gradcheck { module } => cmd_gradcheck(seed, *module),
        Command::Info { arch } => {
            cmd_info(seed, *arch);
            Ok(())
        }
        Command::Synth { out_dir, with_test } => cmd_synth(out_dir, *with_test),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", render(&f.error));
            ExitCode::from(f.code)
        }
    }
}
