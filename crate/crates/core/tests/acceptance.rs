//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs without the libtest harness so the lines are never
//! captured.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salforge::autodiff::{Graph, Tensor};
use salforge::diagnostics::{run_gradchecks, worst, CheckScope, THRESHOLD};
use salforge::geometry::{
    chamfer, normalize, point_triangle_distance, shapes, Point, PointCloud, TriangleBvh, TriangleSoup,
};
use salforge::nn::{self, Arch, InitScheme, LatentMode, ModelParams};
use salforge::reconstruct::{evaluate_grid, marching_cubes, mesh_chamfer, reconstruct_from_cloud, ReconstructConfig};
use salforge::rng::stream;
use salforge::sdfield::{
    decode_archive, encode_archive, generate_samples, write_archive, Manifest, ManifestEntry, SampleSet, SamplingConfig,
    Split,
};
use salforge::training::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, lr_at, points_tensor, sal_loss, shape_objective, train,
    TrainConfig, TrainMode, Trainer,
};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs() <= limit_s, || format!("took {:.0} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn parameter_counts() -> Verdict {
    let light = nn::init_params(Arch::LightSal, InitScheme::ScaledUniform, 0).map_err(|e| e.to_string())?;
    let base = nn::init_params(Arch::SalBaseline, InitScheme::ScaledUniform, 0).map_err(|e| e.to_string())?;
    let enc = light.param_count_with_prefix("encoder.");
    let dec = light.param_count_with_prefix("decoder.");
    let base_dec = base.param_count_with_prefix("decoder.");
    ensure(enc == 658_944, || format!("encoder {enc}"))?;
    ensure(dec == 362_110, || format!("lightsal decoder {dec}"))?;
    ensure(base_dec == 1_842_177, || format!("baseline decoder {base_dec}"))?;
    let dl = (dec as f64 - 363_643.0).abs() / 363_643.0;
    let db = (base_dec as f64 - 1_843_195.0).abs() / 1_843_195.0;
    ensure(dl < 0.005 && db < 0.001, || format!("relative gaps {dl} / {db}"))?;
    let ratio = (enc + dec) as f64 / (nn::SAL_ENCODER_PARAMS + base_dec) as f64;
    ensure(ratio < 0.25, || format!("total ratio {ratio}"))?;
    Ok(format!("encoder {enc}, decoder {dec}, baseline decoder {base_dec}, total ratio {ratio:.4}"))
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let out = run_gradchecks(CheckScope::All).map_err(|e| e.to_string())?;
    let w = worst(&out).ok_or("no checks ran")?;
    ensure(out.iter().all(|c| c.error < THRESHOLD), || format!("{} at {:.3e}", w.name, w.error))?;
    within(start.elapsed(), 60)?;
    Ok(format!("{} checks, worst {} {:.2e}", out.len(), w.name, w.error))
}

fn sal_value(f: &[f32], h: &[f32]) -> u32 {
    let mut g = Graph::<f32>::new();
    let fv = g.constant(Tensor::new(vec![f.len()], f.to_vec()));
    let hv = g.constant(Tensor::new(vec![h.len()], h.to_vec()));
    let l = sal_loss(&mut g, fv, hv).expect("matching shapes");
    g.value(l).item().to_bits()
}

fn total_bits(params: &ModelParams<f32>, set: &SampleSet) -> u32 {
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g, false);
    let x = g.constant(points_tensor(&set.input_cloud));
    let q = g.constant(points_tensor(&set.queries));
    let h = g.constant(Tensor::new(vec![set.h.len()], set.h.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lv = shape_objective(&mut g, &bound, params.arch, Some(x), q, h, 1e-3, (LatentMode::Stochastic, &mut rng))
        .expect("valid objective");
    g.value(lv.total).item().to_bits()
}

fn sign_agnostic() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for pair in 0..1000 {
        let n = rng.random_range(1..64);
        let f: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
        let neg: Vec<f32> = f.iter().map(|v| -v).collect();
        ensure(sal_value(&f, &h) == sal_value(&neg, &h), || format!("pair {pair} differs"))?;
    }
    let cfg = SamplingConfig { n_input: 512, n_near: 256, n_uniform: 128, ..Default::default() };
    let set = generate_samples("s", &shapes::torus(0.7, 0.25, 24, 12), &cfg, &mut stream(3, "data")).map_err(|e| e.to_string())?;
    let mut params = nn::init_params(Arch::LightSal, InitScheme::ScaledUniform, 3).map_err(|e| e.to_string())?;
    let before = total_bits(&params, &set);
    for name in ["decoder.out.weight", "decoder.out.bias"] {
        for v in params.get_mut(name).ok_or("no output layer")?.data_mut() {
            *v = -*v;
        }
    }
    ensure(total_bits(&params, &set) == before, || "negated output layer changed total_loss".into())?;
    Ok("1000 pairs bit-equal; negated output layer keeps total_loss bits".into())
}

fn brute_distance(soup: &TriangleSoup, p: &Point) -> f64 {
    (0..soup.triangles.len()).map(|t| point_triangle_distance(p, &soup.corners(t)).0).fold(f64::INFINITY, f64::min)
}

fn brute_chamfer(a: &[Point], b: &[Point]) -> f64 {
    let one_way = |x: &[Point], y: &[Point]| {
        x.iter().map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / x.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}

fn geometry_oracles() -> Verdict {
    let start = Instant::now();
    let meshes = [
        ("icosphere", shapes::icosphere(3)),
        ("torus", shapes::torus(0.7, 0.25, 32, 16)),
        ("two triangles", shapes::two_triangles()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_gap = 0.0f64;
    for (name, soup) in &meshes {
        let bvh = TriangleBvh::build(soup);
        for _ in 0..1000 {
            let p = Point::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let (d, _, _) = bvh.unsigned_distance(soup, &p).map_err(|e| e.to_string())?;
            let gap = (d - brute_distance(soup, &p)).abs();
            ensure(gap <= 1e-6, || format!("{name}: gap {gap} at {p:?}"))?;
            max_gap = max_gap.max(gap);
        }
    }
    for trial in 0..20 {
        let na = rng.random_range(1..=500);
        let nb = rng.random_range(1..=500);
        let mut cloud = |n| -> Vec<Point> {
            (0..n).map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
        };
        let (a, b) = (cloud(na), cloud(nb));
        let fast = chamfer(&PointCloud::new(a.clone()), &PointCloud::new(b.clone())).map_err(|e| e.to_string())?;
        let slow = brute_chamfer(&a, &b);
        ensure((fast - slow).abs() <= 1e-12 * slow.max(1.0), || format!("trial {trial}: {fast} vs {slow}"))?;
    }
    within(start.elapsed(), 60)?;
    Ok(format!("3000 BVH queries, max gap {max_gap:.1e}; 20 Chamfer clouds match brute force"))
}

fn marching_cubes_fidelity() -> Verdict {
    let grid = |r, f: fn(&Point) -> f64| evaluate_grid(r, 1.1, r, |pts| Ok(pts.iter().map(f).collect())).map_err(|e| e.to_string());
    let g = grid(64, |p| p.coords.norm() - 0.5)?;
    let sphere = marching_cubes(&g, 0.0);
    let tol = 3f64.sqrt() * g.cell_size();
    let worst_r = sphere.vertices.iter().map(|v| (v.coords.norm() - 0.5).abs()).fold(0.0, f64::max);
    ensure(!sphere.is_empty() && worst_r <= tol, || format!("sphere radius error {worst_r} > {tol}"))?;
    let plane = marching_cubes(&grid(32, |p| p.z - 0.1)?, 0.0);
    let worst_z = plane.vertices.iter().map(|v| (v.z - 0.1).abs()).fold(0.0, f64::max);
    ensure(!plane.is_empty() && worst_z < 1e-6, || format!("plane error {worst_z}"))?;
    ensure(marching_cubes(&grid(16, |_| 1.0)?, 0.0).is_empty(), || "positive field produced triangles".into())?;
    Ok(format!("sphere error {worst_r:.2e} <= {tol:.2e}, plane error {worst_z:.1e}, positive field empty"))
}

fn overfit_set() -> Result<(TriangleSoup, SampleSet), String> {
    let (soup, _) = normalize(&shapes::icosphere(3)).map_err(|e| e.to_string())?;
    let set = generate_samples("icosphere", &soup, &SamplingConfig::default(), &mut stream(1, "data")).map_err(|e| e.to_string())?;
    Ok((soup, set))
}

/// Decoder-only Adam run on one shape; returns (initial, final) full-set loss.
fn overfit(arch: Arch, steps: u64, period: u64, set: &SampleSet) -> Result<(f64, f64, Trainer), String> {
    let cfg = TrainConfig {
        arch,
        init: InitScheme::GeometricSphere,
        mode: TrainMode::DecoderOnly,
        batch_size: 1,
        points_per_shape: 2048,
        epochs: steps,
        schedule_period: period,
        seed: 1,
        ..Default::default()
    };
    let mut t = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let initial = t.evaluate_sal(set).map_err(|e| e.to_string())?;
    for _ in 0..steps {
        t.run_epoch(std::slice::from_ref(set), |_| {}).map_err(|e| e.to_string())?;
    }
    let last = t.evaluate_sal(set).map_err(|e| e.to_string())?;
    Ok((initial, last, t))
}

fn end_to_end() -> Verdict {
    let start = Instant::now();
    let (soup, set) = overfit_set()?;
    // Default schedule scaled with the run: 800 of 2000 steps per halving.
    let (initial, last, t) = overfit(Arch::LightSal, 2000, 800, &set)?;
    ensure(last < 0.05 * initial, || format!("sal loss {initial:.3e} -> {last:.3e}"))?;
    let cfg = ReconstructConfig::default();
    let mesh = reconstruct_from_cloud(&t.params, &set.input_cloud, &cfg).map_err(|e| e.to_string())?;
    ensure(!mesh.is_empty(), || "empty reconstruction".into())?;
    let cd = 1e3 * mesh_chamfer(&mesh, &soup, 30_000, 1, "eval:icosphere").map_err(|e| e.to_string())?;
    ensure(cd < 20.0, || format!("chamfer x1e3 {cd:.3}"))?;
    within(start.elapsed(), 15 * 60)?;
    Ok(format!(
        "sal {initial:.3e} -> {last:.3e} ({:.1e} of initial), chamfer x1e3 {cd:.2} at R={}, {:.0} s",
        last / initial,
        cfg.resolution,
        start.elapsed().as_secs_f64()
    ))
}

fn protocol() -> Verdict {
    let cfg = TrainConfig::default();
    let lrs = [lr_at(0, &cfg), lr_at(200, &cfg), lr_at(450, &cfg)];
    ensure(lrs == [0.0005, 0.00025, 0.000125], || format!("schedule {lrs:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let small = SamplingConfig { n_input: 64, n_near: 64, n_uniform: 32, ..Default::default() };
    let soups = [shapes::icosphere(1), shapes::torus(0.7, 0.25, 12, 6), shapes::cuboid(0.5, 0.4, 0.3)];
    let mut entries = Vec::new();
    for (i, soup) in soups.iter().enumerate() {
        let id = format!("shape{i}");
        let set = generate_samples(&id, soup, &small, &mut stream(i as u64, "data")).map_err(|e| e.to_string())?;
        let bytes = encode_archive(&set);
        let back = decode_archive(&bytes, &id).map_err(|e| e.to_string())?;
        ensure(encode_archive(&back) == bytes && back == set, || format!("archive {id} round trip"))?;
        let path = dir.path().join(format!("{id}.salf"));
        write_archive(&set, &path).map_err(|e| e.to_string())?;
        entries.push(ManifestEntry { split: Split::Train, id, path });
    }
    let manifest = Manifest { entries };
    let run = TrainConfig { batch_size: 2, points_per_shape: 32, epochs: 4, checkpoint_every: 1, seed: 9, ..Default::default() };
    let full = train(&manifest, &run, &dir.path().join("full"), None, |_| {}).map_err(|e| e.to_string())?;
    let half = TrainConfig { epochs: 2, ..run.clone() };
    let first = train(&manifest, &half, &dir.path().join("resumed"), None, |_| {}).map_err(|e| e.to_string())?;
    let ck = load_checkpoint(&first.final_checkpoint).map_err(|e| e.to_string())?;
    let resumed = train(&manifest, &run, &dir.path().join("resumed"), Some(ck), |_| {}).map_err(|e| e.to_string())?;
    let a = std::fs::read(&full.final_checkpoint).map_err(|e| e.to_string())?;
    let b = std::fs::read(&resumed.final_checkpoint).map_err(|e| e.to_string())?;
    ensure(a == b, || "resumed run diverged from the uninterrupted run".into())?;
    let decoded = decode_checkpoint(&a, "final").map_err(|e| e.to_string())?;
    ensure(encode_checkpoint(&decoded) == a, || "checkpoint round trip changed bytes".into())?;
    Ok("lr 0.0005/0.00025/0.000125; resume bit-exact; archive and checkpoint round trips byte-identical".into())
}

fn architecture_comparison() -> Verdict {
    let start = Instant::now();
    let (_, set) = overfit_set()?;
    let (_, light, _) = overfit(Arch::LightSal, 600, 240, &set)?;
    let (_, base, _) = overfit(Arch::SalBaseline, 600, 240, &set)?;
    let share = nn::decoder_param_count(Arch::LightSal) as f64 / nn::decoder_param_count(Arch::SalBaseline) as f64;
    ensure(light <= 2.0 * base, || format!("lightsal {light:.3e} vs baseline {base:.3e}"))?;
    ensure(share < 0.25, || format!("parameter share {share}"))?;
    within(start.elapsed(), 30 * 60)?;
    Ok(format!(
        "600 steps each: lightsal {light:.3e}, baseline {base:.3e} (x{:.2}), {:.1}% of the parameters, {:.0} s",
        light / base,
        100.0 * share,
        start.elapsed().as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("parameter counts", parameter_counts),
        ("gradient correctness", gradients),
        ("sign-agnostic loss", sign_agnostic),
        ("geometry oracles", geometry_oracles),
        ("marching cubes fidelity", marching_cubes_fidelity),
        ("desk-scale end-to-end learning", end_to_end),
        ("protocol fidelity", protocol),
        ("architecture comparison", architecture_comparison),
    ];
    // `cargo test -- <filter>` passes a filter; the suite always runs whole,
    // but listing mode must stay silent.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match verdict {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
