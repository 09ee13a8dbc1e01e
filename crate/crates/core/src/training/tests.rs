use super::*;
use crate::autodiff::gradcheck_blocks;
use crate::geometry::shapes;
use crate::sdfield::{generate_samples, write_archive, ManifestEntry, SamplingConfig};
use rand::SeedableRng;

fn tiny_set(id: &str, seed: u64) -> SampleSet {
    let cfg = SamplingConfig { n_input: 48, n_near: 64, n_uniform: 32, ..Default::default() };
    let soup = if seed.is_multiple_of(2) { shapes::icosphere(1) } else { shapes::torus(0.7, 0.25, 12, 6) };
    generate_samples(id, &soup, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        points_per_shape: 32,
        epochs: 2,
        schedule_period: 1,
        checkpoint_every: 1,
        seed: 17,
        ..Default::default()
    }
}

fn write_manifest(dir: &Path, sets: &[SampleSet]) -> Manifest {
    let entries = sets
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.salf", s.shape_id));
            write_archive(s, &path).unwrap();
            ManifestEntry { split: Split::Train, id: s.shape_id.clone(), path }
        })
        .collect();
    Manifest { entries }
}

#[test]
fn schedule_values() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 0.0005);
    assert_eq!(lr_at(199, &cfg), 0.0005);
    assert_eq!(lr_at(200, &cfg), 0.00025);
    assert_eq!(lr_at(450, &cfg), 0.000125);
    let mut prev = f64::INFINITY;
    for e in 0..2000 {
        let lr = lr_at(e, &cfg);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { lr0: 0.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { schedule_factor: 0.0, ..Default::default() },
        TrainConfig { kl_weight: f64::NAN, ..Default::default() },
    ] {
        assert!(matches!(Trainer::new(bad), Err(TrainingError::Config(_))));
    }
}

#[test]
fn total_loss_gradcheck_through_encoder_and_decoder() {
    let params = nn::init_params(Arch::LightSal, InitScheme::GeometricSphere, 5).unwrap().cast::<f64>();
    let set = tiny_set("g", 2);
    let cloud: Tensor<f64> = points_tensor(&set.input_cloud[..8]);
    // Queries well off the surface keep |f| away from the kink of abs.
    let far: Vec<usize> = (0..set.len()).filter(|&i| set.h[i] > 0.15).take(8).collect();
    let picked: Vec<[f32; 3]> = far.iter().map(|&i| set.queries[i]).collect();
    let queries: Tensor<f64> = points_tensor(&picked);
    let h = Tensor::new(vec![8], far.iter().map(|&i| set.h[i] as f64).collect());
    let names: Vec<String> = params.names().map(String::from).collect();
    let inputs: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let report = gradcheck_blocks(
        |g, vars| {
            let bound = BoundParams::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            let x = g.constant(cloud.clone());
            let q = g.constant(queries.clone());
            let hv = g.constant(h.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let lv = shape_objective(g, &bound, Arch::LightSal, Some(x), q, hv, 0.5, (LatentMode::Stochastic, &mut rng))
                .map_err(|e| AutodiffError::Contract { op: "objective", msg: e.to_string() })?;
            Ok(lv.total)
        },
        &inputs,
        // Encoder biases move ~10^3 relu and max-pool arguments at once; a
        // small step keeps every one of them on its side of the kink.
        1e-6,
        Some((3, 7)),
    )
    .unwrap();
    assert!(report.max_error() < 1e-3, "{report:?}");
}

#[test]
fn negating_output_layer_keeps_loss_bits() {
    let set = tiny_set("s", 4);
    let mut params = nn::init_params(Arch::LightSal, InitScheme::ScaledUniform, 3).unwrap();
    let eval = |p: &ModelParams<f32>| {
        let mut g = Graph::<f32>::new();
        let bound = p.bind(&mut g, false);
        let x = g.constant(points_tensor(&set.input_cloud));
        let q = g.constant(points_tensor(&set.queries));
        let h = g.constant(Tensor::new(vec![set.h.len()], set.h.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lv = shape_objective(&mut g, &bound, Arch::LightSal, Some(x), q, h, 1e-3, (LatentMode::Stochastic, &mut rng))
            .unwrap();
        g.value(lv.total).item().to_bits()
    };
    let before = eval(&params);
    for name in ["decoder.out.weight", "decoder.out.bias"] {
        for v in params.get_mut(name).unwrap().data_mut() {
            *v = -*v;
        }
    }
    assert_eq!(eval(&params), before);
}

#[test]
fn decoder_only_registry_has_no_encoder() {
    let cfg = TrainConfig { mode: TrainMode::DecoderOnly, ..tiny_config() };
    let t = Trainer::new(cfg).unwrap();
    assert!(!t.params.has_encoder());
    assert_eq!(t.params.param_count(), nn::decoder_param_count(Arch::LightSal));
}

#[test]
fn decoder_only_loss_falls() {
    let set = tiny_set("d", 2);
    let cfg = TrainConfig {
        mode: TrainMode::DecoderOnly,
        init: InitScheme::GeometricSphere,
        batch_size: 1,
        points_per_shape: 96,
        epochs: 60,
        schedule_period: 1000,
        lr0: 1e-3,
        ..tiny_config()
    };
    let mut t = Trainer::new(cfg).unwrap();
    let before = t.evaluate_sal(&set).unwrap();
    for _ in 0..60 {
        t.run_epoch(std::slice::from_ref(&set), |s| assert_eq!(s.kl, 0.0)).unwrap();
    }
    let after = t.evaluate_sal(&set).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
    assert_eq!(t.step, 60);
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let set = tiny_set("c", 1);
    let mut t = Trainer::new(tiny_config()).unwrap();
    t.run_epoch(std::slice::from_ref(&set), |_| {}).unwrap();
    let bytes = encode_checkpoint(&t.checkpoint());
    let back = decode_checkpoint(&bytes, "mem").unwrap();
    assert_eq!(back, t.checkpoint());
    assert_eq!(encode_checkpoint(&back), bytes);
}

#[test]
fn checkpoint_integrity_errors() {
    let t = Trainer::new(TrainConfig { mode: TrainMode::DecoderOnly, ..tiny_config() }).unwrap();
    let bytes = encode_checkpoint(&t.checkpoint());

    let mut bad = bytes.clone();
    bad[4] = 7;
    let e = decode_checkpoint(&bad, "v").unwrap_err();
    assert!(matches!(&e, TrainingError::Checkpoint { what, .. } if what == "version"), "{e}");

    // Corrupt a byte inside the data of the second tensor.
    let name = "decoder.d1.bias";
    let pos = bytes.windows(name.len()).position(|w| w == name.as_bytes()).unwrap();
    let mut bad = bytes.clone();
    bad[pos + name.len() + 4 + 8 + 5] ^= 0x10;
    let e = decode_checkpoint(&bad, "t").unwrap_err();
    assert!(e.to_string().contains(name), "{e}");

    let mut bad = bytes.clone();
    let n = bad.len();
    bad[n - 10] ^= 1;
    assert!(decode_checkpoint(&bad, "r").is_err());
    assert!(decode_checkpoint(&bytes[..bytes.len() / 2], "h").is_err());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let sets = [tiny_set("a", 2), tiny_set("b", 3), tiny_set("c", 4)];
    let manifest = write_manifest(dir.path(), &sets);
    let cfg = TrainConfig { epochs: 4, ..tiny_config() };

    let full = train(&manifest, &cfg, &dir.path().join("full"), None, |_| {}).unwrap();

    let half_cfg = TrainConfig { epochs: 2, ..cfg.clone() };
    let half = train(&manifest, &half_cfg, &dir.path().join("resumed"), None, |_| {}).unwrap();
    let ck = load_checkpoint(&half.final_checkpoint).unwrap();
    let resumed = train(&manifest, &cfg, &dir.path().join("resumed"), Some(ck), |_| {}).unwrap();

    assert_eq!(resumed.trainer.params, full.trainer.params);
    assert_eq!(fs::read(&resumed.final_checkpoint).unwrap(), fs::read(&full.final_checkpoint).unwrap());
    let rows = fs::read_to_string(&resumed.metrics).unwrap().lines().count();
    assert_eq!(rows, 1 + 4 * 2);
}

#[test]
fn smoke_run_bookkeeping_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let sets = [tiny_set("a", 2), tiny_set("b", 3), tiny_set("c", 4)];
    let manifest = write_manifest(dir.path(), &sets);
    let cfg = tiny_config();
    let a = train(&manifest, &cfg, &dir.path().join("a"), None, |_| {}).unwrap();
    let b = train(&manifest, &cfg, &dir.path().join("b"), None, |_| {}).unwrap();
    assert_eq!(fs::read(&a.final_checkpoint).unwrap(), fs::read(&b.final_checkpoint).unwrap());

    let csv = fs::read_to_string(&a.metrics).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let rows: Vec<&str> = lines.collect();
    // Two epochs of ceil(3 / 2) batches.
    assert_eq!(rows.len(), 4);
    for row in rows {
        let lr: f64 = row.split(',').nth(5).unwrap().parse().unwrap();
        assert!(lr > 0.0);
    }
    assert!(dir.path().join("a/epoch-00001.salc").exists());
}

#[test]
fn unreadable_archive_names_shape() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Manifest {
        entries: vec![ManifestEntry { split: Split::Train, id: "ghost".into(), path: dir.path().join("missing.salf") }],
    };
    let e = train(&manifest, &tiny_config(), dir.path(), None, |_| {}).unwrap_err();
    assert!(matches!(&e, TrainingError::Archive { id, .. } if id == "ghost"), "{e}");
}

#[test]
fn nan_loss_aborts_with_step_identity() {
    let mut set = tiny_set("poison", 2);
    for h in &mut set.h {
        *h = f32::NAN;
    }
    let mut t = Trainer::new(tiny_config()).unwrap();
    let e = t.step_batch(&[&set]).unwrap_err();
    assert!(matches!(&e, TrainingError::NonFinite { epoch: 0, step: 0, shape } if shape == "poison"), "{e}");
}

#[test]
fn empty_train_split_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = train(&Manifest::default(), &tiny_config(), dir.path(), None, |_| {}).unwrap_err();
    assert!(matches!(e, TrainingError::Config(_)));
}
