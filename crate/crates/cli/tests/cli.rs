use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use salforge::geometry::{load_mesh, shapes, write_obj};

const SMALL: &str = "\
[data]
n_input = 256
n_near = 256
n_uniform = 128

[model]
init = geometric-sphere

[train]
epochs = 2
batch_size = 2
points_per_shape = 128
lr0 = 0.0001
checkpoint_every = 1

[reconstruct]
resolution = 24
eval_points = 2000
input_points = 256
";

fn salforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salforge")).args(args).env_remove("SALFORGE_THREADS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("small.ini"), SMALL).unwrap();
        // z = 0 keeps the geometric initialisation's sphere as the zero set.
        fs::write(root.join("overfit.ini"), SMALL.replace("[train]\n", "[train]\nmode = decoder-only\n")).unwrap();
        Self { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn meshes(&self, held_out: bool) -> PathBuf {
        let dir = self.path("meshes");
        fs::create_dir_all(dir.join("test")).unwrap();
        write_obj(&dir.join("ico.obj"), &shapes::icosphere(2), &[]).unwrap();
        write_obj(&dir.join("torus.obj"), &shapes::torus(0.7, 0.25, 24, 12), &[]).unwrap();
        write_obj(&dir.join("box.obj"), &shapes::cuboid(0.5, 0.4, 0.3), &[]).unwrap();
        if held_out {
            write_obj(&dir.join("test/held-out.obj"), &shapes::icosphere(2), &[]).unwrap();
        }
        dir
    }

    fn preprocess(&self, meshes: &Path) -> Output {
        salforge(&["preprocess", "--mesh-dir", s(meshes), "--out-dir", s(&self.path("data")), "--config", s(&self.path("small.ini"))])
    }

    fn train_decoder_only(&self) -> PathBuf {
        let o = salforge(&[
            "train",
            "--manifest",
            s(&self.path("data/manifest.tsv")),
            "--config",
            s(&self.path("overfit.ini")),
            "--out",
            s(&self.path("overfit")),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("encoder=0 decoder=362,110"), "{}", stdout(&o));
        self.path("overfit/final.salc")
    }
}

fn manifest_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn info_reports_counts_and_ratio() {
    let o = salforge(&["info", "--arch", "lightsal"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("encoder: 658,944"), "{out}");
    assert!(out.contains("decoder: 362,110"), "{out}");
    assert!(out.contains("lightsal/sal-baseline total = 0.2426 < 0.25"), "{out}");
    assert!(out.contains("seed: "), "{out}");

    let out = stdout(&salforge(&["info", "--arch", "sal-baseline"]));
    assert!(out.contains("decoder: 1,842,177"), "{out}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&salforge(&["frobnicate"])), 2);
    assert_eq!(code(&salforge(&["info", "--arch", "resnet"])), 2);
    assert_eq!(code(&salforge(&["gradcheck", "--module", "geometry"])), 2);
    assert_eq!(code(&salforge(&["reconstruct", "--checkpoint", "k.salc"])), 2);
}

#[test]
fn gradcheck_passes_and_names_worst() {
    let o = salforge(&["gradcheck", "--module", "all", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("seed: 4"));
    assert!(out.lines().any(|l| l.starts_with("worst: ")), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn preprocess_is_idempotent_and_reports_bad_meshes() {
    let ws = Workspace::new();
    let meshes = ws.meshes(false);
    let o = ws.preprocess(&meshes);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("seed: 0"));
    assert_eq!(manifest_rows(&ws.path("data/manifest.tsv")).len(), 3);
    for id in ["ico", "torus", "box"] {
        assert!(ws.path(&format!("data/{id}.salf")).exists());
        assert!(ws.path(&format!("data/{id}.ply")).exists());
    }
    let before: Vec<_> = ["ico", "torus", "box"]
        .iter()
        .map(|id| fs::metadata(ws.path(&format!("data/{id}.salf"))).unwrap().modified().unwrap())
        .collect();
    let bytes = fs::read(ws.path("data/ico.salf")).unwrap();

    let o = ws.preprocess(&meshes);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("skipped: 3"), "{}", stdout(&o));
    let after: Vec<_> = ["ico", "torus", "box"]
        .iter()
        .map(|id| fs::metadata(ws.path(&format!("data/{id}.salf"))).unwrap().modified().unwrap())
        .collect();
    assert_eq!(before, after);

    // A fresh directory with more workers gives identical archives.
    let o = salforge(&[
        "preprocess",
        "--mesh-dir",
        s(&meshes),
        "--out-dir",
        s(&ws.path("data2")),
        "--config",
        s(&ws.path("small.ini")),
        "--workers",
        "3",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(ws.path("data2/ico.salf")).unwrap(), bytes);

    fs::write(meshes.join("broken.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
    fs::remove_file(ws.path("data/torus.sha256")).unwrap();
    let o = ws.preprocess(&meshes);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("broken.obj"), "{}", stderr(&o));
    assert!(stdout(&o).contains("written: 1") && stdout(&o).contains("skipped: 2"), "{}", stdout(&o));
    assert_eq!(manifest_rows(&ws.path("data/manifest.tsv")).len(), 3);
}

#[test]
fn workers_env_fallback_is_validated() {
    let ws = Workspace::new();
    let meshes = ws.meshes(false);
    let o = Command::new(env!("CARGO_BIN_EXE_salforge"))
        .args(["preprocess", "--mesh-dir", s(&meshes), "--out-dir", s(&ws.path("data"))])
        .env("SALFORGE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("SALFORGE_THREADS"));
}

#[test]
fn train_rejects_zero_learning_rate_before_training() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.ini"), "[train]\nlr0 = 0\n").unwrap();
    fs::write(ws.path("empty.tsv"), "").unwrap();
    let o = salforge(&["train", "--manifest", s(&ws.path("empty.tsv")), "--config", s(&ws.path("bad.ini")), "--out", s(&ws.path("run"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("lr0"), "{}", stderr(&o));
    assert!(!ws.path("run").exists());
}

#[test]
fn missing_checkpoint_names_path() {
    let ws = Workspace::new();
    let missing = ws.path("nowhere/final.salc");
    let o = salforge(&["reconstruct", "--checkpoint", s(&missing), "--input", "x.obj", "--out", s(&ws.path("o.obj"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(s(&missing)), "{}", stderr(&o));
}

#[test]
fn pipeline_train_reconstruct_eval() {
    let ws = Workspace::new();
    let meshes = ws.meshes(true);
    assert_eq!(code(&ws.preprocess(&meshes)), 0);

    let o = salforge(&[
        "train",
        "--manifest",
        s(&ws.path("data/manifest.tsv")),
        "--config",
        s(&ws.path("small.ini")),
        "--out",
        s(&ws.path("run")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("encoder=658,944"), "{out}");
    assert!(out.contains("seed: 0"));
    let metrics = fs::read_to_string(ws.path("run/metrics.csv")).unwrap();
    // Two epochs of two batches over three train shapes.
    assert_eq!(metrics.lines().count(), 1 + 4);
    let ck = ws.train_decoder_only();

    // Default resolution, written twice with the same seed.
    let out_a = ws.path("rec/a.ply");
    let out_b = ws.path("rec/b.ply");
    for out in [&out_a, &out_b] {
        let o = salforge(&["reconstruct", "--checkpoint", s(&ck), "--input", s(&meshes.join("torus.obj")), "--out", s(out), "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("resolution: 100"));
        assert!(stdout(&o).contains("seed: 3"));
    }
    assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());
    let mesh = load_mesh(&out_a).unwrap();
    assert!(!mesh.triangles.is_empty());

    let report = ws.path("report.csv");
    let o = salforge(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--manifest",
        s(&ws.path("data/manifest.tsv")),
        "--split",
        "test",
        "--out",
        s(&report),
        "--config",
        s(&ws.path("small.ini")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("split,shape,chamfer_x1e3\ntest,held-out,"), "{csv}");
    let pct: Vec<&str> = csv
        .lines()
        .skip_while(|l| *l != "percentile,chamfer_x1e3")
        .skip(1)
        .take(3)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(pct.len(), 3);
    assert!(pct.iter().all(|v| *v == pct[0]), "{csv}");
    assert!(csv.trim_end().ends_with("seed,0"));
}
