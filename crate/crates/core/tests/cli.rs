use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radfield::checkpoint::Checkpoint;
use radfield::cli::{CodesFile, InversionReport, RunConfig};
use radfield::render::Image;

const TINY: &str = r#"
[data]
n_objects = 2
n_views = 3
image_size = 12
oracle_samples = 256

[field]
pos_freqs = 2
dir_freqs = 1
latent_dim = 4
hidden_dim = 16
feature_dim = 8
shape_layers = 2
texture_layers = 1

[train]
iterations = 6
rays_per_batch = 32
n_samples = 8

[infer]
iterations = 12

[mesh]
resolution = 12
"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn run(&self, args: &[&str]) -> Output {
        let cfg = self.path("tiny.toml");
        Command::new(env!("CARGO_BIN_EXE_radfield"))
            .current_dir(self.dir.path())
            .env_remove("RADFIELD_DATA_ROOT")
            .arg("--config")
            .arg(&cfg)
            .arg("--threads")
            .arg("1")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> serde_json::Value {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = String::from_utf8(out.stdout).unwrap();
        serde_json::from_str(text.lines().last().unwrap()).unwrap()
    }

    fn fails(&self, args: &[&str], kind: &str) -> String {
        let out = self.run(args);
        assert!(!out.status.success(), "{args:?} should fail");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error[{kind}]: ")), "{err}");
        err
    }

    fn trained(&self) -> PathBuf {
        let ck = self.path("m.ckpt");
        if !ck.exists() {
            self.ok(&["dataset", "gen", "-o", "data"]);
            self.ok(&["train", "--data", "data", "-o", "m.ckpt"]);
        }
        ck
    }
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_gen_is_deterministic() {
    let env = Env::new();
    let v = env.ok(&[
        "dataset",
        "gen",
        "--objects",
        "4",
        "--views",
        "20",
        "--size",
        "16",
        "--seed",
        "7",
        "-o",
        "a",
    ]);
    assert_eq!(v["objects"], 4);
    let dirs = fs::read_dir(env.path("a"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 4);
    env.ok(&[
        "dataset",
        "gen",
        "--objects",
        "4",
        "--views",
        "20",
        "--size",
        "16",
        "--seed",
        "7",
        "-o",
        "b",
    ]);
    assert_eq!(tree(&env.path("a")), tree(&env.path("b")));
    env.fails(&["dataset", "gen", "--objects", "0", "-o", "c"], "data");
}

#[test]
fn data_root_resolves_relative_paths() {
    let env = Env::new();
    let root = env.path("root");
    let out = Command::new(env!("CARGO_BIN_EXE_radfield"))
        .current_dir(env.dir.path())
        .env("RADFIELD_DATA_ROOT", &root)
        .args(["--config", "tiny.toml", "dataset", "gen", "-o", "toy"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("toy").join("dataset.json").exists());
}

#[test]
fn config_rejects_unknown_keys() {
    assert!(RunConfig::from_toml("[train]\nbogus = 1\n").is_err());
    assert!(RunConfig::from_toml("colour = 3\n").is_err());
    let cfg = RunConfig::from_toml(TINY).unwrap();
    cfg.validate().unwrap();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let env = Env::new();
    fs::write(env.path("bad.toml"), "[field]\nwidth = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_radfield"))
        .current_dir(env.dir.path())
        .args(["--config", "bad.toml", "dataset", "gen", "-o", "x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[config]: "));
}

#[test]
fn usage_errors_are_single_line() {
    let env = Env::new();
    let out = env.run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[usage]: ") && err.lines().count() == 1, "{err}");
    env.fails(
        &[
            "render",
            "--checkpoint",
            "nope.ckpt",
            "--object",
            "obj_0000",
            "-o",
            "x.png",
        ],
        "checkpoint",
    );
}

#[test]
fn train_log_resume_and_reproducibility() {
    let env = Env::new();
    env.ok(&["dataset", "gen", "-o", "data"]);
    let v = env.ok(&["train", "--data", "data", "-o", "a.ckpt"]);
    assert_eq!(v["step"], 6);
    let log = fs::read_to_string(env.path("a.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    env.ok(&["train", "--data", "data", "-o", "b.ckpt"]);
    let (a, b) = (
        Checkpoint::load(&env.path("a.ckpt")).unwrap(),
        Checkpoint::load(&env.path("b.ckpt")).unwrap(),
    );
    assert_eq!(a, b);

    let v = env.ok(&[
        "train",
        "--data",
        "data",
        "--resume",
        "a.ckpt",
        "--iterations",
        "3",
        "-o",
        "c.ckpt",
    ]);
    assert_eq!(v["start_step"], 6);
    assert_eq!(v["step"], 9);
    let steps: Vec<u64> = fs::read_to_string(env.path("c.ckpt.log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["iteration"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(steps, vec![7, 8, 9]);

    // Nine straight steps equal six plus a resumed three.
    env.ok(&["train", "--data", "data", "--iterations", "9", "-o", "d.ckpt"]);
    let (c, d) = (
        Checkpoint::load(&env.path("c.ckpt")).unwrap(),
        Checkpoint::load(&env.path("d.ckpt")).unwrap(),
    );
    assert_eq!(c, d);

    let e = env.ok(&["eval", "--checkpoint", "a.ckpt", "--data", "data", "-o", "report.json"]);
    let train_psnr = v_f64(&env.ok(&["train", "--data", "data", "-o", "a2.ckpt"])["train_psnr"]);
    assert!((v_f64(&e["mean_psnr"]) - train_psnr).abs() < 0.1);
    assert!(env.path("report.json").exists());
}

fn v_f64(v: &serde_json::Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn render_edit_endpoints_match() {
    let env = Env::new();
    env.trained();
    let view = ["--angles", "30,20,3.5"];
    env.ok(&[
        &[
            "render",
            "--checkpoint",
            "m.ckpt",
            "--object",
            "obj_0000",
            "-o",
            "a.png",
        ][..],
        &view,
    ]
    .concat());
    env.ok(&[
        &[
            "render",
            "--checkpoint",
            "m.ckpt",
            "--object",
            "obj_0001",
            "-o",
            "b.png",
        ][..],
        &view,
    ]
    .concat());
    for code in ["shape", "texture"] {
        let dir = format!("edit_{code}");
        let v = env.ok(&[
            &[
                "edit",
                "--checkpoint",
                "m.ckpt",
                "--from",
                "obj_0000",
                "--to",
                "obj_0001",
                "--code",
                code,
                "--steps",
                "3",
                "-o",
                &dir,
            ][..],
            &view,
        ]
        .concat());
        assert_eq!(v["alphas"], serde_json::json!([0.0, 0.5, 1.0]));
        let frame = |i: usize| Image::load_png(&env.path(&dir).join(format!("frame_{i:02}.png"))).unwrap();
        assert_eq!(frame(0), Image::load_png(&env.path("a.png")).unwrap());
        let ck = Checkpoint::load(&env.path("m.ckpt")).unwrap();
        let ((sa, ta), (sb, tb)) = (ck.codes(0), ck.codes(1));
        let end = match code {
            "shape" => CodesFile {
                shape_code: sb,
                texture_code: ta,
            },
            _ => CodesFile {
                shape_code: sa,
                texture_code: tb,
            },
        };
        let codes = format!("{code}_end.json");
        fs::write(env.path(&codes), serde_json::to_string(&end).unwrap()).unwrap();
        let png = format!("{code}_end.png");
        env.ok(&[
            &["render", "--checkpoint", "m.ckpt", "--codes", &codes, "-o", &png][..],
            &view,
        ]
        .concat());
        assert_eq!(frame(2), Image::load_png(&env.path(&png)).unwrap());
    }
    env.fails(
        &[
            "render",
            "--checkpoint",
            "m.ckpt",
            "--object",
            "obj_0009",
            "-o",
            "x.png",
        ],
        "checkpoint",
    );
}

#[test]
fn invert_writes_requested_snapshots() {
    let env = Env::new();
    env.trained();
    env.ok(&[
        "render",
        "--checkpoint",
        "m.ckpt",
        "--object",
        "obj_0001",
        "--angles",
        "40,25,3.5",
        "-o",
        "target.png",
    ]);
    let v = env.ok(&[
        "invert",
        "--checkpoint",
        "m.ckpt",
        "--image",
        "target.png",
        "--angles",
        "0,25,3.5",
        "--snapshots",
        "0,5,10",
        "-o",
        "inv",
    ]);
    assert_eq!(v["snapshots"], serde_json::json!([0, 5, 10, 12]));
    let report: InversionReport =
        serde_json::from_str(&fs::read_to_string(env.path("inv/result.json")).unwrap()).unwrap();
    assert_eq!(report.losses.len(), 13);
    for k in [0, 5, 10, 12] {
        assert!(env.path(&format!("inv/iter_{k:04}.png")).exists());
    }
    let strip = Image::load_png(&env.path("inv/strip.png")).unwrap();
    assert_eq!(strip.width, 5 * 12);

    // The result feeds back into render and mesh.
    env.ok(&[
        "render",
        "--checkpoint",
        "m.ckpt",
        "--codes",
        "inv/result.json",
        "--pose",
        "inv/result.json",
        "-o",
        "again.png",
    ]);
    env.ok(&[
        "mesh",
        "--checkpoint",
        "m.ckpt",
        "--codes",
        "inv/result.json",
        "--ply",
        "m.ply",
        "--obj",
        "m.obj",
    ]);
    assert!(fs::read_to_string(env.path("m.ply")).unwrap().starts_with("ply\n"));

    fs::write(env.path("bad.json"), "{\"phi\": 1.0}").unwrap();
    env.fails(
        &[
            "render",
            "--checkpoint",
            "m.ckpt",
            "--object",
            "obj_0000",
            "--pose",
            "bad.json",
            "-o",
            "x.png",
        ],
        "usage",
    );
    env.fails(
        &[
            "invert",
            "--checkpoint",
            "m.ckpt",
            "--image",
            "target.png",
            "--snapshots",
            "50",
            "-o",
            "inv2",
        ],
        "usage",
    );
}

#[test]
fn eval_invert_mode_reports_pose_errors() {
    let env = Env::new();
    env.trained();
    let v = env.ok(&[
        "eval",
        "--checkpoint",
        "m.ckpt",
        "--data",
        "data",
        "--mode",
        "invert",
        "--max-views",
        "1",
        "--iterations",
        "3",
        "-o",
        "r.json",
        "--csv",
        "r.csv",
    ]);
    assert_eq!(v["views"], 2);
    assert!(v["pose_summary"].is_object());
    let csv = fs::read_to_string(env.path("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
