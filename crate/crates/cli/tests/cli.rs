use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use facetrace::evaluation::LoadedTracer;
use facetrace::imageio::read_face;

const TINY: &str = r#"
seed = 5

[data.synthetic]
n_identities = 4
frames_per_identity = 8
resolution = 16
test_fraction = 0.25

[model]
resolution = 16
channels = [2, 2, 4, 4]
id_dim = 8
attr_dim = 8

[train]
batch_size = 4
epochs = 1
checkpoint_every = 1
"#;

fn facetrace(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facetrace"))
        .args(args)
        .env("FACETRACE_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("stderr is a JSON error record")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> Output {
        facetrace(&self.path("cache"), args)
    }

    fn synth(&self) {
        ok(&self.run(&["synth", "--config", &self.s("tiny.toml"), "--output", &self.s("corpus")]));
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train".to_string(),
            "--config".into(),
            self.s("tiny.toml"),
            "--manifest".into(),
            self.s("corpus/manifest.jsonl"),
            "--output".into(),
            self.s(out),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        self.run(&args)
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn synth_is_deterministic_per_seed() {
    let w = Workspace::new();
    for out in ["a", "b"] {
        ok(&w.run(&["synth", "--config", &w.s("tiny.toml"), "--output", &w.s(out)]));
    }
    ok(&w.run(&[
        "synth",
        "--config",
        &w.s("tiny.toml"),
        "--seed",
        "6",
        "--output",
        &w.s("c"),
    ]));
    let a = fs::read(w.path("a/manifest.jsonl")).unwrap();
    assert_eq!(a, fs::read(w.path("b/manifest.jsonl")).unwrap());
    assert_eq!(
        fs::read(w.path("a/synthetic.json")).unwrap(),
        fs::read(w.path("b/synthetic.json")).unwrap()
    );
    assert_ne!(
        fs::read(w.path("a/synthetic.json")).unwrap(),
        fs::read(w.path("c/synthetic.json")).unwrap()
    );
    assert!(w.path("a/resolved_config.toml").exists());
}

#[test]
fn synth_defaults_to_cache_dir() {
    let w = Workspace::new();
    ok(&w.run(&["synth", "--config", &w.s("tiny.toml")]));
    assert!(w.path("cache/synthetic/manifest.jsonl").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let w = Workspace::new();
    fs::write(w.path("bad.toml"), "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = w.run(&["synth", "--config", &w.s("bad.toml")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");
}

#[test]
fn invalid_value_exits_2() {
    let w = Workspace::new();
    let out = w.run(&["synth", "--config", &w.s("tiny.toml"), "--resolution", "12"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(w.path("one.toml"), TINY.replace("n_identities = 4", "n_identities = 1")).unwrap();
    let out = w.run(&["synth", "--config", &w.s("one.toml")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");
}

#[test]
fn missing_manifest_exits_3() {
    let w = Workspace::new();
    let out = w.run(&[
        "train",
        "--config",
        &w.s("tiny.toml"),
        "--manifest",
        &w.s("nowhere/manifest.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "data");
}

#[test]
fn diverging_training_exits_4() {
    let w = Workspace::new();
    w.synth();
    fs::write(
        w.path("hot.toml"),
        TINY.replace("[train]\n", "[train]\nlearning_rate = 1e30\n"),
    )
    .unwrap();
    let out = w.run(&[
        "train",
        "--config",
        &w.s("hot.toml"),
        "--manifest",
        &w.s("corpus/manifest.jsonl"),
        "--epochs",
        "3",
        "--output",
        &w.s("run"),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"], "numeric");
}

#[test]
fn epochs_flag_overrides_config() {
    let w = Workspace::new();
    w.synth();
    ok(&w.train("run", &["--epochs", "3"]));
    let log = fs::read_to_string(w.path("run/train_log.jsonl")).unwrap();
    let epochs = log.lines().filter(|l| l.contains("\"record\":\"epoch\"")).count();
    // 24 training pairs at batch 4
    let steps = log.lines().filter(|l| l.contains("\"record\":\"step\"")).count();
    assert_eq!((epochs, steps), (3, 18));
    for f in [
        "final.safetensors",
        "summary.txt",
        "timing.json",
        "resolved_config.toml",
    ] {
        assert!(w.path("run").join(f).exists(), "{f}");
    }
    assert!(w.path("run/checkpoints/epoch_0003.safetensors").exists());
    let resolved = fs::read_to_string(w.path("run/resolved_config.toml")).unwrap();
    assert!(resolved.contains("epochs = 3"));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let w = Workspace::new();
    w.synth();
    ok(&w.train("full", &["--epochs", "3"]));
    ok(&w.train("split", &["--epochs", "1"]));
    let ck = w.s("split/final.safetensors");
    ok(&w.train("split", &["--epochs", "3", "--checkpoint", &ck]));
    assert_eq!(
        fs::read(w.path("full/final.safetensors")).unwrap(),
        fs::read(w.path("split/final.safetensors")).unwrap()
    );
    assert_eq!(
        fs::read(w.path("full/train_log.jsonl")).unwrap(),
        fs::read(w.path("split/train_log.jsonl")).unwrap()
    );
}

#[test]
fn overrides_reach_the_archived_config() {
    let w = Workspace::new();
    w.synth();
    ok(&w.train("run", &["--redundancy-mode", "absolute", "--attr-loss-weight", "0.5"]));
    let resolved = fs::read_to_string(w.path("run/resolved_config.toml")).unwrap();
    assert!(resolved.contains("redundancy_mode = \"absolute\""), "{resolved}");
    assert!(resolved.contains("lambda_attr = 0.5"), "{resolved}");
    let out = w.train("bad", &["--redundancy-mode", "signed"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_single_file_and_directory() {
    let w = Workspace::new();
    w.synth();
    ok(&w.train("run", &[]));
    let ck = w.s("run/final.safetensors");
    let fakes: Vec<PathBuf> = {
        let mut v: Vec<_> = fs::read_dir(w.path("corpus/fakes"))
            .unwrap()
            .flat_map(|e| {
                let p = e.unwrap().path();
                if p.is_dir() {
                    fs::read_dir(p).unwrap().map(|e| e.unwrap().path()).collect()
                } else {
                    vec![p]
                }
            })
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        v.sort();
        v
    };
    assert!(!fakes.is_empty());

    let single = w.s("one.png");
    ok(&w.run(&[
        "trace",
        &fakes[0].to_string_lossy(),
        "--checkpoint",
        &ck,
        "--output",
        &single,
    ]));
    let img = read_face(Path::new(&single), None).unwrap();
    assert_eq!((img.height(), img.width()), (16, 16));
    let again = w.s("again.png");
    ok(&w.run(&[
        "trace",
        &fakes[0].to_string_lossy(),
        "--checkpoint",
        &ck,
        "--output",
        &again,
    ]));
    assert_eq!(fs::read(&single).unwrap(), fs::read(&again).unwrap());

    fs::create_dir(w.path("batch")).unwrap();
    for (i, f) in fakes.iter().take(3).enumerate() {
        fs::copy(f, w.path(&format!("batch/f{i}.png"))).unwrap();
    }
    fs::write(w.path("batch/notes.txt"), "skip me").unwrap();
    ok(&w.run(&["trace", &w.s("batch"), "--checkpoint", &ck, "--output", &w.s("traced")]));
    let names: Vec<_> = dir_bytes(&w.path("traced")).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["f0.png", "f1.png", "f2.png"]);
}

#[test]
fn eval_with_oracle_tracer_writes_report_and_grid() {
    let w = Workspace::new();
    w.synth();
    let oracle = w.path("oracle.safetensors");
    LoadedTracer::save_oracle(&oracle, 16).unwrap();
    let args = [
        "eval",
        "--config",
        &w.s("tiny.toml"),
        "--checkpoint",
        &oracle.to_string_lossy(),
        "--manifest",
        &w.s("corpus/manifest.jsonl"),
        "--grid",
        "8",
        "--output",
    ];
    let mut a1 = args.to_vec();
    let e1 = w.s("e1");
    a1.push(&e1);
    let out = w.run(&a1);
    ok(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(
        table.contains("| Dataset | PSNR (dB) | SSIM | Facial Similarity (%) |"),
        "{table}"
    );
    assert!(table.contains("| synthetic | 99.00 | 1.0000 | 100.00 |"), "{table}");

    let grid = read_face(&w.path("e1/grid.png"), None).unwrap();
    assert_eq!((grid.width(), grid.height()), (4 * 16, 8 * 16));

    let mut a2 = args.to_vec();
    let e2 = w.s("e2");
    a2.push(&e2);
    ok(&w.run(&a2));
    assert_eq!(dir_bytes(&w.path("e1")), dir_bytes(&w.path("e2")));
}
