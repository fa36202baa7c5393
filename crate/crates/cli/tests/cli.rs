//! End-to-end runs of the `viewadapt` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[synth]
num_classes = 5
sequences_per_class = 8
frames = [10, 14]
azimuths_deg = [-90, -45, 0, 45, 90]
noise = 0.01

[train]
epochs = 2

[varnn]
main_layers = 1
hidden = 8
va_hidden = 6
batch_size = 8

[vacnn]
map_size = [32, 32]
backbone_channels = [4, 4, 4, 4, 4]
va_kernels = 4
batch_size = 8
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewadapt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("run.toml"), SMALL).unwrap();
        ok(&[
            "--config",
            s(&root.join("run.toml")),
            "synth",
            "--out",
            s(&root.join("data")),
        ]);
        Self { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn config(&self) -> PathBuf {
        self.path("run.toml")
    }

    fn manifest(&self) -> PathBuf {
        self.path("data/manifest.toml")
    }

    fn train(&self, out: &str, extra: &[&str]) {
        let (config, manifest, out) = (self.config(), self.manifest(), self.path(out));
        let mut args = vec![
            "--config",
            s(&config),
            "train",
            "--data",
            s(&manifest),
            "--out",
            s(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn synth_writes_balanced_manifest() {
    let ws = Workspace::new();
    let text = std::fs::read_to_string(ws.manifest()).unwrap();
    assert_eq!(text.matches("[[sequence]]").count(), 40);
    assert!(ws.path("data/seq_0039.toml").is_file());
}

#[test]
fn training_twice_is_byte_identical() {
    let ws = Workspace::new();
    ws.train("a", &["--augment-range", "30"]);
    ws.train("b", &["--augment-range", "30"]);
    for f in ["checkpoint.vack", "train.log", "run.toml"] {
        assert_eq!(
            read(ws.path("a").join(f)),
            read(ws.path("b").join(f)),
            "{f} differs"
        );
    }
    let log = std::fs::read_to_string(ws.path("a/train.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("epoch=1 loss="), "{log}");
}

#[test]
fn untrained_model_scores_near_chance() {
    let ws = Workspace::new();
    ws.train("m", &["--epochs", "0"]);
    let (config, ckpt, manifest, out) = (
        ws.config(),
        ws.path("m/checkpoint.vack"),
        ws.manifest(),
        ws.path("eval"),
    );
    ok(&[
        "--config",
        s(&config),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&manifest),
        "--split",
        "all",
        "--out",
        s(&out),
    ]);
    let report: toml::Table = std::fs::read_to_string(out.join("report.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let acc = report["accuracy"].as_float().unwrap();
    // three binomial standard deviations around 1/5 for 40 sequences
    assert!(
        (acc - 0.2).abs() <= 3.0 * (0.2f64 * 0.8 / 40.0).sqrt(),
        "accuracy {acc}"
    );
    assert_eq!(report["sequences"].as_integer(), Some(40));
}

#[test]
fn eval_then_fuse_identical_files_is_identity() {
    let ws = Workspace::new();
    ws.train("m", &["--model", "va-cnn"]);
    let (config, ckpt, manifest, out) = (
        ws.config(),
        ws.path("m/checkpoint.vack"),
        ws.manifest(),
        ws.path("eval"),
    );
    ok(&[
        "--config",
        s(&config),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    let preds = out.join("predictions.toml");
    let fused = ws.path("fused");
    ok(&[
        "fuse",
        "--cnn",
        s(&preds),
        "--rnn",
        s(&preds),
        "--out",
        s(&fused),
    ]);
    assert_eq!(read(fused.join("predictions.toml")), read(preds));
    assert_eq!(
        read(fused.join("report.toml")),
        read(out.join("report.toml"))
    );
}

#[test]
fn ablation_switches_reach_the_model() {
    let ws = Workspace::new();
    ws.train("m", &["--disable-rotation", "--disable-translation"]);
    let run: toml::Table = std::fs::read_to_string(ws.path("m/run.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let varnn = run["varnn"].as_table().unwrap();
    assert_eq!(varnn["enable_rotation_branch"].as_bool(), Some(false));
    assert_eq!(varnn["enable_translation_branch"].as_bool(), Some(false));
    assert_eq!(varnn["num_classes"].as_integer(), Some(5));
}

#[test]
fn render_is_deterministic_svg() {
    let ws = Workspace::new();
    ws.train("m", &[]);
    let (config, ckpt, seq) = (
        ws.config(),
        ws.path("m/checkpoint.vack"),
        ws.path("data/seq_0003.toml"),
    );
    let (a, b) = (ws.path("a.svg"), ws.path("b.svg"));
    for out in [&a, &b] {
        ok(&[
            "--config",
            s(&config),
            "render",
            "--checkpoint",
            s(&ckpt),
            "--sequence",
            s(&seq),
            "--frames",
            "0,5,9",
            "--out",
            s(out),
        ]);
    }
    let svg = String::from_utf8(read(a.clone())).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<g id=").count(), 6);
    assert_eq!(svg.matches("<line").count(), 6 * 15);
    assert_eq!(read(a), read(b));
}

#[test]
fn preprocess_normalizes_every_sequence() {
    let ws = Workspace::new();
    let (manifest, out) = (ws.manifest(), ws.path("norm"));
    ok(&["preprocess", "--data", s(&manifest), "--out", s(&out)]);
    let text = std::fs::read_to_string(out.join("seq_0000.toml")).unwrap();
    assert!(text.contains("frame_of_reference = \"global_O\""), "{text}");
    // a second pass refuses already-normalized data
    let again = run(&[
        "preprocess",
        "--data",
        s(&out.join("manifest.toml")),
        "--out",
        s(&ws.path("x")),
    ]);
    assert_eq!(again.status.code(), Some(3));
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains("FAIL"), "{text}");
    assert!(
        text.contains("PASS va_rnn [f32]") && text.contains("PASS va_cnn [f64]"),
        "{text}"
    );
}

#[test]
fn exit_codes_follow_error_category() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochz = 3\n").unwrap();
    let out = run(&["--config", s(&bad), "gradcheck"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));

    let missing = dir.path().join("nope.toml");
    let out = run(&["train", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));

    let out = run(&[
        "train",
        "--data",
        s(&missing),
        "--out",
        s(dir.path()),
        "--augment-range",
        "-5",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_four() {
    let ws = Workspace::new();
    let config = ws.path("hot.toml");
    std::fs::write(
        &config,
        SMALL.replace("[varnn]\n", "[varnn]\nlr = 1e300\nclip_norm = 1e300\n"),
    )
    .unwrap();
    let (manifest, out) = (ws.manifest(), ws.path("m"));
    let out = run(&[
        "--config",
        s(&config),
        "train",
        "--data",
        s(&manifest),
        "--out",
        s(&out),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
