use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY_CFG: &str = "\
[network]
input = 12x12
conv = 2x3,3x3
pool_after = 0
fc = 4,2

[training]
batch_size = 32
learning_rate = 0.01
iterations = 500
eval_every = 50
";

fn dcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Synthetic 12×12 data plus a 500-iteration tiny-network run.
fn trained(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let out = root.join("out");
    let cfg = root.join("tiny.cfg");
    std::fs::write(&cfg, TINY_CFG).unwrap();
    let o = dcnn(&["synth", "--n", "400", "--size", "12", "--seed", "3", "--out-dir", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = dcnn(&["train", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(&out), "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, out)
}

#[test]
fn synth_writes_images_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = dcnn(&["synth", "--n", "200", "--size", "16", "--seed", "5", "--out-dir", p(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let pngs = std::fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 200);
    let labels = std::fs::read(a.join("labels.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&labels).lines().count(), 201);
    assert_eq!(labels, std::fs::read(b.join("labels.csv")).unwrap());
    let ds = dcnn::data::load_dataset(&a).unwrap();
    assert_eq!(ds.len(), 200);
    assert_eq!(ds.class_counts(), (100, 100));
}

#[test]
fn synth_rejects_odd_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcnn(&["synth", "--n", "7", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = trained(dir.path());
    for f in ["best.ckpt", "final.ckpt", "curves.csv", "val_report.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let curves = std::fs::read_to_string(out.join("curves.csv")).unwrap();
    assert!(curves.starts_with("iteration,split,loss,accuracy,elapsed_ms\n"));
    let val: Value = serde_json::from_str(&std::fs::read_to_string(out.join("val_report.json")).unwrap()).unwrap();
    assert!(val["accuracy"].as_f64().unwrap() > 0.9);

    let model = out.join("best.ckpt");
    let o = dcnn(&["eval", "--model", p(&model), "--data-dir", p(&data), "--split", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["sensitivity"].as_f64().unwrap() > 0.95, "{report}");
    assert!(report["specificity"].as_f64().unwrap() > 0.95, "{report}");
    let text = stderr(&o);
    for name in ["Sensitivity", "Specificity", "F1"] {
        assert!(text.contains(name), "{text}");
    }

    // synth_00000 carries a disk
    let o = dcnn(&["predict", "--model", p(&model), "--image", p(&data.join("synth_00000.png"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    let field = |k: &str| -> f64 {
        s.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((field("p_cancer") + field("p_free") - 1.0).abs() <= 1e-6);
    assert!(s.contains("decision=cancer\n"), "{s}");
}

#[test]
fn training_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (_, out_a) = trained(a.path());
    let (_, out_b) = trained(b.path());
    for f in ["curves.csv", "best.ckpt", "final.ckpt", "val_report.json"] {
        assert_eq!(std::fs::read(out_a.join(f)).unwrap(), std::fs::read(out_b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_labels_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty");
    std::fs::create_dir(&data).unwrap();
    let o = dcnn(&["train", "--data-dir", p(&data), "--out-dir", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("labels.csv"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcnn(&["eval", "--model", "m.ckpt", "--data-dir", p(dir.path()), "--split", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[training]\nmomentum = 2\n").unwrap();
    let o = dcnn(&["train", "--config", p(&cfg), "--data-dir", "d", "--out-dir", "o"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = dcnn(&["train", "--out-dir", "o"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_rejects_bad_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = trained(dir.path());
    let junk = dir.path().join("junk.ckpt");
    let mut bytes = std::fs::read(out.join("best.ckpt")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&junk, bytes).unwrap();
    let o = dcnn(&["eval", "--model", p(&junk), "--data-dir", p(&data)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).is_empty());

    let other = dir.path().join("other.cfg");
    std::fs::write(&other, TINY_CFG.replace("fc = 4,2", "fc = 6,2")).unwrap();
    let o = dcnn(&["eval", "--config", p(&other), "--model", p(&out.join("best.ckpt")), "--data-dir", p(&data)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("network.fc: expected 6,2, found 4,2"), "{}", stderr(&o));
}

#[test]
fn corrupt_png_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = trained(dir.path());
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"\x89PNG\r\n\x1a\nnot really").unwrap();
    let o = dcnn(&["predict", "--model", p(&out.join("best.ckpt")), "--image", p(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).is_empty());
}

#[test]
fn gradcheck_passes_and_detects_a_broken_gradient() {
    let o = dcnn(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let s = stdout(&o);
    for layer in ["network/conv0", "network/conv1", "network/fc0", "network/fc1"] {
        assert_eq!(s.matches(&format!("{layer} ")).count(), 1, "{s}");
    }

    let o = dcnn(&["gradcheck", "--perturb", "0.01"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("network/conv0"), "{}", stderr(&o));
}
