use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siamdamage"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn project(size: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", ".", "--size", size, "--seed", "3"]);
    dir
}

#[test]
fn label_is_reproducible_byte_for_byte() {
    let dir = project("256");
    let p = dir.path();
    let out = ok(p, &["label"]);
    assert!(out.contains("No Damage") && out.contains("label mask"));
    let first = std::fs::read(p.join("out/labels/label_mask.tif")).unwrap();
    let geo = std::fs::read(p.join("out/labels/labeled_footprints.geojson")).unwrap();
    ok(p, &["label"]);
    assert_eq!(std::fs::read(p.join("out/labels/label_mask.tif")).unwrap(), first);
    assert_eq!(
        std::fs::read(p.join("out/labels/labeled_footprints.geojson")).unwrap(),
        geo
    );
}

#[test]
fn stages_refuse_to_run_out_of_order() {
    let dir = project("128");
    let p = dir.path();
    let err = fails(p, &["tile"]);
    assert!(err.contains("run `label` first"), "{err}");
    ok(p, &["label"]);
    let err = fails(p, &["train", "--fold", "0"]);
    assert!(err.contains("run `tile` first"), "{err}");
    ok(p, &["tile"]);
    let err = fails(p, &["eval"]);
    assert!(err.contains("run `train` first"), "{err}");
}

#[test]
fn bad_arguments_are_reported() {
    let dir = project("128");
    let p = dir.path();
    assert!(fails(p, &["train", "--fold", "7"]).contains("--fold"));
    assert!(fails(p, &["train", "--encoder", "vgg"]).contains("vgg"));
    assert!(fails(p, &["--config", "missing.toml", "label"]).contains("missing.toml"));
    let mut text = std::fs::read_to_string(p.join("project.toml")).unwrap();
    text.push_str("\n[surprise]\nkey = 1\n");
    std::fs::write(p.join("bad.toml"), text).unwrap();
    assert!(fails(p, &["--config", "bad.toml", "label"]).contains("surprise"));
}

#[test]
fn train_eval_report_round_trip() {
    let dir = project("128");
    let p = dir.path();
    ok(p, &["label"]);
    let tiles = ok(p, &["tile"]);
    assert_eq!(tiles.lines().filter(|l| l.starts_with("fold")).count(), 4);
    for extra in [&[][..], &["--no-augment"][..]] {
        let mut args = vec!["train", "--epochs", "1"];
        args.extend_from_slice(extra);
        let out = ok(p, &args);
        assert_eq!(out.lines().filter(|l| l.contains("checkpoint")).count(), 4);
        let mut args = vec!["eval", "--epochs", "1"];
        args.extend_from_slice(extra);
        let out = ok(p, &args);
        assert!(out.contains("BAS_3") && out.contains("BAS_2"), "{out}");
    }
    // A second train with the same settings reuses the checkpoints.
    let again = ok(p, &["train", "--epochs", "1", "--fold", "2"]);
    assert!(again.contains("0 epoch(s) run"), "{again}");

    let report = ok(p, &["report", "--axis", "augment"]);
    assert!(
        report.contains("with augmentation") && report.contains("without augmentation"),
        "{report}"
    );
    assert!(p.join("out/report-augment.md").exists());
}
