//! End-to-end runs of the `braille` binary.

use std::path::Path;
use std::process::{Command, Output};

use braille_core::annotation::{read_annotation, write_manifest, ManifestEntry, Split};
use braille_core::raster::save_png;
use braille_core::GrayImage;

fn braille(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_braille")).args(args).output().unwrap()
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, pages: usize, noise: &str) {
    let out = braille(&["synth", "--output", dir.to_str().unwrap(), "--pages", &pages.to_string(), "--noise", noise, "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// F1 from the `| segmentation | P | R | F1 |` report row.
fn reported_f1(report: &str) -> f64 {
    let row = report.lines().find(|l| l.starts_with("| segmentation")).expect(report);
    row.split('|').nth(4).unwrap().trim().parse().unwrap()
}

#[test]
fn synth_then_evaluate_segmentation() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 20, "8");
    let manifest = tmp.path().join("manifest.csv");
    let report_path = tmp.path().join("report.json");
    let out = braille(&[
        "evaluate",
        "--input",
        manifest.to_str().unwrap(),
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let f1 = reported_f1(&text(&out));
    assert!(f1 >= 0.95, "{}", text(&out));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(report["pages"].as_array().unwrap().len(), 20);
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth(a.path(), 2, "8");
    synth(b.path(), 2, "8");
    for name in ["page_000.png", "page_001.json", "manifest.csv"] {
        let differs = std::fs::read(a.path().join(name)).unwrap() != std::fs::read(b.path().join(name)).unwrap();
        // The manifest stores relative paths, so it matches byte for byte too.
        assert!(!differs, "{name}");
    }
}

#[test]
fn decode_recovers_generator_text() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1, "0");
    let out = braille(&["decode", "--input", tmp.path().join("page_000.png").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let expected = std::fs::read_to_string(tmp.path().join("page_000.txt")).unwrap();
    assert_eq!(text(&out).trim_end(), expected.trim_end());
}

#[test]
fn detect_finds_every_dot_on_a_clean_page() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1, "0");
    let output = tmp.path().join("found.json");
    let overlay = tmp.path().join("overlay.png");
    let out = braille(&[
        "detect",
        "--input",
        tmp.path().join("page_000.png").to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--overlay",
        overlay.to_str().unwrap(),
        "--verso",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let found = read_annotation(&output).unwrap();
    let truth = read_annotation(tmp.path().join("page_000.json")).unwrap();
    assert_eq!(found.recto.len(), truth.recto.len());
    assert!(!found.verso.is_empty());
    assert!(overlay.is_file());
}

#[test]
fn detect_on_blank_page_writes_empty_lists() {
    let tmp = tempfile::tempdir().unwrap();
    let image = tmp.path().join("blank.png");
    save_png(&GrayImage::filled(300, 300, 200), &image).unwrap();
    let output = tmp.path().join("blank.json");
    let out = braille(&["detect", "--input", image.to_str().unwrap(), "--output", output.to_str().unwrap(), "--verso"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ann = read_annotation(&output).unwrap();
    assert!(ann.recto.is_empty() && ann.verso.is_empty());
}

#[test]
fn missing_input_exits_2() {
    let out = braille(&["detect", "--input", "/nonexistent/page.png"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/page.png"));
}

#[test]
fn cascade_without_model_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let image = tmp.path().join("blank.png");
    save_png(&GrayImage::filled(50, 50, 200), &image).unwrap();
    let out = braille(&["detect", "--input", image.to_str().unwrap(), "--detector", "cascade"]);
    assert_eq!(out.status.code(), Some(2));
    let out = braille(&["detect", "--input", image.to_str().unwrap(), "--detector", "cascade", "--model", "/nonexistent/model.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(braille(&["detect"]).status.code(), Some(2));
    assert_eq!(braille(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(braille(&["--dpi", "-5", "detect", "--input", "x.png"]).status.code(), Some(2));
}

#[test]
fn evaluate_with_no_test_pages_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1, "0");
    let entry = ManifestEntry {
        image: tmp.path().join("page_000.png"),
        annotation: tmp.path().join("page_000.json"),
        book: "b".into(),
        split: Split::Train,
    };
    let manifest = tmp.path().join("train_only.csv");
    write_manifest(&[entry], &manifest).unwrap();
    let out = braille(&["evaluate", "--input", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no test pages"));
}

#[test]
fn train_then_evaluate_cascade() {
    let tmp = tempfile::tempdir().unwrap();
    let out = braille(&["synth", "--output", tmp.path().to_str().unwrap(), "--pages", "6", "--train", "4", "--seed", "9"]);
    assert!(out.status.success());
    let manifest = tmp.path().join("manifest.csv");
    let model = tmp.path().join("model.txt");
    let out = braille(&["train", "--input", manifest.to_str().unwrap(), "--output", model.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = braille(&[
        "evaluate",
        "--input",
        manifest.to_str().unwrap(),
        "--detector",
        "cascade",
        "--model",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let row = text(&out).lines().find(|l| l.starts_with("| cascade")).unwrap().to_string();
    let f1: f64 = row.split('|').nth(4).unwrap().trim().parse().unwrap();
    assert!(f1 >= 0.95, "{row}");
}

#[test]
fn deskew_writes_a_straight_page() {
    let tmp = tempfile::tempdir().unwrap();
    let out = braille(&["synth", "--output", tmp.path().to_str().unwrap(), "--pages", "1", "--skew", "3", "--seed", "2"]);
    assert!(out.status.success());
    let truth = read_annotation(tmp.path().join("page_000.json")).unwrap();
    let straight = tmp.path().join("straight.png");
    let ann = tmp.path().join("straight.json");
    let out = braille(&[
        "deskew",
        "--input",
        tmp.path().join("page_000.png").to_str().unwrap(),
        "--output",
        straight.to_str().unwrap(),
        "--annotation",
        ann.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let angle: f64 = text(&out).split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((angle - truth.skew_deg).abs() <= 0.1, "{angle} vs {}", truth.skew_deg);
    assert!(straight.is_file());
    assert!((read_annotation(&ann).unwrap().skew_deg - angle).abs() < 1e-6);
}

#[test]
fn busy_port_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 1, "0");
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = braille(&["annotate", "--input", tmp.path().to_str().unwrap(), "--listen", &addr]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
