use std::path::Path;
use std::process::{Command, Output};

use borderprobe::border;

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_borderprobe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const STEM: &str = "stem 7 2 3\npool k=3 s=2 p=1\nblock 3 1 1 x4\n";

#[test]
fn border_calc_prints_the_library_table() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("stem.txt"), STEM).unwrap();
    let out = bin(&["border-calc", "stem.txt", "--input", "96", "--verify", "--csv", "band.csv"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));

    let layers = border::parse_architecture(STEM).unwrap();
    let report = border::affected_band(&layers, (96, 96)).unwrap();
    assert_eq!(stdout(&out), report.to_table());
    assert_eq!(std::fs::read_to_string(dir.path().join("band.csv")).unwrap(), report.to_csv());
}

#[test]
fn border_calc_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "conv k=0 s=1 p=0\n").unwrap();
    let out = bin(&["border-calc", "bad.txt", "--input", "64"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error:"));

    std::fs::write(dir.path().join("ok.txt"), "3 1 1\n").unwrap();
    let out = bin(&["border-calc", "ok.txt", "--input", "64x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_catalog_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["catalog-validate", "--catalog", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn evaluate_before_plan_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["evaluate", "--output", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("plan"), "{}", stderr(&out));
}

#[test]
fn config_file_with_flag_overrides_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["demo-catalog", "cat", "--scenes", "2", "--targets", "2"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(bin(&["catalog-validate", "--catalog", "cat"], dir.path()).status.success());

    std::fs::write(
        dir.path().join("run.toml"),
        "catalog = \"cat\"\noutput = \"run\"\nsizes = [0.05]\nmaster_offsets = [0, 30]\nseed = 3\n",
    )
    .unwrap();
    let out = bin(&["run", "--config", "run.toml", "--shards", "2"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("coverage 1.0000 (16 of 16 probes answered)"), "{}", stdout(&out));
    let manifest = borderprobe::protocol::read_manifest(dir.path().join("run")).unwrap();
    assert_eq!(manifest.shards().len(), 2);
    assert!(dir.path().join("run/report/m040_r_t.png").is_file());

    let out = bin(&["report", "--config", "run.toml", "--metrics", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_probes_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    assert!(bin(&["demo-catalog", "cat"], dir.path()).status.success());
    let out = bin(
        &[
            "plan", "--catalog", "cat", "--output", "run", "--margin", "0", "--sizes", "0.05", "--offsets",
            "0,150,350", "--insertions", "5",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}{}", stdout(&out), stderr(&out));
    let skipped = std::fs::read_to_string(dir.path().join("run/plan/skipped.jsonl")).unwrap();
    assert!(skipped.lines().any(|l| l.contains("\"probe\"")));
}

#[test]
fn bias_map_writes_png_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let coco = r#"{
        "images": [{"id": 1, "width": 64, "height": 32}, {"id": 2, "width": 10, "height": 10}],
        "annotations": [
            {"image_id": 1, "segmentation": [[0, 0, 32, 0, 32, 32, 0, 32]]},
            {"image_id": 2, "segmentation": {"size": [10, 10], "counts": [0, 100]}}
        ]
    }"#;
    std::fs::write(dir.path().join("ann.json"), coco).unwrap();
    let out = bin(&["bias-map", "ann.json", "--out", "bias", "--size", "8"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("bias/density.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    assert_eq!(csv.lines().next().unwrap(), "2,2,2,2,1,1,1,1");
    assert!(dir.path().join("bias/density.png").is_file());
}
