use std::path::Path;

use borderprobe::config::{DetectorMode, RunConfig};
use borderprobe::metrics::CellMetrics;
use borderprobe::protocol::{self, PredictionLine};
use borderprobe::synthetic::{write_catalog, SyntheticSpec};
use borderprobe::{pipeline, Error};

fn config(root: &Path, catalog: &Path, insertions: u32) -> RunConfig {
    RunConfig {
        catalog: catalog.to_path_buf(),
        output: root.to_path_buf(),
        sizes: vec![0.05],
        master_offsets: vec![0, 30, 150],
        seed: 7,
        shards: 3,
        insertions_per_pair: insertions,
        ..RunConfig::default()
    }
}

fn small_catalog(dir: &Path) {
    let spec = SyntheticSpec { scenes: 2, targets: 2, ..Default::default() };
    write_catalog(dir, &spec).unwrap();
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn full_mock_run_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    small_catalog(&cat);
    let cfg = config(&tmp.path().join("run"), &cat, 2);

    let summary = pipeline::run_all(&cfg).unwrap().unwrap();
    // Each replicate insertion is its own pair: 2 scenes x 2 targets x 2.
    assert_eq!(summary.pairs, 8);
    assert_eq!(summary.test_images, 8);
    assert_eq!(summary.probes, 8 * 9);
    assert_eq!(summary.coverage, 1.0);
    assert_eq!(summary.cells, 9);

    let out = &cfg.output;
    let manifest = protocol::read_manifest(out).unwrap();
    assert_eq!(manifest.probes.len(), 72);
    assert_eq!(manifest.shards().len(), 3);
    for entry in &manifest.probes {
        let crop = image::open(out.join(protocol::PROBES_DIR).join(&entry.path)).unwrap();
        assert_eq!((crop.width(), crop.height()), (800, 800));
    }
    for m in CellMetrics::METRICS {
        assert!(out.join("report").join(format!("m040_{m}.png")).is_file());
        assert!(out.join("report").join(format!("m040_{m}.csv")).is_file());
    }
    let cells = borderprobe::metrics::read_cells_csv(out.join("eval/cells.csv")).unwrap();
    assert!(cells.iter().all(|c| c.n == 8 && c.r_a <= c.r_t));
}

#[test]
fn plan_and_generate_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    small_catalog(&cat);
    let a = config(&tmp.path().join("a"), &cat, 1);
    let b = config(&tmp.path().join("b"), &cat, 1);
    for cfg in [&a, &b] {
        pipeline::plan(cfg).unwrap();
        pipeline::generate(cfg).unwrap();
        pipeline::mock_run(cfg).unwrap();
    }
    for file in [
        "plan/meta.json",
        "plan/test_images.jsonl",
        "plan/probes.jsonl",
        "plan/skipped.jsonl",
        "probes/manifest.json",
        "truth/ground_truth.jsonl",
        "preds/shard-000.jsonl",
    ] {
        assert_eq!(read(a.output.join(file)), read(b.output.join(file)), "{file} differs");
    }
    let manifest = protocol::read_manifest(&a.output).unwrap();
    let first = &manifest.probes[0].path;
    assert_eq!(read(a.output.join("probes").join(first)), read(b.output.join("probes").join(first)));

    let mut c = config(&tmp.path().join("c"), &cat, 1);
    c.seed = 8;
    pipeline::plan(&c).unwrap();
    assert_ne!(read(a.output.join("plan/test_images.jsonl")), read(c.output.join("plan/test_images.jsonl")));
}

#[test]
fn partial_detector_output_reports_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    small_catalog(&cat);
    let cfg = config(&tmp.path().join("run"), &cat, 5);
    pipeline::plan(&cfg).unwrap();
    pipeline::generate(&cfg).unwrap();
    pipeline::mock_run(&cfg).unwrap();

    // Drop every tenth probe from the detector output.
    let manifest = protocol::read_manifest(&cfg.output).unwrap();
    assert_eq!(manifest.probes.len(), 180);
    let dropped: Vec<&str> = manifest.probes.iter().step_by(10).map(|e| e.probe_id.as_str()).collect();
    for shard in manifest.shards() {
        let path = protocol::shard_path(&cfg.output, shard);
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<PredictionLine> = protocol::parse_shard(&text, shard, &manifest)
            .unwrap()
            .into_iter()
            .filter(|l| !dropped.contains(&l.probe_id()))
            .collect();
        protocol::write_predictions(&path, &kept).unwrap();
    }

    let (cells, summary) = pipeline::evaluate(&cfg).unwrap();
    assert_eq!((summary.covered, summary.probes), (162, 180));
    assert_eq!(summary.coverage, 0.9);
    assert_eq!(cells.iter().map(|c| c.n).sum::<u64>(), 162);
}

#[test]
fn external_mode_stops_before_detection() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    small_catalog(&cat);
    let mut cfg = config(&tmp.path().join("run"), &cat, 1);
    cfg.detector.mode = DetectorMode::External;
    assert!(pipeline::run_all(&cfg).unwrap().is_none());
    assert!(cfg.output.join("probes/manifest.json").is_file());
    assert!(!cfg.output.join("preds").exists());
    match pipeline::evaluate(&cfg) {
        Ok((cells, summary)) => assert!(cells.is_empty() && summary.covered == 0),
        Err(e) => assert!(matches!(e, Error::MissingArtifact { .. }), "{e}"),
    }
}

#[test]
fn stages_out_of_order_name_the_missing_step() {
    let tmp = tempfile::tempdir().unwrap();
    let cat = tmp.path().join("cat");
    small_catalog(&cat);
    let cfg = config(&tmp.path().join("run"), &cat, 1);
    let err = pipeline::generate(&cfg).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { .. }));
    assert!(err.to_string().contains("plan"));
}
