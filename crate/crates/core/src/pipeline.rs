//! Stage runners. Stages talk only through files under the run directory:
//!
//! ```text
//! <output>/run.toml                resolved config
//! <output>/plan/                   experiment manifest (planner)
//! <output>/probes/                 crops + manifest.json (detector input)
//! <output>/truth/ground_truth.jsonl  harness-only ground truth
//! <output>/preds/<shard>.jsonl     detector output
//! <output>/eval/                   matched.jsonl, cells.csv, summary.json
//! <output>/report/                 heatmaps
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::ImageEncoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{self, SceneCatalog};
use crate::compositor;
use crate::config::{DetectorMode, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, CellMetrics, GroundTruth, MatchedResult};
use crate::mock;
use crate::planner::{self, read_jsonl, write_jsonl, ExperimentPlan, SkipKind};
use crate::protocol::{self, ExperimentMeta, ManifestEntry, ProbeManifest};
use crate::report;

pub const PLAN_DIR: &str = "plan";
pub const TRUTH_DIR: &str = "truth";
pub const TRUTH_FILE: &str = "ground_truth.jsonl";
pub const EVAL_DIR: &str = "eval";
pub const REPORT_DIR: &str = "report";

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub pairs: usize,
    pub test_images: usize,
    pub probes: usize,
    pub skipped_pairs: usize,
    pub skipped_test_images: usize,
    pub infeasible_probes: usize,
}

impl PlanSummary {
    fn of(plan: &ExperimentPlan) -> Self {
        let count = |k: SkipKind| plan.skipped.iter().filter(|s| s.kind == k).count();
        PlanSummary {
            pairs: plan.meta.pair_count,
            test_images: plan.test_images.len(),
            probes: plan.probes.len(),
            skipped_pairs: count(SkipKind::Pair),
            skipped_test_images: count(SkipKind::TestImage),
            infeasible_probes: count(SkipKind::Probe),
        }
    }
}

pub fn plan(cfg: &RunConfig) -> Result<(ExperimentPlan, PlanSummary)> {
    cfg.validate()?;
    let catalog = catalog::load_catalog(&cfg.catalog)?;
    let plan = planner::plan_experiment(&catalog, &cfg.plan_config())?;
    ensure_dir(&cfg.output)?;
    let run_toml = cfg.output.join("run.toml");
    std::fs::write(&run_toml, cfg.to_toml()).map_err(|e| Error::io(&run_toml, e))?;
    plan.write(cfg.output.join(PLAN_DIR))?;
    let summary = PlanSummary::of(&plan);
    Ok((plan, summary))
}

fn save_png(img: &image::RgbImage, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::image(path, e))
}

fn render_test_image(
    catalog: &SceneCatalog,
    plan: &ExperimentPlan,
    background: &image::RgbImage,
    spec: &planner::TestImageSpec,
    probes: &[&planner::ProbeSpec],
    probes_dir: &Path,
) -> Result<Vec<GroundTruth>> {
    let target = catalog
        .target(&spec.target_id)
        .ok_or_else(|| Error::InvalidInput(format!("plan refers to unknown target `{}`", spec.target_id)))?;
    let cutout = catalog.target_image(target)?;
    let crop = plan.meta.config.crop_dimension;
    let resized = compositor::resize_target(target, &cutout, spec.size_proportion, crop)?;
    let eval = catalog.eval_category(target);
    let test = compositor::composite(background, &resized, spec.insertion, &target.category, eval)?;
    if test.bbox != spec.gt_bbox {
        return Err(Error::InvalidInput(format!(
            "test image {}: composited bbox {:?} differs from planned {:?}; re-run `plan`",
            spec.id, test.bbox, spec.gt_bbox
        )));
    }
    let patch = test.mask.crop(test.bbox);
    let mut truths = Vec::with_capacity(probes.len());
    for p in probes {
        let w = p.window;
        let view = image::imageops::crop_imm(&test.image, w.x0, w.y0, w.side, w.side).to_image();
        save_png(&view, &probes_dir.join(protocol::crop_file_name(&p.probe_id)))?;
        let origin = (test.bbox.x0 - w.x0, test.bbox.y0 - w.y0);
        truths.push(GroundTruth {
            probe_id: p.probe_id.clone(),
            test_image_id: spec.id.clone(),
            major: p.major,
            dx: p.dx,
            dy: p.dy,
            category: test.eval_category.clone(),
            sub_category: test.sub_category.clone(),
            mask: crate::mask::Rle::from_patch(&patch, origin, w.side, w.side)?,
        });
    }
    Ok(truths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub test_images: usize,
    pub crops: usize,
    pub shards: usize,
}

/// Composites every test image, writes probe crops, ground truth and the
/// detector manifest.
pub fn generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    let plan = ExperimentPlan::read(cfg.output.join(PLAN_DIR))?;
    let catalog = catalog::load_catalog(&cfg.catalog)?;
    let probes_dir = cfg.output.join(protocol::PROBES_DIR);
    ensure_dir(&probes_dir)?;

    let mut by_image: HashMap<&str, Vec<&planner::ProbeSpec>> = HashMap::new();
    for p in &plan.probes {
        by_image.entry(p.test_image_id.as_str()).or_default().push(p);
    }
    let mut by_scene: BTreeMap<&str, Vec<&planner::TestImageSpec>> = BTreeMap::new();
    for t in &plan.test_images {
        by_scene.entry(t.scene_id.as_str()).or_default().push(t);
    }

    let workers = pool(cfg.workers)?;
    let mut truths: Vec<GroundTruth> = Vec::new();
    for (scene_id, specs) in by_scene {
        let scene = catalog
            .scene(scene_id)
            .ok_or_else(|| Error::InvalidInput(format!("plan refers to unknown scene `{scene_id}`")))?;
        let background = catalog.scene_image(scene)?;
        let chunks: Vec<Vec<GroundTruth>> = workers.install(|| {
            specs
                .par_iter()
                .map(|spec| {
                    let probes = by_image.get(spec.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                    render_test_image(&catalog, &plan, &background, spec, probes, &probes_dir)
                })
                .collect::<Result<_>>()
        })?;
        truths.extend(chunks.into_iter().flatten());
    }
    truths.sort_by(|a, b| a.probe_id.cmp(&b.probe_id));

    let truth_dir = cfg.output.join(TRUTH_DIR);
    ensure_dir(&truth_dir)?;
    write_jsonl(&truth_dir.join(TRUTH_FILE), &truths)?;

    let shards = cfg.shards.max(1);
    let crop = plan.meta.config.crop_dimension;
    let entries = plan
        .probes
        .iter()
        .enumerate()
        .map(|(i, p)| ManifestEntry {
            probe_id: p.probe_id.clone(),
            path: protocol::crop_file_name(&p.probe_id),
            width: crop,
            height: crop,
            shard: shard_name(i % shards),
        })
        .collect();
    let manifest = ProbeManifest::new(
        ExperimentMeta {
            seed: plan.meta.config.seed,
            sizes: plan.meta.config.sizes.clone(),
            crop_dimension: crop,
            grids: plan.meta.grids.clone(),
        },
        entries,
    );
    protocol::write_manifest(&manifest, &cfg.output)?;
    Ok(GenerateSummary {
        test_images: plan.test_images.len(),
        crops: plan.probes.len(),
        shards: manifest.shards().len(),
    })
}

pub fn shard_name(i: usize) -> String {
    format!("shard-{i:03}")
}

pub fn read_truth(run_dir: &Path) -> Result<Vec<GroundTruth>> {
    let path = run_dir.join(TRUTH_DIR).join(TRUTH_FILE);
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path,
            hint: "run `generate` first".into(),
        });
    }
    read_jsonl(&path)
}

/// Answers every shard with the mock detector.
pub fn mock_run(cfg: &RunConfig) -> Result<usize> {
    cfg.detector.mock.validate()?;
    let manifest = protocol::read_manifest(&cfg.output)?;
    let truths: HashMap<String, GroundTruth> = read_truth(&cfg.output)?
        .into_iter()
        .map(|g| (g.probe_id.clone(), g))
        .collect();
    let preds_dir = cfg.output.join(protocol::PREDS_DIR);
    ensure_dir(&preds_dir)?;
    for entry in std::fs::read_dir(&preds_dir).map_err(|e| Error::io(&preds_dir, e))? {
        let path = entry.map_err(|e| Error::io(&preds_dir, e))?.path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    let shards: Vec<&str> = manifest.shards().into_iter().collect();
    let workers = pool(cfg.workers)?;
    workers.install(|| {
        shards.par_iter().try_for_each(|shard| {
            let mut lines = Vec::new();
            for entry in manifest.probes.iter().filter(|p| p.shard == *shard) {
                let gt = truths.get(&entry.probe_id).ok_or_else(|| Error::MissingArtifact {
                    path: cfg.output.join(TRUTH_DIR).join(TRUTH_FILE),
                    hint: format!("no ground truth for probe `{}`; re-run `generate`", entry.probe_id),
                })?;
                let preds = mock::mock_detect(gt, &cfg.detector.mock, cfg.seed)?;
                lines.extend(protocol::lines_for_probe(&entry.probe_id, preds));
            }
            protocol::write_predictions(protocol::shard_path(&cfg.output, shard), &lines)
        })
    })?;
    Ok(manifest.probes.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub probes: usize,
    pub covered: usize,
    pub coverage: f64,
    pub cells: usize,
    pub pairs: usize,
    pub test_images: usize,
    pub infeasible_probes: usize,
}

pub fn evaluate(cfg: &RunConfig) -> Result<(Vec<CellMetrics>, EvalSummary)> {
    let plan = ExperimentPlan::read(cfg.output.join(PLAN_DIR))?;
    let manifest = protocol::read_manifest(&cfg.output)?;
    let truths = read_truth(&cfg.output)?;
    let preds = protocol::read_predictions(&cfg.output, &manifest)?;

    let workers = pool(cfg.workers)?;
    let matched: Vec<Option<MatchedResult>> = workers.install(|| {
        truths
            .par_iter()
            .map(|gt| {
                preds
                    .get(&gt.probe_id)
                    .map(|p| metrics::match_probe(&gt.probe_id, p, &gt.mask, &gt.category))
                    .transpose()
            })
            .collect::<Result<_>>()
    })?;
    let covered: Vec<(&GroundTruth, &MatchedResult)> = truths
        .iter()
        .zip(&matched)
        .filter_map(|(g, m)| m.as_ref().map(|m| (g, m)))
        .collect();
    let cells = metrics::aggregate(covered.iter().map(|(g, m)| (g.cell(), *m)))?;

    let eval_dir = cfg.output.join(EVAL_DIR);
    ensure_dir(&eval_dir)?;
    let results: Vec<&MatchedResult> = covered.iter().map(|(_, m)| *m).collect();
    write_jsonl(&eval_dir.join("matched.jsonl"), &results)?;
    metrics::write_cells_csv(&cells, eval_dir.join("cells.csv"))?;
    let summary = EvalSummary {
        probes: truths.len(),
        covered: covered.len(),
        coverage: if truths.is_empty() { 0.0 } else { covered.len() as f64 / truths.len() as f64 },
        cells: cells.len(),
        pairs: plan.meta.pair_count,
        test_images: plan.test_images.len(),
        infeasible_probes: plan.infeasible_probe_count(),
    };
    let path = eval_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok((cells, summary))
}

/// One heatmap (PNG + CSV) per size class and metric.
pub fn report(cfg: &RunConfig, metric_names: &[&str]) -> Result<Vec<PathBuf>> {
    let cells = metrics::read_cells_csv(cfg.output.join(EVAL_DIR).join("cells.csv"))?;
    let mut by_size: BTreeMap<u32, Vec<CellMetrics>> = BTreeMap::new();
    for c in cells {
        by_size.entry(c.size).or_default().push(c);
    }
    let dir = cfg.output.join(REPORT_DIR);
    let mut written = Vec::new();
    for (size, cells) in &by_size {
        for &m in metric_names {
            let stem = format!("m{size:03}_{m}");
            report::heatmap(cells, m)?.save(&dir, &stem)?;
            written.push(dir.join(format!("{stem}.png")));
        }
    }
    Ok(written)
}

/// Runs every stage; external detector mode stops after `generate`.
pub fn run_all(cfg: &RunConfig) -> Result<Option<EvalSummary>> {
    plan(cfg)?;
    generate(cfg)?;
    if cfg.detector.mode == DetectorMode::External {
        return Ok(None);
    }
    mock_run(cfg)?;
    let (_, summary) = evaluate(cfg)?;
    report(cfg, &CellMetrics::METRICS)?;
    Ok(Some(summary))
}
