//! Directory-based exchange with an external detector.
//!
//! The harness writes `probes/manifest.json` and one PNG per probe. A
//! detector answers with `preds/<shard>.jsonl`, one JSON object per line:
//! either a prediction or a miss marker for a probe with no detections.
//! Field-level details live in `PROTOCOL.md` at the repository root.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Rle;
use crate::planner::OffsetGrid;

pub const MANIFEST_FORMAT: &str = "borderprobe-probes/1";
pub const PROBES_DIR: &str = "probes";
pub const PREDS_DIR: &str = "preds";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMeta {
    pub seed: u64,
    pub sizes: Vec<f64>,
    pub crop_dimension: u32,
    pub grids: BTreeMap<u32, OffsetGrid>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub probe_id: String,
    /// Relative to the directory holding the manifest.
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub shard: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeManifest {
    pub format: String,
    pub meta: ExperimentMeta,
    pub probes: Vec<ManifestEntry>,
}

impl ProbeManifest {
    pub fn new(meta: ExperimentMeta, probes: Vec<ManifestEntry>) -> Self {
        ProbeManifest {
            format: MANIFEST_FORMAT.to_string(),
            meta,
            probes,
        }
    }

    pub fn entry(&self, probe_id: &str) -> Option<&ManifestEntry> {
        self.probes.iter().find(|p| p.probe_id == probe_id)
    }

    pub fn shards(&self) -> BTreeSet<&str> {
        self.probes.iter().map(|p| p.shard.as_str()).collect()
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in &self.probes {
            if !seen.insert(p.probe_id.as_str()) {
                return Err(Error::protocol(&p.probe_id, "duplicate probe id in manifest"));
            }
        }
        Ok(())
    }
}

pub fn crop_file_name(probe_id: &str) -> String {
    format!("{probe_id}.png")
}

/// Writes `<out_dir>/probes/manifest.json`. Crops must already exist.
pub fn write_manifest(manifest: &ProbeManifest, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    manifest.check_unique()?;
    let dir = out_dir.as_ref().join(PROBES_DIR);
    for p in &manifest.probes {
        let crop = dir.join(&p.path);
        if !crop.is_file() {
            return Err(Error::MissingArtifact {
                path: crop,
                hint: format!("crop for probe `{}` was not materialized", p.probe_id),
            });
        }
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    write_atomic(&path, format!("{text}\n").as_bytes())?;
    Ok(path)
}

pub fn read_manifest(run_dir: impl AsRef<Path>) -> Result<ProbeManifest> {
    let path = run_dir.as_ref().join(PROBES_DIR).join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path,
            hint: "run `generate` first".into(),
        });
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ProbeManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported manifest format `{}`",
            path.display(),
            manifest.format
        )));
    }
    manifest.check_unique()?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probe_id: String,
    /// Evaluation category.
    pub label: String,
    pub confidence: f64,
    /// Row-major RLE at crop resolution.
    pub mask: Rle,
}

/// One line of a prediction shard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictionLine {
    Prediction(PredictionRecord),
    /// The detector processed the probe and found nothing.
    Miss { probe_id: String, miss: bool },
}

impl PredictionLine {
    pub fn probe_id(&self) -> &str {
        match self {
            PredictionLine::Prediction(r) => &r.probe_id,
            PredictionLine::Miss { probe_id, .. } => probe_id,
        }
    }

    pub fn miss(probe_id: impl Into<String>) -> Self {
        PredictionLine::Miss {
            probe_id: probe_id.into(),
            miss: true,
        }
    }
}

/// Lines for one probe's detections; a miss marker when there are none.
pub fn lines_for_probe(probe_id: &str, records: Vec<PredictionRecord>) -> Vec<PredictionLine> {
    if records.is_empty() {
        vec![PredictionLine::miss(probe_id)]
    } else {
        records.into_iter().map(PredictionLine::Prediction).collect()
    }
}

/// Predictions for every probe the detector answered, keyed by probe id.
/// Covered probes with no detections map to an empty list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    pub by_probe: BTreeMap<String, Vec<PredictionRecord>>,
}

impl PredictionSet {
    pub fn covered(&self) -> usize {
        self.by_probe.len()
    }

    pub fn get(&self, probe_id: &str) -> Option<&[PredictionRecord]> {
        self.by_probe.get(probe_id).map(Vec::as_slice)
    }

    /// Lines in canonical order: by probe id, then record order.
    pub fn to_lines(&self) -> Vec<PredictionLine> {
        self.by_probe
            .iter()
            .flat_map(|(id, recs)| lines_for_probe(id, recs.clone()))
            .collect()
    }
}

pub fn shard_path(run_dir: impl AsRef<Path>, shard: &str) -> PathBuf {
    run_dir.as_ref().join(PREDS_DIR).join(format!("{shard}.jsonl"))
}

/// Writes a whole shard file atomically.
pub fn write_predictions(path: impl AsRef<Path>, lines: &[PredictionLine]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buf = Vec::new();
    for line in lines {
        let text =
            serde_json::to_string(line).map_err(|e| Error::json(path.display().to_string(), e))?;
        buf.extend_from_slice(text.as_bytes());
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn validate_record(rec: &PredictionRecord, crop: (u32, u32)) -> Result<()> {
    if !(0.0..=1.0).contains(&rec.confidence) {
        return Err(Error::protocol(
            &rec.probe_id,
            format!("confidence {} outside [0, 1]", rec.confidence),
        ));
    }
    if rec.label.is_empty() {
        return Err(Error::protocol(&rec.probe_id, "empty label"));
    }
    if rec.mask.dimensions() != crop {
        return Err(Error::protocol(
            &rec.probe_id,
            format!(
                "mask is {}x{}, crop is {}x{}",
                rec.mask.width(),
                rec.mask.height(),
                crop.0,
                crop.1
            ),
        ));
    }
    rec.mask
        .validate()
        .map_err(|reason| Error::protocol(&rec.probe_id, reason))
}

/// Parses one shard against the manifest.
pub fn parse_shard(text: &str, origin: &str, manifest: &ProbeManifest) -> Result<Vec<PredictionLine>> {
    let dims: BTreeMap<&str, (u32, u32)> = manifest
        .probes
        .iter()
        .map(|p| (p.probe_id.as_str(), (p.width, p.height)))
        .collect();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: PredictionLine =
            serde_json::from_str(raw).map_err(|e| Error::json(format!("{origin}:{}", i + 1), e))?;
        let Some(&crop) = dims.get(line.probe_id()) else {
            return Err(Error::protocol(line.probe_id(), format!("not in the manifest ({origin}:{})", i + 1)));
        };
        match &line {
            PredictionLine::Prediction(rec) => validate_record(rec, crop)?,
            PredictionLine::Miss { probe_id, miss } => {
                if !miss {
                    return Err(Error::protocol(probe_id, "miss marker must be `true`"));
                }
            }
        }
        out.push(line);
    }
    Ok(out)
}

/// Merges every `preds/*.jsonl` shard, in file-name order.
///
/// A probe must be answered by exactly one shard, and either by prediction
/// lines or by a single miss marker. Probes never answered are uncovered.
pub fn read_predictions(run_dir: impl AsRef<Path>, manifest: &ProbeManifest) -> Result<PredictionSet> {
    let dir = run_dir.as_ref().join(PREDS_DIR);
    if !dir.is_dir() {
        return Err(Error::MissingArtifact {
            path: dir,
            hint: "run `mock-run` or place detector output there".into(),
        });
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();

    let mut set = PredictionSet::default();
    let mut owner: BTreeMap<String, String> = BTreeMap::new();
    let mut missed: BTreeSet<String> = BTreeSet::new();
    for file in &files {
        let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
        let origin = file.display().to_string();
        for line in parse_shard(&text, &origin, manifest)? {
            let id = line.probe_id().to_string();
            match owner.get(&id) {
                Some(prev) if prev != &origin => {
                    return Err(Error::protocol(
                        &id,
                        format!("duplicate probe id: answered in both {prev} and {origin}"),
                    ));
                }
                None => {
                    owner.insert(id.clone(), origin.clone());
                }
                _ => {}
            }
            let recs = set.by_probe.entry(id.clone()).or_default();
            match line {
                PredictionLine::Miss { .. } => {
                    if !missed.insert(id.clone()) {
                        return Err(Error::protocol(&id, "duplicate miss marker"));
                    }
                    if !recs.is_empty() {
                        return Err(Error::protocol(&id, "miss marker alongside predictions"));
                    }
                }
                PredictionLine::Prediction(rec) => {
                    if missed.contains(&id) {
                        return Err(Error::protocol(&id, "miss marker alongside predictions"));
                    }
                    recs.push(rec);
                }
            }
        }
    }
    Ok(set)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn manifest(ids: &[&str], side: u32) -> ProbeManifest {
        ProbeManifest::new(
            ExperimentMeta {
                seed: 1,
                sizes: vec![0.05],
                crop_dimension: side,
                grids: BTreeMap::new(),
            },
            ids.iter()
                .map(|id| ManifestEntry {
                    probe_id: id.to_string(),
                    path: crop_file_name(id),
                    width: side,
                    height: side,
                    shard: "shard-000".into(),
                })
                .collect(),
        )
    }

    fn record(id: &str, label: &str, conf: f64) -> PredictionRecord {
        let m = BinaryMask::from_fn(4, 4, |x, y| x + y < 3);
        PredictionRecord {
            probe_id: id.into(),
            label: label.into(),
            confidence: conf,
            mask: Rle::encode(&m),
        }
    }

    #[test]
    fn three_record_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a", "b"], 4);
        let lines = vec![
            PredictionLine::Prediction(record("a", "bird", 0.25)),
            PredictionLine::Prediction(record("a", "boat", 0.1 + 0.2)),
            PredictionLine::miss("b"),
        ];
        write_predictions(shard_path(dir.path(), "shard-000"), &lines).unwrap();
        let set = read_predictions(dir.path(), &m).unwrap();
        assert_eq!(set.to_lines(), lines);
        assert_eq!(set.get("b"), Some(&[][..]));
        assert_eq!(set.covered(), 2);
    }

    #[test]
    fn confidence_out_of_range_rejected() {
        let m = manifest(&["a"], 4);
        let line = serde_json::to_string(&record("a", "bird", 1.2)).unwrap();
        let err = parse_shard(&line, "t", &m).unwrap_err();
        assert!(matches!(err, Error::Protocol { ref probe_id, .. } if probe_id == "a"), "{err}");
    }

    #[test]
    fn rle_length_mismatch_rejected() {
        let m = manifest(&["a"], 4);
        let mut rec = record("a", "bird", 0.5);
        rec.mask.counts.push(3);
        let line = serde_json::to_string(&rec).unwrap();
        assert!(parse_shard(&line, "t", &m).is_err());
        let m8 = manifest(&["a"], 8);
        let line = serde_json::to_string(&record("a", "bird", 0.5)).unwrap();
        assert!(parse_shard(&line, "t", &m8).is_err());
    }

    #[test]
    fn unknown_probe_rejected() {
        let m = manifest(&["a"], 4);
        let line = serde_json::to_string(&PredictionLine::miss("zzz")).unwrap();
        assert!(parse_shard(&line, "t", &m).is_err());
    }

    #[test]
    fn duplicate_and_conflicting_answers() {
        let m = manifest(&["a"], 4);
        let dir = tempfile::tempdir().unwrap();
        write_predictions(shard_path(dir.path(), "s0"), &[PredictionLine::miss("a")]).unwrap();
        write_predictions(shard_path(dir.path(), "s1"), &[PredictionLine::miss("a")]).unwrap();
        assert!(read_predictions(dir.path(), &m).is_err());

        let dir = tempfile::tempdir().unwrap();
        write_predictions(
            shard_path(dir.path(), "s0"),
            &[PredictionLine::Prediction(record("a", "x", 0.5)), PredictionLine::miss("a")],
        )
        .unwrap();
        assert!(read_predictions(dir.path(), &m).is_err());
    }

    #[test]
    fn unanswered_probe_is_uncovered() {
        let m = manifest(&["a", "b"], 4);
        let dir = tempfile::tempdir().unwrap();
        write_predictions(shard_path(dir.path(), "s0"), &[PredictionLine::miss("a")]).unwrap();
        let set = read_predictions(dir.path(), &m).unwrap();
        assert_eq!(set.covered(), 1);
        assert!(set.get("b").is_none());
    }

    #[test]
    fn manifest_requires_crops_and_unique_ids() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a"], 4);
        assert!(matches!(write_manifest(&m, dir.path()), Err(Error::MissingArtifact { .. })));
        std::fs::create_dir_all(dir.path().join(PROBES_DIR)).unwrap();
        std::fs::write(dir.path().join(PROBES_DIR).join("a.png"), b"").unwrap();
        write_manifest(&m, dir.path()).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert!(write_manifest(&manifest(&["a", "a"], 4), dir.path()).is_err());
    }
}
