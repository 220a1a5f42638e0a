//! Matching predictions to ground truth and per-cell aggregation.
//!
//! A prediction counts only if its mask shares at least one pixel with the
//! ground-truth mask. Among those, the top prediction is the most confident
//! one; the accurate prediction is the most confident one whose label is the
//! evaluation category of the target.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Rle;
use crate::protocol::PredictionRecord;

/// Harness-side truth for one probe, never shown to the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub probe_id: String,
    pub test_image_id: String,
    pub major: u32,
    pub dx: u32,
    pub dy: u32,
    /// Evaluation category after collapsing sub-categories.
    pub category: String,
    pub sub_category: String,
    /// Row-major RLE at crop resolution.
    pub mask: Rle,
}

impl GroundTruth {
    pub fn cell(&self) -> CellKey {
        CellKey {
            size: self.major,
            dx: self.dx,
            dy: self.dy,
        }
    }
}

/// Predictions sharing at least one pixel with `gt`, in input order.
pub fn filter_overlapping<'a>(
    predictions: &'a [PredictionRecord],
    gt: &Rle,
) -> Result<Vec<&'a PredictionRecord>> {
    let mut kept = Vec::new();
    for p in predictions {
        if gt.intersection_area(&p.mask)? > 0 {
            kept.push(p);
        }
    }
    Ok(kept)
}

pub fn iou(a: &Rle, b: &Rle) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Err(Error::UndefinedIou);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopPrediction {
    pub confidence: f64,
    pub iou: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuratePrediction {
    pub confidence: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedResult {
    pub probe_id: String,
    pub top: Option<TopPrediction>,
    pub accurate: Option<AccuratePrediction>,
}

#[derive(Clone, Copy)]
struct Candidate<'a> {
    confidence: f64,
    iou: f64,
    label: &'a str,
}

/// Higher confidence, then higher IoU, then smaller label. Equal keys keep
/// the earlier prediction.
fn outranks(a: &Candidate, b: &Candidate) -> bool {
    match a.confidence.total_cmp(&b.confidence) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    match a.iou.total_cmp(&b.iou) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    a.label < b.label
}

pub fn match_probe(
    probe_id: &str,
    predictions: &[PredictionRecord],
    gt_mask: &Rle,
    gt_category: &str,
) -> Result<MatchedResult> {
    let gt_area = gt_mask.area();
    let mut top: Option<Candidate> = None;
    let mut accurate: Option<Candidate> = None;
    for p in predictions {
        let inter = gt_mask.intersection_area(&p.mask)?;
        if inter == 0 {
            continue;
        }
        let c = Candidate {
            confidence: p.confidence,
            iou: inter as f64 / (gt_area + p.mask.area() - inter) as f64,
            label: &p.label,
        };
        if p.label == gt_category && accurate.as_ref().is_none_or(|b| outranks(&c, b)) {
            accurate = Some(c);
        }
        if top.as_ref().is_none_or(|b| outranks(&c, b)) {
            top = Some(c);
        }
    }
    Ok(MatchedResult {
        probe_id: probe_id.to_string(),
        top: top.map(|c| TopPrediction {
            confidence: c.confidence,
            iou: c.iou,
            label: c.label.to_string(),
        }),
        accurate: accurate.map(|c| AccuratePrediction {
            confidence: c.confidence,
            iou: c.iou,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    /// Size class as the target's major dimension in pixels.
    pub size: u32,
    pub dx: u32,
    pub dy: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub size: u32,
    pub dx: u32,
    pub dy: u32,
    pub n: u64,
    pub r_t: f64,
    pub r_a: f64,
    pub c_t: Option<f64>,
    pub c_a: Option<f64>,
    pub s_t: Option<f64>,
    pub s_a: Option<f64>,
}

impl CellMetrics {
    pub fn key(&self) -> CellKey {
        CellKey {
            size: self.size,
            dx: self.dx,
            dy: self.dy,
        }
    }

    pub const METRICS: [&'static str; 6] = ["r_t", "r_a", "c_t", "c_a", "s_t", "s_a"];

    pub fn metric(&self, name: &str) -> Result<Option<f64>> {
        Ok(match name {
            "r_t" => Some(self.r_t),
            "r_a" => Some(self.r_a),
            "c_t" => self.c_t,
            "c_a" => self.c_a,
            "s_t" => self.s_t,
            "s_a" => self.s_a,
            _ => return Err(Error::UnknownMetric(name.to_string())),
        })
    }
}

/// Order-independent mean: values are summed in sorted order.
fn mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn aggregate_cell(key: CellKey, results: &[&MatchedResult]) -> Result<CellMetrics> {
    if results.is_empty() {
        return Err(Error::EmptyCell(format!(
            "size {} dx {} dy {}",
            key.size, key.dx, key.dy
        )));
    }
    let n = results.len();
    let tops: Vec<&TopPrediction> = results.iter().filter_map(|r| r.top.as_ref()).collect();
    let accs: Vec<&AccuratePrediction> = results.iter().filter_map(|r| r.accurate.as_ref()).collect();
    Ok(CellMetrics {
        size: key.size,
        dx: key.dx,
        dy: key.dy,
        n: n as u64,
        r_t: tops.len() as f64 / n as f64,
        r_a: accs.len() as f64 / n as f64,
        c_t: mean(tops.iter().map(|t| t.confidence).collect()),
        c_a: mean(accs.iter().map(|a| a.confidence).collect()),
        s_t: mean(tops.iter().map(|t| t.iou).collect()),
        s_a: mean(accs.iter().map(|a| a.iou).collect()),
    })
}

/// Groups results by cell and aggregates each, sorted by cell key.
pub fn aggregate<'a>(
    results: impl IntoIterator<Item = (CellKey, &'a MatchedResult)>,
) -> Result<Vec<CellMetrics>> {
    let mut groups: BTreeMap<CellKey, Vec<&MatchedResult>> = BTreeMap::new();
    for (key, r) in results {
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| aggregate_cell(key, &rs))
        .collect()
}

pub fn write_cells_csv(cells: &[CellMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cells_to_csv(cells)?).map_err(|e| Error::io(path, e))
}

pub fn cells_to_csv(cells: &[CellMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cells {
        w.serialize(c)
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn cells_from_csv(text: &str) -> Result<Vec<CellMetrics>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::InvalidInput(format!("cells csv row {}: {e}", i + 1))))
        .collect()
}

pub fn read_cells_csv(path: impl AsRef<Path>) -> Result<Vec<CellMetrics>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run `evaluate` first".into(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cells_from_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;
    use proptest::prelude::*;

    fn square(x0: u32, y0: u32, side: u32) -> Rle {
        Rle::encode(&BinaryMask::from_fn(16, 16, |x, y| {
            x >= x0 && y >= y0 && x < x0 + side && y < y0 + side
        }))
    }

    fn pred(label: &str, conf: f64, mask: Rle) -> PredictionRecord {
        PredictionRecord {
            probe_id: "p".into(),
            label: label.into(),
            confidence: conf,
            mask,
        }
    }

    #[test]
    fn iou_examples() {
        let a = square(2, 2, 4);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &square(10, 10, 2)).unwrap(), 0.0);
        // Two 2x2 squares sharing one column: 2 / 6.
        assert_eq!(iou(&square(0, 0, 2), &square(1, 0, 2)).unwrap(), 2.0 / 6.0);
        assert!(matches!(iou(&Rle::empty(16, 16), &Rle::empty(16, 16)), Err(Error::UndefinedIou)));
        assert!(matches!(iou(&a, &Rle::empty(8, 8)), Err(Error::MaskMismatch { .. })));
    }

    #[test]
    fn overlap_filter() {
        let gt = square(4, 4, 4);
        let preds = vec![
            pred("a", 0.1, square(0, 0, 2)),
            pred("b", 0.2, square(7, 7, 3)),
            pred("c", 0.3, square(12, 0, 3)),
            pred("d", 0.4, square(5, 5, 1)),
            pred("e", 0.5, square(0, 12, 2)),
        ];
        let kept: Vec<_> = filter_overlapping(&preds, &gt).unwrap().iter().map(|p| p.label.clone()).collect();
        assert_eq!(kept, ["b", "d"]);
        let one_pixel = vec![pred("x", 0.9, square(7, 7, 1))];
        assert_eq!(filter_overlapping(&one_pixel, &gt).unwrap().len(), 1);
    }

    #[test]
    fn single_correct_prediction() {
        // gt 5 px wide, prediction covers 3 of them plus 2 more: IoU 3/7.
        let gt = Rle::encode(&BinaryMask::from_fn(16, 16, |x, y| y == 0 && x < 5));
        let pm = Rle::encode(&BinaryMask::from_fn(16, 16, |x, y| y == 0 && (2..7).contains(&x)));
        let r = match_probe("p", &[pred("bird", 0.8, pm)], &gt, "bird").unwrap();
        let top = r.top.unwrap();
        assert_eq!((top.confidence, top.iou), (0.8, 3.0 / 7.0));
        assert_eq!(r.accurate.unwrap(), AccuratePrediction { confidence: 0.8, iou: 3.0 / 7.0 });
    }

    #[test]
    fn wrong_label_wins_top_only() {
        let gt = square(4, 4, 4);
        let preds = vec![pred("dog", 0.9, gt.clone()), pred("bird", 0.7, square(4, 4, 2))];
        let r = match_probe("p", &preds, &gt, "bird").unwrap();
        assert_eq!(r.top.as_ref().unwrap().confidence, 0.9);
        assert_eq!(r.top.unwrap().label, "dog");
        assert_eq!(r.accurate.unwrap().confidence, 0.7);
    }

    #[test]
    fn tie_breaks() {
        let gt = square(4, 4, 4);
        let preds = vec![
            pred("zebra", 0.5, square(4, 4, 2)),
            pred("zebra", 0.5, gt.clone()),
            pred("cat", 0.5, gt.clone()),
        ];
        let r = match_probe("p", &preds, &gt, "zebra").unwrap();
        let top = r.top.unwrap();
        assert_eq!((top.iou, top.label.as_str()), (1.0, "cat"));
        assert_eq!(r.accurate.unwrap().iou, 1.0);
    }

    #[test]
    fn empty_or_disjoint_gives_nothing() {
        let gt = square(4, 4, 4);
        let r = match_probe("p", &[pred("bird", 0.9, square(12, 12, 2))], &gt, "bird").unwrap();
        assert!(r.top.is_none() && r.accurate.is_none());
    }

    fn result(top: Option<(f64, f64)>, acc: Option<(f64, f64)>) -> MatchedResult {
        MatchedResult {
            probe_id: "p".into(),
            top: top.map(|(c, s)| TopPrediction { confidence: c, iou: s, label: "x".into() }),
            accurate: acc.map(|(c, s)| AccuratePrediction { confidence: c, iou: s }),
        }
    }

    const KEY: CellKey = CellKey { size: 40, dx: 0, dy: 0 };

    #[test]
    fn aggregate_counts() {
        let rs = [
            result(Some((0.9, 0.8)), Some((0.9, 0.8))),
            result(Some((0.7, 0.6)), Some((0.5, 0.4))),
            result(Some((0.5, 0.5)), None),
            result(None, None),
        ];
        let refs: Vec<_> = rs.iter().collect();
        let m = aggregate_cell(KEY, &refs).unwrap();
        assert_eq!((m.n, m.r_t, m.r_a), (4, 0.75, 0.5));
        assert!((m.c_t.unwrap() - 0.7).abs() < 1e-15);
        assert!((m.c_a.unwrap() - 0.7).abs() < 1e-15);
        assert!((m.s_t.unwrap() - 1.9 / 3.0).abs() < 1e-15);
        assert!((m.s_a.unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn all_misses() {
        let rs = [result(None, None), result(None, None)];
        let m = aggregate_cell(KEY, &rs.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!((m.r_t, m.r_a, m.c_t, m.s_a), (0.0, 0.0, None, None));
        assert!(matches!(aggregate_cell(KEY, &[]), Err(Error::EmptyCell(_))));
    }

    #[test]
    fn ten_result_fixture() {
        // Hand tally: tops at 7 probes, accurate at 4.
        let rs = [
            result(Some((0.95, 0.90)), Some((0.95, 0.90))),
            result(Some((0.80, 0.70)), None),
            result(None, None),
            result(Some((0.60, 0.50)), Some((0.40, 0.30))),
            result(Some((0.55, 0.65)), None),
            result(None, None),
            result(Some((0.99, 1.00)), Some((0.99, 1.00))),
            result(Some((0.30, 0.20)), None),
            result(None, None),
            result(Some((0.70, 0.75)), Some((0.70, 0.75))),
        ];
        let m = aggregate_cell(KEY, &rs.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!((m.n, m.r_t, m.r_a), (10, 0.7, 0.4));
        assert!((m.c_t.unwrap() - 4.89 / 7.0).abs() < 1e-12);
        assert!((m.s_t.unwrap() - 4.70 / 7.0).abs() < 1e-12);
        assert!((m.c_a.unwrap() - 3.04 / 4.0).abs() < 1e-12);
        assert!((m.s_a.unwrap() - 2.95 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip_with_absent_fields() {
        let cells = vec![
            CellMetrics { size: 40, dx: 0, dy: 2, n: 3, r_t: 1.0 / 3.0, r_a: 0.0, c_t: Some(0.1 + 0.2), c_a: None, s_t: Some(1e-7), s_a: None },
            CellMetrics { size: 64, dx: 350, dy: 0, n: 1, r_t: 0.0, r_a: 0.0, c_t: None, c_a: None, s_t: None, s_a: None },
        ];
        let text = cells_to_csv(&cells).unwrap();
        assert!(text.starts_with("size,dx,dy,n,r_t,r_a,c_t,c_a,s_t,s_a\n"));
        assert_eq!(text.lines().nth(2).unwrap(), "64,350,0,1,0.0,0.0,,,,");
        assert_eq!(cells_from_csv(&text).unwrap(), cells);
    }

    #[test]
    fn unknown_metric() {
        let m = aggregate_cell(KEY, &[&result(None, None)]).unwrap();
        assert!(matches!(m.metric("mAP"), Err(Error::UnknownMetric(_))));
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_one_iff_equal(
            a in proptest::collection::vec(any::<bool>(), 64),
            b in proptest::collection::vec(any::<bool>(), 64),
        ) {
            let ma = Rle::encode(&BinaryMask::from_fn(8, 8, |x, y| a[(y * 8 + x) as usize]));
            let mb = Rle::encode(&BinaryMask::from_fn(8, 8, |x, y| b[(y * 8 + x) as usize]));
            match (iou(&ma, &mb), iou(&mb, &ma)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x, y);
                    prop_assert_eq!(x == 1.0, a == b);
                }
                (Err(_), Err(_)) => prop_assert!(ma.is_empty() && mb.is_empty()),
                _ => prop_assert!(false, "asymmetric error"),
            }
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            raw in proptest::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..1.0, 0.01f64..1.0), 1..40),
            seed in any::<u64>(),
        ) {
            let rs: Vec<MatchedResult> = raw.iter().map(|&(t, a, c, s)| {
                result(t.then_some((c, s)), (t && a).then_some((c * 0.5, s)))
            }).collect();
            let mut shuffled: Vec<&MatchedResult> = rs.iter().collect();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut crate::seed::keyed_rng(seed, &["perm"]));
            let m1 = aggregate_cell(KEY, &rs.iter().collect::<Vec<_>>()).unwrap();
            let m2 = aggregate_cell(KEY, &shuffled).unwrap();
            prop_assert_eq!(&m1, &m2);
            prop_assert!(m1.r_a <= m1.r_t);
        }

        #[test]
        fn monotone_confidence_transform_keeps_argmax(
            preds in proptest::collection::vec((0u32..12, 0u32..12, 1u32..5, 0.0f64..1.0, 0usize..3), 0..8),
        ) {
            let labels = ["bird", "boat", "cat"];
            let gt = square(5, 5, 5);
            let original: Vec<PredictionRecord> = preds.iter()
                .map(|&(x, y, s, c, l)| pred(labels[l], c, square(x, y, s)))
                .collect();
            let squashed: Vec<PredictionRecord> = original.iter()
                .map(|p| PredictionRecord { confidence: p.confidence * 0.5, ..p.clone() })
                .collect();
            let a = match_probe("p", &original, &gt, "bird").unwrap();
            let b = match_probe("p", &squashed, &gt, "bird").unwrap();
            prop_assert_eq!(a.top.as_ref().map(|t| (t.iou, t.label.clone())), b.top.as_ref().map(|t| (t.iou, t.label.clone())));
            prop_assert_eq!(a.accurate.as_ref().map(|t| t.iou), b.accurate.as_ref().map(|t| t.iou));
        }
    }
}
