//! A detector with a known, injected border deficit.
//!
//! Detection probability falls off exponentially with distance to the
//! nearest crop border and is multiplied by `kappa` when the target is
//! close to both borders of its corner.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::COCO_CATEGORIES;
use crate::error::{Error, Result};
use crate::mask::{BBox, Rle};
use crate::metrics::GroundTruth;
use crate::protocol::PredictionRecord;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationProfile {
    /// Detection probability far from any border.
    pub p0: f64,
    /// Penalty at the border.
    pub delta: f64,
    /// Decay length in pixels.
    pub lambda: f64,
    /// Corner multiplier, applied when both offsets are below `lambda`.
    pub kappa: f64,
    /// Probability that a detection carries the correct label.
    pub label_accuracy: f64,
    /// Half-width of the uniform noise added to the confidence.
    pub confidence_noise: f64,
    /// Largest erosion/dilation radius applied to the emitted mask.
    pub mask_radius: u32,
}

impl Default for DegradationProfile {
    fn default() -> Self {
        DegradationProfile {
            p0: 0.9,
            delta: 0.3,
            lambda: 30.0,
            kappa: 1.5,
            label_accuracy: 0.9,
            confidence_noise: 0.05,
            mask_radius: 2,
        }
    }
}

impl DegradationProfile {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("mock {name} must lie in [0, 1], got {v}")))
            }
        };
        unit("p0", self.p0)?;
        unit("delta", self.delta)?;
        unit("label_accuracy", self.label_accuracy)?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("mock lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("mock kappa must be >= 1, got {}", self.kappa)));
        }
        if !(self.confidence_noise >= 0.0 && self.confidence_noise.is_finite()) {
            return Err(Error::Config("mock confidence_noise must be >= 0".into()));
        }
        Ok(())
    }

    /// `clamp(p0 - delta * kappa_eff * exp(-min(dx, dy) / lambda), 0, 1)`.
    pub fn detection_probability(&self, dx: u32, dy: u32) -> f64 {
        let d = dx.min(dy) as f64;
        let corner = (dx as f64) < self.lambda && (dy as f64) < self.lambda;
        let k = if corner { self.kappa } else { 1.0 };
        (self.p0 - self.delta * k * (-d / self.lambda).exp()).clamp(0.0, 1.0)
    }
}

/// Zero or one prediction for the probe, reproducible per `(probe id, seed)`.
pub fn mock_detect(gt: &GroundTruth, profile: &DegradationProfile, seed: u64) -> Result<Vec<PredictionRecord>> {
    let mut rng = seed::keyed_rng(seed, &["mock", &gt.probe_id]);
    let p = profile.detection_probability(gt.dx, gt.dy);
    // Draw every variate up front so the stream layout is fixed.
    let detect_u: f64 = rng.random();
    let label_u: f64 = rng.random();
    let wrong_pick = rng.random_range(0..COCO_CATEGORIES.len() - 1);
    let noise_u: f64 = rng.random();
    let r = profile.mask_radius as i32;
    let radius = rng.random_range(-r..=r);
    if detect_u >= p {
        return Ok(Vec::new());
    }

    let label = if label_u < profile.label_accuracy {
        gt.category.clone()
    } else {
        let others: Vec<&str> = COCO_CATEGORIES.iter().copied().filter(|c| *c != gt.category).collect();
        others[wrong_pick.min(others.len() - 1)].to_string()
    };
    let confidence = (p + profile.confidence_noise * (2.0 * noise_u - 1.0)).clamp(0.0, 1.0);
    Ok(vec![PredictionRecord {
        probe_id: gt.probe_id.clone(),
        label,
        confidence,
        mask: perturb(&gt.mask, radius)?,
    }])
}

/// Erodes or dilates the mask within its bbox grown by `|radius|`; falls back
/// to the unchanged mask when erosion would empty it.
fn perturb(mask: &Rle, radius: i32) -> Result<Rle> {
    let Some(b) = mask.bbox() else {
        return Ok(mask.clone());
    };
    if radius == 0 {
        return Ok(mask.clone());
    }
    let grow = radius.unsigned_abs();
    let region = BBox {
        x0: b.x0.saturating_sub(grow),
        y0: b.y0.saturating_sub(grow),
        x1: (b.x1 + grow).min(mask.width()),
        y1: (b.y1 + grow).min(mask.height()),
    };
    let morphed = mask.to_patch(region).morph(radius);
    if morphed.is_empty() {
        return Ok(mask.clone());
    }
    Rle::from_patch(&morphed, (region.x0, region.y0), mask.width(), mask.height())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;

    fn gt(id: &str, dx: u32, dy: u32) -> GroundTruth {
        GroundTruth {
            probe_id: id.into(),
            test_image_id: "t".into(),
            major: 8,
            dx,
            dy,
            category: "bird".into(),
            sub_category: "bird_flying".into(),
            mask: Rle::encode(&BinaryMask::from_fn(32, 32, |x, y| {
                (dx..dx + 8).contains(&x) && (dy..dy + 6).contains(&y)
            })),
        }
    }

    #[test]
    fn no_penalty_gives_base_rate_everywhere() {
        let prof = DegradationProfile { delta: 0.0, ..Default::default() };
        for (dx, dy) in [(0, 0), (0, 350), (10, 10), (350, 350)] {
            assert_eq!(prof.detection_probability(dx, dy), prof.p0);
        }
    }

    #[test]
    fn sharp_corner_penalty_clamps_to_zero() {
        let prof = DegradationProfile { p0: 1.0, delta: 1.0, lambda: 1e-9, kappa: 1.5, ..Default::default() };
        assert_eq!(prof.detection_probability(0, 0), 0.0);
        assert_eq!(prof.detection_probability(0, 5), 0.0);
        assert_eq!(prof.detection_probability(5, 5), 1.0);
    }

    #[test]
    fn closed_form_values() {
        let prof = DegradationProfile::default();
        assert!((prof.detection_probability(0, 0) - 0.45).abs() < 1e-15);
        assert!((prof.detection_probability(0, 30) - 0.6).abs() < 1e-15);
        let far = prof.detection_probability(350, 350);
        assert!((far - (0.9 - 0.3 * (-350.0f64 / 30.0).exp())).abs() < 1e-15);
    }

    #[test]
    fn reproducible_per_probe_and_seed() {
        let prof = DegradationProfile::default();
        let g = gt("scene__t__m040__x000_y000", 2, 3);
        for seed in 0..20 {
            assert_eq!(mock_detect(&g, &prof, seed).unwrap(), mock_detect(&g, &prof, seed).unwrap());
        }
    }

    #[test]
    fn detections_overlap_ground_truth() {
        let prof = DegradationProfile { p0: 1.0, delta: 0.0, mask_radius: 3, ..Default::default() };
        for seed in 0..50 {
            let g = gt(&format!("p{seed}"), 1, 0);
            let preds = mock_detect(&g, &prof, seed).unwrap();
            assert_eq!(preds.len(), 1);
            assert!(preds[0].mask.intersection_area(&g.mask).unwrap() > 0);
            assert!((0.0..=1.0).contains(&preds[0].confidence));
        }
    }

    #[test]
    fn empirical_rate_matches_closed_form() {
        // 500 probes per cell; each cell within 3 binomial sigma.
        let prof = DegradationProfile::default();
        for (dx, dy) in [(0, 0), (0, 30), (10, 10), (30, 30), (350, 350)] {
            let p = prof.detection_probability(dx, dy);
            let g = |i: usize| GroundTruth { dx, dy, ..gt(&format!("c{dx}_{dy}_{i}"), 0, 0) };
            let hits = (0..500).filter(|&i| !mock_detect(&g(i), &prof, 0).unwrap().is_empty()).count();
            let sigma = (p * (1.0 - p) / 500.0).sqrt();
            let rate = hits as f64 / 500.0;
            assert!((rate - p).abs() <= 3.0 * sigma, "cell ({dx},{dy}): {rate} vs {p}");
        }
    }

    #[test]
    fn invalid_profiles() {
        assert!(DegradationProfile { lambda: 0.0, ..Default::default() }.validate().is_err());
        assert!(DegradationProfile { kappa: 0.5, ..Default::default() }.validate().is_err());
        assert!(DegradationProfile { p0: 1.5, ..Default::default() }.validate().is_err());
        assert!(DegradationProfile::default().validate().is_ok());
    }
}
