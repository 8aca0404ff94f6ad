//! Zeroes heatmap segments that lie mostly outside the brain mask.

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::explainer::{top_segments, Heatmap, OrderedImportances};
use crate::imagecore::BinaryMask;
use crate::maskgen::{BrainMaskResult, DetectorKind};
use crate::segmentation::SegmentMap;

/// Absolute slack, in pixels, on the retention comparison so that decimal
/// fractions such as 0.8 keep exact ratios like 8/10 inclusive.
const PIXEL_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    pub inside_fraction: f64,
    pub fallback_on_degenerate: bool,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            inside_fraction: 0.8,
            fallback_on_degenerate: true,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inside_fraction > 0.0 && self.inside_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "inside_fraction {} must lie in (0, 1]",
                self.inside_fraction
            )));
        }
        Ok(())
    }
}

/// A heatmap after refinement, with the detector used and any warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedHeatmap {
    pub heatmap: Heatmap,
    pub detector: DetectorKind,
    pub warnings: Vec<String>,
}

impl RefinedHeatmap {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("refined heatmap serializes")
    }
}

impl Serialize for RefinedHeatmap {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let hm = &self.heatmap;
        let mut s = serializer.serialize_struct("RefinedHeatmap", 7)?;
        s.serialize_field("intercept", &hm.intercept)?;
        s.serialize_field("importances", &OrderedImportances(hm.importances()))?;
        s.serialize_field("num_segments", &hm.num_segments())?;
        s.serialize_field("seed", &hm.seed)?;
        s.serialize_field("refined", &true)?;
        s.serialize_field("detector", &self.detector)?;
        s.serialize_field("warnings", &self.warnings)?;
        s.end()
    }
}

/// Per segment, whether at least `inside_fraction` of its pixels are in `mask`.
pub fn retained_segments(seg: &SegmentMap, mask: &BinaryMask, inside_fraction: f64) -> Result<Vec<bool>> {
    if seg.dims() != mask.dims() {
        return Err(Error::ShapeMismatch(format!(
            "segment map {:?} vs mask {:?}",
            seg.dims(),
            mask.dims()
        )));
    }
    let mut inside = vec![0usize; seg.num_segments()];
    let mut total = vec![0usize; seg.num_segments()];
    for (l, m) in seg.labels().iter().zip(mask.bits()) {
        total[*l as usize] += 1;
        inside[*l as usize] += usize::from(*m);
    }
    Ok(inside
        .iter()
        .zip(&total)
        .map(|(i, t)| *i as f64 >= inside_fraction * *t as f64 - PIXEL_SLACK)
        .collect())
}

/// Keeps the importance of each segment with enough pixels inside the brain
/// mask and sets the others to 0. With a degenerate mask and fallback
/// enabled the heatmap passes through unchanged, with a warning.
pub fn refine_heatmap(hm: &Heatmap, seg: &SegmentMap, bm: &BrainMaskResult, params: &RefineParams) -> Result<RefinedHeatmap> {
    params.validate()?;
    if hm.num_segments() != seg.num_segments() {
        return Err(Error::ShapeMismatch(format!(
            "heatmap has {} segments, segment map {}",
            hm.num_segments(),
            seg.num_segments()
        )));
    }
    let retained = retained_segments(seg, &bm.mask, params.inside_fraction)?;
    let mut warnings = Vec::new();
    if let Some(flag) = bm.degenerate {
        if params.fallback_on_degenerate {
            warnings.push(format!("{} brain mask is degenerate ({flag}); heatmap left unrefined", bm.detector));
            return Ok(RefinedHeatmap {
                heatmap: hm.clone(),
                detector: bm.detector,
                warnings,
            });
        }
        warnings.push(format!("refined against a degenerate {} brain mask ({flag})", bm.detector));
    }
    let mut out = hm.clone();
    for (id, keep) in retained.iter().enumerate() {
        if !keep {
            out.set_importance(id, 0.0);
        }
    }
    Ok(RefinedHeatmap {
        heatmap: out,
        detector: bm.detector,
        warnings,
    })
}

/// Union of the pixels of the top `n` segments.
pub fn explanation_pixels(hm: &Heatmap, seg: &SegmentMap, n: usize) -> Result<BinaryMask> {
    if hm.num_segments() != seg.num_segments() {
        return Err(Error::ShapeMismatch(format!(
            "heatmap has {} segments, segment map {}",
            hm.num_segments(),
            seg.num_segments()
        )));
    }
    let mut chosen = vec![false; seg.num_segments()];
    for id in top_segments(hm, n) {
        chosen[id as usize] = true;
    }
    let (w, h) = seg.dims();
    Ok(BinaryMask::from_bits(w, h, seg.labels().iter().map(|l| chosen[*l as usize]).collect()).expect("same dimensions"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgen::Degeneracy;
    use proptest::prelude::*;

    fn result(mask: BinaryMask, degenerate: Option<Degeneracy>) -> BrainMaskResult {
        BrainMaskResult {
            mask,
            detector: DetectorKind::Canny,
            degenerate,
        }
    }

    /// Two 10-pixel rows as segments 0 and 1.
    fn rows() -> SegmentMap {
        SegmentMap::from_labels(10, 2, (0..20).map(|i| (i / 10) as u32).collect()).unwrap()
    }

    #[test]
    fn exactly_eighty_percent_is_retained() {
        let mask = BinaryMask::from_fn(10, 2, |x, y| if y == 0 { x < 8 } else { x < 7 });
        let hm = Heatmap::new(vec![0.4, 0.6], 0.1, 0).unwrap();
        let r = refine_heatmap(&hm, &rows(), &result(mask, None), &RefineParams::default()).unwrap();
        assert_eq!(r.heatmap.importances(), &[0.4, 0.0]);
        assert_eq!(r.heatmap.intercept, 0.1);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn full_mask_keeps_everything() {
        let hm = Heatmap::new(vec![0.4, -0.6], 0.0, 0).unwrap();
        let r = refine_heatmap(&hm, &rows(), &result(BinaryMask::full(10, 2), None), &RefineParams::default()).unwrap();
        assert_eq!(r.heatmap, hm);
    }

    #[test]
    fn degenerate_mask_falls_back_with_warning() {
        let hm = Heatmap::new(vec![0.4, 0.6], 0.0, 0).unwrap();
        let bm = result(BinaryMask::new(10, 2), Some(Degeneracy::Blank));
        let r = refine_heatmap(&hm, &rows(), &bm, &RefineParams::default()).unwrap();
        assert_eq!(r.heatmap, hm);
        assert_eq!(r.warnings.len(), 1);
        let strict = RefineParams {
            fallback_on_degenerate: false,
            ..RefineParams::default()
        };
        let r = refine_heatmap(&hm, &rows(), &bm, &strict).unwrap();
        assert_eq!(r.heatmap.importances(), &[0.0, 0.0]);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let hm = Heatmap::new(vec![0.4, 0.6], 0.0, 0).unwrap();
        let bm = result(BinaryMask::full(5, 4), None);
        assert!(matches!(
            refine_heatmap(&hm, &rows(), &bm, &RefineParams::default()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn json_adds_refinement_fields() {
        let hm = Heatmap::new(vec![0.4, 0.6], 0.0, 3).unwrap();
        let r = refine_heatmap(&hm, &rows(), &result(BinaryMask::full(10, 2), None), &RefineParams::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["refined"], true);
        assert_eq!(v["detector"], "canny");
        assert_eq!(v["seed"], 3);
        assert_eq!(v["importances"]["1"], 0.6);
        assert!(v["warnings"].as_array().unwrap().is_empty());
    }

    #[test]
    fn explanation_pixel_examples() {
        let seg = SegmentMap::from_labels(10, 6, (0..60).map(|i| u32::from(i >= 40)).collect()).unwrap();
        let hm = Heatmap::new(vec![-0.1, 0.5], 0.0, 0).unwrap();
        assert_eq!(explanation_pixels(&hm, &seg, 1).unwrap().area(), 20);
        let none = Heatmap::new(vec![-0.1, -0.5], 0.0, 0).unwrap();
        assert!(explanation_pixels(&none, &seg, 3).unwrap().is_empty());
    }

    fn arb_case() -> impl Strategy<Value = (SegmentMap, BinaryMask, Heatmap)> {
        (1usize..12, 1usize..12, 1u32..8).prop_flat_map(|(w, h, d)| {
            let n = w * h;
            (
                proptest::collection::vec(0..d, n),
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(-4i32..5, d as usize),
            )
                .prop_filter_map("every label used", move |(labels, bits, imps)| {
                    // Compact labels to 0..d'-1 in first-seen order.
                    let mut map = vec![u32::MAX; d as usize];
                    let mut next = 0;
                    let labels: Vec<u32> = labels
                        .into_iter()
                        .map(|l| {
                            if map[l as usize] == u32::MAX {
                                map[l as usize] = next;
                                next += 1;
                            }
                            map[l as usize]
                        })
                        .collect();
                    let seg = SegmentMap::from_labels(w, h, labels).ok()?;
                    let mask = BinaryMask::from_bits(w, h, bits).ok()?;
                    let imps = imps[..seg.num_segments()].iter().map(|v| *v as f64 / 4.0).collect();
                    Some((seg, mask, Heatmap::new(imps, 0.0, 0).ok()?))
                })
        })
    }

    proptest! {
        #[test]
        fn retention_matches_integer_rule((seg, mask, hm) in arb_case()) {
            let r = refine_heatmap(&hm, &seg, &result(mask.clone(), None), &RefineParams::default()).unwrap();
            for id in 0..seg.num_segments() {
                let sm = seg.segment_mask(id as u32);
                let total = sm.area();
                let inside = sm.intersection_area(&mask).unwrap();
                let keep = 5 * inside >= 4 * total;
                let got = r.heatmap.importances()[id];
                if keep {
                    prop_assert_eq!(got, hm.importances()[id]);
                } else {
                    prop_assert_eq!(got, 0.0);
                }
            }
        }

        #[test]
        fn refinement_is_idempotent((seg, mask, hm) in arb_case()) {
            let bm = result(mask, None);
            let p = RefineParams::default();
            let once = refine_heatmap(&hm, &seg, &bm, &p).unwrap();
            let twice = refine_heatmap(&once.heatmap, &seg, &bm, &p).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn raising_fraction_shrinks_retained((seg, mask, _hm) in arb_case(), a in 1u32..=20, b in 1u32..=20) {
            let (lo, hi) = (a.min(b) as f64 / 20.0, a.max(b) as f64 / 20.0);
            let loose = retained_segments(&seg, &mask, lo).unwrap();
            let strict = retained_segments(&seg, &mask, hi).unwrap();
            for (l, s) in loose.iter().zip(&strict) {
                prop_assert!(!s || *l);
            }
        }

        #[test]
        fn full_fraction_keeps_explanation_inside((seg, mask, hm) in arb_case(), n in 1usize..6) {
            let p = RefineParams { inside_fraction: 1.0, ..RefineParams::default() };
            let r = refine_heatmap(&hm, &seg, &result(mask.clone(), None), &p).unwrap();
            let expl = explanation_pixels(&r.heatmap, &seg, n).unwrap();
            prop_assert!(expl.is_subset_of(&mask));
        }

        #[test]
        fn explanation_area_is_segment_sum((seg, _mask, hm) in arb_case(), n in 1usize..6) {
            let expl = explanation_pixels(&hm, &seg, n).unwrap();
            let counts = crate::segmentation::segment_pixel_counts(&seg);
            let expected: usize = top_segments(&hm, n).iter().map(|id| counts[*id as usize]).sum();
            prop_assert_eq!(expl.area(), expected);
        }
    }
}
