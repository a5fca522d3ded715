//! IoU-matched average precision and mAP.
//!
//! Matching is greedy per class and frame: predictions are visited by
//! descending confidence (ties by object id) and each takes the unmatched
//! ground-truth box of its class with the highest IoU at or above the
//! threshold. AP uses all-point interpolation over the pooled, confidence
//! ranked predictions of a class. mAP averages AP over the classes present in
//! the ground truth.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detection::{BoundingBox, DetectedObject};
use crate::relabel::RelabeledObject;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub frame_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
}

/// A scored box as seen by the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub object_id: String,
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub label: String,
    pub confidence: f64,
}

impl From<&DetectedObject> for Prediction {
    fn from(o: &DetectedObject) -> Self {
        Self {
            object_id: o.object_id.clone(),
            frame_id: o.frame_id.clone(),
            bbox: o.bbox,
            label: o.label.clone(),
            confidence: o.confidence,
        }
    }
}

impl From<&RelabeledObject> for Prediction {
    fn from(o: &RelabeledObject) -> Self {
        Self {
            object_id: o.object_id.clone(),
            frame_id: o.frame_id.clone(),
            bbox: o.bbox,
            label: o.new_label.clone(),
            confidence: o.new_confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchOutcome {
    Tp,
    Fp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ground_truth: usize,
}

/// Matching result for a batch of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One outcome per input prediction, in input order.
    pub outcomes: Vec<MatchOutcome>,
    /// Unmatched ground truth per class.
    pub false_negatives: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<String, f64>,
    pub map_score: f64,
    pub iou_threshold: f64,
    pub counts: BTreeMap<String, ClassCounts>,
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x_max().min(b.x_max()) - a.x_min().max(b.x_min());
    let h = a.y_max().min(b.y_max()) - a.y_min().max(b.y_min());
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn by_confidence(a: &Prediction, b: &Prediction) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.object_id.cmp(&b.object_id))
}

pub fn match_detections(
    predictions: &[Prediction],
    ground_truth: &[GroundTruthObject],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| by_confidence(&predictions[a], &predictions[b]));

    let mut matched = alloc::vec![false; ground_truth.len()];
    let mut outcomes = alloc::vec![MatchOutcome::Fp; predictions.len()];
    for idx in order {
        let p = &predictions[idx];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if matched[g] || gt.label != p.label || gt.frame_id != p.frame_id {
                continue;
            }
            let overlap = iou(&p.bbox, &gt.bbox);
            if overlap >= iou_threshold && best.is_none_or(|(_, b)| overlap > b) {
                best = Some((g, overlap));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
            outcomes[idx] = MatchOutcome::Tp;
        }
    }

    let mut false_negatives = BTreeMap::new();
    for (gt, hit) in ground_truth.iter().zip(&matched) {
        let entry = false_negatives.entry(gt.label.clone()).or_insert(0);
        if !hit {
            *entry += 1;
        }
    }
    MatchResult {
        outcomes,
        false_negatives,
    }
}

/// All-point interpolated AP of a confidence-ranked TP/FP sequence.
pub fn average_precision(ranked: &[MatchOutcome], num_ground_truth: usize) -> f64 {
    if num_ground_truth == 0 {
        return 0.0;
    }
    let total = num_ground_truth as f64;
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (k, outcome) in ranked.iter().enumerate() {
        if *outcome == MatchOutcome::Tp {
            tp += 1;
        }
        recall.push(tp as f64 / total);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

pub fn evaluate(
    predictions: &[Prediction],
    ground_truth: &[GroundTruthObject],
    iou_threshold: f64,
) -> EvalReport {
    let matches = match_detections(predictions, ground_truth, iou_threshold);

    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in predictions.iter().enumerate() {
        by_class.entry(p.label.as_str()).or_default().push(i);
    }
    let mut gt_count: BTreeMap<&str, usize> = BTreeMap::new();
    for gt in ground_truth {
        *gt_count.entry(gt.label.as_str()).or_default() += 1;
    }

    let mut counts: BTreeMap<String, ClassCounts> = BTreeMap::new();
    let mut per_class_ap = BTreeMap::new();
    let classes: alloc::collections::BTreeSet<&str> =
        by_class.keys().chain(gt_count.keys()).copied().collect();
    for class in classes {
        let mut idx = by_class.get(class).cloned().unwrap_or_default();
        idx.sort_by(|&a, &b| by_confidence(&predictions[a], &predictions[b]));
        let ranked: Vec<MatchOutcome> = idx.iter().map(|&i| matches.outcomes[i]).collect();
        let n_gt = gt_count.get(class).copied().unwrap_or(0);
        let tp = ranked.iter().filter(|o| **o == MatchOutcome::Tp).count();
        counts.insert(
            class.into(),
            ClassCounts {
                tp,
                fp: ranked.len() - tp,
                fn_: matches.false_negatives.get(class).copied().unwrap_or(0),
                ground_truth: n_gt,
            },
        );
        if n_gt > 0 {
            per_class_ap.insert(String::from(class), average_precision(&ranked, n_gt));
        }
    }

    let map_score = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };
    EvalReport {
        per_class_ap,
        map_score,
        iou_threshold,
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use proptest::prelude::*;
    use MatchOutcome::{Fp, Tp};

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn pred(id: &str, frame: &str, label: &str, conf: f64, b: BoundingBox) -> Prediction {
        Prediction {
            object_id: id.into(),
            frame_id: frame.into(),
            bbox: b,
            label: label.into(),
            confidence: conf,
        }
    }

    fn gt(frame: &str, label: &str, b: BoundingBox) -> GroundTruthObject {
        GroundTruthObject {
            frame_id: frame.into(),
            bbox: b,
            label: label.into(),
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &bx(2.0, 0.0, 3.0, 2.0)), 0.0);
        assert!((iou(&a, &bx(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn match_examples() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let r = match_detections(&[pred("a", "f", "door", 0.9, b)], &[gt("f", "door", b)], 0.5);
        assert_eq!(r.outcomes, [Tp]);
        assert_eq!(r.false_negatives["door"], 0);

        let r = match_detections(
            &[pred("a", "f", "door", 0.4, b), pred("b", "f", "door", 0.8, b)],
            &[gt("f", "door", b)],
            0.5,
        );
        assert_eq!(r.outcomes, [Fp, Tp]);

        let r = match_detections(&[pred("a", "f", "knob", 0.9, b)], &[gt("f", "handle", b)], 0.5);
        assert_eq!(r.outcomes, [Fp]);
        assert_eq!(r.false_negatives["handle"], 1);

        // same class, other frame
        let r = match_detections(&[pred("a", "g", "door", 0.9, b)], &[gt("f", "door", b)], 0.5);
        assert_eq!(r.outcomes, [Fp]);
    }

    #[test]
    fn match_prefers_highest_iou_among_unmatched() {
        let g1 = bx(0.0, 0.0, 10.0, 10.0);
        let g2 = bx(2.0, 0.0, 12.0, 10.0);
        let p = bx(1.5, 0.0, 11.5, 10.0);
        let r = match_detections(
            &[pred("a", "f", "x", 0.9, p), pred("b", "f", "x", 0.8, g1)],
            &[gt("f", "x", g1), gt("f", "x", g2)],
            0.5,
        );
        // "a" takes g2 (IoU 0.92 vs 0.74), leaving g1 for "b".
        assert_eq!(r.outcomes, [Tp, Tp]);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[Tp], 1), 1.0);
        assert!((average_precision(&[Fp, Tp], 1) - 0.5).abs() < 1e-9);
        assert!((average_precision(&[Tp, Fp, Tp], 2) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-9);
        assert_eq!(average_precision(&[], 3), 0.0);
        assert_eq!(average_precision(&[Tp], 0), 0.0);
    }

    #[test]
    fn evaluate_edge_cases() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let c = bx(20.0, 0.0, 30.0, 10.0);
        let truth = [gt("f", "door", b), gt("f", "handle", c)];
        let perfect = [pred("a", "f", "door", 1.0, b), pred("b", "f", "handle", 1.0, c)];
        assert_eq!(evaluate(&perfect, &truth, 0.5).map_score, 1.0);
        let empty = evaluate(&[], &truth, 0.5);
        assert_eq!(empty.map_score, 0.0);
        assert_eq!(empty.counts["door"].fn_, 1);

        // predictions of a class absent from ground truth are counted but not averaged
        let extra = [pred("a", "f", "door", 1.0, b), pred("z", "f", "knob", 0.9, c)];
        let r = evaluate(&extra, &truth[..1], 0.5);
        assert_eq!(r.map_score, 1.0);
        assert!(!r.per_class_ap.contains_key("knob"));
        assert_eq!(r.counts["knob"].fp, 1);
    }

    /// Six predictions over four ground-truth boxes in two classes.
    ///
    /// door (2 GT: d1 in f1, d2 in f2), ranked: p1 0.9 TP(d1), p2 0.8 FP
    /// (duplicate on d1), p3 0.6 TP(d2)  -> [TP, FP, TP] / 2 -> 0.5 + 0.5*2/3.
    /// handle (2 GT: h1 in f1, h2 in f2), ranked: p4 0.95 FP (IoU 1/7 with h1),
    /// p5 0.7 TP(h1), p6 0.2 FP (wrong frame) -> [FP, TP, FP] / 2 -> 0.5*0.5.
    #[test]
    fn evaluate_hand_computed_fixture() {
        let d1 = bx(0.0, 0.0, 10.0, 20.0);
        let d2 = bx(100.0, 0.0, 110.0, 20.0);
        let h1 = bx(0.0, 0.0, 2.0, 2.0);
        let h2 = bx(50.0, 50.0, 52.0, 52.0);
        let truth = [gt("f1", "door", d1), gt("f2", "door", d2), gt("f1", "handle", h1), gt("f2", "handle", h2)];
        let preds = [
            pred("p1", "f1", "door", 0.9, d1),
            pred("p2", "f1", "door", 0.8, bx(0.0, 0.0, 10.0, 19.0)),
            pred("p3", "f2", "door", 0.6, bx(100.0, 1.0, 110.0, 20.0)),
            pred("p4", "f1", "handle", 0.95, bx(1.0, 1.0, 3.0, 3.0)),
            pred("p5", "f1", "handle", 0.7, h1),
            pred("p6", "f1", "handle", 0.2, h2),
        ];
        let r = evaluate(&preds, &truth, 0.5);
        let door = 0.5 + 0.5 * 2.0 / 3.0;
        let handle = 0.25;
        assert!((r.per_class_ap["door"] - door).abs() < 1e-12);
        assert!((r.per_class_ap["handle"] - handle).abs() < 1e-12);
        assert!((r.map_score - (door + handle) / 2.0).abs() < 1e-12);
        assert_eq!(r.counts["door"], ClassCounts { tp: 2, fp: 1, fn_: 0, ground_truth: 2 });
        assert_eq!(r.counts["handle"], ClassCounts { tp: 1, fp: 2, fn_: 1, ground_truth: 2 });
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<Prediction>, Vec<GroundTruthObject>)> {
        let labels = ["a", "b"];
        let preds = prop::collection::vec((arb_box(), 0..2usize, 0..2usize, 0.0..1.0f64), 0..12);
        // ground truth sits in disjoint 60px cells so no prediction can reach two boxes
        let cell = (1.0..40.0f64, 1.0..40.0f64, 0..2usize, 0..2usize);
        let truth = prop::collection::vec(cell, 0..8);
        (preds, truth).prop_map(move |(p, t)| {
            let preds = p
                .into_iter()
                .enumerate()
                .map(|(i, (b, l, f, c))| pred(&format!("p{i:02}"), &format!("f{f}"), labels[l], c, b))
                .collect();
            let truth = t
                .into_iter()
                .enumerate()
                .map(|(c, (w, h, l, f))| {
                    let x = 60.0 * c as f64;
                    gt(&format!("f{f}"), labels[l], bx(x, 0.0, x + w, h))
                })
                .collect();
            (preds, truth)
        })
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn zero_confidence_fp_never_helps((preds, truth) in arb_scene(), b in arb_box()) {
            let before = evaluate(&preds, &truth, 0.5);
            let mut more = preds.clone();
            more.push(pred("zz", "f9", "a", 0.0, b));
            let after = evaluate(&more, &truth, 0.5);
            for (class, ap) in &after.per_class_ap {
                prop_assert!(*ap <= before.per_class_ap[class] + 1e-12);
            }
        }

        #[test]
        fn duplicates_only_add_false_positives((preds, truth) in arb_scene()) {
            let before = evaluate(&preds, &truth, 0.5);
            let mut doubled = preds.clone();
            doubled.extend(preds.iter().map(|p| Prediction { object_id: format!("{}d", p.object_id), ..p.clone() }));
            let after = evaluate(&doubled, &truth, 0.5);
            for (class, c) in &before.counts {
                prop_assert_eq!(after.counts[class].tp, c.tp);
                prop_assert_eq!(after.counts[class].fp, 2 * c.fp + c.tp);
            }
        }

        #[test]
        fn frame_renaming_keeps_map((preds, truth) in arb_scene()) {
            let rename = |f: &str| if f == "f0" { String::from("x1") } else { String::from("x0") };
            let before = evaluate(&preds, &truth, 0.5);
            let preds2: Vec<_> = preds.iter().map(|p| Prediction { frame_id: rename(&p.frame_id), ..p.clone() }).collect();
            let truth2: Vec<_> = truth.iter().map(|g| GroundTruthObject { frame_id: rename(&g.frame_id), ..g.clone() }).collect();
            prop_assert_eq!(before, evaluate(&preds2, &truth2, 0.5));
        }
    }
}
