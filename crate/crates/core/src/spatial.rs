//! Fuzzy door/opener geometry.
//!
//! An opener should sit near a vertical edge of a door and near the door's
//! vertical middle. Both conditions are clamped linear scores in `[0, 1]`; an
//! opener's support is the best, over doors in the same frame, of
//! `c(door) * c(opener) * horizontal * vertical`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, DetectedObject};
use crate::relabel::RelabeledObject;

pub const DEFAULT_KEEP_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("rule has no opener labels")]
    NoOpeners,
    #[error("door label {0:?} is also listed as an opener")]
    DoorIsOpener(String),
    #[error("keep threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialRule {
    pub door_label: String,
    pub opener_labels: BTreeSet<String>,
    #[serde(default = "default_threshold")]
    pub keep_threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_KEEP_THRESHOLD
}

impl SpatialRule {
    pub fn new<I, S>(door_label: impl Into<String>, openers: I, keep_threshold: f64) -> Result<Self, RuleError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let rule = Self {
            door_label: door_label.into(),
            opener_labels: openers.into_iter().map(Into::into).collect(),
            keep_threshold,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<(), RuleError> {
        if self.opener_labels.is_empty() {
            return Err(RuleError::NoOpeners);
        }
        if self.opener_labels.contains(&self.door_label) {
            return Err(RuleError::DoorIsOpener(self.door_label.clone()));
        }
        if !(0.0..=1.0).contains(&self.keep_threshold) {
            return Err(RuleError::InvalidThreshold(self.keep_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialVerdict {
    pub opener_id: String,
    pub best_door_id: Option<String>,
    pub hor_score: f64,
    pub vert_score: f64,
    pub combined_score: f64,
    pub kept: bool,
}

/// Anything with a frame, a label, a confidence and a box.
pub trait SpatialCandidate {
    fn object_id(&self) -> &str;
    fn frame_id(&self) -> &str;
    fn label(&self) -> &str;
    fn confidence(&self) -> f64;
    fn bbox(&self) -> &BoundingBox;
}

impl SpatialCandidate for DetectedObject {
    fn object_id(&self) -> &str {
        &self.object_id
    }
    fn frame_id(&self) -> &str {
        &self.frame_id
    }
    fn label(&self) -> &str {
        &self.label
    }
    fn confidence(&self) -> f64 {
        self.confidence
    }
    fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }
}

impl SpatialCandidate for RelabeledObject {
    fn object_id(&self) -> &str {
        &self.object_id
    }
    fn frame_id(&self) -> &str {
        &self.frame_id
    }
    fn label(&self) -> &str {
        &self.new_label
    }
    fn confidence(&self) -> f64 {
        self.new_confidence
    }
    fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }
}

/// `max(1 - d / width(door), 0)` with `d` the horizontal distance from the
/// opener's center to the nearer vertical door edge.
pub fn hor_range_score(opener: &BoundingBox, door: &BoundingBox) -> f64 {
    let cx = opener.center_x();
    let d = (cx - door.x_min()).abs().min((cx - door.x_max()).abs());
    (1.0 - d / door.width()).max(0.0)
}

/// `max(1 - d / height(door), 0)` with `d` the vertical distance between the
/// opener's center and the door's middle.
pub fn vert_range_score(opener: &BoundingBox, door: &BoundingBox) -> f64 {
    let d = (opener.center_y() - door.center_y()).abs();
    (1.0 - d / door.height()).max(0.0)
}

/// One verdict per opener, in input order. Doors and unrelated objects get no
/// verdict and are always kept by [`retain_verified`].
pub fn verify<T: SpatialCandidate>(objects: &[T], rule: &SpatialRule) -> Vec<SpatialVerdict> {
    let mut doors_by_frame: BTreeMap<&str, Vec<&T>> = BTreeMap::new();
    for o in objects.iter().filter(|o| o.label() == rule.door_label) {
        doors_by_frame.entry(o.frame_id()).or_default().push(o);
    }

    objects
        .iter()
        .filter(|o| rule.opener_labels.contains(o.label()))
        .map(|opener| {
            let mut best: Option<(&T, f64, f64, f64)> = None;
            for door in doors_by_frame.get(opener.frame_id()).into_iter().flatten() {
                let hor = hor_range_score(opener.bbox(), door.bbox());
                let vert = vert_range_score(opener.bbox(), door.bbox());
                let combined = door.confidence() * opener.confidence() * hor * vert;
                if best.is_none_or(|(_, _, _, c)| combined > c) {
                    best = Some((door, hor, vert, combined));
                }
            }
            match best {
                Some((door, hor, vert, combined)) => SpatialVerdict {
                    opener_id: opener.object_id().into(),
                    best_door_id: Some(door.object_id().into()),
                    hor_score: hor,
                    vert_score: vert,
                    combined_score: combined,
                    kept: combined >= rule.keep_threshold,
                },
                None => SpatialVerdict {
                    opener_id: opener.object_id().into(),
                    best_door_id: None,
                    hor_score: 0.0,
                    vert_score: 0.0,
                    combined_score: 0.0,
                    kept: false,
                },
            }
        })
        .collect()
}

/// Drops openers whose verdict was not kept.
pub fn retain_verified<T: SpatialCandidate + Clone>(objects: &[T], verdicts: &[SpatialVerdict]) -> Vec<T> {
    let rejected: BTreeSet<&str> = verdicts
        .iter()
        .filter(|v| !v.kept)
        .map(|v| v.opener_id.as_str())
        .collect();
    objects
        .iter()
        .filter(|o| !rejected.contains(o.object_id()))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn at(cx: f64, cy: f64) -> BoundingBox {
        BoundingBox::from_center(cx, cy, 4.0, 2.0).unwrap()
    }

    fn obj(id: &str, frame: &str, label: &str, confidence: f64, bbox: BoundingBox) -> DetectedObject {
        DetectedObject {
            object_id: id.into(),
            frame_id: frame.into(),
            bbox,
            label: label.into(),
            confidence,
            embedding: vec![1.0],
        }
    }

    fn rule(threshold: f64) -> SpatialRule {
        SpatialRule::new("door", ["handle", "knob"], threshold).unwrap()
    }

    #[test]
    fn score_table() {
        let door = bx(0.0, 0.0, 100.0, 200.0);
        assert_eq!(hor_range_score(&at(100.0, 50.0), &door), 1.0);
        assert_eq!(hor_range_score(&at(200.0, 50.0), &door), 0.0);
        assert_eq!(hor_range_score(&at(-150.0, 50.0), &door), 0.0);
        assert_eq!(hor_range_score(&at(50.0, 50.0), &door), 0.5);
        assert_eq!(vert_range_score(&at(10.0, 100.0), &door), 1.0);
        assert_eq!(vert_range_score(&at(10.0, 300.0), &door), 0.0);
        assert_eq!(vert_range_score(&at(10.0, 150.0), &door), 0.75);
    }

    #[test]
    fn verify_examples() {
        let door = bx(0.0, 0.0, 100.0, 200.0);
        let perfect = [obj("d", "f", "door", 1.0, door), obj("o", "f", "handle", 1.0, at(100.0, 100.0))];
        let v = verify(&perfect, &rule(1.0));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].combined_score, 1.0);
        assert!(v[0].kept);

        let lonely = [obj("o", "f", "handle", 1.0, at(100.0, 100.0)), obj("d", "g", "door", 1.0, door)];
        let v = verify(&lonely, &rule(0.0));
        assert_eq!(v[0].best_door_id, None);
        assert!(!v[0].kept);

        let worked = [obj("d", "f", "door", 0.9, door), obj("o", "f", "knob", 0.8, at(95.0, 100.0))];
        let v = verify(&worked, &rule(DEFAULT_KEEP_THRESHOLD));
        assert!((v[0].hor_score - 0.95).abs() < 1e-12);
        assert_eq!(v[0].vert_score, 1.0);
        assert!((v[0].combined_score - 0.684).abs() < 1e-12);
        assert!(v[0].kept);
    }

    #[test]
    fn retain_passes_doors_and_others_through() {
        let door = bx(0.0, 0.0, 100.0, 200.0);
        let objects = [
            obj("d", "f", "door", 0.9, door),
            obj("good", "f", "handle", 0.9, at(95.0, 100.0)),
            obj("bad", "f", "handle", 0.9, at(400.0, 100.0)),
            obj("sign", "f", "exit sign", 0.9, at(400.0, 100.0)),
        ];
        let verdicts = verify(&objects, &rule(0.25));
        assert_eq!(verdicts.len(), 2);
        let kept: Vec<_> = retain_verified(&objects, &verdicts).into_iter().map(|o| o.object_id).collect();
        assert_eq!(kept, ["d", "good", "sign"]);
    }

    #[test]
    fn best_door_is_chosen() {
        let objects = [
            obj("far", "f", "door", 1.0, bx(300.0, 0.0, 400.0, 200.0)),
            obj("near", "f", "door", 1.0, bx(0.0, 0.0, 100.0, 200.0)),
            obj("o", "f", "handle", 1.0, at(98.0, 100.0)),
        ];
        let v = verify(&objects, &rule(0.25));
        assert_eq!(v[0].best_door_id.as_deref(), Some("near"));
    }

    #[test]
    fn rule_validation() {
        assert_eq!(SpatialRule::new("door", Vec::<String>::new(), 0.5), Err(RuleError::NoOpeners));
        assert!(matches!(SpatialRule::new("door", ["door"], 0.5), Err(RuleError::DoorIsOpener(_))));
        assert!(matches!(SpatialRule::new("door", ["knob"], 1.5), Err(RuleError::InvalidThreshold(_))));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-200.0..200.0f64, -200.0..200.0f64, 1.0..150.0f64, 1.0..150.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn scores_translation_and_scale_invariant(o in arb_box(), d in arb_box(), tx in -1e3..1e3f64, ty in -1e3..1e3f64, s in 0.05..20.0f64) {
            let map = |b: &BoundingBox| bx(s * b.x_min() + tx, s * b.y_min() + ty, s * b.x_max() + tx, s * b.y_max() + ty);
            prop_assert!((hor_range_score(&o, &d) - hor_range_score(&map(&o), &map(&d))).abs() < 1e-9);
            prop_assert!((vert_range_score(&o, &d) - vert_range_score(&map(&o), &map(&d))).abs() < 1e-9);
        }

        #[test]
        fn scores_fall_with_distance(d in arb_box(), a in 0.0..300.0f64, b in 0.0..300.0f64) {
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            let h = |dx: f64| hor_range_score(&at(d.x_max() + dx, d.center_y()), &d);
            let v = |dy: f64| vert_range_score(&at(d.center_x(), d.center_y() + dy), &d);
            prop_assert!(h(near) >= h(far) - 1e-12);
            prop_assert!(v(near) >= v(far) - 1e-12);
            prop_assert!((0.0..=1.0).contains(&h(near)) && (0.0..=1.0).contains(&v(near)));
            prop_assert_eq!(h(d.width() * 1.5), 0.0);
            prop_assert_eq!(v(d.height() * 1.5), 0.0);
        }

        #[test]
        fn zero_threshold_keeps_openers_near_any_door(doors in prop::collection::vec(arb_box(), 1..4), openers in prop::collection::vec(arb_box(), 1..6)) {
            let mut objects: Vec<_> = doors.iter().enumerate().map(|(i, b)| obj(&format!("d{i}"), "f", "door", 0.7, *b)).collect();
            objects.extend(openers.iter().enumerate().map(|(i, b)| obj(&format!("o{i}"), "f", "knob", 0.6, *b)));
            prop_assert!(verify(&objects, &rule(0.0)).iter().all(|v| v.kept && v.best_door_id.is_some()));
        }

        #[test]
        fn removing_a_non_best_door_changes_nothing(doors in prop::collection::vec(arb_box(), 2..5), opener in arb_box()) {
            let mut objects: Vec<_> = doors.iter().enumerate().map(|(i, b)| obj(&format!("d{i}"), "f", "door", 0.9, *b)).collect();
            objects.push(obj("o", "f", "handle", 0.8, opener));
            let before = verify(&objects, &rule(0.25)).remove(0);
            let best = before.best_door_id.clone().unwrap();
            let victim = objects.iter().position(|o| o.label == "door" && o.object_id != best).unwrap();
            objects.remove(victim);
            prop_assert_eq!(verify(&objects, &rule(0.25)).remove(0), before);
        }
    }
}
