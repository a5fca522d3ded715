//! Detections, frames and label sets.
//!
//! The open-vocabulary detector itself is not part of this crate. Anything that
//! can produce a [`DetectionSet`] for a prompt implements [`Detector`]; the
//! `affordance` crate ships a file-playback implementation and
//! [`synthetic`] generates seeded stand-in data.

mod prompt;
pub mod synthetic;

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

pub use prompt::{build_prompt, parse_prompt};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("invalid bounding box [{0}, {1}, {2}, {3}]: need finite x_min < x_max and y_min < y_max")]
    InvalidBox(f64, f64, f64, f64),
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("invalid label {0:?}: labels must be non-empty, trimmed and free of '.'")]
    InvalidLabel(String),
    #[error("duplicate label {0:?} (labels are compared case-insensitively)")]
    DuplicateLabel(String),
    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("object {object_id}: embedding has dimension {found}, expected {expected}")]
    DimensionMismatch {
        object_id: String,
        expected: usize,
        found: usize,
    },
    #[error("object {object_id}: embedding has zero norm")]
    ZeroNormEmbedding { object_id: String },
    #[error("object {object_id}: embedding contains a non-finite value")]
    NonFiniteEmbedding { object_id: String },
    #[error("object {object_id}: confidence {confidence} outside [0, 1]")]
    ConfidenceOutOfRange { object_id: String, confidence: f64 },
    #[error("duplicate object id {0}")]
    DuplicateObjectId(String),
    #[error("object {object_id}: label {label:?} is not in the label set")]
    LabelNotInSet { object_id: String, label: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Axis-aligned box in image pixels, origin top-left.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, DetectionError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(DetectionError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Box of the given size centered on `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, DetectionError> {
        Self::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center_x(&self) -> f64 {
        (self.x_min + self.x_max) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        (self.y_min + self.y_max) / 2.0
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = DetectionError;

    fn try_from([x_min, y_min, x_max, y_max]: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(x_min, y_min, x_max, y_max)
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Ordered, duplicate-free list of object labels used to prompt a detector.
///
/// Labels keep their case, but two labels that differ only in case count as
/// duplicates. A label may not contain `.` since that is the prompt separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Result<Self, DetectionError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for label in labels {
            let label = label.into();
            validate_label(&label)?;
            if !seen.insert(label.to_lowercase()) {
                return Err(DetectionError::DuplicateLabel(label));
            }
            out.push(label);
        }
        if out.is_empty() {
            return Err(DetectionError::EmptyLabelSet);
        }
        Ok(Self { labels: out })
    }

    /// Like [`LabelSet::new`] but silently drops later case-insensitive duplicates.
    pub fn deduplicated<I, S>(labels: I) -> Result<Self, DetectionError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        for label in labels {
            let label = label.into();
            if seen.insert(label.to_lowercase()) {
                kept.push(label);
            }
        }
        Self::new(kept)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Exact (case-sensitive) membership.
    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    /// Detector prompt for this set, e.g. `door. handle. knob`.
    pub fn prompt(&self) -> String {
        self.labels.join(". ")
    }

    /// Appends labels not yet present, keeping the existing order.
    pub fn extended<'a>(&self, extra: impl IntoIterator<Item = &'a str>) -> Self {
        let mut labels = self.labels.clone();
        let mut seen: BTreeSet<String> = labels.iter().map(|l| l.to_lowercase()).collect();
        for label in extra {
            if validate_label(label).is_ok() && seen.insert(label.to_lowercase()) {
                labels.push(label.to_string());
            }
        }
        Self { labels }
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = DetectionError;

    fn try_from(labels: Vec<String>) -> Result<Self, Self::Error> {
        Self::new(labels)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.labels
    }
}

fn validate_label(label: &str) -> Result<(), DetectionError> {
    if label.is_empty() || label.trim() != label || label.contains('.') {
        return Err(DetectionError::InvalidLabel(label.to_string()));
    }
    Ok(())
}

/// One detected object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub object_id: String,
    pub frame_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
    pub confidence: f64,
    pub embedding: Vec<f64>,
}

impl DetectedObject {
    /// Checks confidence range and embedding shape against `dimension`.
    pub fn validate(&self, dimension: usize) -> Result<(), DetectionError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(DetectionError::ConfidenceOutOfRange {
                object_id: self.object_id.clone(),
                confidence: self.confidence,
            });
        }
        if self.embedding.len() != dimension {
            return Err(DetectionError::DimensionMismatch {
                object_id: self.object_id.clone(),
                expected: dimension,
                found: self.embedding.len(),
            });
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(DetectionError::NonFiniteEmbedding {
                object_id: self.object_id.clone(),
            });
        }
        if math::norm(&self.embedding) == 0.0 {
            return Err(DetectionError::ZeroNormEmbedding {
                object_id: self.object_id.clone(),
            });
        }
        Ok(())
    }
}

/// All detections of one session with their shared embedding dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    dimension: usize,
    label_set: LabelSet,
    objects: Vec<DetectedObject>,
}

impl DetectionSet {
    /// Validates every object: dimension, non-zero norm, confidence range,
    /// unique ids and label membership.
    pub fn new(
        dimension: usize,
        label_set: LabelSet,
        objects: Vec<DetectedObject>,
    ) -> Result<Self, DetectionError> {
        if dimension == 0 {
            return Err(DetectionError::ZeroDimension);
        }
        let mut ids = BTreeSet::new();
        for object in &objects {
            object.validate(dimension)?;
            if !ids.insert(object.object_id.as_str()) {
                return Err(DetectionError::DuplicateObjectId(object.object_id.clone()));
            }
            if !label_set.contains(&object.label) {
                return Err(DetectionError::LabelNotInSet {
                    object_id: object.object_id.clone(),
                    label: object.label.clone(),
                });
            }
        }
        Ok(Self {
            dimension,
            label_set,
            objects,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.label_set
    }

    pub fn objects(&self) -> &[DetectedObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn get(&self, object_id: &str) -> Option<&DetectedObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn object_ids(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.object_id.clone()).collect()
    }

    pub fn embeddings(&self) -> Vec<&[f64]> {
        self.objects.iter().map(|o| o.embedding.as_slice()).collect()
    }
}

/// Source of detections for a prompt.
///
/// Network-backed detectors are out of scope; implementations replay recorded
/// output or synthesize it.
pub trait Detector {
    type Error;

    fn detect(&mut self, labels: &LabelSet) -> Result<DetectionSet, Self::Error>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn object(id: &str, label: &str, embedding: Vec<f64>) -> DetectedObject {
        DetectedObject {
            object_id: id.into(),
            frame_id: "f0".into(),
            bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            label: label.into(),
            confidence: 0.5,
            embedding,
        }
    }

    #[test]
    fn box_rejects_inverted_and_non_finite() {
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
        let b = BoundingBox::new(0.0, 0.0, 4.0, 2.0).unwrap();
        assert_eq!((b.width(), b.height(), b.area()), (4.0, 2.0, 8.0));
        assert_eq!((b.center_x(), b.center_y()), (2.0, 1.0));
    }

    #[test]
    fn label_set_rules() {
        assert_eq!(LabelSet::new(Vec::<String>::new()), Err(DetectionError::EmptyLabelSet));
        assert!(matches!(
            LabelSet::new(["door", "Door"]),
            Err(DetectionError::DuplicateLabel(_))
        ));
        assert!(LabelSet::new(["door."]).is_err());
        assert!(LabelSet::new([" door"]).is_err());
        assert!(LabelSet::new([""]).is_err());
        let set = LabelSet::deduplicated(["door", "handle", "DOOR"]).unwrap();
        assert_eq!(set.labels(), ["door", "handle"]);
        assert!(set.contains("door") && !set.contains("Door"));
        let wider = set.extended(["knob", "Handle"]);
        assert_eq!(wider.labels(), ["door", "handle", "knob"]);
    }

    #[test]
    fn detection_set_validation() {
        let labels = LabelSet::new(["door", "handle"]).unwrap();
        let ok = DetectionSet::new(
            2,
            labels.clone(),
            vec![object("a", "door", vec![1.0, 0.0]), object("b", "handle", vec![0.0, 2.0])],
        )
        .unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok.get("b").unwrap().label, "handle");

        let err = DetectionSet::new(
            2,
            labels.clone(),
            vec![object("a", "door", vec![1.0, 0.0]), object("b", "door", vec![1.0, 0.0, 0.0])],
        )
        .unwrap_err();
        assert!(matches!(err, DetectionError::DimensionMismatch { found: 3, .. }));

        let err = DetectionSet::new(2, labels.clone(), vec![object("z", "door", vec![0.0, 0.0])])
            .unwrap_err();
        assert_eq!(err, DetectionError::ZeroNormEmbedding { object_id: "z".into() });

        let err = DetectionSet::new(
            2,
            labels.clone(),
            vec![object("a", "door", vec![1.0, 0.0]), object("a", "door", vec![1.0, 0.0])],
        )
        .unwrap_err();
        assert_eq!(err, DetectionError::DuplicateObjectId("a".into()));

        let mut hot = object("h", "door", vec![1.0, 0.0]);
        hot.confidence = 1.3;
        assert!(matches!(
            DetectionSet::new(2, labels.clone(), vec![hot]),
            Err(DetectionError::ConfidenceOutOfRange { .. })
        ));

        assert!(matches!(
            DetectionSet::new(2, labels, vec![object("k", "knob", vec![1.0, 0.0])]),
            Err(DetectionError::LabelNotInSet { .. })
        ));
    }
}
