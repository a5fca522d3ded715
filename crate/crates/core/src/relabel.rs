//! Nearest-exemplar relabeling.
//!
//! A detection takes the label of the human exemplar with the highest cosine
//! similarity to its embedding; its confidence becomes that similarity clamped
//! to `[0, 1]`. Boxes and ids pass through untouched.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{BoundingBox, DetectedObject, DetectionSet};
use crate::math;

/// Slack allowed beyond `[-1, 1]` before a similarity is considered broken.
const ROUNDOFF: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelabelError {
    #[error("zero-norm vector{}", .0.as_ref().map(|id| alloc::format!(" (object {id})")).unwrap_or_default())]
    ZeroNormVector(Option<String>),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("exemplar store is empty")]
    EmptyStore,
    #[error("unknown object id {0}")]
    UnknownObjectId(String),
}

/// Cosine similarity `a.b / (|a| |b|)`, clamped into `[-1, 1]` to absorb round-off.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, RelabelError> {
    if a.len() != b.len() {
        return Err(RelabelError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (math::norm(a), math::norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(RelabelError::ZeroNormVector(None));
    }
    let c = math::dot(a, b) / (na * nb);
    debug_assert!(c.abs() <= 1.0 + ROUNDOFF, "cosine {c} out of range");
    Ok(c.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub embedding: Vec<f64>,
    pub label: String,
    pub source_object_id: String,
}

/// The sparse human-labeled set driving relabeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StoreRepr", into = "StoreRepr")]
pub struct ExemplarStore {
    dimension: usize,
    exemplars: Vec<Exemplar>,
    // cached |x_i|
    norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoreRepr {
    dimension: usize,
    exemplars: Vec<Exemplar>,
}

impl TryFrom<StoreRepr> for ExemplarStore {
    type Error = RelabelError;

    fn try_from(r: StoreRepr) -> Result<Self, Self::Error> {
        Self::new(r.dimension, r.exemplars)
    }
}

impl From<ExemplarStore> for StoreRepr {
    fn from(s: ExemplarStore) -> Self {
        Self {
            dimension: s.dimension,
            exemplars: s.exemplars,
        }
    }
}

impl ExemplarStore {
    /// Builds a store, checking dimensions and norms. An empty store is
    /// allowed here but cannot relabel anything.
    pub fn new(dimension: usize, exemplars: Vec<Exemplar>) -> Result<Self, RelabelError> {
        let mut norms = Vec::with_capacity(exemplars.len());
        for e in &exemplars {
            if e.embedding.len() != dimension {
                return Err(RelabelError::DimensionMismatch {
                    expected: dimension,
                    found: e.embedding.len(),
                });
            }
            let n = math::norm(&e.embedding);
            if n == 0.0 {
                return Err(RelabelError::ZeroNormVector(Some(e.source_object_id.clone())));
            }
            norms.push(n);
        }
        Ok(Self {
            dimension,
            exemplars,
            norms,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    /// Index and similarity of the most similar exemplar; first index wins ties.
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64), RelabelError> {
        if self.exemplars.is_empty() {
            return Err(RelabelError::EmptyStore);
        }
        if query.len() != self.dimension {
            return Err(RelabelError::DimensionMismatch {
                expected: self.dimension,
                found: query.len(),
            });
        }
        let nq = math::norm(query);
        if nq == 0.0 {
            return Err(RelabelError::ZeroNormVector(None));
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, (e, ne)) in self.exemplars.iter().zip(&self.norms).enumerate() {
            let c = (math::dot(query, &e.embedding) / (nq * ne)).clamp(-1.0, 1.0);
            if c > best.1 {
                best = (i, c);
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabeledObject {
    pub object_id: String,
    pub frame_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub original_label: String,
    pub new_label: String,
    pub new_confidence: f64,
    pub raw_similarity: f64,
}

pub fn relabel(object: &DetectedObject, store: &ExemplarStore) -> Result<RelabeledObject, RelabelError> {
    let (index, similarity) = store.nearest(&object.embedding).map_err(|e| match e {
        RelabelError::ZeroNormVector(_) => RelabelError::ZeroNormVector(Some(object.object_id.clone())),
        other => other,
    })?;
    Ok(RelabeledObject {
        object_id: object.object_id.clone(),
        frame_id: object.frame_id.clone(),
        bbox: object.bbox,
        original_label: object.label.clone(),
        new_label: store.exemplars[index].label.clone(),
        new_confidence: similarity.clamp(0.0, 1.0),
        raw_similarity: similarity,
    })
}

/// Relabels every object, preserving order.
pub fn relabel_set(detections: &DetectionSet, store: &ExemplarStore) -> Result<Vec<RelabeledObject>, RelabelError> {
    relabel_objects(detections.objects(), store)
}

pub fn relabel_objects(objects: &[DetectedObject], store: &ExemplarStore) -> Result<Vec<RelabeledObject>, RelabelError> {
    objects.iter().map(|o| relabel(o, store)).collect()
}

/// Builds a store from human assignments. Later assignments to the same id
/// replace earlier ones; exemplars come out in ascending object-id order.
pub fn build_store<I, K, V>(detections: &DetectionSet, assignments: I) -> Result<ExemplarStore, RelabelError>
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<String>,
{
    let merged: BTreeMap<String, String> = assignments
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect();
    let mut exemplars = Vec::with_capacity(merged.len());
    for (object_id, label) in merged {
        let object = detections
            .get(&object_id)
            .ok_or_else(|| RelabelError::UnknownObjectId(object_id.clone()))?;
        exemplars.push(Exemplar {
            embedding: object.embedding.clone(),
            label,
            source_object_id: object_id,
        });
    }
    ExemplarStore::new(detections.dimension(), exemplars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::LabelSet;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn exemplar(label: &str, embedding: Vec<f64>) -> Exemplar {
        Exemplar {
            embedding,
            label: label.into(),
            source_object_id: label.into(),
        }
    }

    fn object(id: &str, embedding: Vec<f64>) -> DetectedObject {
        DetectedObject {
            object_id: id.into(),
            frame_id: "f0".into(),
            bbox: BoundingBox::new(1.5, 2.25, 7.0, 9.125).unwrap(),
            label: "knob".into(),
            confidence: 0.42,
            embedding,
        }
    }

    /// Exhaustive reference: score every exemplar, keep the first maximum.
    fn brute_force(query: &[f64], store: &[Exemplar]) -> (String, f64) {
        let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut scores = Vec::new();
        for e in store {
            let en = e.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d: f64 = query.iter().zip(&e.embedding).map(|(a, b)| a * b).sum();
            scores.push((d / (qn * en)).clamp(-1.0, 1.0));
        }
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let idx = scores.iter().position(|s| *s == best).unwrap();
        (store[idx].label.clone(), best)
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - expected).abs() < 1e-12);
        assert!((c - 0.974632).abs() < 1e-6);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(RelabelError::ZeroNormVector(None)));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(RelabelError::DimensionMismatch { .. })));
    }

    #[test]
    fn relabel_examples() {
        let store = ExemplarStore::new(2, vec![exemplar("handle", vec![1.0, 0.0]), exemplar("knob", vec![0.0, 1.0])]).unwrap();
        let out = relabel(&object("q", vec![0.9, 0.1]), &store).unwrap();
        assert_eq!(out.new_label, "handle");
        let expected = 0.9 / (0.82f64).sqrt();
        assert!((out.new_confidence - expected).abs() < 1e-12);
        assert!((out.new_confidence - 0.9939).abs() < 1e-4);
        assert_eq!(out.original_label, "knob");
        assert_eq!(out.bbox, object("q", vec![1.0, 0.0]).bbox);

        let three = ExemplarStore::new(
            2,
            vec![exemplar("a", vec![1.0, 0.0]), exemplar("b", vec![0.0, 1.0]), exemplar("c", vec![0.6, -0.8])],
        )
        .unwrap();
        let out = relabel(&object("q", vec![0.6, -0.8]), &three).unwrap();
        assert_eq!((out.new_label.as_str(), out.new_confidence), ("c", 1.0));

        // negative similarity is reported raw but clamped for planning
        let neg = ExemplarStore::new(2, vec![exemplar("a", vec![1.0, 0.0])]).unwrap();
        let out = relabel(&object("q", vec![-1.0, 0.1]), &neg).unwrap();
        assert!(out.raw_similarity < 0.0);
        assert_eq!(out.new_confidence, 0.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let store = ExemplarStore::new(2, vec![exemplar("first", vec![1.0, 1.0]), exemplar("second", vec![2.0, 2.0])]).unwrap();
        assert_eq!(relabel(&object("q", vec![1.0, 1.0]), &store).unwrap().new_label, "first");
    }

    #[test]
    fn relabel_errors() {
        let empty = ExemplarStore::new(2, vec![]).unwrap();
        assert_eq!(relabel(&object("q", vec![1.0, 0.0]), &empty), Err(RelabelError::EmptyStore));
        let store = ExemplarStore::new(2, vec![exemplar("a", vec![1.0, 0.0])]).unwrap();
        assert!(matches!(relabel(&object("q", vec![1.0, 0.0, 0.0]), &store), Err(RelabelError::DimensionMismatch { .. })));
        assert_eq!(
            relabel_objects(&[object("ok", vec![1.0, 0.0]), object("bad", vec![0.0, 0.0])], &store),
            Err(RelabelError::ZeroNormVector(Some("bad".into())))
        );
        assert!(ExemplarStore::new(2, vec![exemplar("z", vec![0.0, 0.0])]).is_err());
        assert_eq!(relabel_objects(&[], &store), Ok(vec![]));
    }

    fn ten_detections() -> DetectionSet {
        let objects = (0..10)
            .map(|i| {
                let mut o = object(&format!("o{i}"), vec![1.0 + i as f64, 1.0]);
                o.label = "door".into();
                o
            })
            .collect();
        DetectionSet::new(2, LabelSet::new(["door"]).unwrap(), objects).unwrap()
    }

    #[test]
    fn build_store_examples() {
        let set = ten_detections();
        let store = build_store(&set, [("o7", "knob"), ("o2", "handle")]).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.exemplars()[0].source_object_id, "o2");
        assert_eq!(store.exemplars()[0].embedding, set.get("o2").unwrap().embedding);

        assert_eq!(build_store(&set, [("z9", "knob")]), Err(RelabelError::UnknownObjectId("z9".into())));

        let store = build_store(&set, [("o3", "knob"), ("o3", "handle")]).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.exemplars()[0].label, "handle");
    }

    fn arb_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0..1.0f64, d).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(query in arb_vec(6), raw in prop::collection::vec(arb_vec(6), 1..12)) {
            let exemplars: Vec<_> = raw.into_iter().enumerate().map(|(i, v)| exemplar(&format!("l{}", i % 4), v)).collect();
            let store = ExemplarStore::new(6, exemplars.clone()).unwrap();
            let out = relabel(&object("q", query.clone()), &store).unwrap();
            let (label, sim) = brute_force(&query, &exemplars);
            prop_assert_eq!(out.new_label, label);
            prop_assert!((out.raw_similarity - sim).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&out.new_confidence));
        }

        #[test]
        fn positive_scaling_keeps_label(query in arb_vec(4), raw in prop::collection::vec(arb_vec(4), 1..8), s in 0.01..100.0f64) {
            let exemplars: Vec<_> = raw.iter().enumerate().map(|(i, v)| exemplar(&format!("l{i}"), v.clone())).collect();
            let scaled: Vec<_> = raw.iter().enumerate().map(|(i, v)| exemplar(&format!("l{i}"), v.iter().map(|x| x * s).collect())).collect();
            let a = relabel(&object("q", query.clone()), &ExemplarStore::new(4, exemplars).unwrap()).unwrap();
            let b = relabel(&object("q", query.iter().map(|x| x * s).collect()), &ExemplarStore::new(4, scaled).unwrap()).unwrap();
            prop_assert!((a.raw_similarity - b.raw_similarity).abs() < 1e-9);
            // labels can only differ between near-exact ties
            if a.new_label != b.new_label {
                let sims: Vec<f64> = raw.iter().map(|v| cosine_similarity(&query, v).unwrap()).collect();
                let top = sims.iter().filter(|c| (**c - a.raw_similarity).abs() < 1e-9).count();
                prop_assert!(top > 1);
            }
        }

        #[test]
        fn symmetric_and_bounded(a in arb_vec(5), b in arb_vec(5)) {
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
