//! On-disk formats.
//!
//! JSON documents are written pretty-printed with a trailing newline and
//! line-delimited files with one compact record per line, so identical state
//! always yields identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use affordance_core::detection::{BoundingBox, DetectedObject, DetectionError, DetectionSet, LabelSet};
use affordance_core::eval::{EvalReport, GroundTruthObject};
use affordance_core::kb::AffordanceGraph;
use affordance_core::relabel::RelabeledObject;
use affordance_core::spatial::{SpatialRule, SpatialVerdict};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DETECTIONS_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsHeader {
    pub format_version: u64,
    pub dimension: usize,
    pub label_set: Vec<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    object_id: String,
    frame_id: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    label: String,
    confidence: f64,
    embedding: Vec<f64>,
}

/// Relabel output line: the detection schema with the new label and
/// confidence, plus the detector's label and the raw cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabeledRecord {
    pub object_id: String,
    pub frame_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: String,
    pub confidence: f64,
    pub embedding: Vec<f64>,
    pub original_label: String,
    pub raw_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub object_id: String,
    pub label: String,
}

/// Human label assignments for one session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub assignments: Vec<Assignment>,
}

impl LabelsFile {
    /// Collapses to a map; a later entry for the same object wins.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.assignments
            .iter()
            .map(|a| (a.object_id.clone(), a.label.clone()))
            .collect()
    }

    pub fn from_map(session_id: Option<String>, map: &BTreeMap<String, String>) -> Self {
        Self {
            session_id,
            assignments: map
                .iter()
                .map(|(object_id, label)| Assignment {
                    object_id: object_id.clone(),
                    label: label.clone(),
                })
                .collect(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::schema(path, Some(e.line()), e))
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("in-memory JSON serialization cannot fail");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json_bytes(value))
}

fn to_jsonl_bytes<'a, T: Serialize + 'a>(header: Option<&DetectionsHeader>, records: impl IntoIterator<Item = &'a T>) -> Vec<u8> {
    let mut out = Vec::new();
    if let Some(h) = header {
        serde_json::to_writer(&mut out, h).expect("in-memory JSON serialization cannot fail");
        out.push(b'\n');
    }
    for r in records {
        serde_json::to_writer(&mut out, r).expect("in-memory JSON serialization cannot fail");
        out.push(b'\n');
    }
    out
}

fn header_of(set: &DetectionSet) -> DetectionsHeader {
    DetectionsHeader {
        format_version: DETECTIONS_FORMAT_VERSION,
        dimension: set.dimension(),
        label_set: set.label_set().labels().to_vec(),
    }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses a detections file already in memory. `path` is only used in errors.
pub fn parse_detections(path: &Path, text: &str) -> Result<DetectionSet> {
    let mut it = lines(text);
    let (line, first) = it
        .next()
        .ok_or_else(|| Error::schema(path, None, "missing header line"))?;
    let header: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::schema(path, Some(line), e))?;
    match header.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(DETECTIONS_FORMAT_VERSION) => {}
        Some(found) => {
            return Err(Error::SchemaVersionMismatch {
                path: path.into(),
                found,
                supported: DETECTIONS_FORMAT_VERSION,
            })
        }
        None => return Err(Error::schema(path, Some(line), "header lacks an integer format_version")),
    }
    let header: DetectionsHeader = serde_json::from_value(header).map_err(|e| Error::schema(path, Some(line), e))?;
    let label_set = LabelSet::new(header.label_set).map_err(|e| Error::schema(path, Some(line), e))?;
    if header.dimension == 0 {
        return Err(Error::schema(path, Some(line), DetectionError::ZeroDimension));
    }

    let mut objects = Vec::new();
    for (line, text) in it {
        let raw: RawRecord = serde_json::from_str(text).map_err(|e| Error::schema(path, Some(line), e))?;
        let [x0, y0, x1, y1] = raw.bbox;
        let bbox = BoundingBox::new(x0, y0, x1, y1).map_err(|e| Error::schema(path, Some(line), e))?;
        let object = DetectedObject {
            object_id: raw.object_id,
            frame_id: raw.frame_id,
            bbox,
            label: raw.label,
            confidence: raw.confidence,
            embedding: raw.embedding,
        };
        match object.validate(header.dimension) {
            Ok(()) => {}
            Err(e @ (DetectionError::DimensionMismatch { .. } | DetectionError::ZeroNormEmbedding { .. })) => {
                return Err(e.into())
            }
            Err(e) => return Err(Error::schema(path, Some(line), e)),
        }
        objects.push(object);
    }
    DetectionSet::new(header.dimension, label_set, objects).map_err(|e| Error::schema(path, None, e))
}

pub fn read_detections(path: &Path) -> Result<DetectionSet> {
    parse_detections(path, &read_text(path)?)
}

pub fn detections_bytes(set: &DetectionSet) -> Vec<u8> {
    to_jsonl_bytes(Some(&header_of(set)), set.objects())
}

pub fn write_detections(path: &Path, set: &DetectionSet) -> Result<()> {
    write_bytes(path, &detections_bytes(set))
}

/// Joins relabel results with the embeddings they were computed from.
pub fn relabeled_records(set: &DetectionSet, relabeled: &[RelabeledObject]) -> Vec<RelabeledRecord> {
    relabeled
        .iter()
        .map(|r| RelabeledRecord {
            object_id: r.object_id.clone(),
            frame_id: r.frame_id.clone(),
            bbox: r.bbox,
            label: r.new_label.clone(),
            confidence: r.new_confidence,
            embedding: set.get(&r.object_id).map(|o| o.embedding.clone()).unwrap_or_default(),
            original_label: r.original_label.clone(),
            raw_similarity: r.raw_similarity,
        })
        .collect()
}

/// Writes relabel output. The header's label set is the detector's, extended
/// with any new labels introduced by human exemplars.
pub fn write_relabeled(path: &Path, set: &DetectionSet, relabeled: &[RelabeledObject]) -> Result<()> {
    let mut header = header_of(set);
    header.label_set = set
        .label_set()
        .extended(relabeled.iter().map(|r| r.new_label.as_str()))
        .labels()
        .to_vec();
    write_bytes(path, &to_jsonl_bytes(Some(&header), &relabeled_records(set, relabeled)))
}

/// Reads relabel output back into relabel results.
pub fn read_relabeled(path: &Path) -> Result<Vec<RelabeledObject>> {
    let text = read_text(path)?;
    let mut it = lines(&text);
    if it.next().is_none() {
        return Err(Error::schema(path, None, "missing header line"));
    }
    it.map(|(line, l)| {
        let r: RelabeledRecord = serde_json::from_str(l).map_err(|e| Error::schema(path, Some(line), e))?;
        Ok(RelabeledObject {
            object_id: r.object_id,
            frame_id: r.frame_id,
            bbox: r.bbox,
            original_label: r.original_label,
            new_label: r.label,
            new_confidence: r.confidence,
            raw_similarity: r.raw_similarity,
        })
    })
    .collect()
}

pub fn write_verdicts(path: &Path, verdicts: &[SpatialVerdict]) -> Result<()> {
    write_bytes(path, &to_jsonl_bytes(None, verdicts))
}

pub fn read_verdicts(path: &Path) -> Result<Vec<SpatialVerdict>> {
    let text = read_text(path)?;
    lines(&text)
        .map(|(line, l)| serde_json::from_str(l).map_err(|e| Error::schema(path, Some(line), e)))
        .collect()
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthObject>> {
    read_json(path)
}

pub fn read_labels(path: &Path) -> Result<LabelsFile> {
    read_json(path)
}

pub fn read_rule(path: &Path) -> Result<SpatialRule> {
    let rule: SpatialRule = read_json(path)?;
    rule.validate()?;
    Ok(rule)
}

/// Loads a knowledge graph, rejecting graphs with any violation.
pub fn read_graph(path: &Path) -> Result<AffordanceGraph> {
    let graph: AffordanceGraph = read_json(path)?;
    let violations = graph.validate();
    if violations.is_empty() {
        Ok(graph)
    } else {
        Err(Error::InvalidGraph {
            path: path.into(),
            violations,
        })
    }
}

/// Per-class AP of the detector, relabeled and verified outputs side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub detector: EvalReport,
    pub relabeled: EvalReport,
    pub verified: EvalReport,
}

impl Comparison {
    /// One row per class seen in any report, then an `mAP` row. Classes
    /// without ground truth have empty AP cells.
    pub fn to_csv(&self) -> String {
        let reports = [&self.detector, &self.relabeled, &self.verified];
        let mut classes: Vec<&String> = reports.iter().flat_map(|r| r.counts.keys()).collect();
        classes.sort();
        classes.dedup();
        let cell = |v: Option<&f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("class,detector_ap,relabeled_ap,verified_ap,ground_truth\n");
        for class in classes {
            let gt = reports
                .iter()
                .find_map(|r| r.counts.get(class))
                .map_or(0, |c| c.ground_truth);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(class),
                cell(self.detector.per_class_ap.get(class)),
                cell(self.relabeled.per_class_ap.get(class)),
                cell(self.verified.per_class_ap.get(class)),
                gt
            ));
        }
        out.push_str(&format!(
            "mAP,{},{},{},\n",
            self.detector.map_score, self.relabeled.map_score, self.verified.map_score
        ));
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}
