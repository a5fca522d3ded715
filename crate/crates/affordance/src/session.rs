//! Session state and its directory layout.
//!
//! A session directory holds `session.json` plus one artifact per reached
//! stage. Files belonging to stages not yet reached are removed on save.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use affordance_core::detection::DetectionSet;
use affordance_core::eval::EvalReport;
use affordance_core::projection::{ProjectionLayout, TsneTrace};
use affordance_core::relabel::{ExemplarStore, RelabeledObject};
use affordance_core::spatial::SpatialVerdict;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::{self, Comparison, LabelsFile};
use crate::pipeline::Plan;

pub const SESSION_FORMAT_VERSION: u64 = 1;

pub const SESSION_FILE: &str = "session.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const LAYOUT_FILE: &str = "layout.json";
pub const LABELS_FILE: &str = "labels.json";
pub const EXEMPLARS_FILE: &str = "exemplars.json";
pub const RELABELED_FILE: &str = "relabeled.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const PLAN_FILE: &str = "plan.json";
pub const REPORT_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const COMPARISON_CSV_FILE: &str = "report.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingested,
    Projected,
    Labeled,
    Relabeled,
    Verified,
    Evaluated,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingested,
        Stage::Projected,
        Stage::Labeled,
        Stage::Relabeled,
        Stage::Verified,
        Stage::Evaluated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingested => "ingested",
            Stage::Projected => "projected",
            Stage::Labeled => "labeled",
            Stage::Relabeled => "relabeled",
            Stage::Verified => "verified",
            Stage::Evaluated => "evaluated",
        }
    }

    /// Artifact files written once this stage is reached.
    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Ingested => &[DETECTIONS_FILE],
            Stage::Projected => &[LAYOUT_FILE],
            Stage::Labeled => &[LABELS_FILE, EXEMPLARS_FILE],
            Stage::Relabeled => &[RELABELED_FILE],
            Stage::Verified => &[VERDICTS_FILE, PLAN_FILE],
            Stage::Evaluated => &[REPORT_FILE, COMPARISON_FILE, COMPARISON_CSV_FILE],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Session id: the first 16 hex digits of SHA-256 over the detections file
/// bytes followed by the little-endian seed.
pub fn session_id(detections_bytes: &[u8], seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(detections_bytes);
    h.update(seed.to_le_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub stage: Stage,
    /// Detector prompt derived from the knowledge-graph goal.
    pub prompt: String,
    pub detection_set: DetectionSet,
    pub layout: Option<ProjectionLayout>,
    pub trace: Option<TsneTrace>,
    pub assignments: BTreeMap<String, String>,
    pub store: Option<ExemplarStore>,
    pub relabeled: Option<Vec<RelabeledObject>>,
    pub verdicts: Option<Vec<SpatialVerdict>>,
    pub plan: Option<Plan>,
    /// Report of the verified output.
    pub report: Option<EvalReport>,
    pub comparison: Option<Comparison>,
}

impl SessionState {
    pub fn new(session_id: String, prompt: String, detection_set: DetectionSet) -> Self {
        Self {
            session_id,
            stage: Stage::Ingested,
            prompt,
            detection_set,
            layout: None,
            trace: None,
            assignments: BTreeMap::new(),
            store: None,
            relabeled: None,
            verdicts: None,
            plan: None,
            report: None,
            comparison: None,
        }
    }

    pub fn require(&self, needed: Stage) -> Result<()> {
        if self.stage >= needed {
            Ok(())
        } else {
            Err(Error::StageNotReached {
                needed,
                current: self.stage,
            })
        }
    }

    /// Drops everything from `stage` on and falls back to the stage before it.
    pub fn reset_to_before(&mut self, stage: Stage) {
        if stage <= Stage::Projected {
            self.layout = None;
            self.trace = None;
        }
        if stage <= Stage::Labeled {
            self.assignments.clear();
            self.store = None;
        }
        if stage <= Stage::Relabeled {
            self.relabeled = None;
        }
        if stage <= Stage::Verified {
            self.verdicts = None;
            self.plan = None;
        }
        self.report = None;
        self.comparison = None;
        let idx = Stage::ALL.iter().position(|s| *s == stage).unwrap_or(0);
        self.stage = Stage::ALL[idx.saturating_sub(1)].min(self.stage);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionFile {
    format_version: u64,
    session_id: String,
    stage: Stage,
    prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    projection: Option<TsneTrace>,
}

fn missing<T>(dir: &Path, file: &str, stage: Stage) -> Result<T> {
    Err(Error::schema(
        dir.join(file),
        None,
        format!("stage {stage} reached but artifact is missing"),
    ))
}

/// Writes the session directory, removing artifacts of unreached stages.
pub fn save_session(state: &SessionState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stage = state.stage;
    formats::write_detections(&dir.join(DETECTIONS_FILE), &state.detection_set)?;
    if let Some(layout) = state.layout.as_ref().filter(|_| stage >= Stage::Projected) {
        formats::write_json(&dir.join(LAYOUT_FILE), layout)?;
    }
    if let Some(store) = state.store.as_ref().filter(|_| stage >= Stage::Labeled) {
        let labels = LabelsFile::from_map(Some(state.session_id.clone()), &state.assignments);
        formats::write_json(&dir.join(LABELS_FILE), &labels)?;
        formats::write_json(&dir.join(EXEMPLARS_FILE), store)?;
    }
    if let Some(relabeled) = state.relabeled.as_ref().filter(|_| stage >= Stage::Relabeled) {
        formats::write_relabeled(&dir.join(RELABELED_FILE), &state.detection_set, relabeled)?;
    }
    if stage >= Stage::Verified {
        if let Some(verdicts) = &state.verdicts {
            formats::write_verdicts(&dir.join(VERDICTS_FILE), verdicts)?;
        }
        if let Some(plan) = &state.plan {
            formats::write_json(&dir.join(PLAN_FILE), plan)?;
        }
    }
    if stage >= Stage::Evaluated {
        if let Some(report) = &state.report {
            formats::write_json(&dir.join(REPORT_FILE), report)?;
        }
        if let Some(cmp) = &state.comparison {
            formats::write_json(&dir.join(COMPARISON_FILE), cmp)?;
            formats::write_text(&dir.join(COMPARISON_CSV_FILE), &cmp.to_csv())?;
        }
    }
    for later in Stage::ALL.iter().filter(|s| **s > stage) {
        for file in later.artifacts() {
            let path = dir.join(file);
            match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(Error::io(path, e)),
            }
        }
    }
    let meta = SessionFile {
        format_version: SESSION_FORMAT_VERSION,
        session_id: state.session_id.clone(),
        stage,
        prompt: state.prompt.clone(),
        projection: state.trace.clone().filter(|_| stage >= Stage::Projected),
    };
    // Written last so a crash mid-save never advertises a stage whose
    // artifacts are incomplete.
    formats::write_json(&dir.join(SESSION_FILE), &meta)
}

pub fn load_session(dir: &Path) -> Result<SessionState> {
    let meta_path = dir.join(SESSION_FILE);
    let raw: serde_json::Value = formats::read_json(&meta_path)?;
    match raw.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(SESSION_FORMAT_VERSION) => {}
        Some(found) => {
            return Err(Error::SchemaVersionMismatch {
                path: meta_path,
                found,
                supported: SESSION_FORMAT_VERSION,
            })
        }
        None => return Err(Error::schema(&meta_path, None, "missing integer format_version")),
    }
    let meta: SessionFile = serde_json::from_value(raw).map_err(|e| Error::schema(&meta_path, None, e))?;
    let stage = meta.stage;
    let detection_set = formats::read_detections(&dir.join(DETECTIONS_FILE))?;
    let mut state = SessionState::new(meta.session_id, meta.prompt, detection_set);
    state.stage = stage;
    let load = |file: &str, at: Stage| -> Result<bool> {
        if stage < at {
            return Ok(false);
        }
        if dir.join(file).is_file() {
            Ok(true)
        } else {
            missing(dir, file, at)
        }
    };
    if load(LAYOUT_FILE, Stage::Projected)? {
        state.layout = Some(formats::read_json(&dir.join(LAYOUT_FILE))?);
        state.trace = meta.projection;
    }
    if load(LABELS_FILE, Stage::Labeled)? && load(EXEMPLARS_FILE, Stage::Labeled)? {
        state.assignments = formats::read_labels(&dir.join(LABELS_FILE))?.to_map();
        state.store = Some(formats::read_json(&dir.join(EXEMPLARS_FILE))?);
    }
    if load(RELABELED_FILE, Stage::Relabeled)? {
        state.relabeled = Some(formats::read_relabeled(&dir.join(RELABELED_FILE))?);
    }
    if load(VERDICTS_FILE, Stage::Verified)? && load(PLAN_FILE, Stage::Verified)? {
        state.verdicts = Some(formats::read_verdicts(&dir.join(VERDICTS_FILE))?);
        state.plan = Some(formats::read_json(&dir.join(PLAN_FILE))?);
    }
    if load(REPORT_FILE, Stage::Evaluated)? && load(COMPARISON_FILE, Stage::Evaluated)? {
        state.report = Some(formats::read_json(&dir.join(REPORT_FILE))?);
        state.comparison = Some(formats::read_json(&dir.join(COMPARISON_FILE))?);
    }
    Ok(state)
}
