//! Writes a self-contained synthetic workspace: detections, ground truth,
//! human labels, knowledge graph, spatial rule and a config tying them up.

use std::path::{Path, PathBuf};

use affordance_core::detection::synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};
use affordance_core::kb::{fixtures, EffectQuery};
use affordance_core::projection::TsneParams;
use affordance_core::spatial::{SpatialRule, DEFAULT_KEEP_THRESHOLD};

use crate::config::{PipelineConfig, ServiceConfig};
use crate::error::Result;
use crate::formats::{self, Assignment, LabelsFile};
use crate::session::session_id;

pub const DETECTIONS: &str = "detections.jsonl";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const LABELS: &str = "labels.json";
pub const GRAPH: &str = "knowledge_graph.json";
pub const RULE: &str = "spatial_rule.json";
pub const CONFIG: &str = "config.json";
pub const INJECTED: &str = "injected_false_positives.json";

/// Exemplar counts for the office preset: three doors, two handles, one
/// push bar and one button.
pub const OFFICE_EXEMPLARS: [(&str, usize); 4] = [("door", 3), ("handle", 2), ("push bar", 1), ("button", 1)];

pub fn door_rule() -> SpatialRule {
    SpatialRule::new("door", ["handle", "knob", "push bar", "button"], DEFAULT_KEEP_THRESHOLD)
        .expect("door rule is valid")
}

#[derive(Debug)]
pub struct SynthWorkspace {
    pub dataset: SyntheticDataset,
    pub config_path: PathBuf,
    pub session_id: String,
}

/// Generates the dataset with `seed` and writes every input file into `dir`.
/// The same seed is used for the projection.
pub fn write_workspace(dir: &Path, spec: &SyntheticSpec, seed: u64, exemplars: &[(&str, usize)]) -> Result<SynthWorkspace> {
    let dataset = generate_synthetic(spec, seed)?;
    let detections = formats::detections_bytes(&dataset.detections);
    let id = session_id(&detections, seed);
    formats::write_text(&dir.join(DETECTIONS), std::str::from_utf8(&detections).expect("JSON is UTF-8"))?;
    formats::write_json(&dir.join(GROUND_TRUTH), &dataset.ground_truth)?;
    let labels = LabelsFile {
        session_id: Some(id.clone()),
        assignments: dataset
            .pick_exemplars(exemplars)
            .into_iter()
            .map(|(object_id, label)| Assignment { object_id, label })
            .collect(),
    };
    formats::write_json(&dir.join(LABELS), &labels)?;
    formats::write_json(&dir.join(GRAPH), &fixtures::door_openers())?;
    formats::write_json(&dir.join(RULE), &door_rule())?;
    formats::write_json(&dir.join(INJECTED), &dataset.injected_false_positives)?;
    let config = PipelineConfig {
        detections_path: DETECTIONS.into(),
        ground_truth_path: Some(GROUND_TRUTH.into()),
        labels_path: Some(LABELS.into()),
        knowledge_graph_path: GRAPH.into(),
        spatial_rule_path: RULE.into(),
        goal: EffectQuery::new("door", "accessibility"),
        image_dir: None,
        tsne: TsneParams {
            seed,
            ..TsneParams::default()
        },
        iou_threshold: 0.5,
        output_dir: "session".into(),
        service: ServiceConfig::default(),
    };
    let config_path = dir.join(CONFIG);
    formats::write_json(&config_path, &config)?;
    Ok(SynthWorkspace {
        dataset,
        config_path,
        session_id: id,
    })
}
