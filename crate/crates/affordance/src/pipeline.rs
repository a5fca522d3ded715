//! Stage functions and the batch runner.
//!
//! Every stage mutates a [`SessionState`] in place and annotates its errors
//! with the stage name. Callers that must not observe partial updates work on
//! a clone.

use std::collections::BTreeMap;

use affordance_core::detection::{Detector, LabelSet};
use affordance_core::eval::{evaluate, EvalReport, GroundTruthObject, Prediction};
use affordance_core::kb::{ActionMatch, AffordanceGraph, EffectQuery};
use affordance_core::projection::{project_detections, ProjectionLayout, TsneParams, TsneTrace};
use affordance_core::relabel::{build_store, relabel_set};
use affordance_core::spatial::{retain_verified, verify, SpatialRule};
use affordance_core::DetectionSet;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::formats::{self, Comparison, LabelsFile};
use crate::playback::FilePlayback;
use crate::session::{save_session, session_id, SessionState, Stage};

/// A verified object the goal's actions can be applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTarget {
    pub object_id: String,
    pub frame_id: String,
    pub label: String,
    pub confidence: f64,
    pub affordance_id: String,
    pub probability: f64,
}

/// Actions achieving the goal, and the verified objects to apply them to,
/// most confident first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub goal: EffectQuery,
    pub actions: Vec<ActionMatch>,
    pub targets: Vec<PlanTarget>,
}

/// Inputs loaded from the files named in a config.
#[derive(Debug, Clone)]
pub struct Resources {
    pub graph: AffordanceGraph,
    pub rule: SpatialRule,
    pub ground_truth: Option<Vec<GroundTruthObject>>,
    pub goal: EffectQuery,
    pub iou_threshold: f64,
}

impl Resources {
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let graph = load_graph(config)?;
        let rule = load_rule(config)?;
        let ground_truth = config
            .ground_truth_path
            .as_deref()
            .map(formats::read_ground_truth)
            .transpose()
            .map_err(|e| e.at(Stage::Evaluated))?;
        Ok(Self {
            graph,
            rule,
            ground_truth,
            goal: config.goal.clone(),
            iou_threshold: config.iou_threshold,
        })
    }
}

fn load_graph(config: &PipelineConfig) -> Result<AffordanceGraph> {
    formats::read_graph(&config.knowledge_graph_path).map_err(|e| e.at(Stage::Ingested))
}

fn load_rule(config: &PipelineConfig) -> Result<SpatialRule> {
    formats::read_rule(&config.spatial_rule_path).map_err(|e| e.at(Stage::Verified))
}

/// Reads the detections recorded for the goal's prompt and opens a session.
pub fn ingest(config: &PipelineConfig, graph: &AffordanceGraph) -> Result<SessionState> {
    let run = || -> Result<SessionState> {
        let labels: LabelSet = graph.label_set_for_goal(&config.goal)?;
        let mut detector = FilePlayback::new(&config.detections_path);
        let set = detector.detect(&labels)?;
        let id = session_id(detector.last_bytes().unwrap_or_default(), config.tsne.seed);
        Ok(SessionState::new(id, labels.prompt(), set))
    };
    run().map_err(|e| e.at(Stage::Ingested))
}

pub fn compute_projection(set: &DetectionSet, params: &TsneParams) -> Result<(ProjectionLayout, TsneTrace)> {
    project_detections(set, params).map_err(|e| Error::from(e).at(Stage::Projected))
}

pub fn install_projection(state: &mut SessionState, layout: ProjectionLayout, trace: TsneTrace) {
    state.reset_to_before(Stage::Projected);
    state.layout = Some(layout);
    state.trace = Some(trace);
    state.stage = Stage::Projected;
}

pub fn project(state: &mut SessionState, params: &TsneParams) -> Result<()> {
    let (layout, trace) = compute_projection(&state.detection_set, params)?;
    install_projection(state, layout, trace);
    Ok(())
}

/// Replaces any previous assignments and rebuilds the exemplar store.
pub fn apply_labels(state: &mut SessionState, labels: &LabelsFile) -> Result<()> {
    let run = |state: &mut SessionState| -> Result<()> {
        state.require(Stage::Projected)?;
        if let Some(found) = &labels.session_id {
            if *found != state.session_id {
                return Err(Error::SessionMismatch {
                    expected: state.session_id.clone(),
                    found: found.clone(),
                });
            }
        }
        let assignments = labels.to_map();
        for label in assignments.values() {
            LabelSet::new([label.as_str()])?;
        }
        let store = build_store(&state.detection_set, assignments.clone())?;
        state.reset_to_before(Stage::Labeled);
        state.assignments = assignments;
        state.store = Some(store);
        state.stage = Stage::Labeled;
        Ok(())
    };
    run(state).map_err(|e| e.at(Stage::Labeled))
}

pub fn relabel(state: &mut SessionState) -> Result<()> {
    let run = |state: &mut SessionState| -> Result<()> {
        state.require(Stage::Labeled)?;
        let store = state.store.as_ref().ok_or(Error::StageNotReached {
            needed: Stage::Labeled,
            current: state.stage,
        })?;
        let relabeled = relabel_set(&state.detection_set, store)?;
        state.reset_to_before(Stage::Relabeled);
        state.relabeled = Some(relabeled);
        state.stage = Stage::Relabeled;
        Ok(())
    };
    run(state).map_err(|e| e.at(Stage::Relabeled))
}

pub fn verify_stage(state: &mut SessionState, rule: &SpatialRule, graph: &AffordanceGraph, goal: &EffectQuery) -> Result<()> {
    let run = |state: &mut SessionState| -> Result<()> {
        state.require(Stage::Relabeled)?;
        let relabeled = state.relabeled.as_deref().unwrap_or_default();
        let verdicts = verify(relabeled, rule);
        let kept = retain_verified(relabeled, &verdicts);
        let actions = graph.query_actions_for_effect(&goal.object, &goal.outcome)?;
        let mut targets = Vec::new();
        for object in &kept {
            let best = actions.iter().find(|a| {
                graph
                    .entity(&a.direct_object)
                    .is_some_and(|e| e.name == object.new_label)
            });
            if let Some(action) = best {
                targets.push(PlanTarget {
                    object_id: object.object_id.clone(),
                    frame_id: object.frame_id.clone(),
                    label: object.new_label.clone(),
                    confidence: object.new_confidence,
                    affordance_id: action.affordance_id.clone(),
                    probability: action.probability,
                });
            }
        }
        targets.sort_by(|a, b| {
            b.confidence
                .total_cmp(&a.confidence)
                .then_with(|| a.object_id.cmp(&b.object_id))
        });
        state.reset_to_before(Stage::Verified);
        state.verdicts = Some(verdicts);
        state.plan = Some(Plan {
            goal: goal.clone(),
            actions,
            targets,
        });
        state.stage = Stage::Verified;
        Ok(())
    };
    run(state).map_err(|e| e.at(Stage::Verified))
}

pub fn evaluate_stage(state: &mut SessionState, ground_truth: &[GroundTruthObject], iou_threshold: f64) -> Result<()> {
    let run = |state: &mut SessionState| -> Result<()> {
        state.require(Stage::Verified)?;
        let relabeled = state.relabeled.as_deref().unwrap_or_default();
        let verdicts = state.verdicts.as_deref().unwrap_or_default();
        let detector: Vec<Prediction> = state.detection_set.objects().iter().map(Prediction::from).collect();
        let relabeled_preds: Vec<Prediction> = relabeled.iter().map(Prediction::from).collect();
        let verified_preds: Vec<Prediction> = retain_verified(relabeled, verdicts).iter().map(Prediction::from).collect();
        let comparison = Comparison {
            detector: evaluate(&detector, ground_truth, iou_threshold),
            relabeled: evaluate(&relabeled_preds, ground_truth, iou_threshold),
            verified: evaluate(&verified_preds, ground_truth, iou_threshold),
        };
        state.report = Some(comparison.verified.clone());
        state.comparison = Some(comparison);
        state.stage = Stage::Evaluated;
        Ok(())
    };
    run(state).map_err(|e| e.at(Stage::Evaluated))
}

/// Everything after the human step: relabel, verify and, when ground truth
/// is available, evaluate.
pub fn apply_labels_and_finish(state: &mut SessionState, labels: &LabelsFile, res: &Resources) -> Result<()> {
    apply_labels(state, labels)?;
    relabel(state)?;
    verify_stage(state, &res.rule, &res.graph, &res.goal)?;
    if let Some(gt) = &res.ground_truth {
        evaluate_stage(state, gt, res.iou_threshold)?;
    }
    Ok(())
}

/// Runs every stage in order, writing all artifacts to `output_dir`.
pub fn run_batch(config: &PipelineConfig) -> Result<EvalReport> {
    let graph = load_graph(config)?;
    let mut state = ingest(config, &graph)?;
    project(&mut state, &config.tsne)?;
    let labels_path = config.labels_path.as_deref().ok_or_else(|| {
        Error::Config("batch mode needs labels_path (there is no interactive labeler)".into()).at(Stage::Labeled)
    })?;
    let labels = formats::read_labels(labels_path).map_err(|e| e.at(Stage::Labeled))?;
    apply_labels(&mut state, &labels)?;
    relabel(&mut state)?;
    let rule = load_rule(config)?;
    verify_stage(&mut state, &rule, &graph, &config.goal)?;
    let gt_path = config
        .ground_truth_path
        .as_deref()
        .ok_or_else(|| Error::Config("batch mode needs ground_truth_path".into()).at(Stage::Evaluated))?;
    let gt = formats::read_ground_truth(gt_path).map_err(|e| e.at(Stage::Evaluated))?;
    evaluate_stage(&mut state, &gt, config.iou_threshold)?;
    save_session(&state, &config.output_dir)?;
    Ok(state.report.clone().unwrap_or_else(|| unreachable!("evaluated stage always sets the report")))
}

/// Number of objects per label, for summaries.
pub fn label_histogram<'a>(labels: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for l in labels {
        *out.entry(l.to_string()).or_insert(0) += 1;
    }
    out
}
