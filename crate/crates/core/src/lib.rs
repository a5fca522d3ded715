//! Core algorithms for turning coarse open-vocabulary detections into
//! actionable affordance labels.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! sessions and the command line live in the `affordance` crate.
//!
//! * [`kb`] stores the affordance knowledge graph and answers goal queries.
//! * [`detection`] holds boxes, label sets, detections, prompt building and
//!   the deterministic synthetic data generator.
//! * [`projection`] is an exact t-SNE used to lay objects out on a 2D canvas.
//! * [`relabel`] is nearest-exemplar relabeling by cosine similarity.
//! * [`spatial`] scores door/opener geometry and suppresses misplaced openers.
//! * [`eval`] computes IoU-matched average precision and mAP.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod detection;
pub mod eval;
pub mod kb;
pub(crate) mod math;
pub mod projection;
pub mod relabel;
pub mod spatial;

pub use detection::{BoundingBox, DetectedObject, DetectionSet, LabelSet};
pub use eval::{EvalReport, GroundTruthObject};
pub use kb::AffordanceGraph;
pub use projection::{ProjectionLayout, TsneParams};
pub use relabel::{ExemplarStore, RelabeledObject};
pub use spatial::{SpatialRule, SpatialVerdict};
