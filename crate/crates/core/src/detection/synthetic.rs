//! Seeded synthetic detections standing in for a vision-language detector.
//!
//! Every class gets a unit-norm cluster center; embeddings are
//! `normalize(center + sigma * N(0, I))`. Each frame holds one door with its
//! openers placed near a vertical door edge at roughly mid-height. Detector
//! confusion is emulated by swapping a fraction of labels to other classes,
//! and optional off-door false positives mimic background clutter.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BoundingBox, DetectedObject, DetectionError, DetectionSet, LabelSet};
use crate::eval::GroundTruthObject;
use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    /// Number of real instances. Zero makes the class a confusion target only.
    pub count: usize,
    /// Unit-norm cluster center. When absent the class index picks a basis vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxLayout {
    /// Class whose instances anchor the frames; one per frame.
    pub door_label: String,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Maximum per-edge perturbation of detected boxes, as a fraction of box size.
    pub box_jitter: f64,
}

/// Off-door clutter that the detector mistakes for an opener.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsePositiveSpec {
    pub count: usize,
    /// Label the detector assigns, and whose center the clutter resembles.
    pub resembles: String,
    /// Weight of the resembled center in the clutter embedding.
    pub resemblance: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dimension: usize,
    pub classes: Vec<ClassSpec>,
    pub noise_sigma: f64,
    pub corruption_rate: f64,
    pub layout: BoxLayout,
    /// Detector confidences are drawn uniformly from this range.
    pub confidence_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub false_positives: Option<FalsePositiveSpec>,
}

impl SyntheticSpec {
    /// Office-door scene: doors with handles, push bars and buttons, a "knob"
    /// label that only appears through confusion, 40% corrupted labels and 30
    /// pieces of off-door clutter resembling push bars. 300 objects in total.
    pub fn office_doors() -> Self {
        let class = |label: &str, count| ClassSpec {
            label: label.to_string(),
            count,
            center: None,
        };
        Self {
            dimension: 16,
            classes: vec![
                class("door", 100),
                class("handle", 80),
                class("knob", 0),
                class("push bar", 45),
                class("button", 45),
            ],
            noise_sigma: 0.1,
            corruption_rate: 0.4,
            layout: BoxLayout {
                door_label: "door".into(),
                frame_width: 1280.0,
                frame_height: 720.0,
                box_jitter: 0.05,
            },
            confidence_range: [0.3, 0.95],
            false_positives: Some(FalsePositiveSpec {
                count: 30,
                resembles: "push bar".into(),
                resemblance: 0.7,
                noise_sigma: 0.15,
            }),
        }
    }

    fn validate(&self) -> Result<Vec<Vec<f64>>, DetectionError> {
        let invalid = |msg: String| Err(DetectionError::InvalidSpec(msg));
        if self.dimension == 0 {
            return invalid("dimension must be positive".into());
        }
        if self.classes.is_empty() {
            return invalid("no classes".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return invalid(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return invalid(format!("corruption_rate {} outside [0, 1]", self.corruption_rate));
        }
        if self.corruption_rate > 0.0 && self.classes.len() < 2 {
            return invalid("label corruption needs at least two classes".into());
        }
        let [lo, hi] = self.confidence_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return invalid(format!("confidence_range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"));
        }
        let l = &self.layout;
        if !(l.frame_width > 0.0 && l.frame_height > 0.0) {
            return invalid("frame size must be positive".into());
        }
        if !(0.0..0.5).contains(&l.box_jitter) {
            return invalid(format!("box_jitter {} outside [0, 0.5)", l.box_jitter));
        }
        LabelSet::new(self.classes.iter().map(|c| c.label.clone()))
            .map_err(|e| DetectionError::InvalidSpec(e.to_string()))?;
        let doors = self.classes.iter().find(|c| c.label == l.door_label);
        let door_count = doors.map_or(0, |c| c.count);
        let others: usize = self
            .classes
            .iter()
            .filter(|c| c.label != l.door_label)
            .map(|c| c.count)
            .sum();
        let clutter = self.false_positives.as_ref().map_or(0, |f| f.count);
        if door_count == 0 && others + clutter > 0 {
            return invalid(format!("openers need at least one {:?} instance", l.door_label));
        }
        if let Some(fp) = &self.false_positives {
            if !self.classes.iter().any(|c| c.label == fp.resembles) {
                return invalid(format!("false positives resemble unknown class {:?}", fp.resembles));
            }
            if !(fp.noise_sigma >= 0.0 && fp.resemblance.is_finite()) {
                return invalid("false-positive noise must be >= 0".into());
            }
        }

        let mut centers = Vec::with_capacity(self.classes.len());
        for (k, class) in self.classes.iter().enumerate() {
            let center = match &class.center {
                Some(c) => {
                    if c.len() != self.dimension {
                        return invalid(format!("center of {:?} has wrong dimension", class.label));
                    }
                    if (math::norm(c) - 1.0).abs() > 1e-9 {
                        return invalid(format!("center of {:?} is not unit norm", class.label));
                    }
                    c.clone()
                }
                None => {
                    if k >= self.dimension {
                        return invalid(format!(
                            "class {:?} needs an explicit center: only {} basis vectors",
                            class.label, self.dimension
                        ));
                    }
                    let mut e = vec![0.0; self.dimension];
                    e[k] = 1.0;
                    e
                }
            };
            centers.push(center);
        }
        Ok(centers)
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub detections: DetectionSet,
    pub ground_truth: Vec<GroundTruthObject>,
    /// True class of every real object, keyed by object id. Clutter is absent.
    pub true_labels: BTreeMap<String, String>,
    /// Ids of injected off-door false positives.
    pub injected_false_positives: Vec<String>,
}

impl SyntheticDataset {
    /// Picks the first `count` real objects (in object-id order) of each class,
    /// as a human labeling a few characteristic instances would.
    pub fn pick_exemplars(&self, per_class: &[(&str, usize)]) -> Vec<(String, String)> {
        let mut picks = Vec::new();
        for &(label, count) in per_class {
            picks.extend(
                self.true_labels
                    .iter()
                    .filter(|(_, l)| l.as_str() == label)
                    .take(count)
                    .map(|(id, l)| (id.clone(), l.clone())),
            );
        }
        picks
    }
}

struct Placed {
    class: usize,
    gt: BoundingBox,
}

/// Generates a dataset from `spec`. Identical `(spec, seed)` give identical output.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticDataset, DetectionError> {
    let centers = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = &spec.layout;
    let door_class = spec.classes.iter().position(|c| c.label == layout.door_label);

    let frames = door_class.map_or(0, |k| spec.classes[k].count);
    let openers: Vec<usize> = spec
        .classes
        .iter()
        .enumerate()
        .filter(|(k, _)| Some(*k) != door_class)
        .flat_map(|(k, c)| core::iter::repeat_n(k, c.count))
        .collect();
    let clutter = spec.false_positives.as_ref().map_or(0, |f| f.count);

    let mut per_frame_openers: Vec<Vec<usize>> = vec![Vec::new(); frames];
    for (i, &class) in openers.iter().enumerate() {
        per_frame_openers[i % frames].push(class);
    }
    let mut per_frame_clutter = vec![0usize; frames];
    for i in 0..clutter {
        per_frame_clutter[i % frames] += 1;
    }

    let labels = LabelSet::new(spec.classes.iter().map(|c| c.label.clone()))?;
    let mut objects = Vec::new();
    let mut ground_truth = Vec::new();
    let mut true_labels = BTreeMap::new();
    let mut injected = Vec::new();
    let [conf_lo, conf_hi] = spec.confidence_range;

    for frame in 0..frames {
        let frame_id = format!("f{frame:04}");
        let door = door_box(&mut rng, layout)?;
        let mut placed = vec![Placed {
            class: door_class.unwrap_or(0),
            gt: door,
        }];
        for (m, &class) in per_frame_openers[frame].iter().enumerate() {
            placed.push(Placed {
                class,
                gt: opener_box(&mut rng, &door, m)?,
            });
        }

        for p in placed {
            let object_id = format!("o{:05}", objects.len());
            let embedding = sample_embedding(&mut rng, &centers[p.class], 1.0, spec.noise_sigma);
            let true_label = &spec.classes[p.class].label;
            let label = if rng.random::<f64>() < spec.corruption_rate {
                let shift = rng.random_range(1..spec.classes.len());
                spec.classes[(p.class + shift) % spec.classes.len()].label.clone()
            } else {
                true_label.clone()
            };
            let confidence = uniform(&mut rng, conf_lo, conf_hi);
            let bbox = jitter(&mut rng, &p.gt, layout.box_jitter)?;
            ground_truth.push(GroundTruthObject {
                frame_id: frame_id.clone(),
                bbox: p.gt,
                label: true_label.clone(),
            });
            true_labels.insert(object_id.clone(), true_label.clone());
            objects.push(DetectedObject {
                object_id,
                frame_id: frame_id.clone(),
                bbox,
                label,
                confidence,
                embedding,
            });
        }

        if let Some(fp) = &spec.false_positives {
            let resembled = spec.classes.iter().position(|c| c.label == fp.resembles).unwrap_or(0);
            for _ in 0..per_frame_clutter[frame] {
                let object_id = format!("o{:05}", objects.len());
                let embedding =
                    sample_embedding(&mut rng, &centers[resembled], fp.resemblance, fp.noise_sigma);
                let bbox = clutter_box(&mut rng, &door, layout)?;
                let confidence = uniform(&mut rng, conf_lo, conf_hi);
                injected.push(object_id.clone());
                objects.push(DetectedObject {
                    object_id,
                    frame_id: frame_id.clone(),
                    bbox,
                    label: fp.resembles.clone(),
                    confidence,
                    embedding,
                });
            }
        }
    }

    let detections = DetectionSet::new(spec.dimension, labels, objects)?;
    Ok(SyntheticDataset {
        detections,
        ground_truth,
        true_labels,
        injected_false_positives: injected,
    })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sample_embedding(rng: &mut ChaCha8Rng, center: &[f64], weight: f64, sigma: f64) -> Vec<f64> {
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| {
            let z: f64 = rng.sample(StandardNormal);
            weight * c + sigma * z
        })
        .collect();
    let n = math::norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        // A zero vector would be rejected downstream; fall back to the center.
        v.copy_from_slice(center);
    }
    v
}

fn door_box(rng: &mut ChaCha8Rng, layout: &BoxLayout) -> Result<BoundingBox, DetectionError> {
    let (fw, fh) = (layout.frame_width, layout.frame_height);
    let w = uniform(rng, 0.09, 0.17) * fw;
    let h = uniform(rng, 0.42, 0.66) * fh;
    let x = uniform(rng, 0.03, 0.28) * fw;
    let y = uniform(rng, 0.05 * fh, (0.95 * fh - h).max(0.05 * fh));
    BoundingBox::new(x, y, x + w, y + h)
}

/// Opener `m` of a door: alternating right/left edge, inset slightly into the door.
fn opener_box(rng: &mut ChaCha8Rng, door: &BoundingBox, m: usize) -> Result<BoundingBox, DetectionError> {
    let (w, h) = (door.width(), door.height());
    let inset = uniform(rng, 0.04, 0.12) * w;
    let cx = if m.is_multiple_of(2) {
        door.x_max() - inset
    } else {
        door.x_min() + inset
    };
    let cy = door.center_y() + uniform(rng, -0.1, 0.1) * h;
    let bw = uniform(rng, 0.08, 0.15) * w;
    let bh = uniform(rng, 0.03, 0.08) * h;
    BoundingBox::from_center(cx, cy, bw, bh)
}

/// Clutter at least 1.1 door widths right of the door's right edge.
fn clutter_box(
    rng: &mut ChaCha8Rng,
    door: &BoundingBox,
    layout: &BoxLayout,
) -> Result<BoundingBox, DetectionError> {
    let w = door.width();
    let cx = door.x_max() + uniform(rng, 1.1, 2.0) * w;
    let cy = uniform(rng, 0.1, 0.9) * layout.frame_height;
    let bw = uniform(rng, 0.2, 0.6) * w;
    let bh = uniform(rng, 0.02, 0.05) * door.height();
    BoundingBox::from_center(cx, cy, bw, bh)
}

fn jitter(rng: &mut ChaCha8Rng, b: &BoundingBox, amount: f64) -> Result<BoundingBox, DetectionError> {
    let (w, h) = (b.width(), b.height());
    let mut d = [0.0; 4];
    for v in d.iter_mut() {
        *v = uniform(rng, -amount, amount);
    }
    BoundingBox::new(
        b.x_min() + d[0] * w,
        b.y_min() + d[1] * h,
        b.x_max() + d[2] * w,
        b.y_max() + d[3] * h,
    )
}
