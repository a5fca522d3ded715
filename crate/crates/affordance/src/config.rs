use std::path::{Path, PathBuf};

use affordance_core::eval::DEFAULT_IOU_THRESHOLD;
use affordance_core::kb::EffectQuery;
use affordance_core::projection::TsneParams;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind_address")]
    pub bind_address: String,
    #[serde(default = "default_port")]
    pub port: u16,
}

fn default_bind_address() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_address: default_bind_address(),
            port: default_port(),
        }
    }
}

fn default_goal() -> EffectQuery {
    EffectQuery::new("door", "accessibility")
}

fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

/// Everything a run needs. Relative paths in a config file are resolved
/// against the directory containing that file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub detections_path: PathBuf,
    /// Needed for the evaluated stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_path: Option<PathBuf>,
    /// Human assignments; required in batch mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    pub knowledge_graph_path: PathBuf,
    pub spatial_rule_path: PathBuf,
    /// Goal whose action chains determine the detector prompt.
    #[serde(default = "default_goal")]
    pub goal: EffectQuery,
    /// Frame images named `<frame_id>.png|jpg|jpeg`, for thumbnails.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
    #[serde(default)]
    pub tsne: TsneParams,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub service: ServiceConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = formats::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_relative_to(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.detections_path);
        fix(&mut self.knowledge_graph_path);
        fix(&mut self.spatial_rule_path);
        fix(&mut self.output_dir);
        for p in [&mut self.ground_truth_path, &mut self.labels_path, &mut self.image_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "iou_threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        self.tsne.validate()?;
        if self.service.bind_address.trim().is_empty() {
            return Err(Error::Config("service.bind_address is empty".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.tsne.seed = seed;
        }
        self
    }

    pub fn with_output(mut self, output: Option<PathBuf>) -> Self {
        if let Some(dir) = output {
            self.output_dir = dir;
        }
        self
    }
}
