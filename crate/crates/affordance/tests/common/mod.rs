#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use affordance::synth::{self, SynthWorkspace};
use affordance::PipelineConfig;
use affordance_core::detection::synthetic::SyntheticSpec;

pub const SEED: u64 = 42;

pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub synth: SynthWorkspace,
}

impl Workspace {
    pub fn office() -> Self {
        Self::with_spec(&SyntheticSpec::office_doors())
    }

    pub fn with_spec(spec: &SyntheticSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let synth = synth::write_workspace(dir.path(), spec, SEED, &synth::OFFICE_EXEMPLARS).unwrap();
        Self { dir, synth }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> PipelineConfig {
        PipelineConfig::load(&self.synth.config_path).unwrap()
    }

    pub fn config_with_output(&self, name: &str) -> PipelineConfig {
        let mut c = self.config();
        c.output_dir = self.path().join(name);
        c
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn detection_line(id: &str, dim: usize, confidence: f64) -> String {
    let mut e = vec![0.0; dim];
    e[0] = 1.0;
    serde_json::json!({
        "object_id": id,
        "frame_id": "f0",
        "box": [10.0, 10.0, 50.0, 60.0],
        "label": "door",
        "confidence": confidence,
        "embedding": e,
    })
    .to_string()
}

pub fn header(dim: usize) -> String {
    serde_json::json!({"format_version": 1, "dimension": dim, "label_set": ["door", "handle"]}).to_string()
}
