use std::fs;
use std::path::{Path, PathBuf};

use affordance_core::detection::{DetectionSet, Detector, LabelSet};

use crate::error::{Error, Result};
use crate::formats;

/// Replays a recorded detections file.
///
/// The requested labels must all appear (case-insensitively) in the label
/// set the file was recorded with; the recorded set is returned unchanged.
#[derive(Debug, Clone)]
pub struct FilePlayback {
    path: PathBuf,
    last_bytes: Option<Vec<u8>>,
}

impl FilePlayback {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            last_bytes: None,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Raw bytes of the file as of the last successful read.
    pub fn last_bytes(&self) -> Option<&[u8]> {
        self.last_bytes.as_deref()
    }
}

impl Detector for FilePlayback {
    type Error = Error;

    fn detect(&mut self, labels: &LabelSet) -> Result<DetectionSet> {
        let bytes = fs::read(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::schema(&self.path, None, e))?;
        let set = formats::parse_detections(&self.path, text)?;
        let recorded: Vec<String> = set.label_set().labels().iter().map(|l| l.to_lowercase()).collect();
        let missing: Vec<&str> = labels
            .labels()
            .iter()
            .filter(|l| !recorded.contains(&l.to_lowercase()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::schema(
                &self.path,
                None,
                format!(
                    "recorded prompt \"{}\" does not cover requested label(s) {}",
                    set.label_set().prompt(),
                    missing.join(", ")
                ),
            ));
        }
        self.last_bytes = Some(bytes);
        Ok(set)
    }
}
