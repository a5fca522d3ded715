use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{DetectionError, LabelSet};

/// Joins labels into a detector prompt: `l0. l1. ... ln`.
pub fn build_prompt<S: AsRef<str>>(labels: &[S]) -> Result<String, DetectionError> {
    let set = LabelSet::new(labels.iter().map(|l| l.as_ref().to_string()))?;
    Ok(set.prompt())
}

/// Inverse of [`build_prompt`]. A single trailing `.` is tolerated.
pub fn parse_prompt(prompt: &str) -> Result<LabelSet, DetectionError> {
    let body = prompt.trim();
    let body = body.strip_suffix('.').unwrap_or(body);
    if body.trim().is_empty() {
        return Err(DetectionError::MalformedPrompt("empty prompt".into()));
    }
    let labels: Vec<&str> = body.split('.').map(str::trim).collect();
    if labels.iter().any(|l| l.is_empty()) {
        return Err(DetectionError::MalformedPrompt(prompt.to_string()));
    }
    LabelSet::new(labels).map_err(|e| DetectionError::MalformedPrompt(e.to_string()))
}
