//! Project configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::UpliftParams;
use crate::annotator::AnnotatorConfig;
use crate::ingest::Subvertical;
use crate::segmentation::SegmentationParams;
use crate::storyline::DEFAULT_CLUSTER_THRESHOLD;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSection {
    pub name: String,
    /// Reject ads outside the 15-60 s window.
    pub enforce_paper_filter: bool,
    pub min_impressions: Option<u64>,
    pub taxonomy_path: Option<PathBuf>,
    pub arcs_path: Option<PathBuf>,
}

impl Default for ProjectSection {
    fn default() -> Self {
        ProjectSection {
            name: "adstory".into(),
            enforce_paper_filter: false,
            min_impressions: None,
            taxonomy_path: None,
            arcs_path: None,
        }
    }
}

/// One video to ingest. Exactly one of `frames` (ADFRAMES stream) or
/// `scores` (precomputed CSV, needs `fps`) must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSource {
    pub video_id: String,
    pub subvertical: Subvertical,
    #[serde(default)]
    pub frames: Option<PathBuf>,
    #[serde(default)]
    pub scores: Option<PathBuf>,
    #[serde(default)]
    pub fps: Option<f64>,
    /// Defaults to frame count / fps.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// Inferred from the transcript extension when unset.
    #[serde(default)]
    pub transcript_format: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub performance: Option<PathBuf>,
    pub videos: Vec<VideoSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorylineSection {
    pub cluster_threshold: f64,
}

impl Default for StorylineSection {
    fn default() -> Self {
        StorylineSection {
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub project: ProjectSection,
    pub ingest: IngestSection,
    pub segmentation: SegmentationParams,
    pub annotator: AnnotatorConfig,
    pub storyline: StorylineSection,
    pub analysis: UpliftParams,
}

impl ProjectConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ProjectConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and makes its relative paths absolute with
    /// respect to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let base = std::path::absolute(&base).unwrap_or(base);
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.project.taxonomy_path);
        fix(&mut self.project.arcs_path);
        fix(&mut self.ingest.performance);
        fix(&mut self.annotator.lexicon_path);
        for v in &mut self.ingest.videos {
            fix(&mut v.frames);
            fix(&mut v.scores);
            fix(&mut v.transcript);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.segmentation
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.annotator
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.analysis
            .gbt
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let t = self.storyline.cluster_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return invalid(format!("cluster_threshold {t} outside (0, 1]"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.ingest.videos {
            if v.video_id.trim().is_empty() {
                return invalid("video_id must not be empty".into());
            }
            if !seen.insert(v.video_id.as_str()) {
                return invalid(format!("duplicate video_id `{}`", v.video_id));
            }
            match (&v.frames, &v.scores) {
                (Some(_), None) => {}
                (None, Some(_)) if v.fps.is_some_and(|f| f > 0.0) => {}
                (None, Some(_)) => return invalid(format!("`{}`: scores input needs fps > 0", v.video_id)),
                _ => return invalid(format!("`{}`: give exactly one of frames or scores", v.video_id)),
            }
        }
        Ok(())
    }
}
