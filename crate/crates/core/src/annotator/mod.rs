//! Story detection, per-unit role classification and cluster naming behind
//! one [`Annotator`] trait.
//!
//! Implementations are registered by name in an [`AnnotatorRegistry`] and
//! picked at runtime from [`AnnotatorConfig::kind`]. Two ship by default:
//! `lexicon` (deterministic, offline) and `remote` (chat-completions over
//! HTTP).

mod lexicon;
mod remote;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Transcript;
use crate::segmentation::FunctionalUnit;
use crate::taxonomy::{RoleId, Taxonomy};

pub use lexicon::{LexiconAnnotator, LexiconConfig, RoleLexicons, StoryLexicons, DEFAULT_LEXICONS_TOML};
pub use remote::{
    backoff_delay, HttpResponse, InFlightGate, PromptTemplates, RemoteAnnotator, ReqwestTransport,
    Sleeper, ThreadSleeper, Transport, TransportError, DEBUG_ENV, TOKEN_ENV,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotatorError {
    #[error("video has no functional units")]
    EmptyVideo,
    #[error("annotator unavailable after {attempts} attempt(s): {detail}")]
    AnnotatorUnavailable { attempts: u32, detail: String },
    #[error("malformed model output: {0}")]
    MalformedModelOutput(String),
    #[error("model returned role `{0}`, which is not in the taxonomy")]
    UnknownRoleReturned(String),
    #[error("annotator configuration: {0}")]
    Config(String),
    #[error("no annotator registered under `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryVerdict {
    pub video_id: String,
    pub has_story: bool,
    pub rationale: String,
    pub signals: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAnnotation {
    pub video_id: String,
    pub unit_index: usize,
    pub role_id: RoleId,
    pub confidence: f64,
    pub rationale: String,
}

/// What an annotator sees of a storyline cluster when proposing a name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub representative: Vec<RoleId>,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    pub kind: String,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub timeout_s: f64,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub backoff_base_s: f64,
    /// Lexicon file for the `lexicon` kind; the bundled one when unset.
    pub lexicon_path: Option<PathBuf>,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            kind: "lexicon".into(),
            endpoint_url: None,
            model_name: "llama-mllm-video".into(),
            timeout_s: 30.0,
            max_in_flight: 8,
            max_attempts: 5,
            backoff_base_s: 0.5,
            lexicon_path: None,
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<(), AnnotatorError> {
        if self.kind == "remote" && self.endpoint_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return Err(AnnotatorError::Config("remote annotator requires endpoint_url".into()));
        }
        if self.max_in_flight == 0 || self.max_attempts == 0 {
            return Err(AnnotatorError::Config(
                "max_in_flight and max_attempts must be >= 1".into(),
            ));
        }
        if !(self.timeout_s > 0.0 && self.backoff_base_s >= 0.0) {
            return Err(AnnotatorError::Config("timeout_s must be > 0, backoff_base_s >= 0".into()));
        }
        Ok(())
    }
}

/// One model-backed (or model-standing-in) labelling strategy.
///
/// Implementations must tolerate concurrent calls.
pub trait Annotator: Send + Sync {
    fn kind(&self) -> &str;

    fn detect_story(
        &self,
        video_id: &str,
        units: &[FunctionalUnit],
        transcript: &Transcript,
    ) -> Result<StoryVerdict, AnnotatorError>;

    fn classify_unit(
        &self,
        unit: &FunctionalUnit,
        taxonomy: &Taxonomy,
    ) -> Result<UnitAnnotation, AnnotatorError>;

    fn propose_name(
        &self,
        summary: &ClusterSummary,
        taxonomy: &Taxonomy,
    ) -> Result<String, AnnotatorError>;
}

type Factory = Box<dyn Fn(&AnnotatorConfig) -> Result<Arc<dyn Annotator>, AnnotatorError> + Send + Sync>;

pub struct AnnotatorRegistry {
    factories: BTreeMap<String, Factory>,
}

impl AnnotatorRegistry {
    pub fn empty() -> Self {
        AnnotatorRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register<F>(&mut self, kind: &str, factory: F)
    where
        F: Fn(&AnnotatorConfig) -> Result<Arc<dyn Annotator>, AnnotatorError> + Send + Sync + 'static,
    {
        self.factories.insert(kind.to_string(), Box::new(factory));
    }

    pub fn kinds(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, config: &AnnotatorConfig) -> Result<Arc<dyn Annotator>, AnnotatorError> {
        config.validate()?;
        let factory = self
            .factories
            .get(&config.kind)
            .ok_or_else(|| AnnotatorError::UnknownKind(config.kind.clone()))?;
        factory(config)
    }
}

impl Default for AnnotatorRegistry {
    fn default() -> Self {
        let mut registry = Self::empty();
        registry.register("lexicon", |cfg| {
            let lexicons = match &cfg.lexicon_path {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| AnnotatorError::Config(format!("{}: {e}", path.display())))?;
                    LexiconConfig::from_toml(&text)?
                }
                None => LexiconConfig::default(),
            };
            Ok(Arc::new(LexiconAnnotator::new(lexicons)))
        });
        registry.register("remote", |cfg| {
            let transport = ReqwestTransport::new()?;
            Ok(Arc::new(RemoteAnnotator::from_env(
                cfg.clone(),
                Arc::new(transport),
                Arc::new(ThreadSleeper),
            )?))
        });
        registry
    }
}

pub fn detect_story(
    video_id: &str,
    units: &[FunctionalUnit],
    transcript: &Transcript,
    annotator: &dyn Annotator,
) -> Result<StoryVerdict, AnnotatorError> {
    if units.is_empty() {
        return Err(AnnotatorError::EmptyVideo);
    }
    annotator.detect_story(video_id, units, transcript)
}

/// Labels every unit; the result is ordered by `unit_index` whatever order
/// the calls complete in.
pub fn classify_units(
    units: &[FunctionalUnit],
    taxonomy: &Taxonomy,
    annotator: &dyn Annotator,
) -> Result<Vec<UnitAnnotation>, AnnotatorError> {
    if units.is_empty() {
        return Err(AnnotatorError::EmptyVideo);
    }
    let mut out = units
        .par_iter()
        .map(|unit| {
            let ann = annotator.classify_unit(unit, taxonomy)?;
            if !taxonomy.contains(ann.role_id.as_str()) {
                return Err(AnnotatorError::UnknownRoleReturned(ann.role_id.to_string()));
            }
            Ok(ann)
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by_key(|a| a.unit_index);
    Ok(out)
}

pub fn propose_cluster_names(
    clusters: &[ClusterSummary],
    taxonomy: &Taxonomy,
    annotator: &dyn Annotator,
) -> Result<BTreeMap<String, String>, AnnotatorError> {
    clusters
        .par_iter()
        .map(|c| Ok((c.cluster_id.clone(), annotator.propose_name(c, taxonomy)?)))
        .collect::<Result<Vec<_>, _>>()
        .map(|pairs| pairs.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(index: usize, text: &str) -> FunctionalUnit {
        FunctionalUnit {
            video_id: "v".into(),
            index,
            start_s: index as f64,
            end_s: index as f64 + 1.0,
            transcript_text: text.into(),
            keyframe_indices: vec![],
        }
    }

    struct Rogue;

    impl Annotator for Rogue {
        fn kind(&self) -> &str {
            "rogue"
        }
        fn detect_story(&self, _: &str, _: &[FunctionalUnit], _: &Transcript) -> Result<StoryVerdict, AnnotatorError> {
            unreachable!()
        }
        fn classify_unit(&self, unit: &FunctionalUnit, _: &Taxonomy) -> Result<UnitAnnotation, AnnotatorError> {
            Ok(UnitAnnotation {
                video_id: unit.video_id.clone(),
                unit_index: unit.index,
                role_id: "plot_twist".into(),
                confidence: 1.0,
                rationale: String::new(),
            })
        }
        fn propose_name(&self, _: &ClusterSummary, _: &Taxonomy) -> Result<String, AnnotatorError> {
            unreachable!()
        }
    }

    #[test]
    fn empty_video_is_rejected() {
        let lex = LexiconAnnotator::default();
        assert_eq!(
            detect_story("v", &[], &Transcript::empty("v"), &lex),
            Err(AnnotatorError::EmptyVideo)
        );
        assert_eq!(
            classify_units(&[], &Taxonomy::default(), &lex),
            Err(AnnotatorError::EmptyVideo)
        );
    }

    #[test]
    fn unknown_role_from_annotator_is_an_error() {
        assert_eq!(
            classify_units(&[unit(0, "x")], &Taxonomy::default(), &Rogue),
            Err(AnnotatorError::UnknownRoleReturned("plot_twist".into()))
        );
    }

    #[test]
    fn classification_is_ordered_and_complete() {
        let units: Vec<_> = (0..40).map(|i| unit(i, "Get 20% off with code SAVE20")).collect();
        let out = classify_units(&units, &Taxonomy::default(), &LexiconAnnotator::default()).unwrap();
        assert_eq!(out.len(), 40);
        assert!(out.iter().enumerate().all(|(i, a)| a.unit_index == i));
    }

    #[test]
    fn registry_builds_by_kind() {
        let reg = AnnotatorRegistry::default();
        assert_eq!(reg.kinds(), ["lexicon", "remote"]);
        assert_eq!(reg.build(&AnnotatorConfig::default()).unwrap().kind(), "lexicon");
        let remote = AnnotatorConfig {
            kind: "remote".into(),
            ..Default::default()
        };
        assert!(matches!(reg.build(&remote), Err(AnnotatorError::Config(_))));
        let remote = AnnotatorConfig {
            endpoint_url: Some("http://127.0.0.1:9/v1/chat/completions".into()),
            ..remote
        };
        assert_eq!(reg.build(&remote).unwrap().kind(), "remote");
        let other = AnnotatorConfig {
            kind: "oracle".into(),
            ..Default::default()
        };
        assert!(matches!(reg.build(&other), Err(AnnotatorError::UnknownKind(_))));
    }

    #[test]
    fn cluster_names_keyed_by_id() {
        let summaries = vec![
            ClusterSummary {
                cluster_id: "c1".into(),
                representative: vec!["problem_setup".into(), "solution_reveal".into()],
                member_count: 3,
            },
            ClusterSummary {
                cluster_id: "c2".into(),
                representative: vec!["social_proof".into(), "call_to_action".into()],
                member_count: 2,
            },
        ];
        let t = Taxonomy::default();
        let names = propose_cluster_names(&summaries, &t, &LexiconAnnotator::default()).unwrap();
        assert_eq!(names.len(), 2);
        assert_eq!(names["c1"], "Problem Setup–Solution Reveal");
        assert_eq!(names["c2"], "Social Proof–Call-to-Action");
        assert!(propose_cluster_names(&[], &t, &LexiconAnnotator::default()).unwrap().is_empty());
    }
}
