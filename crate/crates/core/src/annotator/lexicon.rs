use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Annotator, AnnotatorError, ClusterSummary, StoryVerdict, UnitAnnotation};
use crate::ingest::Transcript;
use crate::segmentation::FunctionalUnit;
use crate::taxonomy::{RoleId, Taxonomy, VISUAL_FILLER};

pub const DEFAULT_LEXICONS_TOML: &str = include_str!("../../data/lexicons_v1.toml");

const FALLBACK_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryLexicons {
    pub threshold: i64,
    pub first_person_min: usize,
    pub conflict: Vec<String>,
    pub outcome: Vec<String>,
    pub first_person: Vec<String>,
    pub promo: Vec<String>,
    pub announcer: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleLexicons {
    pub priority: Vec<String>,
    pub lexicons: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconConfig {
    pub version: String,
    pub story: StoryLexicons,
    pub roles: RoleLexicons,
}

impl LexiconConfig {
    pub fn from_toml(text: &str) -> Result<Self, AnnotatorError> {
        toml::from_str(text).map_err(|e| AnnotatorError::Config(format!("lexicons: {e}")))
    }
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_LEXICONS_TOML).expect("bundled lexicons parse")
    }
}

/// Lowercase word tokens. Apostrophes stay inside words; `%`, `$`, `®` and
/// `™` are tokens of their own.
pub(crate) fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        let w = word.trim_matches('\'');
        if !w.is_empty() {
            tokens.push(w.to_string());
        }
        word.clear();
    };
    for c in text.chars() {
        let c = if c == '\u{2019}' { '\'' } else { c };
        if c.is_alphanumeric() || c == '\'' || c == '-' {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut tokens);
            if matches!(c, '%' | '$' | '®' | '™') {
                tokens.push(c.to_string());
            }
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

/// Non-overlapping occurrences of one phrase in a token stream.
fn count_phrase(tokens: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return 0;
    }
    let mut count = 0;
    let mut i = 0;
    while i + phrase.len() <= tokens.len() {
        if tokens[i..i + phrase.len()] == *phrase {
            count += 1;
            i += phrase.len();
        } else {
            i += 1;
        }
    }
    count
}

struct CompiledLexicon {
    phrases: Vec<(String, Vec<String>)>,
}

impl CompiledLexicon {
    fn new(phrases: &[String]) -> Self {
        CompiledLexicon {
            phrases: phrases.iter().map(|p| (p.clone(), tokenize(p))).collect(),
        }
    }

    /// Total hits plus the phrases that matched, in lexicon order.
    fn hits(&self, tokens: &[String]) -> (usize, Vec<&str>) {
        let mut total = 0;
        let mut matched = Vec::new();
        for (raw, phrase) in &self.phrases {
            let n = count_phrase(tokens, phrase);
            if n > 0 {
                total += n;
                matched.push(raw.as_str());
            }
        }
        (total, matched)
    }
}

/// Deterministic offline annotator driven by keyword lexicons.
pub struct LexiconAnnotator {
    config: LexiconConfig,
    conflict: CompiledLexicon,
    outcome: CompiledLexicon,
    first_person: CompiledLexicon,
    promo: CompiledLexicon,
    announcer: CompiledLexicon,
    roles: BTreeMap<String, CompiledLexicon>,
}

impl Default for LexiconAnnotator {
    fn default() -> Self {
        Self::new(LexiconConfig::default())
    }
}

impl LexiconAnnotator {
    pub fn new(config: LexiconConfig) -> Self {
        let s = &config.story;
        LexiconAnnotator {
            conflict: CompiledLexicon::new(&s.conflict),
            outcome: CompiledLexicon::new(&s.outcome),
            first_person: CompiledLexicon::new(&s.first_person),
            promo: CompiledLexicon::new(&s.promo),
            announcer: CompiledLexicon::new(&s.announcer),
            roles: config
                .roles
                .lexicons
                .iter()
                .map(|(k, v)| (k.clone(), CompiledLexicon::new(v)))
                .collect(),
            config,
        }
    }

    pub fn config(&self) -> &LexiconConfig {
        &self.config
    }

    /// Configured priority first, then the rest of the taxonomy in order.
    fn role_order<'a>(&'a self, taxonomy: &'a Taxonomy) -> Vec<&'a str> {
        let mut order: Vec<&str> = self
            .config
            .roles
            .priority
            .iter()
            .map(String::as_str)
            .filter(|id| taxonomy.contains(id))
            .collect();
        for r in &taxonomy.roles {
            if !order.contains(&r.id.as_str()) && !r.id.is_filler() {
                order.push(r.id.as_str());
            }
        }
        order
    }

    pub fn story_score(&self, text: &str) -> (i64, Vec<String>, String) {
        let tokens = tokenize(text);
        let (conflict, _) = self.conflict.hits(&tokens);
        let (outcome, _) = self.outcome.hits(&tokens);
        let (first_person, _) = self.first_person.hits(&tokens);
        let (promo, _) = self.promo.hits(&tokens);
        let (announcer, _) = self.announcer.hits(&tokens);
        let personal = first_person >= self.config.story.first_person_min;
        let score = conflict as i64 + outcome as i64 + i64::from(personal)
            - promo as i64
            - announcer as i64;

        let mut signals = Vec::new();
        if conflict > 0 {
            signals.push("challenge_conflict".to_string());
        }
        if outcome > 0 {
            signals.push("outcome_transition".to_string());
        }
        if personal {
            signals.push("personal_experience".to_string());
        }
        if promo > 0 {
            signals.push("promotional_language".to_string());
        }
        if announcer > 0 {
            signals.push("announcer".to_string());
        }
        if signals.is_empty() {
            signals.push("no_story_signals".to_string());
        }
        let rationale = format!(
            "score {score} = conflict {conflict} + outcome {outcome} + first_person {} - promo {promo} - announcer {announcer}; threshold {}",
            i64::from(personal),
            self.config.story.threshold
        );
        (score, signals, rationale)
    }
}

impl Annotator for LexiconAnnotator {
    fn kind(&self) -> &str {
        "lexicon"
    }

    fn detect_story(
        &self,
        video_id: &str,
        units: &[FunctionalUnit],
        transcript: &Transcript,
    ) -> Result<StoryVerdict, AnnotatorError> {
        if units.is_empty() {
            return Err(AnnotatorError::EmptyVideo);
        }
        let text = if transcript.words.is_empty() {
            units
                .iter()
                .map(|u| u.transcript_text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        } else {
            transcript.text()
        };
        let (score, signals, rationale) = self.story_score(&text);
        Ok(StoryVerdict {
            video_id: video_id.to_string(),
            has_story: score >= self.config.story.threshold,
            rationale,
            signals,
        })
    }

    fn classify_unit(
        &self,
        unit: &FunctionalUnit,
        taxonomy: &Taxonomy,
    ) -> Result<UnitAnnotation, AnnotatorError> {
        let tokens = tokenize(&unit.transcript_text);
        for role in self.role_order(taxonomy) {
            let Some(lexicon) = self.roles.get(role) else {
                continue;
            };
            let (hits, matched) = lexicon.hits(&tokens);
            if hits > 0 {
                let quoted: Vec<String> = matched.iter().map(|m| format!("\"{m}\"")).collect();
                return Ok(UnitAnnotation {
                    video_id: unit.video_id.clone(),
                    unit_index: unit.index,
                    role_id: RoleId::new(role),
                    confidence: (0.6 + 0.1 * (hits as f64 - 1.0)).min(0.9),
                    rationale: format!("lexicon match: {}", quoted.join(", ")),
                });
            }
        }
        Ok(UnitAnnotation {
            video_id: unit.video_id.clone(),
            unit_index: unit.index,
            role_id: RoleId::new(VISUAL_FILLER),
            confidence: FALLBACK_CONFIDENCE,
            rationale: "no lexicon match".into(),
        })
    }

    fn propose_name(
        &self,
        summary: &ClusterSummary,
        taxonomy: &Taxonomy,
    ) -> Result<String, AnnotatorError> {
        Ok(summary
            .representative
            .iter()
            .map(|r| taxonomy.display_name(r.as_str()))
            .collect::<Vec<_>>()
            .join("\u{2013}"))
    }
}
