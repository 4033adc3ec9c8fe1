use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{decode_utf8, IngestError};

/// Words may end up to this many seconds past the video end (ASR padding).
pub const END_TOLERANCE_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl TimedWord {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub video_id: String,
    pub words: Vec<TimedWord>,
}

impl Transcript {
    pub fn empty(video_id: impl Into<String>) -> Self {
        Transcript {
            video_id: video_id.into(),
            words: Vec::new(),
        }
    }

    /// Checks per-word timing and ordering.
    pub fn validate(&self) -> Result<(), IngestError> {
        let mut previous = f64::NEG_INFINITY;
        for (i, w) in self.words.iter().enumerate() {
            if !(w.start_s.is_finite() && w.end_s.is_finite()) || w.start_s < 0.0 || w.end_s < w.start_s
            {
                return Err(IngestError::MalformedTimestamp {
                    line: i + 1,
                    detail: format!("word `{}` has span [{}, {}]", w.text, w.start_s, w.end_s),
                });
            }
            if w.start_s < previous {
                return Err(IngestError::OverlappingWords {
                    index: i,
                    start: w.start_s,
                    previous,
                });
            }
            previous = w.start_s;
        }
        Ok(())
    }

    pub fn validate_against_duration(&self, duration_s: f64) -> Result<(), IngestError> {
        self.validate()?;
        if let Some(last) = self.words.iter().map(|w| w.end_s).reduce(f64::max) {
            if last > duration_s + END_TOLERANCE_S {
                return Err(IngestError::InvalidVideo {
                    video_id: self.video_id.clone(),
                    detail: format!("transcript ends at {last}s, video is {duration_s}s"),
                });
            }
        }
        Ok(())
    }

    pub fn text(&self) -> String {
        self.words
            .iter()
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A transcript file format, looked up by name in a [`TranscriptFormatRegistry`].
pub trait TranscriptFormat: Send + Sync {
    fn name(&self) -> &'static str;
    fn parse(&self, video_id: &str, text: &str) -> Result<Transcript, IngestError>;
}

pub struct TranscriptFormatRegistry {
    formats: BTreeMap<&'static str, Box<dyn TranscriptFormat>>,
}

impl TranscriptFormatRegistry {
    pub fn empty() -> Self {
        TranscriptFormatRegistry {
            formats: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, format: Box<dyn TranscriptFormat>) {
        self.formats.insert(format.name(), format);
    }

    pub fn get(&self, name: &str) -> Result<&dyn TranscriptFormat, IngestError> {
        self.formats
            .get(name)
            .map(|f| f.as_ref())
            .ok_or_else(|| IngestError::UnknownFormat(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.formats.keys().copied().collect()
    }

    /// Guesses a format name from a file extension.
    pub fn name_for_extension(ext: &str) -> Option<&'static str> {
        match ext.to_ascii_lowercase().as_str() {
            "srt" => Some("srt"),
            "vtt" => Some("vtt"),
            "json" => Some("words-json"),
            _ => None,
        }
    }
}

impl Default for TranscriptFormatRegistry {
    fn default() -> Self {
        let mut registry = Self::empty();
        registry.register(Box::new(SrtFormat));
        registry.register(Box::new(VttFormat));
        registry.register(Box::new(WordsJsonFormat));
        registry
    }
}

/// Parses `bytes` with the named built-in format and validates the result.
pub fn parse_transcript(
    video_id: &str,
    bytes: &[u8],
    format: &str,
) -> Result<Transcript, IngestError> {
    let registry = TranscriptFormatRegistry::default();
    let parser = registry.get(format)?;
    let text = decode_utf8(bytes)?;
    let transcript = parser.parse(video_id, text)?;
    transcript.validate()?;
    Ok(transcript)
}

/// Serializes to the words-json format.
pub fn serialize_transcript(transcript: &Transcript) -> String {
    let doc = WordsDoc {
        words: transcript
            .words
            .iter()
            .map(|w| JsonWord {
                w: w.text.clone(),
                s: w.start_s,
                e: w.end_s,
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("words-json serialization is infallible")
}

#[derive(Serialize, Deserialize)]
struct WordsDoc {
    words: Vec<JsonWord>,
}

#[derive(Serialize, Deserialize)]
struct JsonWord {
    w: String,
    s: f64,
    e: f64,
}

struct WordsJsonFormat;

impl TranscriptFormat for WordsJsonFormat {
    fn name(&self) -> &'static str {
        "words-json"
    }

    fn parse(&self, video_id: &str, text: &str) -> Result<Transcript, IngestError> {
        if text.trim().is_empty() {
            return Ok(Transcript::empty(video_id));
        }
        let doc: WordsDoc =
            serde_json::from_str(text).map_err(|e| IngestError::MalformedTranscript(e.to_string()))?;
        let words = doc
            .words
            .into_iter()
            .map(|w| TimedWord {
                text: w.w,
                start_s: w.s,
                end_s: w.e,
            })
            .collect();
        Ok(Transcript {
            video_id: video_id.to_string(),
            words,
        })
    }
}

struct SrtFormat;

impl TranscriptFormat for SrtFormat {
    fn name(&self) -> &'static str {
        "srt"
    }

    fn parse(&self, video_id: &str, text: &str) -> Result<Transcript, IngestError> {
        let cues = split_blocks(text)
            .into_iter()
            .map(|block| parse_cue(&block, CueSyntax::Srt))
            .collect::<Result<Vec<_>, _>>()?;
        cues_to_transcript(video_id, cues.into_iter().flatten())
    }
}

struct VttFormat;

impl TranscriptFormat for VttFormat {
    fn name(&self) -> &'static str {
        "vtt"
    }

    fn parse(&self, video_id: &str, text: &str) -> Result<Transcript, IngestError> {
        if text.trim().is_empty() {
            return Ok(Transcript::empty(video_id));
        }
        let mut blocks = split_blocks(text).into_iter();
        let header = blocks.next().unwrap_or_default();
        let first = header.first().map(|(_, l)| l.trim_start()).unwrap_or("");
        if !(first == "WEBVTT" || first.starts_with("WEBVTT ") || first.starts_with("WEBVTT\t")) {
            return Err(IngestError::MalformedTranscript(
                "WebVTT file must start with `WEBVTT`".into(),
            ));
        }
        let mut cues = Vec::new();
        for block in blocks {
            let head = block[0].1.trim_start();
            if head.starts_with("NOTE") || head.starts_with("STYLE") || head.starts_with("REGION") {
                continue;
            }
            if let Some(cue) = parse_cue(&block, CueSyntax::Vtt)? {
                cues.push(cue);
            }
        }
        cues_to_transcript(video_id, cues)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum CueSyntax {
    Srt,
    Vtt,
}

struct Cue {
    start_ms: u64,
    end_ms: u64,
    text: String,
}

/// Non-empty runs of lines separated by blank lines, with 1-based line numbers.
fn split_blocks(text: &str) -> Vec<Vec<(usize, &str)>> {
    let mut blocks = Vec::new();
    let mut current = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push((i + 1, line));
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    blocks
}

fn parse_cue(block: &[(usize, &str)], syntax: CueSyntax) -> Result<Option<Cue>, IngestError> {
    let Some(timing_pos) = block.iter().position(|(_, l)| l.contains("-->")) else {
        return match syntax {
            // VTT allows stray blocks we do not understand; SRT does not.
            CueSyntax::Vtt => Ok(None),
            CueSyntax::Srt => Err(IngestError::MalformedTimestamp {
                line: block[0].0,
                detail: "cue has no `-->` timing line".into(),
            }),
        };
    };
    if timing_pos > 1 {
        return Err(IngestError::MalformedTimestamp {
            line: block[timing_pos].0,
            detail: "timing line must be the first or second line of a cue".into(),
        });
    }
    let (line_no, timing) = block[timing_pos];
    let (left, right) = timing.split_once("-->").expect("checked above");
    let start_ms = parse_timestamp(left.trim(), syntax).ok_or_else(|| IngestError::MalformedTimestamp {
        line: line_no,
        detail: format!("cannot parse `{}`", left.trim()),
    })?;
    let end_token = right.split_whitespace().next().unwrap_or("");
    let end_ms = parse_timestamp(end_token, syntax).ok_or_else(|| IngestError::MalformedTimestamp {
        line: line_no,
        detail: format!("cannot parse `{end_token}`"),
    })?;
    if end_ms < start_ms {
        return Err(IngestError::MalformedTimestamp {
            line: line_no,
            detail: "cue ends before it starts".into(),
        });
    }
    let text = block[timing_pos + 1..]
        .iter()
        .map(|(_, l)| strip_markup(l))
        .collect::<Vec<_>>()
        .join(" ");
    Ok(Some(Cue {
        start_ms,
        end_ms,
        text,
    }))
}

/// `HH:MM:SS,mmm` (SRT; `.` also accepted) or `[HH:]MM:SS.mmm` (VTT), in ms.
fn parse_timestamp(token: &str, syntax: CueSyntax) -> Option<u64> {
    let (clock, frac) = token.split_once([',', '.'])?;
    if frac.len() != 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let millis: u64 = frac.parse().ok()?;
    let parts: Vec<&str> = clock.split(':').collect();
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !parts.iter().all(|p| digits(p)) {
        return None;
    }
    let (h, m, s) = match (parts.as_slice(), syntax) {
        ([h, m, s], _) => (h.parse::<u64>().ok()?, m.parse::<u64>().ok()?, s.parse::<u64>().ok()?),
        ([m, s], CueSyntax::Vtt) => (0, m.parse::<u64>().ok()?, s.parse::<u64>().ok()?),
        _ => return None,
    };
    if m >= 60 || s >= 60 {
        return None;
    }
    Some(((h * 60 + m) * 60 + s) * 1000 + millis)
}

fn strip_markup(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_tag = false;
    for c in line.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out.replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

/// Spreads each cue's time span over its words in proportion to their
/// non-whitespace character counts.
fn cues_to_transcript(
    video_id: &str,
    cues: impl IntoIterator<Item = Cue>,
) -> Result<Transcript, IngestError> {
    let mut words = Vec::new();
    for cue in cues {
        let tokens: Vec<&str> = cue.text.split_whitespace().collect();
        let total: usize = tokens.iter().map(|t| t.chars().count()).sum();
        if total == 0 {
            continue;
        }
        let start = cue.start_ms as f64 / 1000.0;
        let end = cue.end_ms as f64 / 1000.0;
        let span = end - start;
        let mut consumed = 0usize;
        for (i, token) in tokens.iter().enumerate() {
            let w_start = start + span * consumed as f64 / total as f64;
            consumed += token.chars().count();
            let w_end = if i + 1 == tokens.len() {
                end
            } else {
                start + span * consumed as f64 / total as f64
            };
            words.push(TimedWord {
                text: (*token).to_string(),
                start_s: w_start,
                end_s: w_end,
            });
        }
    }
    Ok(Transcript {
        video_id: video_id.to_string(),
        words,
    })
}
