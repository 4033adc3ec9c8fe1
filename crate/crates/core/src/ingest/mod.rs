//! Parsers for everything that enters a project: frame streams (or
//! precomputed frame scores), word-timed transcripts and the performance
//! table.

mod frames;
mod performance;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frames::{
    compute_content_scores, frame_delta_score, parse_score_csv, read_adframes_header,
    rgb_to_hsv255, write_adframes, write_score_csv, AdFramesHeader, FrameScoreSeries,
};
pub use performance::{
    load_performance_records, load_performance_records_partial, write_performance_csv,
    AdvertiserSize, CampaignObjective, Covariates, PerformanceRecord, RowRejection, AdFilter,
    DWELL_HORIZON, PERFORMANCE_HEADER,
};
pub use transcript::{
    parse_transcript, serialize_transcript, TimedWord, Transcript, TranscriptFormat,
    TranscriptFormatRegistry,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("input is not valid UTF-8: {0}")]
    EncodingError(String),
    #[error("malformed timestamp at line {line}: {detail}")]
    MalformedTimestamp { line: usize, detail: String },
    #[error("word {index} starts at {start}s, before the previous word ({previous}s)")]
    OverlappingWords {
        index: usize,
        start: f64,
        previous: f64,
    },
    #[error("malformed transcript: {0}")]
    MalformedTranscript(String),
    #[error("unknown transcript format `{0}`")]
    UnknownFormat(String),
    #[error("bad ADFRAMES header: {0}")]
    BadHeader(String),
    #[error("frame {frame} is truncated ({got} of {expected} bytes)")]
    TruncatedFrame {
        frame: usize,
        got: usize,
        expected: usize,
    },
    #[error("frame stream contains no frames")]
    ZeroFrames,
    #[error("score series: {0}")]
    BadScores(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: dwell curve increases at second {second}")]
    DwellNotMonotone { row: usize, second: usize },
    #[error("row {row}: `{field}` out of range ({value})")]
    ValueOutOfRange {
        row: usize,
        field: String,
        value: String,
    },
    #[error("row {row}: cannot parse `{field}`: {detail}")]
    BadValue {
        row: usize,
        field: String,
        detail: String,
    },
    #[error("video {video_id}: {detail}")]
    InvalidVideo { video_id: String, detail: String },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for IngestError {
    fn from(e: std::io::Error) -> Self {
        IngestError::Io(e.to_string())
    }
}

/// Industry segment of the advertiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subvertical {
    ApparelAccessories,
    Beauty,
    Food,
    Beverages,
    Other,
}

impl Subvertical {
    pub const ALL: [Subvertical; 5] = [
        Subvertical::ApparelAccessories,
        Subvertical::Beauty,
        Subvertical::Food,
        Subvertical::Beverages,
        Subvertical::Other,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Subvertical::ApparelAccessories => "apparel_accessories",
            Subvertical::Beauty => "beauty",
            Subvertical::Food => "food",
            Subvertical::Beverages => "beverages",
            Subvertical::Other => "other",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Subvertical::ApparelAccessories => "Apparel & Accessories",
            Subvertical::Beauty => "Beauty",
            Subvertical::Food => "Food",
            Subvertical::Beverages => "Beverages",
            Subvertical::Other => "Other",
        }
    }
}

impl std::str::FromStr for Subvertical {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['&', ' ', '-'], "_");
        let norm = norm.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_");
        match norm.as_str() {
            "apparel_accessories" | "apparelaccessories" | "apparel" => {
                Ok(Subvertical::ApparelAccessories)
            }
            "beauty" => Ok(Subvertical::Beauty),
            "food" => Ok(Subvertical::Food),
            "beverages" | "beverage" => Ok(Subvertical::Beverages),
            "other" => Ok(Subvertical::Other),
            _ => Err(format!("unknown subvertical `{s}`")),
        }
    }
}

impl std::fmt::Display for Subvertical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// Per-video metadata. `width`/`height` are absent when only precomputed
/// frame scores were supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration_s: f64,
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub subvertical: Subvertical,
}

/// Shortest and longest ad lengths admitted when the length filter is
/// enforced.
pub const MIN_AD_DURATION_S: f64 = 15.0;
pub const MAX_AD_DURATION_S: f64 = 60.0;

impl VideoMeta {
    pub fn validate(&self, enforce_length_window: bool) -> Result<(), IngestError> {
        let bad = |detail: String| IngestError::InvalidVideo {
            video_id: self.video_id.clone(),
            detail,
        };
        if self.video_id.trim().is_empty() {
            return Err(bad("empty video_id".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(bad(format!("duration_s must be > 0, got {}", self.duration_s)));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(bad(format!("fps must be > 0, got {}", self.fps)));
        }
        if self.width == Some(0) || self.height == Some(0) {
            return Err(bad("frame dimensions must be > 0".into()));
        }
        if enforce_length_window
            && !(MIN_AD_DURATION_S..=MAX_AD_DURATION_S).contains(&self.duration_s)
        {
            return Err(bad(format!(
                "duration {}s outside [{MIN_AD_DURATION_S}, {MAX_AD_DURATION_S}]",
                self.duration_s
            )));
        }
        Ok(())
    }
}

pub(crate) fn decode_utf8(bytes: &[u8]) -> Result<&str, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::EncodingError(e.to_string()))?;
    Ok(text.strip_prefix('\u{feff}').unwrap_or(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subvertical_parses_display_and_key_forms() {
        for sv in Subvertical::ALL {
            assert_eq!(sv.key().parse::<Subvertical>().unwrap(), sv);
            assert_eq!(sv.display_name().parse::<Subvertical>().unwrap(), sv);
        }
        assert!("cars".parse::<Subvertical>().is_err());
    }

    #[test]
    fn length_window_only_applies_when_enforced() {
        let mut meta = VideoMeta {
            video_id: "v".into(),
            duration_s: 8.0,
            fps: 30.0,
            width: None,
            height: None,
            subvertical: Subvertical::Food,
        };
        assert!(meta.validate(false).is_ok());
        assert!(meta.validate(true).is_err());
        meta.duration_s = 60.0;
        assert!(meta.validate(true).is_ok());
    }

    #[test]
    fn utf8_bom_is_stripped() {
        assert_eq!(decode_utf8(b"\xef\xbb\xbfWEBVTT").unwrap(), "WEBVTT");
        assert!(matches!(decode_utf8(&[0xff, 0xfe]), Err(IngestError::EncodingError(_))));
    }
}
