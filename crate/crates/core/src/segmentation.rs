//! Visual cut detection, speech boundary detection, and fusion of both
//! streams into functional units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FrameScoreSeries, Transcript};

/// Guards the adaptive ratio when every neighbouring score is zero.
pub const ADAPTIVE_EPSILON: f64 = 1e-6;
/// Speech boundaries closer than this are treated as the same boundary.
pub const DEDUP_EPSILON_S: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("frame score series is empty")]
    EmptySeries,
    #[error("boundary at {t}s is outside (0, {duration_s})")]
    BoundaryOutOfRange { t: f64, duration_s: f64 },
    #[error("invalid segmentation parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundarySource {
    Visual,
    SpeechPause,
    SpeechMarker,
}

impl BoundarySource {
    /// Lower rank is dropped first when units are too short.
    fn strength(self) -> u8 {
        match self {
            BoundarySource::Visual => 0,
            BoundarySource::SpeechMarker => 1,
            BoundarySource::SpeechPause => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub t: f64,
    pub source: BoundarySource,
    pub snapped: bool,
}

impl Boundary {
    pub fn new(t: f64, source: BoundarySource) -> Self {
        Boundary {
            t,
            source,
            snapped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechSpan {
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalUnit {
    pub video_id: String,
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub transcript_text: String,
    pub keyframe_indices: Vec<u64>,
}

impl FunctionalUnit {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationParams {
    pub adaptive_ratio: f64,
    /// Frames considered on each side of the candidate.
    pub adaptive_window: usize,
    pub min_content_val: f64,
    pub pause_threshold_s: f64,
    pub marker_lexicon: Vec<String>,
    pub snap_tolerance_s: f64,
    pub min_unit_duration_s: f64,
    pub suppress_visual_inside_speech: bool,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams {
            adaptive_ratio: 3.0,
            adaptive_window: 2,
            min_content_val: 15.0,
            pause_threshold_s: 0.5,
            marker_lexicon: DEFAULT_MARKERS.iter().map(|s| s.to_string()).collect(),
            snap_tolerance_s: 0.25,
            min_unit_duration_s: 1.0,
            suppress_visual_inside_speech: true,
        }
    }
}

pub const DEFAULT_MARKERS: [&str; 8] = [
    "and so", "and then", "but then", "so then", "then", "now", "however", "meanwhile",
];

impl SegmentationParams {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let bad = |m: &str| Err(SegmentationError::InvalidParams(m.into()));
        if self.adaptive_ratio.is_nan() || self.adaptive_ratio <= 1.0 {
            return bad("adaptive_ratio must be > 1");
        }
        if self.adaptive_window == 0 {
            return bad("adaptive_window must be >= 1");
        }
        for (name, v) in [
            ("min_content_val", self.min_content_val),
            ("pause_threshold_s", self.pause_threshold_s),
            ("snap_tolerance_s", self.snap_tolerance_s),
            ("min_unit_duration_s", self.min_unit_duration_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SegmentationError::InvalidParams(format!("{name} must be >= 0")));
            }
        }
        if self.marker_lexicon.iter().any(|m| m.split_whitespace().next().is_none()) {
            return bad("marker phrases must be non-empty");
        }
        Ok(())
    }
}

/// Adaptive content detector: a frame is a cut when its score clears
/// `min_content_val` and exceeds the mean of its neighbours (up to
/// `adaptive_window` on each side) by `adaptive_ratio`. Frame 0 is never a
/// cut since a boundary at t = 0 does not split anything.
pub fn detect_visual_cuts(
    series: &FrameScoreSeries,
    fps: f64,
    params: &SegmentationParams,
) -> Result<Vec<Boundary>, SegmentationError> {
    if series.is_empty() {
        return Err(SegmentationError::EmptySeries);
    }
    let scores = series.values();
    let n = scores.len();
    let w = params.adaptive_window;
    let mut cuts = Vec::new();
    for t in 1..n {
        let score = scores[t];
        if score < params.min_content_val {
            continue;
        }
        let lo = t.saturating_sub(w);
        let hi = (t + w).min(n - 1);
        let (sum, count) = (lo..=hi)
            .filter(|&i| i != t)
            .fold((0.0, 0usize), |(s, c), i| (s + scores[i], c + 1));
        let rolling_mean = if count == 0 { 0.0 } else { sum / count as f64 };
        if score / rolling_mean.max(ADAPTIVE_EPSILON) >= params.adaptive_ratio {
            let frame = series.scores[t].0;
            cuts.push(Boundary::new(frame as f64 / fps, BoundarySource::Visual));
        }
    }
    Ok(cuts)
}

/// Merges words into continuous-speech spans; a gap of at least
/// `pause_threshold_s` starts a new span.
pub fn derive_speech_spans(transcript: &Transcript, params: &SegmentationParams) -> Vec<SpeechSpan> {
    let mut spans: Vec<SpeechSpan> = Vec::new();
    for w in &transcript.words {
        match spans.last_mut() {
            Some(span) if w.start_s - span.end_s < params.pause_threshold_s => {
                span.end_s = span.end_s.max(w.end_s);
            }
            _ => spans.push(SpeechSpan {
                start_s: w.start_s,
                end_s: w.end_s,
            }),
        }
    }
    spans.retain(|s| s.start_s < s.end_s);
    spans
}

fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Pause boundaries at the midpoint of every long inter-word gap, plus marker
/// boundaries at the first word of every marker phrase. Phrases are matched
/// leftmost-longest over consecutive words and consume the words they match,
/// so "and then" yields one boundary rather than a second one for "then".
pub fn detect_speech_boundaries(
    transcript: &Transcript,
    params: &SegmentationParams,
) -> Vec<Boundary> {
    let words = &transcript.words;
    let mut out = Vec::new();

    let mut speech_end = f64::NEG_INFINITY;
    for pair in words.windows(2) {
        speech_end = speech_end.max(pair[0].end_s);
        let gap = pair[1].start_s - speech_end;
        if gap >= params.pause_threshold_s {
            out.push(Boundary::new(
                0.5 * (speech_end + pair[1].start_s),
                BoundarySource::SpeechPause,
            ));
        }
    }

    let tokens: Vec<String> = words.iter().map(|w| normalize_token(&w.text)).collect();
    let mut phrases: Vec<Vec<String>> = params
        .marker_lexicon
        .iter()
        .map(|p| p.split_whitespace().map(normalize_token).collect::<Vec<_>>())
        .filter(|p: &Vec<String>| !p.is_empty())
        .collect();
    phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut i = 0;
    while i < tokens.len() {
        let hit = phrases.iter().find(|p| {
            i + p.len() <= tokens.len() && p.iter().zip(&tokens[i..]).all(|(a, b)| a == b)
        });
        match hit {
            Some(p) => {
                out.push(Boundary::new(words[i].start_s, BoundarySource::SpeechMarker));
                i += p.len();
            }
            None => i += 1,
        }
    }

    out.retain(|b| b.t > 0.0);
    sort_and_dedup(out, DEDUP_EPSILON_S)
}

/// Sorts by time and merges boundaries within `eps`, keeping the strongest
/// source (and the `snapped` flag if any merged boundary had it).
fn sort_and_dedup(mut bounds: Vec<Boundary>, eps: f64) -> Vec<Boundary> {
    bounds.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then_with(|| b.source.strength().cmp(&a.source.strength()))
    });
    let mut out: Vec<Boundary> = Vec::with_capacity(bounds.len());
    for b in bounds {
        match out.last_mut() {
            Some(last) if b.t - last.t <= eps => {
                if b.source.strength() > last.source.strength() {
                    last.source = b.source;
                }
                last.snapped |= b.snapped;
            }
            _ => out.push(b),
        }
    }
    out
}

/// Fuses visual and speech boundaries into units that partition
/// `[0, duration_s]`:
///
/// 1. a visual boundary within `snap_tolerance_s` of a speech boundary moves
///    onto the nearest one (earlier wins ties) and is marked snapped;
/// 2. unsnapped visual boundaries strictly inside a speech span are dropped
///    when `suppress_visual_inside_speech` is set;
/// 3. the remaining boundaries are merged and sorted;
/// 4. while any unit is shorter than `min_unit_duration_s`, one boundary of
///    the earliest such unit is removed: visual before marker before pause,
///    then the later one;
/// 5. units are emitted.
///
/// Units come back with empty text and keyframes; see [`populate_units`].
pub fn fuse_boundaries(
    video_id: &str,
    visual: &[Boundary],
    speech: &[Boundary],
    spans: &[SpeechSpan],
    duration_s: f64,
    params: &SegmentationParams,
) -> Result<Vec<FunctionalUnit>, SegmentationError> {
    for b in visual.iter().chain(speech) {
        if !(b.t > 0.0 && b.t < duration_s) {
            return Err(SegmentationError::BoundaryOutOfRange { t: b.t, duration_s });
        }
    }

    let mut speech_sorted: Vec<Boundary> = speech.to_vec();
    speech_sorted.sort_by(|a, b| a.t.total_cmp(&b.t));

    let mut all: Vec<Boundary> = speech_sorted.clone();
    for v in visual {
        let nearest = speech_sorted
            .iter()
            .filter(|s| (s.t - v.t).abs() <= params.snap_tolerance_s)
            .min_by(|a, b| {
                (a.t - v.t)
                    .abs()
                    .total_cmp(&(b.t - v.t).abs())
                    .then_with(|| a.t.total_cmp(&b.t))
            });
        match nearest {
            Some(s) => all.push(Boundary {
                t: s.t,
                source: s.source,
                snapped: true,
            }),
            None => {
                let inside_speech = params.suppress_visual_inside_speech
                    && spans.iter().any(|sp| sp.start_s < v.t && v.t < sp.end_s);
                if !inside_speech {
                    all.push(Boundary {
                        snapped: false,
                        ..*v
                    });
                }
            }
        }
    }

    let mut bounds = sort_and_dedup(all, 0.0);
    enforce_min_duration(&mut bounds, duration_s, params.min_unit_duration_s);

    let mut edges = Vec::with_capacity(bounds.len() + 2);
    edges.push(0.0);
    edges.extend(bounds.iter().map(|b| b.t));
    edges.push(duration_s);
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(index, w)| FunctionalUnit {
            video_id: video_id.to_string(),
            index,
            start_s: w[0],
            end_s: w[1],
            transcript_text: String::new(),
            keyframe_indices: Vec::new(),
        })
        .collect())
}

fn enforce_min_duration(bounds: &mut Vec<Boundary>, duration_s: f64, min_len: f64) {
    loop {
        let n = bounds.len();
        if n == 0 {
            return;
        }
        let edge = |i: usize| -> f64 {
            if i == 0 {
                0.0
            } else if i == n + 1 {
                duration_s
            } else {
                bounds[i - 1].t
            }
        };
        // Gap g spans edge(g)..edge(g+1); its removable boundaries are the
        // interior edges, at bounds[g-1] and bounds[g].
        let Some(gap) = (0..=n).find(|&g| edge(g + 1) - edge(g) < min_len) else {
            return;
        };
        let candidates: Vec<usize> = [gap.checked_sub(1), (gap < n).then_some(gap)]
            .into_iter()
            .flatten()
            .collect();
        let victim = candidates
            .into_iter()
            .min_by(|&a, &b| {
                bounds[a]
                    .source
                    .strength()
                    .cmp(&bounds[b].source.strength())
                    .then_with(|| bounds[b].t.total_cmp(&bounds[a].t))
            })
            .expect("a gap always touches at least one boundary when n > 0");
        bounds.remove(victim);
    }
}

/// Fills each unit's transcript text (words whose midpoint falls inside it;
/// the last unit is closed on the right) and its first/middle/last keyframes.
pub fn populate_units(
    units: &mut [FunctionalUnit],
    transcript: &Transcript,
    fps: f64,
    frame_count: Option<u64>,
) {
    let last_unit = units.len().saturating_sub(1);
    for (i, unit) in units.iter_mut().enumerate() {
        let inside = |t: f64| t >= unit.start_s && (t < unit.end_s || (i == last_unit && t <= unit.end_s));
        unit.transcript_text = transcript
            .words
            .iter()
            .filter(|w| inside(w.midpoint()))
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");

        let mut first = (unit.start_s * fps - 1e-9).ceil().max(0.0) as u64;
        let mut last = ((unit.end_s * fps - 1e-9).ceil() as u64).saturating_sub(1);
        if let Some(count) = frame_count {
            let max = count.saturating_sub(1);
            first = first.min(max);
            last = if i == last_unit { max } else { last.min(max) };
        }
        let last = last.max(first);
        unit.keyframe_indices = vec![first, first + (last - first) / 2, last];
    }
}

/// Runs the whole segmentation for one video. Speech boundaries that fall at
/// or past the video end (transcripts may overhang slightly) are dropped.
pub fn segment_video(
    video_id: &str,
    series: &FrameScoreSeries,
    fps: f64,
    duration_s: f64,
    transcript: &Transcript,
    params: &SegmentationParams,
) -> Result<Vec<FunctionalUnit>, SegmentationError> {
    params.validate()?;
    let visual: Vec<Boundary> = detect_visual_cuts(series, fps, params)?
        .into_iter()
        .filter(|b| b.t < duration_s)
        .collect();
    let speech: Vec<Boundary> = detect_speech_boundaries(transcript, params)
        .into_iter()
        .filter(|b| b.t < duration_s)
        .collect();
    let spans = derive_speech_spans(transcript, params);
    let mut units = fuse_boundaries(video_id, &visual, &speech, &spans, duration_s, params)?;
    let frame_count = series.scores.last().map(|&(f, _)| f + 1);
    populate_units(&mut units, transcript, fps, frame_count);
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TimedWord;

    fn transcript(words: &[(&str, f64, f64)]) -> Transcript {
        Transcript {
            video_id: "v".into(),
            words: words
                .iter()
                .map(|&(t, s, e)| TimedWord {
                    text: t.into(),
                    start_s: s,
                    end_s: e,
                })
                .collect(),
        }
    }

    fn spans_of(units: &[FunctionalUnit]) -> Vec<(f64, f64)> {
        units.iter().map(|u| (u.start_s, u.end_s)).collect()
    }

    #[test]
    fn flat_zero_scores_have_no_cuts() {
        let s = FrameScoreSeries::from_values("v", &[0.0; 50]);
        assert!(detect_visual_cuts(&s, 25.0, &SegmentationParams::default()).unwrap().is_empty());
    }

    #[test]
    fn isolated_spike_is_a_cut() {
        let s = FrameScoreSeries::from_values("v", &[0.0, 2.0, 2.0, 90.0, 2.0, 2.0]);
        let cuts = detect_visual_cuts(&s, 1.0, &SegmentationParams::default()).unwrap();
        assert_eq!(cuts, vec![Boundary::new(3.0, BoundarySource::Visual)]);
    }

    #[test]
    fn uniform_high_scores_are_not_cuts() {
        let s = FrameScoreSeries::from_values("v", &[20.0; 30]);
        assert!(detect_visual_cuts(&s, 1.0, &SegmentationParams::default()).unwrap().is_empty());
    }

    #[test]
    fn empty_series_is_an_error() {
        let s = FrameScoreSeries::from_values("v", &[]);
        assert_eq!(
            detect_visual_cuts(&s, 1.0, &SegmentationParams::default()),
            Err(SegmentationError::EmptySeries)
        );
    }

    #[test]
    fn speech_spans_split_on_pauses() {
        let p = SegmentationParams::default();
        assert!(derive_speech_spans(&transcript(&[]), &p).is_empty());
        let split = derive_speech_spans(&transcript(&[("a", 0.0, 1.0), ("b", 1.8, 2.2)]), &p);
        assert_eq!(
            split,
            vec![
                SpeechSpan { start_s: 0.0, end_s: 1.0 },
                SpeechSpan { start_s: 1.8, end_s: 2.2 }
            ]
        );
        let merged = derive_speech_spans(&transcript(&[("a", 0.0, 1.0), ("b", 1.2, 2.0)]), &p);
        assert_eq!(merged, vec![SpeechSpan { start_s: 0.0, end_s: 2.0 }]);
    }

    #[test]
    fn pause_boundary_at_gap_midpoint() {
        let p = SegmentationParams::default();
        assert!(detect_speech_boundaries(&transcript(&[]), &p).is_empty());
        let b = detect_speech_boundaries(&transcript(&[("a", 0.2, 1.0), ("b", 1.8, 2.2)]), &p);
        assert_eq!(b.len(), 1);
        assert!((b[0].t - 1.4).abs() < 1e-12);
        assert_eq!(b[0].source, BoundarySource::SpeechPause);
    }

    #[test]
    fn marker_phrase_is_matched_longest_first() {
        let p = SegmentationParams::default();
        let t = transcript(&[
            ("It", 4.2, 4.4),
            ("was", 4.45, 4.6),
            ("great,", 4.65, 4.95),
            ("and", 5.0, 5.1),
            ("then", 5.15, 5.3),
            ("it", 5.35, 5.45),
            ("broke.", 5.5, 5.9),
        ]);
        assert_eq!(
            detect_speech_boundaries(&t, &p),
            vec![Boundary::new(5.0, BoundarySource::SpeechMarker)]
        );
    }

    #[test]
    fn marker_matching_ignores_case_and_punctuation() {
        let p = SegmentationParams::default();
        let t = transcript(&[("ok", 0.5, 0.9), ("NOW,", 1.0, 1.2), ("However", 1.3, 1.6)]);
        let times: Vec<f64> = detect_speech_boundaries(&t, &p).iter().map(|b| b.t).collect();
        assert_eq!(times, vec![1.0, 1.3]);
    }

    #[test]
    fn marker_at_time_zero_is_not_a_boundary() {
        let p = SegmentationParams::default();
        let t = transcript(&[("Now", 0.0, 0.3), ("look", 0.35, 0.6)]);
        assert!(detect_speech_boundaries(&t, &p).is_empty());
    }

    #[test]
    fn no_boundaries_give_one_unit() {
        let p = SegmentationParams::default();
        let units = fuse_boundaries("v", &[], &[], &[], 10.0, &p).unwrap();
        assert_eq!(spans_of(&units), vec![(0.0, 10.0)]);
    }

    #[test]
    fn visual_snaps_to_nearby_pause() {
        let p = SegmentationParams::default();
        let units = fuse_boundaries(
            "v",
            &[Boundary::new(4.10, BoundarySource::Visual)],
            &[Boundary::new(4.00, BoundarySource::SpeechPause)],
            &[],
            10.0,
            &p,
        )
        .unwrap();
        assert_eq!(spans_of(&units), vec![(0.0, 4.0), (4.0, 10.0)]);
    }

    #[test]
    fn snap_prefers_nearest_then_earlier() {
        let p = SegmentationParams::default();
        let speech = [
            Boundary::new(3.8, BoundarySource::SpeechMarker),
            Boundary::new(4.2, BoundarySource::SpeechPause),
        ];
        let units = fuse_boundaries(
            "v",
            &[Boundary::new(4.0, BoundarySource::Visual)],
            &speech,
            &[],
            10.0,
            &SegmentationParams {
                min_unit_duration_s: 0.0,
                ..p
            },
        )
        .unwrap();
        // Both speech boundaries survive; the visual one merged into 3.8.
        assert_eq!(spans_of(&units), vec![(0.0, 3.8), (3.8, 4.2), (4.2, 10.0)]);
    }

    #[test]
    fn short_unit_drops_later_visual_cut() {
        let p = SegmentationParams::default();
        let units = fuse_boundaries(
            "v",
            &[
                Boundary::new(2.0, BoundarySource::Visual),
                Boundary::new(2.5, BoundarySource::Visual),
            ],
            &[],
            &[],
            10.0,
            &p,
        )
        .unwrap();
        assert_eq!(spans_of(&units), vec![(0.0, 2.0), (2.0, 10.0)]);
    }

    #[test]
    fn short_unit_keeps_speech_over_visual() {
        let p = SegmentationParams::default();
        let units = fuse_boundaries(
            "v",
            &[Boundary::new(5.5, BoundarySource::Visual)],
            &[Boundary::new(5.0, BoundarySource::SpeechMarker)],
            &[],
            10.0,
            &p,
        )
        .unwrap();
        assert_eq!(spans_of(&units), vec![(0.0, 5.0), (5.0, 10.0)]);
    }

    #[test]
    fn visual_inside_speech_is_suppressed() {
        let p = SegmentationParams::default();
        let spans = [SpeechSpan { start_s: 3.0, end_s: 8.0 }];
        let v = [Boundary::new(5.0, BoundarySource::Visual)];
        let units = fuse_boundaries("v", &v, &[], &spans, 10.0, &p).unwrap();
        assert_eq!(spans_of(&units), vec![(0.0, 10.0)]);
        let off = SegmentationParams {
            suppress_visual_inside_speech: false,
            ..p
        };
        let units = fuse_boundaries("v", &v, &[], &spans, 10.0, &off).unwrap();
        assert_eq!(spans_of(&units), vec![(0.0, 5.0), (5.0, 10.0)]);
    }

    #[test]
    fn boundary_outside_video_is_rejected() {
        let p = SegmentationParams::default();
        for t in [0.0, 10.0, 12.0] {
            assert!(matches!(
                fuse_boundaries("v", &[Boundary::new(t, BoundarySource::Visual)], &[], &[], 10.0, &p),
                Err(SegmentationError::BoundaryOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn video_shorter_than_min_unit_is_one_unit() {
        let p = SegmentationParams::default();
        let units =
            fuse_boundaries("v", &[Boundary::new(0.4, BoundarySource::Visual)], &[], &[], 0.8, &p)
                .unwrap();
        assert_eq!(spans_of(&units), vec![(0.0, 0.8)]);
    }

    #[test]
    fn units_get_text_by_word_midpoint_and_keyframes() {
        let p = SegmentationParams::default();
        let mut units = fuse_boundaries(
            "v",
            &[Boundary::new(2.0, BoundarySource::Visual)],
            &[],
            &[],
            4.0,
            &p,
        )
        .unwrap();
        let t = transcript(&[("one", 0.5, 1.0), ("two", 1.8, 2.4), ("three", 3.0, 4.0)]);
        populate_units(&mut units, &t, 10.0, Some(40));
        assert_eq!(units[0].transcript_text, "one");
        assert_eq!(units[1].transcript_text, "two three");
        assert_eq!(units[0].keyframe_indices, vec![0, 9, 19]);
        assert_eq!(units[1].keyframe_indices, vec![20, 29, 39]);
    }

    #[test]
    fn params_validation() {
        assert!(SegmentationParams::default().validate().is_ok());
        let p = SegmentationParams {
            adaptive_ratio: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = SegmentationParams {
            marker_lexicon: vec!["  ".into()],
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
