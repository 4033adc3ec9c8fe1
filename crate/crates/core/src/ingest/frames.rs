//! ADFRAMES/1 raw frame streams and the content-change score computed from
//! them.
//!
//! A stream is one JSON header line followed by tightly packed rgb24 frames.
//! Each frame after the first is scored by the mean absolute per-pixel change
//! of its HSV channels (each mapped to 0..=255) against the previous frame,
//! averaged over the three channels.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{decode_utf8, IngestError};

pub const ADFRAMES_MAGIC: &str = "adframes1";
const MAX_HEADER_BYTES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdFramesHeader {
    pub magic: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub pixfmt: String,
}

impl AdFramesHeader {
    pub fn new(width: u32, height: u32, fps: f64) -> Self {
        AdFramesHeader {
            magic: ADFRAMES_MAGIC.into(),
            width,
            height,
            fps,
            pixfmt: "rgb24".into(),
        }
    }

    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }

    fn validate(&self) -> Result<(), IngestError> {
        if self.magic != ADFRAMES_MAGIC {
            return Err(IngestError::BadHeader(format!("magic `{}`", self.magic)));
        }
        if self.pixfmt != "rgb24" {
            return Err(IngestError::BadHeader(format!("unsupported pixfmt `{}`", self.pixfmt)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(IngestError::BadHeader("zero frame dimension".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(IngestError::BadHeader(format!("fps {}", self.fps)));
        }
        Ok(())
    }
}

/// Per-frame content scores; `scores[i] = (frame_index, score)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScoreSeries {
    pub video_id: String,
    pub scores: Vec<(u64, f64)>,
}

impl FrameScoreSeries {
    pub fn from_values(video_id: impl Into<String>, values: &[f64]) -> Self {
        FrameScoreSeries {
            video_id: video_id.into(),
            scores: values.iter().enumerate().map(|(i, &s)| (i as u64, s)).collect(),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|&(_, s)| s).collect()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let mut expected_min = 0u64;
        for (i, &(frame, score)) in self.scores.iter().enumerate() {
            if (i == 0 && frame != 0) || (i > 0 && frame < expected_min) {
                return Err(IngestError::BadScores(format!(
                    "frame_index must increase strictly from 0 (row {i} has {frame})"
                )));
            }
            if !(0.0..=255.0).contains(&score) {
                return Err(IngestError::BadScores(format!("score {score} at frame {frame}")));
            }
            expected_min = frame + 1;
        }
        Ok(())
    }
}

/// Standard hexcone RGB→HSV with every channel scaled to 0..=255.
pub fn rgb_to_hsv255(r: u8, g: u8, b: u8) -> [f64; 3] {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue_deg = if delta == 0.0 {
        0.0
    } else if max == r {
        (60.0 * ((g - b) / delta)).rem_euclid(360.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max * 255.0 };
    [hue_deg * 255.0 / 360.0, sat, max]
}

fn frame_to_hsv(frame: &[u8], out: &mut Vec<[f64; 3]>) {
    out.clear();
    out.extend(frame.chunks_exact(3).map(|px| rgb_to_hsv255(px[0], px[1], px[2])));
}

fn hsv_delta(prev: &[[f64; 3]], cur: &[[f64; 3]]) -> f64 {
    let mut sums = [0.0f64; 3];
    for (a, b) in prev.iter().zip(cur) {
        for c in 0..3 {
            sums[c] += (a[c] - b[c]).abs();
        }
    }
    let n = cur.len() as f64;
    (sums[0] / n + sums[1] / n + sums[2] / n) / 3.0
}

/// Content score between two rgb24 frames of equal size.
pub fn frame_delta_score(prev: &[u8], cur: &[u8]) -> f64 {
    assert_eq!(prev.len(), cur.len(), "frames must have equal size");
    let mut a = Vec::new();
    let mut b = Vec::new();
    frame_to_hsv(prev, &mut a);
    frame_to_hsv(cur, &mut b);
    hsv_delta(&a, &b)
}

pub fn read_adframes_header<R: BufRead>(reader: &mut R) -> Result<AdFramesHeader, IngestError> {
    let mut line = Vec::new();
    let mut limited = reader.take(MAX_HEADER_BYTES as u64);
    limited.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(IngestError::BadHeader("header line missing or not newline-terminated".into()));
    }
    let text = decode_utf8(&line[..line.len() - 1])
        .map_err(|e| IngestError::BadHeader(e.to_string()))?;
    let header: AdFramesHeader =
        serde_json::from_str(text).map_err(|e| IngestError::BadHeader(e.to_string()))?;
    header.validate()?;
    Ok(header)
}

/// Reads a whole ADFRAMES/1 stream and scores every frame.
pub fn compute_content_scores<R: Read>(
    video_id: &str,
    reader: R,
) -> Result<(AdFramesHeader, FrameScoreSeries), IngestError> {
    let mut reader = BufReader::new(reader);
    let header = read_adframes_header(&mut reader)?;
    let frame_len = header.frame_bytes();
    let mut buf = vec![0u8; frame_len];
    let mut prev_hsv = Vec::new();
    let mut cur_hsv = Vec::new();
    let mut scores = Vec::new();
    loop {
        let got = read_full(&mut reader, &mut buf)?;
        if got == 0 {
            break;
        }
        if got < frame_len {
            return Err(IngestError::TruncatedFrame {
                frame: scores.len(),
                got,
                expected: frame_len,
            });
        }
        frame_to_hsv(&buf, &mut cur_hsv);
        let score = if scores.is_empty() {
            0.0
        } else {
            hsv_delta(&prev_hsv, &cur_hsv)
        };
        scores.push((scores.len() as u64, score));
        std::mem::swap(&mut prev_hsv, &mut cur_hsv);
    }
    if scores.is_empty() {
        return Err(IngestError::ZeroFrames);
    }
    Ok((
        header,
        FrameScoreSeries {
            video_id: video_id.to_string(),
            scores,
        },
    ))
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize, IngestError> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn write_adframes<W: Write>(
    mut writer: W,
    header: &AdFramesHeader,
    frames: impl IntoIterator<Item = Vec<u8>>,
) -> std::io::Result<()> {
    let line = serde_json::to_string(header).expect("header serializes");
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")?;
    for frame in frames {
        assert_eq!(frame.len(), header.frame_bytes(), "frame size mismatch");
        writer.write_all(&frame)?;
    }
    writer.flush()
}

/// Parses the precomputed `frame_index,score` CSV.
pub fn parse_score_csv(video_id: &str, bytes: &[u8]) -> Result<FrameScoreSeries, IngestError> {
    let text = decode_utf8(bytes)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::BadScores(e.to_string()))?
        .clone();
    for col in ["frame_index", "score"] {
        if !headers.iter().any(|h| h == col) {
            return Err(IngestError::MissingColumn(col.into()));
        }
    }
    let idx_col = headers.iter().position(|h| h == "frame_index").unwrap();
    let score_col = headers.iter().position(|h| h == "score").unwrap();
    let mut scores = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| IngestError::BadScores(e.to_string()))?;
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| IngestError::MissingColumn(name.into()))
        };
        let frame: u64 = field(idx_col, "frame_index")?.parse().map_err(|e| IngestError::BadValue {
            row: row + 1,
            field: "frame_index".into(),
            detail: format!("{e}"),
        })?;
        let score: f64 = field(score_col, "score")?.parse().map_err(|e| IngestError::BadValue {
            row: row + 1,
            field: "score".into(),
            detail: format!("{e}"),
        })?;
        scores.push((frame, score));
    }
    let series = FrameScoreSeries {
        video_id: video_id.to_string(),
        scores,
    };
    if series.is_empty() {
        return Err(IngestError::ZeroFrames);
    }
    series.validate()?;
    Ok(series)
}

pub fn write_score_csv(series: &FrameScoreSeries) -> String {
    let mut out = String::from("frame_index,score\n");
    for (frame, score) in &series.scores {
        out.push_str(&format!("{frame},{score}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(w: u32, h: u32, frames: Vec<Vec<u8>>) -> Vec<u8> {
        let mut out = Vec::new();
        write_adframes(&mut out, &AdFramesHeader::new(w, h, 10.0), frames).unwrap();
        out
    }

    #[test]
    fn identical_frames_score_zero() {
        let f = vec![10, 200, 30, 40, 50, 60];
        let (_, s) = compute_content_scores("v", &stream(2, 1, vec![f.clone(), f])[..]).unwrap();
        assert_eq!(s.values(), vec![0.0, 0.0]);
    }

    #[test]
    fn black_to_white_scores_85() {
        let (_, s) =
            compute_content_scores("v", &stream(2, 2, vec![vec![0; 12], vec![255; 12]])[..])
                .unwrap();
        assert_eq!(s.values(), vec![0.0, 85.0]);
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(rgb_to_hsv255(255, 0, 0), [0.0, 255.0, 255.0]);
        assert_eq!(rgb_to_hsv255(0, 255, 0), [85.0, 255.0, 255.0]);
        assert_eq!(rgb_to_hsv255(0, 0, 255), [170.0, 255.0, 255.0]);
        assert_eq!(rgb_to_hsv255(128, 128, 128), [0.0, 0.0, 128.0]);
    }

    #[test]
    fn header_errors() {
        let bad = b"{\"magic\":\"nope\",\"width\":1,\"height\":1,\"fps\":1,\"pixfmt\":\"rgb24\"}\n";
        assert!(matches!(compute_content_scores("v", &bad[..]), Err(IngestError::BadHeader(_))));
        let unterminated = b"{\"magic\":\"adframes1\"";
        assert!(matches!(
            compute_content_scores("v", &unterminated[..]),
            Err(IngestError::BadHeader(_))
        ));
        let gray = b"{\"magic\":\"adframes1\",\"width\":1,\"height\":1,\"fps\":1,\"pixfmt\":\"gray8\"}\n";
        assert!(matches!(compute_content_scores("v", &gray[..]), Err(IngestError::BadHeader(_))));
    }

    #[test]
    fn zero_and_truncated_frames() {
        let empty = stream(2, 2, vec![]);
        assert!(matches!(compute_content_scores("v", &empty[..]), Err(IngestError::ZeroFrames)));
        let mut partial = stream(2, 2, vec![vec![0; 12]]);
        partial.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(
            compute_content_scores("v", &partial[..]),
            Err(IngestError::TruncatedFrame { frame: 1, got: 3, expected: 12 })
        ));
    }

    #[test]
    fn score_csv_round_trip_and_validation() {
        let series = FrameScoreSeries::from_values("v", &[0.0, 12.5, 255.0]);
        let csv = write_score_csv(&series);
        assert_eq!(parse_score_csv("v", csv.as_bytes()).unwrap(), series);
        assert!(matches!(
            parse_score_csv("v", b"frame_index,score\n0,0\n0,1\n"),
            Err(IngestError::BadScores(_))
        ));
        assert!(matches!(
            parse_score_csv("v", b"frame_index,score\n0,300\n"),
            Err(IngestError::BadScores(_))
        ));
        assert!(matches!(
            parse_score_csv("v", b"frame,score\n0,1\n"),
            Err(IngestError::MissingColumn(_))
        ));
        assert!(matches!(parse_score_csv("v", b"frame_index,score\n"), Err(IngestError::ZeroFrames)));
    }
}
