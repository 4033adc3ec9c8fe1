//! Pipeline stages over a [`Project`]. Each stage reads what earlier stages
//! left in the project and replaces its own output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    dwell_report_csv, rank_arc_uplift, story_dwell_uplift, uplift_report_csv, uplift_report_table,
    AnalyticsError, ReportFormat, UpliftParams,
};
use crate::annotator::{
    classify_units, detect_story, propose_cluster_names, Annotator, AnnotatorError,
    ClusterSummary, StoryVerdict, UnitAnnotation,
};
use crate::config::{ConfigError, ProjectConfig, VideoSource};
use crate::ingest::{
    compute_content_scores, load_performance_records_partial, parse_score_csv, parse_transcript,
    AdFilter, FrameScoreSeries, IngestError, Transcript, TranscriptFormatRegistry, VideoMeta,
};
use crate::segmentation::{segment_video, FunctionalUnit, SegmentationError, SegmentationParams};
use crate::store::{Project, StoreError};
use crate::storyline::{
    canonicalize_sequence, cluster_sequences, match_arcs, ArcError, ArcLibrary, ArcMatch,
    CurationError, StorylineSequence,
};
use crate::taxonomy::{load_taxonomy, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Arcs(#[from] ArcError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error("{0}")]
    Precondition(String),
}

impl PipelineError {
    /// True for failures of the environment (files, network, model) rather
    /// than of the inputs.
    pub fn is_io_or_annotator(&self) -> bool {
        match self {
            PipelineError::Ingest(IngestError::Io(_)) => true,
            PipelineError::Annotator(e) => !matches!(
                e,
                AnnotatorError::Config(_) | AnnotatorError::UnknownKind(_) | AnnotatorError::EmptyVideo
            ),
            PipelineError::Store(e) => !matches!(e, StoreError::Curation(_) | StoreError::Integrity(_)),
            PipelineError::Config(ConfigError::Io { .. }) => true,
            _ => false,
        }
    }
}

/// Taxonomy and arc library named by the config, or the bundled ones.
#[derive(Debug, Clone)]
pub struct Resources {
    pub taxonomy: Taxonomy,
    pub arcs: ArcLibrary,
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    std::fs::read(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))
}

pub fn load_resources(cfg: &ProjectConfig) -> Result<Resources, PipelineError> {
    let taxonomy = match &cfg.project.taxonomy_path {
        Some(p) => load_taxonomy(&read_file(p)?, false)?,
        None => Taxonomy::default(),
    };
    let arcs = match &cfg.project.arcs_path {
        Some(p) => {
            let bytes = read_file(p)?;
            let text = String::from_utf8(bytes).map_err(|e| IngestError::EncodingError(e.to_string()))?;
            ArcLibrary::from_toml(&text, &taxonomy)?
        }
        None => ArcLibrary::default(),
    };
    Ok(Resources { taxonomy, arcs })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestSummary {
    pub videos: usize,
    pub perf_records: usize,
    /// (row, reason) for performance rows that failed validation.
    pub rejected_rows: Vec<(usize, String)>,
    /// Performance rows dropped by filters or for naming unknown videos.
    pub filtered_rows: usize,
}

fn ingest_video(
    src: &VideoSource,
    enforce: bool,
) -> Result<(VideoMeta, FrameScoreSeries, Transcript), IngestError> {
    let (series, fps, width, height) = match (&src.frames, &src.scores) {
        (Some(frames), _) => {
            let f = std::fs::File::open(frames)
                .map_err(|e| IngestError::Io(format!("{}: {e}", frames.display())))?;
            let (header, series) = compute_content_scores(&src.video_id, f)?;
            (series, header.fps, Some(header.width), Some(header.height))
        }
        (None, Some(scores)) => {
            let series = parse_score_csv(&src.video_id, &read_file(scores)?)?;
            (series, src.fps.unwrap_or_default(), None, None)
        }
        (None, None) => {
            return Err(IngestError::InvalidVideo {
                video_id: src.video_id.clone(),
                detail: "no frames or scores given".into(),
            })
        }
    };
    let meta = VideoMeta {
        video_id: src.video_id.clone(),
        duration_s: src.duration_s.unwrap_or(series.len() as f64 / fps),
        fps,
        width,
        height,
        subvertical: src.subvertical,
    };
    meta.validate(enforce)?;
    let transcript = match &src.transcript {
        Some(path) => {
            let format = match &src.transcript_format {
                Some(f) => f.clone(),
                None => path
                    .extension()
                    .and_then(|e| e.to_str())
                    .and_then(TranscriptFormatRegistry::name_for_extension)
                    .ok_or_else(|| IngestError::UnknownFormat(path.display().to_string()))?
                    .to_string(),
            };
            parse_transcript(&src.video_id, &read_file(path)?, &format)?
        }
        None => Transcript::empty(src.video_id.clone()),
    };
    transcript.validate_against_duration(meta.duration_s)?;
    Ok((meta, series, transcript))
}

/// Reads every input named in the config. Replaces all project data; a
/// curation log from an earlier run is archived.
pub fn ingest(project: &mut Project, cfg: &ProjectConfig) -> Result<IngestSummary, PipelineError> {
    let enforce = cfg.project.enforce_paper_filter;
    let loaded = cfg
        .ingest
        .videos
        .par_iter()
        .map(|src| ingest_video(src, enforce))
        .collect::<Result<Vec<_>, _>>()?;

    let mut summary = IngestSummary {
        videos: loaded.len(),
        ..IngestSummary::default()
    };
    let known: BTreeSet<&str> = cfg.ingest.videos.iter().map(|v| v.video_id.as_str()).collect();
    let mut perf = Vec::new();
    if let Some(path) = &cfg.ingest.performance {
        let (records, rejected) = load_performance_records_partial(&read_file(path)?)?;
        summary.rejected_rows = rejected.into_iter().map(|r| (r.row, r.error.to_string())).collect();
        let filter = AdFilter {
            enforce_length_window: enforce,
            min_impressions: cfg.project.min_impressions,
        };
        let total = records.len();
        perf = records
            .into_iter()
            .filter(|r| known.contains(r.video_id.as_str()) && filter.admits(r))
            .collect();
        summary.filtered_rows = total - perf.len();
    }
    summary.perf_records = perf.len();

    if !project.curation_log.is_empty() {
        let archived = project.archive_curation_log()?;
        log::warn!("re-ingest archived the curation log to {archived:?}");
    }
    let root = project.root.clone();
    let taxonomy_version = project.manifest.taxonomy_version.clone();
    let created_at = project.manifest.created_at.clone();
    *project = Project::new(root, cfg.clone(), &taxonomy_version);
    project.manifest.created_at = created_at;
    for (meta, series, transcript) in loaded {
        project.videos.push(meta);
        project.scores.push(series);
        project.transcripts.push(transcript);
    }
    project.perf = perf;
    Ok(summary)
}

fn require(cond: bool, msg: &str) -> Result<(), PipelineError> {
    if cond {
        Ok(())
    } else {
        Err(PipelineError::Precondition(msg.to_string()))
    }
}

pub fn segment(project: &mut Project, params: &SegmentationParams) -> Result<usize, PipelineError> {
    require(!project.videos.is_empty(), "no videos ingested; run `ingest` first")?;
    let units = project
        .videos
        .par_iter()
        .map(|v| {
            let series = project
                .scores
                .iter()
                .find(|s| s.video_id == v.video_id)
                .ok_or_else(|| PipelineError::Precondition(format!("no frame scores for `{}`", v.video_id)))?;
            let transcript = project
                .transcripts
                .iter()
                .find(|t| t.video_id == v.video_id)
                .cloned()
                .unwrap_or_else(|| Transcript::empty(v.video_id.clone()));
            Ok(segment_video(&v.video_id, series, v.fps, v.duration_s, &transcript, params)?)
        })
        .collect::<Result<Vec<Vec<FunctionalUnit>>, PipelineError>>()?;
    project.units = units.into_iter().flatten().collect();
    project.manifest.params.segmentation = params.clone();
    Ok(project.units.len())
}

fn units_by_video(project: &Project) -> Vec<(&str, Vec<FunctionalUnit>)> {
    project
        .videos
        .iter()
        .map(|v| {
            let units: Vec<FunctionalUnit> = project.units_of(&v.video_id).into_iter().cloned().collect();
            (v.video_id.as_str(), units)
        })
        .filter(|(_, u)| !u.is_empty())
        .collect()
}

pub fn detect_stories(project: &mut Project, annotator: &dyn Annotator) -> Result<usize, PipelineError> {
    require(!project.units.is_empty(), "no functional units; run `segment` first")?;
    let verdicts = units_by_video(project)
        .par_iter()
        .map(|(id, units)| {
            let transcript = project
                .transcripts
                .iter()
                .find(|t| t.video_id == *id)
                .cloned()
                .unwrap_or_else(|| Transcript::empty(*id));
            detect_story(id, units, &transcript, annotator)
        })
        .collect::<Result<Vec<StoryVerdict>, _>>()?;
    project.verdicts = verdicts;
    Ok(project.verdicts.len())
}

pub fn classify(project: &mut Project, taxonomy: &Taxonomy, annotator: &dyn Annotator) -> Result<usize, PipelineError> {
    require(!project.units.is_empty(), "no functional units; run `segment` first")?;
    let per_video = units_by_video(project)
        .iter()
        .map(|(_, units)| classify_units(units, taxonomy, annotator))
        .collect::<Result<Vec<Vec<UnitAnnotation>>, _>>()?;
    project.annotations = per_video.into_iter().flatten().collect();
    Ok(project.annotations.len())
}

pub fn canonicalize(project: &mut Project) -> Result<usize, PipelineError> {
    require(!project.annotations.is_empty(), "no annotations; run `classify` first")?;
    let mut sequences = Vec::new();
    for v in &project.videos {
        let mut anns: Vec<UnitAnnotation> = project.annotations_of(&v.video_id).into_iter().cloned().collect();
        if anns.is_empty() {
            continue;
        }
        anns.sort_by_key(|a| a.unit_index);
        sequences.push(canonicalize_sequence(&v.video_id, &anns));
    }
    project.sequences = sequences;
    Ok(project.sequences.len())
}

/// Clusters the canonical sequences. Refuses to discard an existing
/// curation history unless `force` is set, in which case it is archived.
pub fn cluster(project: &mut Project, threshold: f64, force: bool) -> Result<usize, PipelineError> {
    require(!project.sequences.is_empty(), "no sequences; run `canonicalize` first")?;
    require(
        threshold > 0.0 && threshold <= 1.0,
        &format!("cluster threshold {threshold} outside (0, 1]"),
    )?;
    if !project.curation_log.is_empty() {
        require(force, "clusters already have curation history; pass --force to archive it and re-cluster")?;
        project.archive_curation_log()?;
    }
    project.clusters_initial = cluster_sequences(&project.sequences, threshold);
    project.clusters = project.clusters_initial.clone();
    project.manifest.params.storyline.cluster_threshold = threshold;
    Ok(project.clusters.len())
}

pub fn summarize(project: &mut Project, taxonomy: &Taxonomy, annotator: &dyn Annotator) -> Result<usize, PipelineError> {
    require(!project.clusters.is_empty(), "no clusters; run `cluster` first")?;
    let summaries: Vec<ClusterSummary> = project
        .clusters
        .iter()
        .filter(|c| !c.is_merged())
        .map(|c| ClusterSummary {
            cluster_id: c.cluster_id.clone(),
            representative: c.representative.clone(),
            member_count: c.member_video_ids.len(),
        })
        .collect();
    let names = propose_cluster_names(&summaries, taxonomy, annotator)?;
    for c in project.clusters.iter_mut().chain(project.clusters_initial.iter_mut()) {
        if let Some(n) = names.get(&c.cluster_id) {
            c.proposed_name = Some(n.clone());
        }
    }
    Ok(names.len())
}

pub fn analyze_dwell(project: &mut Project) -> Result<(), PipelineError> {
    require(!project.verdicts.is_empty(), "no story verdicts; run `detect-story` first")?;
    let flags: BTreeMap<String, bool> = project
        .verdicts
        .iter()
        .map(|v| (v.video_id.clone(), v.has_story))
        .collect();
    project.dwell = Some(story_dwell_uplift(&project.perf, &flags)?);
    Ok(())
}

/// Arc abbreviations matched by each video's canonical sequence.
pub fn arc_memberships(sequences: &[StorylineSequence], arcs: &ArcLibrary) -> BTreeMap<String, BTreeSet<String>> {
    sequences
        .iter()
        .map(|s| {
            let matched = match_arcs(&s.roles, arcs).into_iter().map(|m| m.abbrev).collect();
            (s.video_id.clone(), matched)
        })
        .collect()
}

pub fn analyze_uplift(project: &mut Project, params: &UpliftParams, arcs: &ArcLibrary) -> Result<usize, PipelineError> {
    require(!project.sequences.is_empty(), "no sequences; run `canonicalize` first")?;
    require(!project.perf.is_empty(), "no performance records ingested")?;
    let memberships = arc_memberships(&project.sequences, arcs);
    let report = rank_arc_uplift(&project.perf, &memberships, params)?;
    let n = report.rows.len();
    project.uplift = Some(report);
    project.manifest.params.analysis = params.clone();
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Uplift,
    Dwell,
}

pub fn export_report(
    project: &Project,
    kind: ReportKind,
    format: ReportFormat,
    arcs: &ArcLibrary,
) -> Result<String, PipelineError> {
    match kind {
        ReportKind::Uplift => {
            let report = project
                .uplift
                .as_ref()
                .ok_or_else(|| PipelineError::Precondition("no uplift analysis; run `analyze-uplift` first".into()))?;
            Ok(match format {
                ReportFormat::Csv => uplift_report_csv(report, Some(arcs)),
                ReportFormat::Table => uplift_report_table(report, Some(arcs)),
            })
        }
        ReportKind::Dwell => {
            let result = project
                .dwell
                .as_ref()
                .ok_or_else(|| PipelineError::Precondition("no dwell analysis; run `analyze-dwell` first".into()))?;
            Ok(dwell_report_csv(result))
        }
    }
}

/// Everything known about one video, as served to reviewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDetail {
    pub video: VideoMeta,
    pub units: Vec<FunctionalUnit>,
    pub annotations: Vec<UnitAnnotation>,
    pub verdict: Option<StoryVerdict>,
    pub sequence: Option<StorylineSequence>,
    pub arc_matches: Vec<ArcMatch>,
    pub cluster_id: Option<String>,
}

pub fn video_detail(project: &Project, video_id: &str, arcs: &ArcLibrary) -> Option<VideoDetail> {
    let video = project.video(video_id)?.clone();
    let sequence = project.sequence_of(video_id).cloned();
    let arc_matches = sequence
        .as_ref()
        .map(|s| match_arcs(&s.roles, arcs))
        .unwrap_or_default();
    Some(VideoDetail {
        video,
        units: project.units_of(video_id).into_iter().cloned().collect(),
        annotations: project.annotations_of(video_id).into_iter().cloned().collect(),
        verdict: project.verdicts.iter().find(|v| v.video_id == video_id).cloned(),
        sequence,
        arc_matches,
        cluster_id: project
            .clusters
            .iter()
            .find(|c| !c.is_merged() && c.member_video_ids.contains(video_id))
            .map(|c| c.cluster_id.clone()),
    })
}

/// Runs every stage from ingest to uplift analysis with the config's
/// parameters. Analysis stages that lack data are reported, not fatal.
pub fn run_all(
    project: &mut Project,
    cfg: &ProjectConfig,
    annotator: &dyn Annotator,
) -> Result<RunOutcome, PipelineError> {
    let res = load_resources(cfg)?;
    ingest(project, cfg)?;
    segment(project, &cfg.segmentation)?;
    detect_stories(project, annotator)?;
    classify(project, &res.taxonomy, annotator)?;
    canonicalize(project)?;
    cluster(project, cfg.storyline.cluster_threshold, false)?;
    summarize(project, &res.taxonomy, annotator)?;
    let dwell = analyze_dwell(project).err().map(|e| e.to_string());
    let uplift = analyze_uplift(project, &cfg.analysis, &res.arcs).err().map(|e| e.to_string());
    Ok(RunOutcome {
        dwell_error: dwell,
        uplift_error: uplift,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    pub dwell_error: Option<String>,
    pub uplift_error: Option<String>,
}
