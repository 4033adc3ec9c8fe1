use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use adstory_core::analytics::{ReportFormat, UpliftMetric, UpliftParams};
use adstory_core::annotator::{Annotator, AnnotatorConfig, AnnotatorRegistry};
use adstory_core::config::ProjectConfig;
use adstory_core::pipeline::{self, PipelineError, ReportKind, Resources};
use adstory_core::segmentation::SegmentationParams;
use adstory_core::store::{Project, ProjectStore, MANIFEST_FILE};

use crate::server::{self, AppState};

#[derive(Debug, Parser)]
#[command(name = "adstory", version, about = "Storyline analysis for short video ads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ProjectArgs {
    /// Project directory.
    #[arg(long)]
    pub project: PathBuf,
    /// Config file; defaults to the parameters recorded in the project.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SegmentationArgs {
    #[arg(long)]
    pub adaptive_ratio: Option<f64>,
    #[arg(long)]
    pub adaptive_window: Option<usize>,
    #[arg(long)]
    pub min_content_val: Option<f64>,
    #[arg(long)]
    pub pause_threshold_s: Option<f64>,
    /// Discourse marker phrase; repeat to replace the whole lexicon.
    #[arg(long = "marker")]
    pub markers: Vec<String>,
    #[arg(long)]
    pub snap_tolerance_s: Option<f64>,
    #[arg(long)]
    pub min_unit_duration_s: Option<f64>,
    #[arg(long)]
    pub suppress_visual_inside_speech: Option<bool>,
}

impl SegmentationArgs {
    fn apply(&self, p: &mut SegmentationParams) {
        set(&mut p.adaptive_ratio, self.adaptive_ratio);
        set(&mut p.adaptive_window, self.adaptive_window);
        set(&mut p.min_content_val, self.min_content_val);
        set(&mut p.pause_threshold_s, self.pause_threshold_s);
        set(&mut p.snap_tolerance_s, self.snap_tolerance_s);
        set(&mut p.min_unit_duration_s, self.min_unit_duration_s);
        set(&mut p.suppress_visual_inside_speech, self.suppress_visual_inside_speech);
        if !self.markers.is_empty() {
            p.marker_lexicon = self.markers.clone();
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnnotatorArgs {
    /// Annotator kind (lexicon or remote).
    #[arg(long = "annotator")]
    pub kind: Option<String>,
    #[arg(long)]
    pub endpoint_url: Option<String>,
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long)]
    pub timeout_s: Option<f64>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub backoff_base_s: Option<f64>,
    #[arg(long)]
    pub lexicon_path: Option<PathBuf>,
}

impl AnnotatorArgs {
    fn apply(&self, c: &mut AnnotatorConfig) {
        set(&mut c.kind, self.kind.clone());
        if self.endpoint_url.is_some() {
            c.endpoint_url = self.endpoint_url.clone();
        }
        set(&mut c.model_name, self.model_name.clone());
        set(&mut c.timeout_s, self.timeout_s);
        set(&mut c.max_in_flight, self.max_in_flight);
        set(&mut c.max_attempts, self.max_attempts);
        set(&mut c.backoff_base_s, self.backoff_base_s);
        if self.lexicon_path.is_some() {
            c.lexicon_path = self.lexicon_path.clone();
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalysisArgs {
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Metric to rank (dwell_2s, ctr, cvr); repeat for several.
    #[arg(long = "metric")]
    pub metrics: Vec<UpliftMetric>,
}

impl AnalysisArgs {
    fn apply(&self, p: &mut UpliftParams) {
        set(&mut p.gbt.rounds, self.rounds);
        set(&mut p.gbt.learning_rate, self.learning_rate);
        set(&mut p.gbt.max_depth, self.max_depth);
        set(&mut p.gbt.min_leaf, self.min_leaf);
        if !self.metrics.is_empty() {
            p.metrics = self.metrics.clone();
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct IngestArgs {
    /// Reject ads shorter than 15 s or longer than 60 s.
    #[arg(long)]
    pub enforce_paper_filter: bool,
    #[arg(long)]
    pub min_impressions: Option<u64>,
}

impl IngestArgs {
    fn apply(&self, cfg: &mut ProjectConfig) {
        if self.enforce_paper_filter {
            cfg.project.enforce_paper_filter = true;
        }
        if self.min_impressions.is_some() {
            cfg.project.min_impressions = self.min_impressions;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportArg {
    Uplift,
    Dwell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Table,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Read videos, transcripts and performance data named in the config.
    Ingest {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        ingest: IngestArgs,
    },
    /// Split each video into functional units.
    Segment {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        segmentation: SegmentationArgs,
    },
    /// Decide which videos tell a story.
    DetectStory {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        annotator: AnnotatorArgs,
    },
    /// Assign a functional role to every unit.
    Classify {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        annotator: AnnotatorArgs,
    },
    /// Build canonical role sequences from the annotations.
    Canonicalize {
        #[command(flatten)]
        project: ProjectArgs,
    },
    /// Group similar sequences into storyline clusters.
    Cluster {
        #[command(flatten)]
        project: ProjectArgs,
        /// Normalized edit distance for linking two sequences.
        #[arg(long)]
        threshold: Option<f64>,
        /// Archive existing curation history and re-cluster.
        #[arg(long)]
        force: bool,
    },
    /// Propose a name for every cluster.
    Summarize {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        annotator: AnnotatorArgs,
    },
    /// Regress per-second dwell on the story flag.
    AnalyzeDwell {
        #[command(flatten)]
        project: ProjectArgs,
    },
    /// Rank storyline arcs by partial-dependence uplift.
    AnalyzeUplift {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Serve the curation API (and optionally a static UI).
    Serve {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of static files served under `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Write an analysis report.
    ExportReport {
        #[command(flatten)]
        project: ProjectArgs,
        #[arg(long, value_enum, default_value = "uplift")]
        report: ReportArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every stage from ingest to uplift analysis.
    Run {
        #[command(flatten)]
        project: ProjectArgs,
        #[command(flatten)]
        ingest: IngestArgs,
        #[command(flatten)]
        segmentation: SegmentationArgs,
        #[command(flatten)]
        annotator: AnnotatorArgs,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 1 for invalid input, 2 for I/O or annotator failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline(e) if e.is_io_or_annotator() => 2,
            CliError::Io(_) => 2,
            _ => 1,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn manifest_exists(root: &Path) -> bool {
    root.join(MANIFEST_FILE).is_file()
}

fn load_config(path: &Path) -> Result<ProjectConfig, CliError> {
    Ok(ProjectConfig::load(path).map_err(PipelineError::from)?)
}

/// Loads the project and the config to run a stage with.
fn open(args: &ProjectArgs) -> Result<(Project, ProjectConfig), CliError> {
    let project = Project::load(&args.project).map_err(PipelineError::from)?;
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => project.manifest.params.clone(),
    };
    Ok((project, cfg))
}

fn build_annotator(cfg: &AnnotatorConfig) -> Result<Arc<dyn Annotator>, CliError> {
    Ok(AnnotatorRegistry::default().build(cfg).map_err(PipelineError::from)?)
}

fn save(project: &Project) -> Result<(), CliError> {
    Ok(project.save().map_err(PipelineError::from)?)
}

/// Creates the project on first ingest, otherwise loads it.
fn open_or_create(args: &ProjectArgs) -> Result<(Project, ProjectConfig), CliError> {
    if manifest_exists(&args.project) {
        return open(args);
    }
    let path = args.config.as_ref().ok_or_else(|| {
        CliError::Usage(format!(
            "{} is not a project yet; pass --config to create it",
            args.project.display()
        ))
    })?;
    let cfg = load_config(path)?;
    let res = pipeline::load_resources(&cfg)?;
    std::fs::create_dir_all(&args.project)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.project.display())))?;
    Ok((Project::new(&args.project, cfg.clone(), &res.taxonomy.version), cfg))
}

fn do_ingest(project: &mut Project, cfg: &ProjectConfig, res: &Resources) -> Result<String, CliError> {
    let summary = pipeline::ingest(project, cfg)?;
    project.manifest.taxonomy_version = res.taxonomy.version.clone();
    for (row, reason) in &summary.rejected_rows {
        log::warn!("performance row {row} rejected: {reason}");
    }
    Ok(format!(
        "ingested {} videos and {} performance records ({} rows rejected, {} filtered)",
        summary.videos,
        summary.perf_records,
        summary.rejected_rows.len(),
        summary.filtered_rows
    ))
}

/// Executes one command and returns the text to print on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Ingest { project: args, ingest } => {
            let (mut project, mut cfg) = open_or_create(&args)?;
            ingest.apply(&mut cfg);
            cfg.validate().map_err(PipelineError::from)?;
            let res = pipeline::load_resources(&cfg)?;
            let msg = do_ingest(&mut project, &cfg, &res)?;
            save(&project)?;
            Ok(msg)
        }
        Command::Segment { project: args, segmentation } => {
            let (mut project, mut cfg) = open(&args)?;
            segmentation.apply(&mut cfg.segmentation);
            cfg.segmentation.validate().map_err(PipelineError::from)?;
            let n = pipeline::segment(&mut project, &cfg.segmentation)?;
            save(&project)?;
            Ok(format!("{n} functional units across {} videos", project.videos.len()))
        }
        Command::DetectStory { project: args, annotator } => {
            let (mut project, mut cfg) = open(&args)?;
            annotator.apply(&mut cfg.annotator);
            let a = build_annotator(&cfg.annotator)?;
            let n = pipeline::detect_stories(&mut project, a.as_ref())?;
            project.manifest.params.annotator = cfg.annotator;
            save(&project)?;
            let stories = project.verdicts.iter().filter(|v| v.has_story).count();
            Ok(format!("{stories} of {n} videos tell a story"))
        }
        Command::Classify { project: args, annotator } => {
            let (mut project, mut cfg) = open(&args)?;
            annotator.apply(&mut cfg.annotator);
            let res = pipeline::load_resources(&cfg)?;
            let a = build_annotator(&cfg.annotator)?;
            let n = pipeline::classify(&mut project, &res.taxonomy, a.as_ref())?;
            project.manifest.params.annotator = cfg.annotator;
            save(&project)?;
            Ok(format!("{n} units annotated"))
        }
        Command::Canonicalize { project: args } => {
            let (mut project, _) = open(&args)?;
            let n = pipeline::canonicalize(&mut project)?;
            save(&project)?;
            Ok(format!("{n} canonical sequences"))
        }
        Command::Cluster { project: args, threshold, force } => {
            let (mut project, cfg) = open(&args)?;
            let t = threshold.unwrap_or(cfg.storyline.cluster_threshold);
            let n = pipeline::cluster(&mut project, t, force)?;
            save(&project)?;
            Ok(format!("{n} clusters at threshold {t}"))
        }
        Command::Summarize { project: args, annotator } => {
            let (mut project, mut cfg) = open(&args)?;
            annotator.apply(&mut cfg.annotator);
            let res = pipeline::load_resources(&cfg)?;
            let a = build_annotator(&cfg.annotator)?;
            let n = pipeline::summarize(&mut project, &res.taxonomy, a.as_ref())?;
            project.manifest.params.annotator = cfg.annotator;
            save(&project)?;
            Ok(format!("{n} cluster names proposed"))
        }
        Command::AnalyzeDwell { project: args } => {
            let (mut project, _) = open(&args)?;
            pipeline::analyze_dwell(&mut project)?;
            save(&project)?;
            let peak = project.dwell.as_ref().and_then(|d| d.peak_second());
            Ok(match peak {
                Some(s) => format!("story dwell effect peaks at second {s}"),
                None => "dwell analysis stored".to_string(),
            })
        }
        Command::AnalyzeUplift { project: args, analysis } => {
            let (mut project, mut cfg) = open(&args)?;
            analysis.apply(&mut cfg.analysis);
            cfg.analysis.gbt.validate().map_err(PipelineError::from)?;
            let res = pipeline::load_resources(&cfg)?;
            let n = pipeline::analyze_uplift(&mut project, &cfg.analysis, &res.arcs)?;
            save(&project)?;
            Ok(format!("{n} uplift rows ranked"))
        }
        Command::ExportReport { project: args, report, format, output } => {
            let (project, cfg) = open(&args)?;
            let res = pipeline::load_resources(&cfg)?;
            let kind = match report {
                ReportArg::Uplift => ReportKind::Uplift,
                ReportArg::Dwell => ReportKind::Dwell,
            };
            let format = match format {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Table => ReportFormat::Table,
            };
            let text = pipeline::export_report(&project, kind, format, &res.arcs)?;
            match output {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    Ok(format!("report written to {}", path.display()))
                }
                None => Ok(text.trim_end().to_string()),
            }
        }
        Command::Serve { project: args, addr, ui_dir } => {
            let (project, cfg) = open(&args)?;
            let res = pipeline::load_resources(&cfg)?;
            let state = Arc::new(AppState::new(ProjectStore::new(project), res));
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            rt.block_on(server::serve(addr, state, ui_dir))
                .map_err(|e| CliError::Io(format!("server on {addr}: {e}")))?;
            Ok(String::new())
        }
        Command::Run {
            project: args,
            ingest,
            segmentation,
            annotator,
            analysis,
            threshold,
        } => {
            let (mut project, mut cfg) = open_or_create(&args)?;
            ingest.apply(&mut cfg);
            segmentation.apply(&mut cfg.segmentation);
            annotator.apply(&mut cfg.annotator);
            analysis.apply(&mut cfg.analysis);
            set(&mut cfg.storyline.cluster_threshold, threshold);
            cfg.validate().map_err(PipelineError::from)?;
            let res = pipeline::load_resources(&cfg)?;
            let a = build_annotator(&cfg.annotator)?;
            let outcome = pipeline::run_all(&mut project, &cfg, a.as_ref())?;
            project.manifest.taxonomy_version = res.taxonomy.version.clone();
            save(&project)?;
            let mut lines = vec![format!(
                "{} videos, {} units, {} clusters",
                project.videos.len(),
                project.units.len(),
                project.clusters.len()
            )];
            if let Some(e) = outcome.dwell_error {
                lines.push(format!("dwell analysis skipped: {e}"));
            }
            if let Some(e) = outcome.uplift_error {
                lines.push(format!("uplift analysis skipped: {e}"));
            }
            Ok(lines.join("\n"))
        }
    }
}
