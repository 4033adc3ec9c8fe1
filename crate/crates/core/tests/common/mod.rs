#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adstory_core::analytics::ReportFormat;
use adstory_core::annotator::AnnotatorRegistry;
use adstory_core::config::ProjectConfig;
use adstory_core::pipeline::{self, ReportKind};
use adstory_core::store::{Project, MANIFEST_FILE};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

pub fn golden_dir() -> PathBuf {
    fixture_dir().join("golden")
}

/// Runs the whole pipeline on the e2e fixture inside `root` and returns
/// every output that must be reproducible, keyed by file name. The manifest
/// is left out since it records a creation time and absolute paths.
pub fn run_fixture(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let cfg = ProjectConfig::load(&fixture_dir().join("config.toml")).expect("fixture config");
    let res = pipeline::load_resources(&cfg).expect("resources");
    let annotator = AnnotatorRegistry::default().build(&cfg.annotator).expect("annotator");
    let mut project = Project::new(root, cfg.clone(), &res.taxonomy.version);
    let outcome = pipeline::run_all(&mut project, &cfg, annotator.as_ref()).expect("pipeline");
    project.save().expect("save");

    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(root).expect("project dir") {
        let path = entry.expect("entry").path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if path.is_file() && name != MANIFEST_FILE {
            out.insert(name, std::fs::read(&path).expect("read output"));
        }
    }
    let reloaded = Project::load(root).expect("reload");
    for (name, format) in [("report_uplift.csv", ReportFormat::Csv), ("report_uplift.txt", ReportFormat::Table)] {
        let text = pipeline::export_report(&reloaded, ReportKind::Uplift, format, &res.arcs).expect("report");
        out.insert(name.to_string(), text.into_bytes());
    }
    let errors = format!(
        "dwell: {}\nuplift: {}\n",
        outcome.dwell_error.as_deref().unwrap_or("ok"),
        outcome.uplift_error.as_deref().unwrap_or("ok")
    );
    out.insert("analysis_errors.txt".to_string(), errors.into_bytes());
    out
}

pub fn read_golden() -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(golden_dir()).expect("golden dir; run with ADSTORY_BLESS=1 to create it") {
        let path = entry.expect("entry").path();
        out.insert(
            path.file_name().unwrap().to_string_lossy().to_string(),
            std::fs::read(&path).expect("read golden"),
        );
    }
    out
}

pub fn write_golden(outputs: &BTreeMap<String, Vec<u8>>) {
    let dir = golden_dir();
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("golden dir");
    for (name, bytes) in outputs {
        std::fs::write(dir.join(name), bytes).expect("write golden");
    }
}

/// Names of outputs that differ from the golden set, including missing
/// and unexpected files.
pub fn golden_mismatches(outputs: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let golden = read_golden();
    let mut bad: Vec<String> = outputs
        .iter()
        .filter(|(k, v)| golden.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
        .collect();
    bad.extend(golden.keys().filter(|k| !outputs.contains_key(*k)).cloned());
    bad
}
