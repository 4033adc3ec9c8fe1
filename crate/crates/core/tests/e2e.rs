mod common;

use adstory_core::store::Project;
use adstory_core::storyline::ClusterStatus;

#[test]
fn fixture_matches_golden_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let outputs = common::run_fixture(dir.path());
    if std::env::var_os("ADSTORY_BLESS").is_some() {
        common::write_golden(&outputs);
    }
    let bad = common::golden_mismatches(&outputs);
    assert!(bad.is_empty(), "outputs differ from golden: {bad:?}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(common::run_fixture(a.path()), common::run_fixture(b.path()));
}

#[test]
fn fixture_shape() {
    let dir = tempfile::tempdir().unwrap();
    common::run_fixture(dir.path());
    let p = Project::load(dir.path()).unwrap();
    assert_eq!(p.videos.len(), 5);
    assert_eq!(p.units.len(), 20);
    assert_eq!(p.clusters.len(), 4);
    assert!(p.clusters.iter().all(|c| c.status == ClusterStatus::Proposed && c.proposed_name.is_some()));
    let pas = p.clusters.iter().find(|c| c.member_video_ids.len() == 2).unwrap();
    assert_eq!(pas.member_video_ids.iter().collect::<Vec<_>>(), ["v01", "v02"]);
    assert_eq!(p.verdicts.iter().filter(|v| v.has_story).count(), 3);
    assert!(p.dwell.is_none());
    assert!(p.uplift.is_some());
}
