//! From per-unit roles to storylines: canonical sequences, named arcs,
//! clusters of similar sequences, and the human curation applied to them.

mod arcs;
mod cluster;
mod curation;

use serde::{Deserialize, Serialize};

use crate::annotator::UnitAnnotation;
use crate::taxonomy::RoleId;

pub use arcs::{match_arcs, ArcError, ArcLibrary, ArcMatch, ArcPattern, DEFAULT_ARCS_TOML};
pub use cluster::{cluster_sequences, medoid, Cluster, ClusterStatus, DEFAULT_CLUSTER_THRESHOLD};
pub use curation::{
    apply_event, approve_cluster, merge_clusters, rename_cluster, replay, Attribution,
    CurationAction, CurationError, CurationEvent, CurationState,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorylineSequence {
    pub video_id: String,
    pub roles: Vec<RoleId>,
}

/// Drops visual filler, then collapses runs of the same role.
pub fn canonicalize_roles(roles: &[RoleId]) -> Vec<RoleId> {
    let mut out: Vec<RoleId> = Vec::with_capacity(roles.len());
    for r in roles.iter().filter(|r| !r.is_filler()) {
        if out.last() != Some(r) {
            out.push(r.clone());
        }
    }
    out
}

/// Canonical storyline of one video. Annotations must already be sorted by
/// unit index.
pub fn canonicalize_sequence(video_id: &str, annotations: &[UnitAnnotation]) -> StorylineSequence {
    let roles: Vec<RoleId> = annotations.iter().map(|a| a.role_id.clone()).collect();
    StorylineSequence {
        video_id: video_id.to_string(),
        roles: canonicalize_roles(&roles),
    }
}

/// Levenshtein distance over role symbols.
pub fn edit_distance(a: &[RoleId], b: &[RoleId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ra) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, rb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ra != rb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance normalised by the longer length; 0 when both are empty.
pub fn sequence_distance(a: &[RoleId], b: &[RoleId]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

#[cfg(test)]
pub(crate) fn roles(ids: &[&str]) -> Vec<RoleId> {
    ids.iter().map(|&s| RoleId::from(s)).collect()
}
