use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{sequence_distance, StorylineSequence};
use crate::taxonomy::RoleId;

pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.34;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatus {
    Proposed,
    Approved,
    MergedInto(String),
}

impl ClusterStatus {
    pub fn key(&self) -> &'static str {
        match self {
            ClusterStatus::Proposed => "proposed",
            ClusterStatus::Approved => "approved",
            ClusterStatus::MergedInto(_) => "merged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub representative: Vec<RoleId>,
    pub member_video_ids: BTreeSet<String>,
    /// Suggested by an annotator; never counts as confirmed.
    #[serde(default)]
    pub proposed_name: Option<String>,
    /// Human-confirmed name.
    #[serde(default)]
    pub name: Option<String>,
    pub status: ClusterStatus,
}

impl Cluster {
    pub fn is_merged(&self) -> bool {
        matches!(self.status, ClusterStatus::MergedInto(_))
    }
}

/// Member with the smallest total distance to all members. Ties go to the
/// lexicographically smallest role list, then the smallest video id.
pub fn medoid(members: &[(&str, &[RoleId])]) -> Option<Vec<RoleId>> {
    let mut sorted: Vec<&(&str, &[RoleId])> = members.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0).then_with(|| a.1.cmp(b.1)));
    let mut best: Option<(f64, &[RoleId], &str)> = None;
    for &&(id, seq) in &sorted {
        let total: f64 = sorted.iter().map(|(_, other)| sequence_distance(seq, other)).sum();
        let better = match best {
            None => true,
            Some((bt, bseq, bid)) => {
                total < bt || (total == bt && (seq < bseq || (seq == bseq && id < bid)))
            }
        };
        if better {
            best = Some((total, seq, id));
        }
    }
    best.map(|(_, seq, _)| seq.to_vec())
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clustering: sequences land together whenever a chain of
/// pairwise distances at most `threshold` connects them.
pub fn cluster_sequences(seqs: &[StorylineSequence], threshold: f64) -> Vec<Cluster> {
    let mut items: Vec<&StorylineSequence> = seqs.iter().collect();
    items.sort_by(|a, b| a.video_id.cmp(&b.video_id).then_with(|| a.roles.cmp(&b.roles)));
    let n = items.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if sequence_distance(&items[i].roles, &items[j].roles) <= threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<&StorylineSequence>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(*item);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_values()
        .map(|members| {
            let pairs: Vec<(&str, &[RoleId])> = members
                .iter()
                .map(|s| (s.video_id.as_str(), s.roles.as_slice()))
                .collect();
            Cluster {
                cluster_id: String::new(),
                representative: medoid(&pairs).unwrap_or_default(),
                member_video_ids: members.iter().map(|s| s.video_id.clone()).collect(),
                proposed_name: None,
                name: None,
                status: ClusterStatus::Proposed,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        a.representative
            .cmp(&b.representative)
            .then_with(|| a.member_video_ids.iter().next().cmp(&b.member_video_ids.iter().next()))
    });
    for (i, c) in clusters.iter_mut().enumerate() {
        c.cluster_id = format!("c{}", i + 1);
    }
    clusters
}
