use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cluster::{medoid, Cluster, ClusterStatus};
use crate::taxonomy::RoleId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CurationError {
    #[error("cluster `{0}` not found")]
    NotFound(String),
    #[error("cluster `{0}` is already merged")]
    AlreadyMerged(String),
    #[error("cluster `{0}` cannot be merged into itself")]
    SelfMerge(String),
    #[error("merge needs at least one source cluster")]
    NoSources,
    #[error("cluster name must not be empty")]
    EmptyName,
    #[error("cluster `{0}` was merged and can no longer be edited")]
    ClusterMerged(String),
    #[error("cluster `{0}` is already approved")]
    AlreadyApproved(String),
    #[error("cluster `{0}` has no name to approve")]
    Unnamed(String),
    #[error("expected event seq_no {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload", rename_all = "snake_case")]
pub enum CurationAction {
    Merge { source_ids: Vec<String>, target_id: String },
    Rename { cluster_id: String, name: String },
    Approve { cluster_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationEvent {
    pub seq_no: u64,
    pub timestamp: String,
    pub actor: String,
    #[serde(flatten)]
    pub action: CurationAction,
}

/// Who made a decision and when; supplied by the caller so that state
/// transitions stay pure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribution {
    pub actor: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationState {
    pub clusters: Vec<Cluster>,
    /// Canonical sequence per video, needed to recompute medoids.
    pub sequences: BTreeMap<String, Vec<RoleId>>,
    pub last_seq_no: u64,
}

impl CurationState {
    pub fn new(clusters: Vec<Cluster>, sequences: BTreeMap<String, Vec<RoleId>>) -> Self {
        CurationState {
            clusters,
            sequences,
            last_seq_no: 0,
        }
    }

    pub fn cluster(&self, id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.cluster_id == id)
    }

    fn position(&self, id: &str) -> Result<usize, CurationError> {
        self.clusters
            .iter()
            .position(|c| c.cluster_id == id)
            .ok_or_else(|| CurationError::NotFound(id.to_string()))
    }

    /// Non-merged cluster holding the video, if any.
    pub fn cluster_of(&self, video_id: &str) -> Option<&Cluster> {
        self.clusters
            .iter()
            .find(|c| !c.is_merged() && c.member_video_ids.contains(video_id))
    }
}

fn event(state: &CurationState, who: &Attribution, action: CurationAction) -> CurationEvent {
    CurationEvent {
        seq_no: state.last_seq_no + 1,
        timestamp: who.timestamp.clone(),
        actor: who.actor.clone(),
        action,
    }
}

/// Validates and applies one action, returning the new state. The event's
/// seq_no must follow the state's last one.
pub fn apply_event(state: &CurationState, ev: &CurationEvent) -> Result<CurationState, CurationError> {
    let expected = state.last_seq_no + 1;
    if ev.seq_no != expected {
        return Err(CurationError::SequenceGap {
            expected,
            found: ev.seq_no,
        });
    }
    let mut next = state.clone();
    match &ev.action {
        CurationAction::Merge {
            source_ids,
            target_id,
        } => apply_merge(&mut next, source_ids, target_id)?,
        CurationAction::Rename { cluster_id, name } => {
            let i = next.position(cluster_id)?;
            let c = &mut next.clusters[i];
            if c.is_merged() {
                return Err(CurationError::ClusterMerged(cluster_id.clone()));
            }
            let name = name.trim();
            if name.is_empty() {
                return Err(CurationError::EmptyName);
            }
            c.name = Some(name.to_string());
        }
        CurationAction::Approve { cluster_id } => {
            let i = next.position(cluster_id)?;
            let c = &mut next.clusters[i];
            match c.status {
                ClusterStatus::MergedInto(_) => {
                    return Err(CurationError::ClusterMerged(cluster_id.clone()))
                }
                ClusterStatus::Approved => {
                    return Err(CurationError::AlreadyApproved(cluster_id.clone()))
                }
                ClusterStatus::Proposed => {}
            }
            // Approving an unrenamed cluster confirms its proposed name.
            if c.name.is_none() {
                c.name = c.proposed_name.clone().filter(|n| !n.trim().is_empty());
            }
            if c.name.is_none() {
                return Err(CurationError::Unnamed(cluster_id.clone()));
            }
            c.status = ClusterStatus::Approved;
        }
    }
    next.last_seq_no = ev.seq_no;
    Ok(next)
}

fn apply_merge(state: &mut CurationState, source_ids: &[String], target_id: &str) -> Result<(), CurationError> {
    if source_ids.is_empty() {
        return Err(CurationError::NoSources);
    }
    let target = state.position(target_id)?;
    let mut sources = Vec::new();
    let mut seen = BTreeSet::new();
    for id in source_ids {
        let i = state.position(id)?;
        if id == target_id {
            return Err(CurationError::SelfMerge(id.clone()));
        }
        if state.clusters[i].is_merged() {
            return Err(CurationError::AlreadyMerged(id.clone()));
        }
        if seen.insert(i) {
            sources.push(i);
        }
    }
    if state.clusters[target].is_merged() {
        return Err(CurationError::AlreadyMerged(target_id.to_string()));
    }
    for &i in &sources {
        let members = std::mem::take(&mut state.clusters[i].member_video_ids);
        state.clusters[i].status = ClusterStatus::MergedInto(target_id.to_string());
        state.clusters[target].member_video_ids.extend(members);
    }
    let empty = Vec::new();
    let pairs: Vec<(&str, &[RoleId])> = state.clusters[target]
        .member_video_ids
        .iter()
        .map(|v| (v.as_str(), state.sequences.get(v).unwrap_or(&empty).as_slice()))
        .collect();
    if let Some(rep) = medoid(&pairs) {
        state.clusters[target].representative = rep;
    }
    Ok(())
}

fn decide(
    state: &CurationState,
    who: &Attribution,
    action: CurationAction,
) -> Result<(CurationState, CurationEvent), CurationError> {
    let ev = event(state, who, action);
    let next = apply_event(state, &ev)?;
    Ok((next, ev))
}

pub fn merge_clusters(
    state: &CurationState,
    source_ids: &[String],
    target_id: &str,
    who: &Attribution,
) -> Result<(CurationState, CurationEvent), CurationError> {
    decide(
        state,
        who,
        CurationAction::Merge {
            source_ids: source_ids.to_vec(),
            target_id: target_id.to_string(),
        },
    )
}

pub fn rename_cluster(
    state: &CurationState,
    cluster_id: &str,
    name: &str,
    who: &Attribution,
) -> Result<(CurationState, CurationEvent), CurationError> {
    decide(
        state,
        who,
        CurationAction::Rename {
            cluster_id: cluster_id.to_string(),
            name: name.trim().to_string(),
        },
    )
}

pub fn approve_cluster(
    state: &CurationState,
    cluster_id: &str,
    who: &Attribution,
) -> Result<(CurationState, CurationEvent), CurationError> {
    decide(
        state,
        who,
        CurationAction::Approve {
            cluster_id: cluster_id.to_string(),
        },
    )
}

pub fn replay(initial: &CurationState, events: &[CurationEvent]) -> Result<CurationState, CurationError> {
    let mut state = initial.clone();
    for ev in events {
        state = apply_event(&state, ev)?;
    }
    Ok(state)
}
