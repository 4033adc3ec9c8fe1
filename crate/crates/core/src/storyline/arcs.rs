use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{RoleId, Taxonomy};

pub const DEFAULT_ARCS_TOML: &str = include_str!("../../data/arcs_v1.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArcError {
    #[error("cannot parse arc library: {0}")]
    Parse(String),
    #[error("arc `{abbrev}`: {detail}")]
    Invalid { abbrev: String, detail: String },
}

/// A named macro-arc: one role group per beat, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcPattern {
    pub abbrev: String,
    pub name: String,
    pub groups: Vec<BTreeSet<RoleId>>,
}

impl ArcPattern {
    /// "Problem–Agitate–Solution (PAS)"
    pub fn label(&self) -> String {
        format!("{} ({})", self.name, self.abbrev)
    }

    /// Leftmost witness indices, if the sequence contains the pattern as a
    /// (not necessarily contiguous) subsequence.
    pub fn witness(&self, seq: &[RoleId]) -> Option<Vec<usize>> {
        let mut out = Vec::with_capacity(self.groups.len());
        let mut next = 0;
        for group in &self.groups {
            let offset = seq[next..].iter().position(|r| group.contains(r))?;
            out.push(next + offset);
            next += offset + 1;
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcLibrary {
    pub version: String,
    pub arcs: Vec<ArcPattern>,
}

impl Default for ArcLibrary {
    fn default() -> Self {
        ArcLibrary::from_toml(DEFAULT_ARCS_TOML, &Taxonomy::default()).expect("bundled arcs are valid")
    }
}

impl ArcLibrary {
    pub fn from_toml(text: &str, taxonomy: &Taxonomy) -> Result<Self, ArcError> {
        let lib: ArcLibrary = toml::from_str(text).map_err(|e| ArcError::Parse(e.to_string()))?;
        lib.validate(taxonomy)?;
        Ok(lib)
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), ArcError> {
        let mut seen = BTreeSet::new();
        for arc in &self.arcs {
            let invalid = |detail: String| ArcError::Invalid {
                abbrev: arc.abbrev.clone(),
                detail,
            };
            if !seen.insert(arc.abbrev.as_str()) {
                return Err(invalid("duplicate abbreviation".into()));
            }
            if arc.groups.len() < 2 {
                return Err(invalid("needs at least two groups".into()));
            }
            for group in &arc.groups {
                if group.is_empty() {
                    return Err(invalid("empty role group".into()));
                }
                if let Some(bad) = group.iter().find(|r| !taxonomy.contains(r.as_str())) {
                    return Err(invalid(format!("unknown role `{bad}`")));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, abbrev: &str) -> Option<&ArcPattern> {
        self.arcs.iter().find(|a| a.abbrev == abbrev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcMatch {
    pub abbrev: String,
    pub witness: Vec<usize>,
}

/// Every arc the sequence contains; longer arcs first, then by abbreviation.
pub fn match_arcs(seq: &[RoleId], library: &ArcLibrary) -> Vec<ArcMatch> {
    let mut matches: Vec<(&ArcPattern, Vec<usize>)> = library
        .arcs
        .iter()
        .filter_map(|arc| arc.witness(seq).map(|w| (arc, w)))
        .collect();
    matches.sort_by(|(a, _), (b, _)| {
        b.groups
            .len()
            .cmp(&a.groups.len())
            .then_with(|| a.abbrev.cmp(&b.abbrev))
    });
    matches
        .into_iter()
        .map(|(arc, witness)| ArcMatch {
            abbrev: arc.abbrev.clone(),
            witness,
        })
        .collect()
}
