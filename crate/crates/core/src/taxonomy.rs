//! The functional-role vocabulary units are labelled with.
//!
//! Six categories, 23 roles. The bundled `taxonomy_v1` is embedded at build
//! time; custom taxonomies load from the same TOML schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TAXONOMY_TOML: &str = include_str!("../data/taxonomy_v1.toml");

pub const STRICT_CATEGORY_COUNTS: [(&str, usize); 6] = [
    ("opening", 2),
    ("problem_need_challenge", 2),
    ("product_introduction_explanation", 6),
    ("persuasive_framing", 7),
    ("closure_identity", 5),
    ("others", 1),
];
pub const STRICT_ROLE_COUNT: usize = 23;

pub const VISUAL_FILLER: &str = "visual_filler";

/// Stable snake_case key of a functional role.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoleId(pub String);

impl RoleId {
    pub fn new(id: impl Into<String>) -> Self {
        RoleId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_filler(&self) -> bool {
        self.0 == VISUAL_FILLER
    }
}

impl fmt::Display for RoleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RoleId {
    fn from(s: &str) -> Self {
        RoleId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleCategory {
    pub id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalRole {
    pub id: RoleId,
    pub name: String,
    pub category: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Taxonomy {
    pub version: String,
    pub categories: Vec<RoleCategory>,
    pub roles: Vec<FunctionalRole>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("duplicate role id `{0}`")]
    DuplicateRoleId(String),
    #[error("duplicate category id `{0}`")]
    DuplicateCategoryId(String),
    #[error("role `{role}` references unknown category `{category}`")]
    UnknownCategory { role: String, category: String },
    #[error("role `{0}` has an empty description")]
    EmptyDescription(String),
    #[error("role or category `{0}` has an empty id or name")]
    EmptyName(String),
    #[error("expected {expected} {what}, found {found}")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaxonomyError {
    #[error("cannot parse taxonomy: {0}")]
    Parse(String),
    #[error("invalid taxonomy: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

impl Default for Taxonomy {
    fn default() -> Self {
        load_taxonomy(DEFAULT_TAXONOMY_TOML.as_bytes(), true)
            .expect("bundled taxonomy is valid")
    }
}

impl Taxonomy {
    pub fn role(&self, id: &str) -> Option<&FunctionalRole> {
        self.roles.iter().find(|r| r.id.as_str() == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.role(id).is_some()
    }

    pub fn display_name(&self, id: &str) -> String {
        self.role(id).map_or_else(|| id.to_string(), |r| r.name.clone())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }
}

pub fn load_taxonomy(bytes: &[u8], strict: bool) -> Result<Taxonomy, TaxonomyError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
    let taxonomy: Taxonomy = toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
    validate_taxonomy(&taxonomy, strict).map_err(TaxonomyError::Invalid)?;
    Ok(taxonomy)
}

/// Collects every violation. Strict mode also pins the six category ids and
/// the 2/2/6/7/5/1 role counts.
pub fn validate_taxonomy(t: &Taxonomy, strict: bool) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();

    let mut category_ids = BTreeSet::new();
    for c in &t.categories {
        if c.id.trim().is_empty() || c.display_name.trim().is_empty() {
            violations.push(Violation::EmptyName(c.id.clone()));
        }
        if !category_ids.insert(c.id.as_str()) {
            violations.push(Violation::DuplicateCategoryId(c.id.clone()));
        }
    }

    let mut role_ids = BTreeSet::new();
    let mut per_category: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &t.roles {
        if r.id.as_str().trim().is_empty() || r.name.trim().is_empty() {
            violations.push(Violation::EmptyName(r.id.to_string()));
        }
        if !role_ids.insert(r.id.as_str()) {
            violations.push(Violation::DuplicateRoleId(r.id.to_string()));
        }
        if !category_ids.contains(r.category.as_str()) {
            violations.push(Violation::UnknownCategory {
                role: r.id.to_string(),
                category: r.category.clone(),
            });
        }
        if r.description.trim().is_empty() {
            violations.push(Violation::EmptyDescription(r.id.to_string()));
        }
        *per_category.entry(r.category.as_str()).or_default() += 1;
    }

    if strict {
        if t.categories.len() != STRICT_CATEGORY_COUNTS.len() {
            violations.push(Violation::CountMismatch {
                what: "categories".into(),
                expected: STRICT_CATEGORY_COUNTS.len(),
                found: t.categories.len(),
            });
        }
        if t.roles.len() != STRICT_ROLE_COUNT {
            violations.push(Violation::CountMismatch {
                what: "roles".into(),
                expected: STRICT_ROLE_COUNT,
                found: t.roles.len(),
            });
        }
        for (category, expected) in STRICT_CATEGORY_COUNTS {
            let found = per_category.get(category).copied().unwrap_or(0);
            if found != expected {
                violations.push(Violation::CountMismatch {
                    what: format!("roles in `{category}`"),
                    expected,
                    found,
                });
            }
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Role listing embedded in annotator prompts: categories in taxonomy order,
/// one `- [role_id] Name: description` line per role.
pub fn render_role_prompt(t: &Taxonomy) -> String {
    let mut out = format!("Functional role taxonomy ({})\n", t.version);
    for c in &t.categories {
        let roles: Vec<&FunctionalRole> = t.roles.iter().filter(|r| r.category == c.id).collect();
        if roles.is_empty() {
            continue;
        }
        out.push_str(&format!("\n## {}\n", c.display_name));
        for r in roles {
            out.push_str(&format!("- [{}] {}: {}\n", r.id, r.name, r.description.trim()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bundled_taxonomy_matches_strict_counts() {
        let t = Taxonomy::default();
        assert_eq!(t.version, "taxonomy_v1");
        assert_eq!(t.categories.len(), 6);
        assert_eq!(t.roles.len(), 23);
        for (cat, n) in STRICT_CATEGORY_COUNTS {
            assert_eq!(t.roles.iter().filter(|r| r.category == cat).count(), n, "{cat}");
        }
        assert!(validate_taxonomy(&t, true).is_ok());
        assert_eq!(
            t.role("hook").unwrap().description,
            "Grabs viewers' attention or interest but not always related to products; appears at the first few seconds of a video."
        );
    }

    #[test]
    fn duplicate_role_id_is_rejected() {
        let dup = DEFAULT_TAXONOMY_TOML.replace("id = \"establish_context\"", "id = \"hook\"");
        match load_taxonomy(dup.as_bytes(), false) {
            Err(TaxonomyError::Invalid(v)) => {
                assert!(v.contains(&Violation::DuplicateRoleId("hook".into())))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn custom_role_accepted_only_when_not_strict() {
        let extra = format!(
            "{DEFAULT_TAXONOMY_TOML}\n[[roles]]\nid = \"unboxing\"\nname = \"Unboxing\"\ncategory = \"product_introduction_explanation\"\ndescription = \"Opens the package on camera.\"\n"
        );
        assert_eq!(load_taxonomy(extra.as_bytes(), false).unwrap().roles.len(), 24);
        assert!(matches!(
            load_taxonomy(extra.as_bytes(), true),
            Err(TaxonomyError::Invalid(v)) if v.iter().all(|x| matches!(x, Violation::CountMismatch { .. }))
        ));
    }

    #[test]
    fn validation_reports_every_violation() {
        let mut t = Taxonomy::default();
        t.roles[0].description = " ".into();
        t.roles[1].category = "X".into();
        let v = validate_taxonomy(&t, false).unwrap_err();
        assert_eq!(
            v,
            vec![
                Violation::EmptyDescription("hook".into()),
                Violation::UnknownCategory {
                    role: "establish_context".into(),
                    category: "X".into()
                },
            ]
        );
        let strict = validate_taxonomy(&t, true).unwrap_err();
        assert!(strict.len() > 2);
    }

    #[test]
    fn prompt_lists_every_role_once_in_order() {
        let t = Taxonomy::default();
        let prompt = render_role_prompt(&t);
        assert!(prompt.contains("Grabs viewers' attention or interest"));
        assert_eq!(prompt, render_role_prompt(&t));
        for r in &t.roles {
            assert_eq!(prompt.matches(&format!("[{}]", r.id)).count(), 1, "{}", r.id);
        }
        let positions: Vec<usize> =
            t.roles.iter().map(|r| prompt.find(&format!("[{}]", r.id)).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn one_role_taxonomy_renders_one_block() {
        let t = Taxonomy {
            version: "tiny".into(),
            categories: vec![RoleCategory {
                id: "others".into(),
                display_name: "Others".into(),
            }],
            roles: vec![FunctionalRole {
                id: "visual_filler".into(),
                name: "Visual Filler".into(),
                category: "others".into(),
                description: "Pacing.".into(),
            }],
        };
        let prompt = render_role_prompt(&t);
        assert_eq!(prompt.lines().filter(|l| l.starts_with("- [")).count(), 1);
    }

    proptest! {
        #[test]
        fn serialize_then_load_is_identity(
            keep in prop::collection::vec(any::<bool>(), 23),
            suffix in "[a-z ]{0,12}",
        ) {
            let mut t = Taxonomy::default();
            let mut i = 0;
            t.roles.retain(|_| { i += 1; keep[i - 1] });
            for r in &mut t.roles {
                r.description.push_str(&suffix);
                r.description = r.description.trim_end().to_string();
            }
            let back = load_taxonomy(t.to_toml().as_bytes(), false).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
