//! Task ontology: domains, slots and candidate values.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefState, SlotStatus};
use crate::error::{DstError, Result};

/// Index of a slot in [`Schema::slots`].
pub type SlotId = usize;
/// Index of a domain in [`Schema::domains`].
pub type DomainId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Categorical,
    #[serde(alias = "non-categorical", alias = "non_categorical")]
    Noncategorical,
}

impl SlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Categorical => "categorical",
            SlotKind::Noncategorical => "noncategorical",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotSpec {
    /// Surface string fed verbatim to the encoder.
    pub name: String,
    pub kind: SlotKind,
    /// Closed value set; empty for non-categorical slots.
    pub candidate_values: Vec<String>,
    pub domain: DomainId,
}

impl SlotSpec {
    pub fn is_categorical(&self) -> bool {
        self.kind == SlotKind::Categorical
    }
}

/// Validated, immutable ontology.
///
/// Slots keep declaration order, and `domain_slots[i]` lists the slots of
/// `domains[i]` in that same order. The domain slot lists partition the slot
/// set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    domains: Vec<String>,
    slots: Vec<SlotSpec>,
    domain_slots: Vec<Vec<SlotId>>,
    slot_index: HashMap<String, SlotId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    domains: Vec<String>,
    slots: Vec<SlotFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SlotFile {
    name: String,
    domain: String,
    kind: SlotKind,
    #[serde(default)]
    values: Vec<String>,
}

/// Builder-style slot declaration used by [`Schema::new`].
#[derive(Clone, Debug)]
pub struct SlotDecl {
    pub name: String,
    pub domain: String,
    pub kind: SlotKind,
    pub values: Vec<String>,
}

impl SlotDecl {
    pub fn categorical(name: &str, domain: &str, values: &[&str]) -> Self {
        SlotDecl {
            name: name.to_string(),
            domain: domain.to_string(),
            kind: SlotKind::Categorical,
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn noncategorical(name: &str, domain: &str) -> Self {
        SlotDecl {
            name: name.to_string(),
            domain: domain.to_string(),
            kind: SlotKind::Noncategorical,
            values: Vec::new(),
        }
    }
}

impl Schema {
    /// Validates and builds a schema from declarations.
    pub fn new(domains: Vec<String>, decls: Vec<SlotDecl>) -> Result<Schema> {
        let mut domain_index: HashMap<&str, DomainId> = HashMap::new();
        for (i, d) in domains.iter().enumerate() {
            if domain_index.insert(d.as_str(), i).is_some() {
                return Err(DstError::DuplicateDomain(d.clone()));
            }
        }
        let mut slots = Vec::with_capacity(decls.len());
        let mut slot_index = HashMap::new();
        let mut domain_slots = vec![Vec::new(); domains.len()];
        for decl in decls {
            let domain = *domain_index
                .get(decl.domain.as_str())
                .ok_or_else(|| DstError::UnknownDomain {
                    slot: decl.name.clone(),
                    domain: decl.domain.clone(),
                })?;
            match decl.kind {
                SlotKind::Categorical => {
                    let mut distinct = decl.values.clone();
                    distinct.sort();
                    distinct.dedup();
                    if distinct.len() < 2 {
                        return Err(DstError::TooFewCandidates {
                            slot: decl.name,
                            found: distinct.len(),
                        });
                    }
                }
                SlotKind::Noncategorical => {
                    if !decl.values.is_empty() {
                        return Err(DstError::UnexpectedCandidates(decl.name));
                    }
                }
            }
            let id = slots.len();
            if slot_index.insert(decl.name.clone(), id).is_some() {
                return Err(DstError::DuplicateSlot(decl.name));
            }
            domain_slots[domain].push(id);
            slots.push(SlotSpec {
                name: decl.name,
                kind: decl.kind,
                candidate_values: decl.values,
                domain,
            });
        }
        Ok(Schema {
            domains,
            slots,
            domain_slots,
            slot_index,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Schema> {
        let file: SchemaFile =
            serde_json::from_str(text).map_err(|e| DstError::parse("schema", e))?;
        let decls = file
            .slots
            .into_iter()
            .map(|s| SlotDecl {
                name: s.name,
                domain: s.domain,
                kind: s.kind,
                values: s.values,
            })
            .collect();
        Schema::new(file.domains, decls)
    }

    pub fn to_json_string(&self) -> String {
        let file = SchemaFile {
            domains: self.domains.clone(),
            slots: self
                .slots
                .iter()
                .map(|s| SlotFile {
                    name: s.name.clone(),
                    domain: self.domains[s.domain].clone(),
                    kind: s.kind,
                    values: s.candidate_values.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn slots(&self) -> &[SlotSpec] {
        &self.slots
    }

    pub fn slot(&self, id: SlotId) -> &SlotSpec {
        &self.slots[id]
    }

    pub fn slot_id(&self, name: &str) -> Option<SlotId> {
        self.slot_index.get(name).copied()
    }

    pub fn domain_slots(&self, domain: DomainId) -> &[SlotId] {
        &self.domain_slots[domain]
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn categorical_slots(&self) -> impl Iterator<Item = SlotId> + '_ {
        (0..self.slots.len()).filter(|&i| self.slots[i].is_categorical())
    }

    pub fn noncategorical_slots(&self) -> impl Iterator<Item = SlotId> + '_ {
        (0..self.slots.len()).filter(|&i| !self.slots[i].is_categorical())
    }

    /// Domains with at least one non-inactive slot in `state`.
    pub fn active_domains(&self, state: &BeliefState) -> Vec<bool> {
        let mut active = vec![false; self.domains.len()];
        for (name, entry) in state.iter() {
            if entry.status != SlotStatus::Inactive {
                if let Some(id) = self.slot_id(name) {
                    active[self.slots[id].domain] = true;
                }
            }
        }
        active
    }

    /// Stable textual form used for hashing.
    pub fn fingerprint(&self) -> String {
        self.to_json_string()
    }
}

/// Reads and validates a schema document.
pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    Schema::from_json_str(&text)
}

/// A way in which a belief state disagrees with the schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    UnknownSlot(String),
    NotACandidate { slot: String, value: String },
    InactiveWithValue { slot: String },
    DontcareWithValue { slot: String },
    ActiveWithoutValue { slot: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownSlot(s) => write!(f, "unknown slot `{s}`"),
            Violation::NotACandidate { slot, value } => {
                write!(f, "`{value}` is not a candidate value of `{slot}`")
            }
            Violation::InactiveWithValue { slot } => write!(f, "inactive slot `{slot}` has a value"),
            Violation::DontcareWithValue { slot } => {
                write!(f, "don't-care slot `{slot}` has a value")
            }
            Violation::ActiveWithoutValue { slot } => write!(f, "active slot `{slot}` has no value"),
        }
    }
}

/// Lists every way `state` disagrees with `schema`. Empty means valid.
pub fn validate_state(schema: &Schema, state: &BeliefState) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, entry) in state.iter() {
        let Some(id) = schema.slot_id(name) else {
            out.push(Violation::UnknownSlot(name.clone()));
            continue;
        };
        let slot = schema.slot(id);
        match entry.status {
            SlotStatus::Inactive if !entry.value.is_empty() => {
                out.push(Violation::InactiveWithValue { slot: name.clone() })
            }
            SlotStatus::Dontcare if !entry.value.is_empty() => {
                out.push(Violation::DontcareWithValue { slot: name.clone() })
            }
            SlotStatus::Active if entry.value.is_empty() => {
                out.push(Violation::ActiveWithoutValue { slot: name.clone() })
            }
            SlotStatus::Active
                if slot.is_categorical() && !slot.candidate_values.contains(&entry.value) =>
            {
                out.push(Violation::NotACandidate {
                    slot: name.clone(),
                    value: entry.value.clone(),
                })
            }
            _ => {}
        }
    }
    out
}

/// Slot counts per domain, keyed by domain name.
pub fn slots_per_domain(schema: &Schema) -> BTreeMap<String, usize> {
    schema
        .domains()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.clone(), schema.domain_slots(i).len()))
        .collect()
}
