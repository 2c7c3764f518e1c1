//! Dialogue data model, dialogue-JSON ingestion, synthetic generation and
//! auxiliary utterance pools.

mod auxiliary;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DstError, Result};
use crate::schema::{validate_state, Schema, Violation};

pub use auxiliary::{auxiliary_corpus, target_utterances, AuxSource};
pub use synth::{generate_synthetic, split_corpus, SynthConfig, TemplateBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotStatus {
    Active,
    #[serde(alias = "dont care", alias = "don't care", alias = "dontcare")]
    Dontcare,
    Inactive,
}

impl SlotStatus {
    pub const ALL: [SlotStatus; 3] = [SlotStatus::Active, SlotStatus::Dontcare, SlotStatus::Inactive];

    /// Class index used by the status head.
    pub fn index(self) -> usize {
        match self {
            SlotStatus::Active => 0,
            SlotStatus::Dontcare => 1,
            SlotStatus::Inactive => 2,
        }
    }

    pub fn from_index(i: usize) -> SlotStatus {
        SlotStatus::ALL[i]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValue {
    pub status: SlotStatus,
    #[serde(default)]
    pub value: String,
}

/// Slot name → (status, value). Slots absent from the map are inactive.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState {
    entries: BTreeMap<String, SlotValue>,
}

impl BeliefState {
    pub fn set_active(&mut self, slot: &str, value: &str) {
        self.entries.insert(
            slot.to_string(),
            SlotValue {
                status: SlotStatus::Active,
                value: value.to_string(),
            },
        );
    }

    pub fn set_dontcare(&mut self, slot: &str) {
        self.entries.insert(
            slot.to_string(),
            SlotValue {
                status: SlotStatus::Dontcare,
                value: String::new(),
            },
        );
    }

    pub fn set_inactive(&mut self, slot: &str) {
        self.entries.remove(slot);
    }

    pub fn insert(&mut self, slot: &str, entry: SlotValue) {
        self.entries.insert(slot.to_string(), entry);
    }

    pub fn status(&self, slot: &str) -> SlotStatus {
        self.entries
            .get(slot)
            .map(|e| e.status)
            .unwrap_or(SlotStatus::Inactive)
    }

    /// Value of an active slot.
    pub fn value(&self, slot: &str) -> Option<&str> {
        self.entries
            .get(slot)
            .filter(|e| e.status == SlotStatus::Active)
            .map(|e| e.value.as_str())
    }

    pub fn get(&self, slot: &str) -> Option<&SlotValue> {
        self.entries.get(slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SlotValue)> {
        self.entries.iter()
    }

    /// Names of slots whose status is not inactive.
    pub fn non_inactive(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, e)| e.status != SlotStatus::Inactive)
            .map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.non_inactive().next().is_none()
    }

    /// Status/value consistency (inactive and don't-care carry no value,
    /// active carries one).
    pub fn is_well_formed(&self) -> bool {
        self.entries.values().all(|e| match e.status {
            SlotStatus::Active => !e.value.is_empty(),
            _ => e.value.is_empty(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    #[serde(alias = "system")]
    Agent,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::User => Speaker::Agent,
            Speaker::Agent => Speaker::User,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub inserted: bool,
    #[serde(rename = "state", default, skip_serializing_if = "Option::is_none")]
    pub gold_state: Option<BeliefState>,
}

impl Turn {
    pub fn user(text: &str, state: BeliefState) -> Turn {
        Turn {
            speaker: Speaker::User,
            text: text.to_string(),
            inserted: false,
            gold_state: Some(state),
        }
    }

    pub fn agent(text: &str) -> Turn {
        Turn {
            speaker: Speaker::Agent,
            text: text.to_string(),
            inserted: false,
            gold_state: None,
        }
    }

    pub fn inserted(speaker: Speaker, text: String) -> Turn {
        Turn {
            speaker,
            text,
            inserted: true,
            gold_state: None,
        }
    }

    /// True for turns that are evaluated and supervised.
    pub fn is_gold(&self) -> bool {
        !self.inserted && self.speaker == Speaker::User && self.gold_state.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn num_utterances(&self) -> usize {
        self.turns.len()
    }

    /// Indices of gold user turns.
    pub fn gold_turns(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_gold())
            .map(|(i, _)| i)
    }

    pub fn original_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| !t.inserted)
    }

    pub fn is_perturbed(&self) -> bool {
        self.turns.iter().any(|t| t.inserted)
    }

    /// Checks speaker alternation and gold-state placement.
    pub fn check_structure(&self) -> Result<()> {
        let malformed = |message: String| DstError::MalformedDialogue {
            dialogue: self.id.clone(),
            message,
        };
        let mut expected = Speaker::User;
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.inserted {
                if turn.gold_state.is_some() {
                    return Err(malformed(format!("inserted turn {i} carries a state")));
                }
                continue;
            }
            if turn.speaker != expected {
                return Err(malformed(format!(
                    "turn {i}: expected {expected:?} speaker, found {:?}",
                    turn.speaker
                )));
            }
            match (turn.speaker, turn.gold_state.is_some()) {
                (Speaker::User, false) => {
                    return Err(malformed(format!("user turn {i} has no state")))
                }
                (Speaker::Agent, true) => {
                    return Err(malformed(format!("agent turn {i} carries a state")))
                }
                _ => {}
            }
            expected = expected.other();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub schema: Arc<Schema>,
    pub dialogues: Vec<Dialogue>,
    pub split: Split,
}

impl Corpus {
    pub fn new(schema: Arc<Schema>, dialogues: Vec<Dialogue>, split: Split) -> Corpus {
        Corpus {
            schema,
            dialogues,
            split,
        }
    }

    pub fn num_gold_turns(&self) -> usize {
        self.dialogues.iter().map(|d| d.gold_turns().count()).sum()
    }

    /// Structural and schema validation of every dialogue.
    pub fn validate(&self) -> Result<()> {
        for d in &self.dialogues {
            d.check_structure()?;
            for turn in &d.turns {
                if let Some(state) = &turn.gold_state {
                    check_state(&self.schema, &d.id, state)?;
                }
            }
        }
        Ok(())
    }

    /// Serialized dialogue-JSON: one compact dialogue per line inside an array.
    pub fn to_json_string(&self) -> String {
        dialogues_to_json(&self.dialogues)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| DstError::io(path, e))
    }

    /// SHA-256 over the schema fingerprint and serialized dialogues.
    pub fn identity_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.schema.fingerprint().as_bytes());
        h.update([0u8]);
        h.update(self.to_json_string().as_bytes());
        hex::encode(h.finalize())
    }
}

pub fn dialogues_to_json(dialogues: &[Dialogue]) -> String {
    let mut out = String::from("[");
    for (i, d) in dialogues.iter().enumerate() {
        out.push_str(if i == 0 { "\n" } else { ",\n" });
        let line = serde_json::to_string(d).expect("dialogue serializes");
        let _ = write!(out, "{line}");
    }
    out.push_str("\n]\n");
    out
}

fn check_state(schema: &Schema, dialogue: &str, state: &BeliefState) -> Result<()> {
    if let Some(v) = validate_state(schema, state).into_iter().next() {
        return Err(match v {
            Violation::UnknownSlot(slot) => DstError::UnknownSlot {
                dialogue: dialogue.to_string(),
                slot,
            },
            other => DstError::MalformedDialogue {
                dialogue: dialogue.to_string(),
                message: other.to_string(),
            },
        });
    }
    Ok(())
}

/// Parses dialogue-JSON text and validates it against `schema`.
pub fn parse_dialogues(text: &str, schema: Arc<Schema>, split: Split) -> Result<Corpus> {
    let raw: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| DstError::parse("dialogue json", e))?;
    let mut dialogues = Vec::with_capacity(raw.len());
    for (i, value) in raw.into_iter().enumerate() {
        let id = value
            .get("id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{i}"));
        let dialogue: Dialogue =
            serde_json::from_value(value).map_err(|e| DstError::MalformedDialogue {
                dialogue: id,
                message: e.to_string(),
            })?;
        dialogues.push(dialogue);
    }
    let corpus = Corpus::new(schema, dialogues, split);
    corpus.validate()?;
    Ok(corpus)
}

/// Reads a corpus in the dialogue-JSON format (MultiWOZ-derived data is
/// expected to be converted to this layout).
pub fn ingest_multiwoz(path: impl AsRef<Path>, schema: Arc<Schema>, split: Split) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    let corpus = parse_dialogues(&text, schema, split)?;
    if let Some(diff) = multiwoz_turn_discrepancy(&corpus) {
        log::warn!(
            "{}: {} user turns, MultiWOZ 2.1 test has {MULTIWOZ_TEST_USER_TURNS} (difference {diff:+})",
            path.display(),
            corpus.num_gold_turns()
        );
    }
    Ok(corpus)
}

/// Dialogues in the MultiWOZ 2.1 test split.
pub const MULTIWOZ_TEST_DIALOGUES: usize = 1000;
/// User turns in the MultiWOZ 2.1 test split.
pub const MULTIWOZ_TEST_USER_TURNS: usize = 7372;

/// For a test corpus the size of the MultiWOZ 2.1 test split, the gold user
/// turn count minus the reference count, when they differ. Other corpora
/// give `None`.
pub fn multiwoz_turn_discrepancy(corpus: &Corpus) -> Option<i64> {
    if corpus.split != Split::Test || corpus.dialogues.len() != MULTIWOZ_TEST_DIALOGUES {
        return None;
    }
    let diff = corpus.num_gold_turns() as i64 - MULTIWOZ_TEST_USER_TURNS as i64;
    (diff != 0).then_some(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::SlotDecl;

    fn schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(
                vec!["hotel".into()],
                vec![
                    SlotDecl::noncategorical("hotel-name", "hotel"),
                    SlotDecl::categorical("hotel-area", "hotel", &["east", "west"]),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn empty_list_gives_empty_corpus() {
        let c = parse_dialogues("[]", schema(), Split::Test).unwrap();
        assert!(c.dialogues.is_empty());
        assert_eq!(c.num_gold_turns(), 0);
    }

    #[test]
    fn unknown_slot_is_named() {
        let text = r#"[{"id":"d1","turns":[{"speaker":"user","text":"hi","state":{"taxi-color":{"status":"active","value":"red"}}}]}]"#;
        match parse_dialogues(text, schema(), Split::Test) {
            Err(DstError::UnknownSlot { slot, dialogue }) => {
                assert_eq!(slot, "taxi-color");
                assert_eq!(dialogue, "d1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_names_dialogue() {
        let text = r#"[{"id":"d9","turns":[{"speaker":"robot","text":"hi"}]}]"#;
        assert!(matches!(
            parse_dialogues(text, schema(), Split::Test),
            Err(DstError::MalformedDialogue { ref dialogue, .. }) if dialogue == "d9"
        ));
        let text = r#"[{"id":"d2","turns":[{"speaker":"agent","text":"hi"}]}]"#;
        assert!(parse_dialogues(text, schema(), Split::Test).is_err());
    }

    #[test]
    fn round_trip_preserves_structure() {
        let mut s = BeliefState::default();
        s.set_active("hotel-name", "a and b guest house");
        s.set_dontcare("hotel-area");
        let d = Dialogue {
            id: "x".into(),
            turns: vec![Turn::user("a and b guest house please", s), Turn::agent("ok")],
        };
        let c = Corpus::new(schema(), vec![d], Split::Dev);
        let back = parse_dialogues(&c.to_json_string(), schema(), Split::Dev).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.identity_hash(), c.identity_hash());
        assert_eq!(c.num_gold_turns(), 1);
    }

    #[test]
    fn belief_state_defaults_to_inactive() {
        let s = BeliefState::default();
        assert_eq!(s.status("anything"), SlotStatus::Inactive);
        assert!(s.is_empty());
        assert!(s.is_well_formed());
    }

    fn user_turns(n: usize) -> Dialogue {
        Dialogue {
            id: format!("u{n}"),
            turns: (0..n).flat_map(|_| [Turn::user("hi", BeliefState::default()), Turn::agent("ok")]).collect(),
        }
    }

    #[test]
    fn multiwoz_sized_test_split_is_checked_against_7372_turns() {
        // 628 dialogues of 7 user turns and 372 of 8 add up to 7372
        let mut dialogues: Vec<Dialogue> = (0..1000).map(|i| user_turns(if i < 628 { 7 } else { 8 })).collect();
        let c = Corpus::new(schema(), dialogues.clone(), Split::Test);
        assert_eq!(c.num_gold_turns(), 7372);
        assert_eq!(multiwoz_turn_discrepancy(&c), None);

        dialogues[0] = user_turns(6);
        let c = Corpus::new(schema(), dialogues.clone(), Split::Test);
        assert_eq!(multiwoz_turn_discrepancy(&c), Some(-1));
        // other splits and sizes are not compared
        assert_eq!(multiwoz_turn_discrepancy(&Corpus::new(schema(), dialogues.clone(), Split::Dev)), None);
        dialogues.pop();
        assert_eq!(multiwoz_turn_discrepancy(&Corpus::new(schema(), dialogues, Split::Test)), None);
    }
}
