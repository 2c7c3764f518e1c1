//! Bundled data files and small deterministic evaluation fixtures.

use std::sync::Arc;

use crate::corpus::synth::builtin_schema;
use crate::corpus::{BeliefState, Corpus, Dialogue, SlotStatus, Split, Turn};
use crate::dst_model::PredictionRecord;

/// MultiWOZ 2.1 ontology layout: 7 domains, 35 slots.
pub const MULTIWOZ_SCHEMA: &str = include_str!("../data/multiwoz21_schema.json");

/// Illustrative MultiWOZ 2.1 test-set length histogram as (utterances,
/// dialogues), 1000 dialogues in total. Its 30% and 70% points fall at 5 and
/// 11 utterances, the boundaries reported for the real test set.
pub const MULTIWOZ_TEST_LENGTHS: [(usize, usize); 16] = [
    (2, 40),
    (3, 70),
    (4, 90),
    (5, 130),
    (6, 95),
    (7, 90),
    (8, 75),
    (9, 60),
    (10, 50),
    (11, 90),
    (12, 70),
    (13, 55),
    (14, 40),
    (15, 25),
    (16, 12),
    (17, 8),
];

/// Dialogue with `utterances` alternating turns and empty gold states.
pub fn blank_dialogue(id: &str, utterances: usize) -> Dialogue {
    let turns = (0..utterances)
        .map(|i| {
            if i % 2 == 0 {
                Turn::user("hello", BeliefState::default())
            } else {
                Turn::agent("hi")
            }
        })
        .collect();
    Dialogue {
        id: id.to_string(),
        turns,
    }
}

/// Corpus following [`MULTIWOZ_TEST_LENGTHS`].
pub fn multiwoz_length_corpus() -> Corpus {
    let mut dialogues = Vec::new();
    for &(len, count) in &MULTIWOZ_TEST_LENGTHS {
        for k in 0..count {
            dialogues.push(blank_dialogue(&format!("mw-{len}-{k}"), len));
        }
    }
    Corpus::new(Arc::new(builtin_schema()), dialogues, Split::Test)
}

/// 50 dialogues on the builtin schema with predictions that differ from gold
/// by simple rules keyed on `(7 * dialogue + user turn) % 6`:
///
/// * 0: first active slot gets a wrong value
/// * 1: a gold-inactive slot is predicted don't-care
/// * 2: first live slot is dropped
/// * 3: values are re-cased and padded (still correct after normalization)
/// * 4: a don't-care slot is predicted active with a value (wrong status)
/// * 5: exact copy
///
/// Dialogue `i` has `1 + i % 9` user turns and ends on an agent turn when
/// `i` is odd, so lengths run from 1 to 18 utterances.
pub fn eval_fixture() -> (Corpus, Vec<PredictionRecord>) {
    let schema = Arc::new(builtin_schema());
    let slots = schema.slots();
    let mut dialogues = Vec::new();
    let mut records = Vec::new();
    for i in 0..50 {
        let id = format!("fx-{i:02}");
        let mut turns = Vec::new();
        let mut state = BeliefState::default();
        for k in 0..1 + i % 9 {
            // One new slot per user turn, every third one don't-care.
            let slot = &slots[(3 * i + 5 * k) % slots.len()];
            if (i + k) % 3 == 2 {
                state.set_dontcare(&slot.name);
            } else if slot.is_categorical() {
                state.set_active(&slot.name, &slot.candidate_values[(i + k) % slot.candidate_values.len()]);
            } else {
                state.set_active(&slot.name, &format!("value {i} {k}"));
            }
            let t = turns.len();
            turns.push(Turn::user(&format!("user turn {k}"), state.clone()));

            let mut pred = state.clone();
            let live: Vec<String> = state.non_inactive().map(str::to_string).collect();
            let first_active = live.iter().find(|s| state.status(s) == SlotStatus::Active);
            let first_inactive = slots
                .iter()
                .find(|s| state.status(&s.name) == SlotStatus::Inactive)
                .map(|s| s.name.clone());
            match (7 * i + k) % 6 {
                0 => {
                    if let Some(s) = first_active {
                        pred.set_active(s, "wrong value");
                    }
                }
                1 => {
                    if let Some(s) = &first_inactive {
                        pred.set_dontcare(s);
                    }
                }
                2 => {
                    if let Some(s) = live.first() {
                        pred.set_inactive(s);
                    }
                }
                3 => {
                    for s in &live {
                        if let Some(v) = state.value(s).filter(|_| state.status(s) == SlotStatus::Active) {
                            pred.set_active(s, &format!("  {}  ", v.to_uppercase().replace(' ', "   ")));
                        }
                    }
                }
                4 => {
                    if let Some(s) = live.iter().find(|s| state.status(s) == SlotStatus::Dontcare) {
                        pred.set_active(s, "any");
                    }
                }
                _ => {}
            }
            records.push(PredictionRecord {
                dialogue_id: id.clone(),
                turn: t,
                state: pred,
                detail: None,
            });
            if i % 2 == 1 || k < i % 9 {
                turns.push(Turn::agent(&format!("agent turn {k}")));
            }
        }
        dialogues.push(Dialogue { id, turns });
    }
    (Corpus::new(schema, dialogues, Split::Test), records)
}
