//! A [`TurnScorer`] with explicitly set logits, used to exercise the
//! decision rules without a trained network.

use rand::Rng;

use super::TurnScorer;
use crate::corpus::{BeliefState, SlotStatus};
use crate::encoder::tokenizer::pre_tokenize;
use crate::schema::{Schema, SlotId};

const HIGH: f64 = 10.0;

#[derive(Clone, Debug, Default)]
pub struct ScriptedScorer {
    pub domain: Vec<f64>,
    /// Per slot id.
    pub status: Vec<[f64; 3]>,
    /// Per slot id; empty for non-categorical slots.
    pub candidates: Vec<Vec<f64>>,
    /// Per slot id: start and end logits over context positions.
    pub spans: Vec<(Vec<f64>, Vec<f64>)>,
    /// Context tokens; `None` marks special tokens.
    pub tokens: Vec<Option<String>>,
    /// Source text and per-token byte offsets, when the context came from
    /// real text; spans then map back to the original substring.
    pub source: String,
    pub offsets: Vec<(usize, usize)>,
    pub status_calls: usize,
    pub status_slots_scored: usize,
    pub value_calls: usize,
}

impl ScriptedScorer {
    /// All-zero logits over a context of `tokens`.
    pub fn zeros(schema: &Schema, tokens: Vec<Option<String>>) -> Self {
        let len = tokens.len();
        ScriptedScorer {
            domain: vec![0.0; schema.num_domains()],
            status: vec![[0.0; 3]; schema.num_slots()],
            candidates: schema.slots().iter().map(|s| vec![0.0; s.candidate_values.len()]).collect(),
            spans: vec![(vec![0.0; len], vec![0.0; len]); schema.num_slots()],
            tokens,
            ..ScriptedScorer::default()
        }
    }

    /// Zero logits over the words of `text`, preceded by one special token.
    pub fn for_text(schema: &Schema, text: &str) -> Self {
        let pieces = pre_tokenize(text);
        let tokens = std::iter::once(None)
            .chain(pieces.iter().map(|p| Some(p.text.clone())))
            .collect();
        let mut s = ScriptedScorer::zeros(schema, tokens);
        s.source = text.to_string();
        s.offsets = std::iter::once((0, 0)).chain(pieces.iter().map(|p| (p.start, p.end))).collect();
        s
    }

    /// Logits that decode exactly to `gold`, given a context text containing
    /// every active non-categorical value.
    pub fn from_gold(schema: &Schema, gold: &BeliefState, text: &str) -> Self {
        let mut s = ScriptedScorer::for_text(schema, text);
        for (d, active) in schema.active_domains(gold).into_iter().enumerate() {
            s.domain[d] = if active { HIGH } else { -HIGH };
        }
        for (id, spec) in schema.slots().iter().enumerate() {
            let status = gold.status(&spec.name);
            s.status[id] = [0.0; 3];
            s.status[id][status.index()] = HIGH;
            let Some(value) = gold.value(&spec.name) else { continue };
            if spec.is_categorical() {
                if let Some(i) = spec.candidate_values.iter().position(|c| c == value) {
                    s.candidates[id][i] = HIGH;
                }
            } else {
                let needle: Vec<Option<String>> = pre_tokenize(value).into_iter().map(|p| Some(p.text)).collect();
                let n = needle.len();
                if let Some(at) = (0..=s.tokens.len().saturating_sub(n))
                    .rev()
                    .find(|&i| n > 0 && i + n <= s.tokens.len() && s.tokens[i..i + n] == needle[..])
                {
                    s.spans[id].0[at] = HIGH;
                    s.spans[id].1[at + n - 1] = HIGH;
                }
            }
        }
        s
    }

    /// Independent standard-uniform logits in `[-3, 3)`.
    pub fn random(schema: &Schema, len: usize, rng: &mut impl Rng) -> Self {
        let mut tokens: Vec<Option<String>> = (0..len).map(|i| Some(format!("w{i}"))).collect();
        if let Some(first) = tokens.first_mut() {
            *first = None;
        }
        let mut s = ScriptedScorer::zeros(schema, tokens);
        let mut r = || rng.gen_range(-3.0..3.0);
        s.domain.iter_mut().for_each(|x| *x = r());
        s.status.iter_mut().flatten().for_each(|x| *x = r());
        s.candidates.iter_mut().flatten().for_each(|x| *x = r());
        for (a, b) in s.spans.iter_mut() {
            a.iter_mut().for_each(|x| *x = r());
            b.iter_mut().for_each(|x| *x = r());
        }
        s
    }

    pub fn force_all_domains(&mut self, active: bool) {
        let v = if active { HIGH } else { -HIGH };
        self.domain.iter_mut().for_each(|x| *x = v);
    }

    pub fn set_status(&mut self, slot: SlotId, status: SlotStatus) {
        self.status[slot] = [0.0; 3];
        self.status[slot][status.index()] = HIGH;
    }
}

impl TurnScorer for ScriptedScorer {
    fn domain_logits(&mut self) -> Vec<f64> {
        self.domain.clone()
    }

    fn status_logits(&mut self, slots: &[SlotId]) -> Vec<[f64; 3]> {
        self.status_calls += 1;
        self.status_slots_scored += slots.len();
        slots.iter().map(|&s| self.status[s]).collect()
    }

    fn candidate_scores(&mut self, slot: SlotId) -> Vec<f64> {
        self.value_calls += 1;
        self.candidates[slot].clone()
    }

    fn span_logits(&mut self, slot: SlotId) -> (Vec<f64>, Vec<f64>) {
        self.value_calls += 1;
        self.spans[slot].clone()
    }

    fn span_text(&self, start: usize, end: usize) -> Option<String> {
        let parts: Option<Vec<&str>> = [start, end]
            .iter()
            .map(|&i| self.tokens.get(i).and_then(|t| t.as_deref()))
            .collect();
        parts?;
        if !self.offsets.is_empty() {
            return Some(self.source[self.offsets[start].0..self.offsets[end].1].to_string());
        }
        Some(
            self.tokens[start..=end]
                .iter()
                .flatten()
                .map(String::as_str)
                .collect::<Vec<_>>()
                .join(" "),
        )
    }
}
