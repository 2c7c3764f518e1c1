//! Joint goal accuracy, length-bucketed accuracy, per-component accuracy and
//! report comparison.
//!
//! Only gold user turns are scored. Inserted turns never carry a state and
//! dialogue lengths are measured over original utterances.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{BeliefState, Corpus, Dialogue, SlotStatus};
use crate::dst_model::{predict_corpus, DstModel, PredictionRecord};
use crate::error::{DstError, Result};
use crate::exec::Execution;
use crate::schema::{Schema, SlotKind};

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_value(value: &str) -> String {
    value
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when `pred` agrees with `gold` on one slot. Inactive and don't-care
/// slots match on status alone.
pub fn slot_matches(pred: &BeliefState, gold: &BeliefState, slot: &str) -> bool {
    let status = gold.status(slot);
    if pred.status(slot) != status {
        return false;
    }
    status != SlotStatus::Active
        || normalize_value(pred.value(slot).unwrap_or("")) == normalize_value(gold.value(slot).unwrap_or(""))
}

pub fn turn_matches(schema: &Schema, pred: &BeliefState, gold: &BeliefState) -> bool {
    schema.slots().iter().all(|s| slot_matches(pred, gold, &s.name))
}

/// Predicted belief states keyed by (dialogue id, turn index).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    states: HashMap<(String, usize), BeliefState>,
}

impl Predictions {
    pub fn from_records(records: &[PredictionRecord]) -> Self {
        let mut p = Predictions::default();
        for r in records {
            p.insert(&r.dialogue_id, r.turn, r.state.clone());
        }
        p
    }

    /// Gold states used as predictions.
    pub fn gold(corpus: &Corpus) -> Self {
        let mut p = Predictions::default();
        for d in &corpus.dialogues {
            for t in d.gold_turns() {
                p.insert(&d.id, t, d.turns[t].gold_state.clone().expect("gold turn"));
            }
        }
        p
    }

    pub fn insert(&mut self, dialogue: &str, turn: usize, state: BeliefState) {
        self.states.insert((dialogue.to_string(), turn), state);
    }

    pub fn get(&self, dialogue: &str, turn: usize) -> Option<&BeliefState> {
        self.states.get(&(dialogue.to_string(), turn))
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// SHA-256 over the predictions in corpus order.
    pub fn hash_for(&self, corpus: &Corpus) -> String {
        let mut h = Sha256::new();
        for d in &corpus.dialogues {
            for t in d.gold_turns() {
                h.update(d.id.as_bytes());
                h.update(t.to_le_bytes());
                if let Some(s) = self.get(&d.id, t) {
                    h.update(serde_json::to_string(s).expect("states serialize").as_bytes());
                }
                h.update([0u8]);
            }
        }
        hex::encode(h.finalize())
    }
}

struct ScoredTurn<'a> {
    dialogue: usize,
    pred: &'a BeliefState,
    gold: &'a BeliefState,
}

/// Pairs every gold turn with its prediction, failing with the full list of
/// missing keys.
fn pair_turns<'a>(preds: &'a Predictions, corpus: &'a Corpus) -> Result<Vec<ScoredTurn<'a>>> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for (i, d) in corpus.dialogues.iter().enumerate() {
        for t in d.gold_turns() {
            let gold = d.turns[t].gold_state.as_ref().expect("gold turn");
            match preds.get(&d.id, t) {
                Some(pred) => out.push(ScoredTurn { dialogue: i, pred, gold }),
                None => missing.push((d.id.clone(), t)),
            }
        }
    }
    if !missing.is_empty() {
        return Err(DstError::MissingPredictions(missing));
    }
    Ok(out)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Fraction of gold turns whose whole predicted state matches gold.
pub fn joint_goal_accuracy(preds: &Predictions, corpus: &Corpus) -> Result<f64> {
    let turns = pair_turns(preds, corpus)?;
    let correct = turns
        .iter()
        .filter(|t| turn_matches(&corpus.schema, t.pred, t.gold))
        .count();
    ratio(correct, turns.len()).ok_or_else(|| DstError::Config("corpus has no gold turns".into()))
}

/// Length of a dialogue in original utterances.
pub fn dialogue_length(d: &Dialogue) -> usize {
    d.original_turns().count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketThresholds {
    pub short_max_utts: usize,
    pub long_min_utts: usize,
    /// Set when the buckets overlap, which happens only if the 30% and 70%
    /// points coincide (e.g. all dialogues share one length).
    pub degenerate: bool,
}

impl BucketThresholds {
    pub fn is_short(&self, len: usize) -> bool {
        len <= self.short_max_utts
    }

    pub fn is_long(&self, len: usize) -> bool {
        len >= self.long_min_utts
    }
}

/// Fraction of dialogues defining each bucket.
pub const BUCKET_FRACTION: f64 = 0.3;

/// Short/long thresholds from a list of dialogue lengths.
///
/// With `k = ceil(0.3 n)` the short threshold is the k-th smallest length and
/// the long threshold the k-th largest. Dialogues tied with a threshold join
/// its bucket, so a bucket can hold more than 30% of dialogues.
pub fn thresholds_from_lengths(lengths: &[usize]) -> Result<BucketThresholds> {
    if lengths.is_empty() {
        return Err(DstError::Config("bucket thresholds need at least one dialogue".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let k = ((BUCKET_FRACTION * n as f64).ceil() as usize).max(1);
    let short_max_utts = sorted[k - 1];
    let long_min_utts = sorted[n - k];
    Ok(BucketThresholds {
        short_max_utts,
        long_min_utts,
        degenerate: long_min_utts <= short_max_utts,
    })
}

pub fn bucket_thresholds(corpus: &Corpus) -> Result<BucketThresholds> {
    let lengths: Vec<usize> = corpus.dialogues.iter().map(dialogue_length).collect();
    let t = thresholds_from_lengths(&lengths)?;
    if t.degenerate {
        log::warn!(
            "degenerate length buckets: short <= {}, long >= {}",
            t.short_max_utts,
            t.long_min_utts
        );
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    All,
    Short,
    Long,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::All, Bucket::Short, Bucket::Long];

    pub fn contains(self, thresholds: &BucketThresholds, len: usize) -> bool {
        match self {
            Bucket::All => true,
            Bucket::Short => thresholds.is_short(len),
            Bucket::Long => thresholds.is_long(len),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::All => "all",
            Bucket::Short => "short",
            Bucket::Long => "long",
        }
    }
}

/// Component accuracies for one bucket. A component with no instances is
/// `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentAccuracy {
    /// Gold-active categorical instances whose predicted state carries the
    /// right value.
    pub categorical: Option<f64>,
    /// Same for non-categorical slots.
    pub noncategorical: Option<f64>,
    /// Every (turn, slot) instance with the right status.
    pub status: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentBreakdown {
    pub all: ComponentAccuracy,
    pub short: ComponentAccuracy,
    pub long: ComponentAccuracy,
}

impl ComponentBreakdown {
    pub fn bucket(&self, b: Bucket) -> &ComponentAccuracy {
        match b {
            Bucket::All => &self.all,
            Bucket::Short => &self.short,
            Bucket::Long => &self.long,
        }
    }
}

#[derive(Default)]
struct Tally {
    cat: (usize, usize),
    noncat: (usize, usize),
    status: (usize, usize),
}

impl Tally {
    fn add(&mut self, schema: &Schema, pred: &BeliefState, gold: &BeliefState) {
        for slot in schema.slots() {
            let name = slot.name.as_str();
            let gold_status = gold.status(name);
            self.status.1 += 1;
            if pred.status(name) == gold_status {
                self.status.0 += 1;
            }
            if gold_status == SlotStatus::Active {
                let right = slot_matches(pred, gold, name) as usize;
                let acc = match slot.kind {
                    SlotKind::Categorical => &mut self.cat,
                    SlotKind::Noncategorical => &mut self.noncat,
                };
                acc.0 += right;
                acc.1 += 1;
            }
        }
    }

    fn accuracy(&self) -> ComponentAccuracy {
        ComponentAccuracy {
            categorical: ratio(self.cat.0, self.cat.1),
            noncategorical: ratio(self.noncat.0, self.noncat.1),
            status: ratio(self.status.0, self.status.1),
        }
    }
}

pub fn component_breakdown(
    preds: &Predictions,
    corpus: &Corpus,
    thresholds: &BucketThresholds,
) -> Result<ComponentBreakdown> {
    let turns = pair_turns(preds, corpus)?;
    let mut tallies: [Tally; 3] = Default::default();
    for t in &turns {
        let len = dialogue_length(&corpus.dialogues[t.dialogue]);
        for (b, tally) in Bucket::ALL.iter().zip(tallies.iter_mut()) {
            if b.contains(thresholds, len) {
                tally.add(&corpus.schema, t.pred, t.gold);
            }
        }
    }
    Ok(ComponentBreakdown {
        all: tallies[0].accuracy(),
        short: tallies[1].accuracy(),
        long: tallies[2].accuracy(),
    })
}

/// Runs inference with gold statuses substituted and returns the JGA of the
/// result.
pub fn oracle_status_eval(model: &DstModel, corpus: &Corpus, exec: Execution) -> Result<f64> {
    let preds = predict_corpus(model, corpus, true, exec)?;
    let oracle = preds.oracle.expect("oracle predictions requested");
    joint_goal_accuracy(&Predictions::from_records(&oracle), corpus)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub dialogues: usize,
    pub turns: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCounts {
    pub all: BucketCount,
    pub short: BucketCount,
    pub long: BucketCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_hash: String,
    pub predictions_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub jga_all: f64,
    pub jga_short: f64,
    pub jga_long: f64,
    pub thresholds: BucketThresholds,
    pub components: ComponentBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_jga: Option<f64>,
    pub counts: BucketCounts,
}

impl EvalReport {
    pub fn jga(&self, b: Bucket) -> f64 {
        match b {
            Bucket::All => self.jga_all,
            Bucket::Short => self.jga_short,
            Bucket::Long => self.jga_long,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| DstError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DstError::parse(path.display().to_string(), e))
    }
}

/// Full report for one prediction set, with an optional oracle-status
/// prediction set.
pub fn evaluate(preds: &Predictions, oracle: Option<&Predictions>, corpus: &Corpus) -> Result<EvalReport> {
    let thresholds = bucket_thresholds(corpus)?;
    let turns = pair_turns(preds, corpus)?;
    let mut correct = [0usize; 3];
    let mut counts = [BucketCount::default(); 3];
    for (i, d) in corpus.dialogues.iter().enumerate() {
        let len = dialogue_length(d);
        for (k, b) in Bucket::ALL.iter().enumerate() {
            if b.contains(&thresholds, len) {
                counts[k].dialogues += 1;
            }
        }
        for t in turns.iter().filter(|t| t.dialogue == i) {
            let ok = turn_matches(&corpus.schema, t.pred, t.gold) as usize;
            for (k, b) in Bucket::ALL.iter().enumerate() {
                if b.contains(&thresholds, len) {
                    counts[k].turns += 1;
                    correct[k] += ok;
                }
            }
        }
    }
    let jga = |k: usize| ratio(correct[k], counts[k].turns).unwrap_or(0.0);
    if counts[0].turns == 0 {
        return Err(DstError::Config("corpus has no gold turns".into()));
    }
    Ok(EvalReport {
        corpus_hash: corpus.identity_hash(),
        predictions_hash: preds.hash_for(corpus),
        config_hash: None,
        jga_all: jga(0),
        jga_short: jga(1),
        jga_long: jga(2),
        thresholds,
        components: component_breakdown(preds, corpus, &thresholds)?,
        oracle_jga: oracle.map(|o| joint_goal_accuracy(o, corpus)).transpose()?,
        counts: BucketCounts {
            all: counts[0],
            short: counts[1],
            long: counts[2],
        },
    })
}

/// (after − before) / before, or `None` when `before` is zero.
pub fn relative_gain(before: f64, after: f64) -> Option<f64> {
    (before != 0.0).then(|| (after - before) / before)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub bucket: Bucket,
    pub before: f64,
    pub after: f64,
    pub relative: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub corpus_hash: String,
    pub gains: Vec<Gain>,
}

impl Comparison {
    pub fn gain(&self, b: Bucket) -> Option<f64> {
        self.gains.iter().find(|g| g.bucket == b).and_then(|g| g.relative)
    }

    /// Human-readable table with gains in percent.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:>10} {:>10} {:>12}\n", "bucket", "before", "after", "rel. gain");
        for g in &self.gains {
            let rel = g
                .relative
                .map_or_else(|| "n/a".to_string(), |r| format!("{:+.2}%", 100.0 * r));
            let _ = writeln!(out, "{:<8} {:>10.4} {:>10.4} {:>12}", g.bucket.as_str(), g.before, g.after, rel);
        }
        out
    }

    /// Plot data: `bucket,before,after,relative_gain_pct`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket,before,after,relative_gain_pct\n");
        for g in &self.gains {
            let rel = g.relative.map_or_else(String::new, |r| (100.0 * r).to_string());
            let _ = writeln!(out, "{},{},{},{}", g.bucket.as_str(), g.before, g.after, rel);
        }
        out
    }
}

/// Relative JGA gain per bucket. Both reports must come from the same
/// corpus.
pub fn compare_reports(before: &EvalReport, after: &EvalReport) -> Result<Comparison> {
    if before.corpus_hash != after.corpus_hash {
        return Err(DstError::CorpusMismatch {
            before: before.corpus_hash.clone(),
            after: after.corpus_hash.clone(),
        });
    }
    let gains = [Bucket::Short, Bucket::Long, Bucket::All]
        .into_iter()
        .map(|b| Gain {
            bucket: b,
            before: before.jga(b),
            after: after.jga(b),
            relative: relative_gain(before.jga(b), after.jga(b)),
        })
        .collect();
    Ok(Comparison {
        corpus_hash: before.corpus_hash.clone(),
        gains,
    })
}
