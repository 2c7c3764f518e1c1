//! The prediction stack: domain activation, hierarchical or flat slot
//! status, categorical value selection and span extraction.
//!
//! Decision rules live in the generic `predict_*` functions and only see a
//! [`TurnScorer`], which supplies raw logits. [`NeuralScorer`] backs it with
//! the trained encoder and heads; tests plug in hand-built scorers.

pub mod heads;
pub mod scripted;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefState, Corpus, SlotStatus, SlotValue, Turn};
use crate::encoder::checkpoint::{assign_tensors, read_tensors, write_tensors};
use crate::encoder::tensor::{softmax_rows, sigmoid, Matrix, ParamSet, Tape, Var};
use crate::encoder::tokenizer::{is_special, Tokenizer};
use crate::encoder::transformer::{build_context, build_single, forward, ContextInput, EncoderConfig, EncoderParams};
use crate::error::{DstError, Result};
use crate::exec::{self, Execution};
use crate::schema::{Schema, SlotId, SlotKind};
use heads::{HeadContext, HeadParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusMode {
    #[default]
    Hierarchical,
    Flat,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub status_mode: StatusMode,
}

/// Unique candidate-value strings and, per slot, indices into them.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaLayout {
    pub value_strings: Vec<String>,
    pub value_index: Vec<Vec<usize>>,
}

impl SchemaLayout {
    pub fn new(schema: &Schema) -> Self {
        let mut value_strings: Vec<String> = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let value_index = schema
            .slots()
            .iter()
            .map(|slot| {
                slot.candidate_values
                    .iter()
                    .map(|v| {
                        *seen.entry(v.clone()).or_insert_with(|| {
                            value_strings.push(v.clone());
                            value_strings.len() - 1
                        })
                    })
                    .collect()
            })
            .collect();
        SchemaLayout {
            value_strings,
            value_index,
        }
    }
}

/// Encoded slot names (`S × d`) and unique candidate values (`U × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct SchemaEncoding {
    pub slots: Matrix,
    pub values: Matrix,
}

/// Tape handles of the pooled slot-name and value encodings.
pub struct SchemaVars {
    pub slots: Vec<Var>,
    pub values: Vec<Var>,
}

pub fn stack_rows(tape: &Tape, vars: &[Var], width: usize) -> Matrix {
    let mut m = Matrix::zeros((vars.len(), width));
    for (i, v) in vars.iter().enumerate() {
        m.row_mut(i).assign(&tape.value(*v).row(0));
    }
    m
}

#[derive(Clone, Debug)]
pub struct DstModel {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub schema: Arc<Schema>,
    pub layout: SchemaLayout,
    pub params: ParamSet,
    pub encoder: EncoderParams,
    pub heads: HeadParams,
}

/// Heads sit on top of a freshly initialized encoder, so they use a
/// fan-in scaled init rather than the encoder's small constant std. With
/// 0.02 the slot-query attention starts out uniform and barely moves.
fn head_init_std(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

impl DstModel {
    pub fn new(config: ModelConfig, tokenizer: Tokenizer, schema: Arc<Schema>, rng: &mut impl Rng) -> Result<Self> {
        let mut config = config;
        config.encoder.vocab_size = tokenizer.vocab_size();
        config.encoder.validate()?;
        let mut params = ParamSet::default();
        let encoder = EncoderParams::init(&mut params, &config.encoder, rng);
        let heads = HeadParams::init(
            &mut params,
            config.encoder.hidden_dim,
            schema.num_domains(),
            head_init_std(config.encoder.hidden_dim),
            rng,
        );
        Ok(DstModel {
            layout: SchemaLayout::new(&schema),
            config,
            tokenizer,
            schema,
            params,
            encoder,
            heads,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.encoder.hidden_dim
    }

    /// Encodes a single string (slot name, candidate value or utterance).
    pub fn encode_text(&self, tape: &mut Tape, text: &str) -> Var {
        let ids = build_single(&self.tokenizer, text, &self.config.encoder);
        forward(tape, &self.encoder, &self.config.encoder, &ids, None).pooled
    }

    pub fn schema_forward(&self, tape: &mut Tape) -> SchemaVars {
        let slots = self.schema.slots().iter().map(|s| self.encode_text(tape, &s.name)).collect();
        let values = self.layout.value_strings.iter().map(|v| self.encode_text(tape, v)).collect();
        SchemaVars { slots, values }
    }

    pub fn encode_schema(&self) -> SchemaEncoding {
        let mut tape = Tape::new(&self.params);
        let vars = self.schema_forward(&mut tape);
        let d = self.hidden_dim();
        SchemaEncoding {
            slots: stack_rows(&tape, &vars.slots, d),
            values: stack_rows(&tape, &vars.values, d),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| DstError::io(dir, e))?;
        self.tokenizer.save(dir.join("vocab.txt"))?;
        let meta = serde_json::json!({
            "config": self.config,
            "schema": self.schema.to_json_string(),
        });
        write_tensors(dir.join("model.ckpt"), meta, &self.params)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let tokenizer = Tokenizer::load(dir.join("vocab.txt"))?;
        let (meta, tensors) = read_tensors(dir.join("model.ckpt"))?;
        let bad = |e: String| DstError::Checkpoint(format!("{}: {e}", dir.display()));
        let config: ModelConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(e.to_string()))?;
        let schema_text = meta["schema"].as_str().ok_or_else(|| bad("missing schema".into()))?;
        let schema = Arc::new(Schema::from_json_str(schema_text)?);
        let mut model = DstModel::new(config, tokenizer, schema, &mut crate::rng::seeded(0))?;
        assign_tensors(&mut model.params, tensors)?;
        Ok(model)
    }
}

/// Source of raw logits for one dialogue context.
pub trait TurnScorer {
    /// One logit per schema domain.
    fn domain_logits(&mut self) -> Vec<f64>;
    /// Status logits (active, dontcare, inactive) for each requested slot.
    fn status_logits(&mut self, slots: &[SlotId]) -> Vec<[f64; 3]>;
    /// One score per candidate value of a categorical slot.
    fn candidate_scores(&mut self, slot: SlotId) -> Vec<f64>;
    /// Start and end logits over every context position.
    fn span_logits(&mut self, slot: SlotId) -> (Vec<f64>, Vec<f64>);
    /// Source text covered by positions `start..=end`; `None` when either
    /// end is a special token.
    fn span_text(&self, start: usize, end: usize) -> Option<String>;
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnPrediction {
    /// Sigmoid probability per domain, in schema order.
    pub domain_probs: Vec<f64>,
    pub domain_active: Vec<bool>,
    pub statuses: BTreeMap<String, SlotStatus>,
    pub categorical: BTreeMap<String, String>,
    pub spans: BTreeMap<String, SpanPrediction>,
}

impl TurnPrediction {
    pub fn status(&self, slot: &str) -> SlotStatus {
        self.statuses.get(slot).copied().unwrap_or(SlotStatus::Inactive)
    }

    pub fn value(&self, slot: &str) -> Option<&str> {
        self.categorical
            .get(slot)
            .map(String::as_str)
            .or_else(|| self.spans.get(slot).map(|s| s.text.as_str()))
    }

    /// Belief state implied by the prediction. Active slots whose value
    /// could not be extracted carry an empty value.
    pub fn state(&self) -> BeliefState {
        let mut state = BeliefState::default();
        for (slot, &status) in &self.statuses {
            match status {
                SlotStatus::Inactive => {}
                SlotStatus::Dontcare => state.set_dontcare(slot),
                SlotStatus::Active => state.insert(
                    slot,
                    SlotValue {
                        status,
                        value: self.value(slot).unwrap_or("").to_string(),
                    },
                ),
            }
        }
        state
    }

    /// Structural violations: values without active status, active slots
    /// without a value, and (hierarchically) live slots in inactive domains.
    pub fn violations(&self, schema: &Schema, mode: StatusMode) -> Vec<String> {
        let mut out = Vec::new();
        for slot in schema.slots() {
            let status = self.status(&slot.name);
            let has_value = self.value(&slot.name).is_some();
            if has_value != (status == SlotStatus::Active) {
                out.push(format!("{}: status {status:?} with value present = {has_value}", slot.name));
            }
            if mode == StatusMode::Hierarchical
                && status != SlotStatus::Inactive
                && !self.domain_active.get(slot.domain).copied().unwrap_or(false)
            {
                out.push(format!("{}: live slot in inactive domain", slot.name));
            }
        }
        out
    }
}

pub fn predict_domains<S: TurnScorer + ?Sized>(scorer: &mut S) -> (Vec<f64>, Vec<bool>) {
    let probs: Vec<f64> = scorer.domain_logits().into_iter().map(sigmoid).collect();
    let active = probs.iter().map(|&p| p > 0.5).collect();
    (probs, active)
}

/// Slots whose status head runs: all of them in flat mode, only those of
/// active domains in hierarchical mode.
pub fn scored_slots(schema: &Schema, domain_active: &[bool], mode: StatusMode) -> Vec<SlotId> {
    (0..schema.num_slots())
        .filter(|&s| mode == StatusMode::Flat || domain_active[schema.slot(s).domain])
        .collect()
}

/// Status per slot id.
pub fn predict_statuses<S: TurnScorer + ?Sized>(
    scorer: &mut S,
    schema: &Schema,
    domain_active: &[bool],
    mode: StatusMode,
) -> Vec<SlotStatus> {
    let mut out = vec![SlotStatus::Inactive; schema.num_slots()];
    let scored = scored_slots(schema, domain_active, mode);
    if scored.is_empty() {
        return out;
    }
    let logits = scorer.status_logits(&scored);
    for (&s, l) in scored.iter().zip(&logits) {
        let probs = softmax_rows(&Matrix::from_shape_vec((1, 3), l.to_vec()).unwrap());
        out[s] = SlotStatus::from_index(argmax(probs.as_slice().unwrap()));
    }
    out
}

pub fn predict_categorical<S: TurnScorer + ?Sized>(scorer: &mut S, schema: &Schema, slot: SlotId) -> Result<String> {
    let spec = schema.slot(slot);
    if spec.kind != SlotKind::Categorical {
        return Err(DstError::WrongSlotKind {
            slot: spec.name.clone(),
            kind: spec.kind.as_str(),
            expected: SlotKind::Categorical.as_str(),
        });
    }
    let scores = scorer.candidate_scores(slot);
    Ok(spec.candidate_values[argmax(&scores)].clone())
}

pub fn predict_span<S: TurnScorer + ?Sized>(scorer: &mut S, schema: &Schema, slot: SlotId) -> Result<SpanPrediction> {
    let spec = schema.slot(slot);
    if spec.kind != SlotKind::Noncategorical {
        return Err(DstError::WrongSlotKind {
            slot: spec.name.clone(),
            kind: spec.kind.as_str(),
            expected: SlotKind::Noncategorical.as_str(),
        });
    }
    let (start_logits, end_logits) = scorer.span_logits(slot);
    let start = argmax(&start_logits);
    let end = argmax(&end_logits);
    let text = if end < start {
        String::new()
    } else {
        scorer.span_text(start, end).unwrap_or_default()
    };
    Ok(SpanPrediction { start, end, text })
}

fn predict_value<S: TurnScorer + ?Sized>(
    scorer: &mut S,
    schema: &Schema,
    slot: SlotId,
    pred: &mut TurnPrediction,
) -> Result<()> {
    let name = schema.slot(slot).name.clone();
    if schema.slot(slot).is_categorical() {
        let v = predict_categorical(scorer, schema, slot)?;
        pred.categorical.insert(name, v);
    } else {
        let span = predict_span(scorer, schema, slot)?;
        pred.spans.insert(name, span);
    }
    Ok(())
}

/// Full prediction for one turn: domains, statuses, then values for the
/// slots predicted active.
pub fn predict_turn<S: TurnScorer + ?Sized>(scorer: &mut S, schema: &Schema, mode: StatusMode) -> Result<TurnPrediction> {
    let (domain_probs, domain_active) = predict_domains(scorer);
    let statuses = predict_statuses(scorer, schema, &domain_active, mode);
    let mut pred = TurnPrediction {
        domain_probs,
        domain_active,
        ..TurnPrediction::default()
    };
    for (s, &status) in statuses.iter().enumerate() {
        pred.statuses.insert(schema.slot(s).name.clone(), status);
        if status == SlotStatus::Active {
            predict_value(scorer, schema, s, &mut pred)?;
        }
    }
    Ok(pred)
}

/// Replaces predicted statuses by gold ones. Values of slots that were
/// already active are kept; slots that newly become active get their value
/// heads run; values of slots no longer active are dropped.
pub fn set_oracle_statuses<S: TurnScorer + ?Sized>(
    pred: &TurnPrediction,
    gold: &BeliefState,
    schema: &Schema,
    scorer: &mut S,
) -> Result<TurnPrediction> {
    let mut out = TurnPrediction {
        domain_probs: pred.domain_probs.clone(),
        domain_active: pred.domain_active.clone(),
        ..TurnPrediction::default()
    };
    for (s, spec) in schema.slots().iter().enumerate() {
        let status = gold.status(&spec.name);
        out.statuses.insert(spec.name.clone(), status);
        if status != SlotStatus::Active {
            continue;
        }
        if pred.status(&spec.name) == SlotStatus::Active {
            if let Some(v) = pred.categorical.get(&spec.name) {
                out.categorical.insert(spec.name.clone(), v.clone());
                continue;
            }
            if let Some(v) = pred.spans.get(&spec.name) {
                out.spans.insert(spec.name.clone(), v.clone());
                continue;
            }
        }
        predict_value(scorer, schema, s, &mut out)?;
    }
    Ok(out)
}

/// [`TurnScorer`] backed by the neural model for one dialogue context.
pub struct NeuralScorer<'a> {
    model: &'a DstModel,
    tape: Tape<'a>,
    ctx: HeadContext,
    slots: Var,
    values: Var,
    input: ContextInput,
    turns: &'a [Turn],
}

impl<'a> NeuralScorer<'a> {
    pub fn new(model: &'a DstModel, encoding: &SchemaEncoding, turns: &'a [Turn]) -> Result<Self> {
        let input = build_context(&model.tokenizer, turns, &model.config.encoder)?;
        let mut tape = Tape::new(&model.params);
        let out = forward(&mut tape, &model.encoder, &model.config.encoder, &input.ids, None);
        let slots = tape.input(encoding.slots.clone());
        let values = tape.input(encoding.values.clone());
        Ok(NeuralScorer {
            model,
            tape,
            ctx: HeadContext::new(out.sequence, out.pooled),
            slots,
            values,
            input,
            turns,
        })
    }

    pub fn input(&self) -> &ContextInput {
        &self.input
    }
}

fn row_vec(m: &Matrix) -> Vec<f64> {
    m.iter().copied().collect()
}

impl TurnScorer for NeuralScorer<'_> {
    fn domain_logits(&mut self) -> Vec<f64> {
        let v = heads::domain_logits(&mut self.tape, &self.model.heads, &mut self.ctx);
        row_vec(self.tape.value(v))
    }

    fn status_logits(&mut self, slots: &[SlotId]) -> Vec<[f64; 3]> {
        let rows = self.tape.gather_rows(self.slots, slots.to_vec());
        let v = heads::status_logits(&mut self.tape, &self.model.heads, &mut self.ctx, rows);
        self.tape
            .value(v)
            .rows()
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect()
    }

    fn candidate_scores(&mut self, slot: SlotId) -> Vec<f64> {
        let row = self.tape.gather_rows(self.slots, vec![slot]);
        let vals = self
            .tape
            .gather_rows(self.values, self.model.layout.value_index[slot].clone());
        let v = heads::candidate_scores(&mut self.tape, &self.model.heads, &mut self.ctx, row, vals);
        row_vec(self.tape.value(v))
    }

    fn span_logits(&mut self, slot: SlotId) -> (Vec<f64>, Vec<f64>) {
        let row = self.tape.gather_rows(self.slots, vec![slot]);
        let v = heads::span_logits(&mut self.tape, &self.model.heads, &mut self.ctx, row);
        let m = self.tape.value(v);
        (m.column(0).to_vec(), m.column(1).to_vec())
    }

    fn span_text(&self, start: usize, end: usize) -> Option<String> {
        let ids = &self.input.ids;
        if is_special(ids[start]) || is_special(ids[end]) {
            return None;
        }
        let (ts, te) = (self.input.token_turn[start]?, self.input.token_turn[end]?);
        if ts == te {
            let text = &self.turns[ts].text;
            return Some(text[self.input.offsets[start].0..self.input.offsets[end].1].to_string());
        }
        Some(self.model.tokenizer.detokenize(&ids[start..=end]))
    }
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    /// Index of the gold user turn within the dialogue.
    pub turn: usize,
    pub state: BeliefState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<TurnPrediction>,
}

impl PredictionRecord {
    pub fn new(dialogue_id: &str, turn: usize, pred: TurnPrediction) -> Self {
        PredictionRecord {
            dialogue_id: dialogue_id.to_string(),
            turn,
            state: pred.state(),
            detail: Some(pred),
        }
    }
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| DstError::io(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).expect("prediction records serialize");
        writeln!(f, "{line}").map_err(|e| DstError::io(path, e))?;
    }
    f.flush().map_err(|e| DstError::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| DstError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DstError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| DstError::parse(format!("{} line {}", path.display(), i + 1), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Predictions for every gold user turn, optionally with the
/// oracle-status variant of each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusPredictions {
    pub predicted: Vec<PredictionRecord>,
    pub oracle: Option<Vec<PredictionRecord>>,
}

pub fn predict_corpus(model: &DstModel, corpus: &Corpus, with_oracle: bool, exec: Execution) -> Result<CorpusPredictions> {
    let encoding = model.encode_schema();
    let mode = model.config.status_mode;
    let per_dialogue = exec::map_ordered(exec, &corpus.dialogues, |_, d| -> Result<Vec<_>> {
        let mut out = Vec::new();
        for t in d.gold_turns() {
            let turns = &d.turns[..=t];
            let mut scorer = NeuralScorer::new(model, &encoding, turns)?;
            let pred = predict_turn(&mut scorer, &model.schema, mode)?;
            let oracle = if with_oracle {
                let gold = d.turns[t].gold_state.as_ref().expect("gold turn has a state");
                let o = set_oracle_statuses(&pred, gold, &model.schema, &mut scorer)?;
                Some(PredictionRecord::new(&d.id, t, o))
            } else {
                None
            };
            out.push((PredictionRecord::new(&d.id, t, pred), oracle));
        }
        Ok(out)
    });
    let mut result = CorpusPredictions {
        predicted: Vec::new(),
        oracle: with_oracle.then(Vec::new),
    };
    for records in per_dialogue {
        for (p, o) in records? {
            result.predicted.push(p);
            if let (Some(list), Some(o)) = (result.oracle.as_mut(), o) {
                list.push(o);
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests;
