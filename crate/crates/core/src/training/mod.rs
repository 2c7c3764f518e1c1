//! Joint DST + continued-MLM fine-tuning.
//!
//! Each step runs in two stages. Slot names and candidate values are
//! encoded once on a shared tape; per-example tapes take those encodings as
//! inputs, run in parallel, and return parameter gradients together with
//! gradients for the encodings. The latter are summed in example order and
//! pushed back through the shared tape, so the result is independent of how
//! the per-example work was scheduled.

pub mod loss;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{target_utterances, BeliefState, Corpus, Dialogue, Turn};
use crate::dst_model::heads::{self, HeadContext};
use crate::dst_model::{stack_rows, DstModel, ModelConfig, SchemaEncoding, StatusMode};
use crate::encoder::mlm::{mask_for_mlm, mlm_loss, MaskedInput};
use crate::encoder::tensor::{Gradients, Matrix, ParamSet, Tape};
use crate::encoder::tokenizer::{find_last, Tokenizer};
use crate::encoder::transformer::{build_context, build_single, forward, EncoderConfig};
use crate::error::{DstError, Result};
use crate::exec::{self, Execution};
use crate::perturbation::{perturb_batch, InsertionPool, InsertionSource, PerturbationConfig};
use crate::rng::{self, StreamRng};

pub use crate::dst_model::set_oracle_statuses;
pub use loss::{assemble_dst_loss, dst_loss, LogitVars, LossBreakdown, LossWeights, TurnLogits, TurnTargets};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlmMode {
    #[default]
    Off,
    TargetOnly,
    TargetPlusAuxiliary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub status_mode: StatusMode,
    pub learning_rate: f64,
    /// Linear learning-rate warm-up length in steps.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub mlm_mode: MlmMode,
    pub mlm_weight: f64,
    pub mlm_prob: f64,
    /// MLM-only steps on target and auxiliary utterances before fine-tuning.
    pub mlm_warmup_steps: usize,
    pub perturbation: Option<PerturbationConfig>,
    pub loss_weights: LossWeights,
    /// Weight of inactive-status instances in the status loss.
    pub inactive_weight: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub max_vocab_words: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderConfig::default(),
            status_mode: StatusMode::Hierarchical,
            learning_rate: 1e-3,
            warmup_steps: 50,
            batch_size: 16,
            steps: 500,
            seed: 0,
            mlm_mode: MlmMode::Off,
            mlm_weight: 1.0,
            mlm_prob: 0.15,
            mlm_warmup_steps: 0,
            perturbation: None,
            loss_weights: LossWeights::default(),
            inactive_weight: 1.0,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            clip_norm: 1.0,
            checkpoint_every: 0,
            max_vocab_words: 8000,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DstError::Config(m));
        self.loss_weights.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.mlm_weight.is_finite() && self.mlm_weight >= 0.0) || !(self.inactive_weight >= 0.0) {
            return fail("mlm_weight and inactive_weight must be non-negative".into());
        }
        if self.mlm_mode != MlmMode::Off && !(self.mlm_prob > 0.0 && self.mlm_prob < 1.0) {
            return fail(format!("mlm_prob {} outside (0, 1)", self.mlm_prob));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return fail(format!("rms_decay {} outside [0, 1)", self.rms_decay));
        }
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            status_mode: self.status_mode,
        }
    }

    fn mlm_active(&self) -> bool {
        self.mlm_mode != MlmMode::Off && self.mlm_weight > 0.0
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }
}

/// One training instance: a dialogue prefix ending at a gold user turn
/// and/or a masked utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub dst: Option<(Vec<Turn>, BeliefState)>,
    pub mlm: Option<MaskedInput>,
    pub dropout_seed: u64,
}

/// Gradients and losses of one batch.
#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub grads: Gradients,
    pub losses: LossBreakdown,
    pub skipped_spans: usize,
}

struct ExampleOutput {
    grads: Gradients,
    slot_grad: Option<Matrix>,
    value_grad: Option<Matrix>,
    losses: LossBreakdown,
    skipped_spans: usize,
}

fn compute_example(
    model: &DstModel,
    encoding: &SchemaEncoding,
    ex: &Example,
    cfg: &TrainConfig,
    scale: f64,
    need_grad: bool,
) -> Result<ExampleOutput> {
    let enc_cfg = &model.config.encoder;
    let mut tape = Tape::new(&model.params);
    let mut drop_rng: Option<StreamRng> = (enc_cfg.dropout > 0.0).then(|| rng::seeded(ex.dropout_seed));
    let mut losses = LossBreakdown::default();
    let mut terms = Vec::new();
    let mut skipped_spans = 0;
    let mut leaves = None;

    if let Some((turns, gold)) = &ex.dst {
        let input = build_context(&model.tokenizer, turns, enc_cfg)?;
        let out = forward(&mut tape, &model.encoder, enc_cfg, &input.ids, drop_rng.as_mut());
        let slots = tape.input(encoding.slots.clone());
        let values = tape.input(encoding.values.clone());
        leaves = Some((slots, values));
        let targets = TurnTargets::from_gold(&model.schema, gold, model.config.status_mode, |v| {
            let needle = model.tokenizer.tokenize(v);
            find_last(&input.ids, &needle).map(|s| (s, s + needle.len() - 1))
        })?;
        skipped_spans = targets.skipped_spans;
        let mut ctx = HeadContext::new(out.sequence, out.pooled);
        let domain = heads::domain_logits(&mut tape, &model.heads, &mut ctx);
        let status = (!targets.statuses.is_empty()).then(|| {
            let rows = tape.gather_rows(slots, targets.statuses.iter().map(|t| t.0).collect());
            heads::status_logits(&mut tape, &model.heads, &mut ctx, rows)
        });
        let categorical = targets
            .categorical
            .iter()
            .map(|&(s, _)| {
                let row = tape.gather_rows(slots, vec![s]);
                let vals = tape.gather_rows(values, model.layout.value_index[s].clone());
                heads::candidate_scores(&mut tape, &model.heads, &mut ctx, row, vals)
            })
            .collect();
        let spans = targets
            .spans
            .iter()
            .map(|&(s, _, _)| {
                let row = tape.gather_rows(slots, vec![s]);
                heads::span_logits(&mut tape, &model.heads, &mut ctx, row)
            })
            .collect();
        let vars = LogitVars {
            domain,
            status,
            status_rows: (0..targets.statuses.len()).collect(),
            categorical,
            spans,
        };
        let (dst, breakdown) = assemble_dst_loss(&mut tape, &vars, &targets, &cfg.loss_weights, cfg.inactive_weight);
        losses = breakdown;
        terms.push((dst, 1.0));
    }
    if let Some(m) = ex.mlm.as_ref().filter(|_| cfg.mlm_active()) {
        let out = forward(&mut tape, &model.encoder, enc_cfg, &m.ids, drop_rng.as_mut());
        let l = mlm_loss(&mut tape, &model.encoder, out.sequence, &m.positions, &m.targets);
        losses.mlm = tape.scalar(l);
        terms.push((l, cfg.mlm_weight));
    }
    losses.total = losses.dst_total + cfg.mlm_weight * losses.mlm;
    let mut result = ExampleOutput {
        grads: Gradients::new(model.params.len()),
        slot_grad: None,
        value_grad: None,
        losses,
        skipped_spans,
    };
    if need_grad && !terms.is_empty() {
        let total = tape.weighted_sum(&terms);
        let back = tape.backward_from(vec![(total, Matrix::from_elem((1, 1), scale))]);
        if let Some((s, v)) = leaves {
            result.slot_grad = back.grad(s).cloned();
            result.value_grad = back.grad(v).cloned();
        }
        result.grads = back.params;
    }
    Ok(result)
}

/// Mean loss and its gradient over `examples`.
pub fn compute_batch(model: &DstModel, examples: &[Example], cfg: &TrainConfig, need_grad: bool) -> Result<BatchOutput> {
    let mut shared = Tape::new(&model.params);
    let vars = model.schema_forward(&mut shared);
    let d = model.hidden_dim();
    let encoding = SchemaEncoding {
        slots: stack_rows(&shared, &vars.slots, d),
        values: stack_rows(&shared, &vars.values, d),
    };
    let scale = 1.0 / examples.len().max(1) as f64;
    let outputs = exec::map_ordered(cfg.execution, examples, |_, ex| {
        compute_example(model, &encoding, ex, cfg, scale, need_grad)
    });
    let mut grads = Gradients::new(model.params.len());
    let mut slot_grad = Matrix::zeros(encoding.slots.dim());
    let mut value_grad = Matrix::zeros(encoding.values.dim());
    let mut losses = LossBreakdown::default();
    let mut skipped_spans = 0;
    for out in outputs {
        let out = out?;
        grads.merge(&out.grads);
        if let Some(g) = &out.slot_grad {
            slot_grad += g;
        }
        if let Some(g) = &out.value_grad {
            value_grad += g;
        }
        losses.add_scaled(&out.losses, scale);
        skipped_spans += out.skipped_spans;
    }
    if need_grad {
        let mut seeds = Vec::new();
        for (i, v) in vars.slots.iter().enumerate() {
            seeds.push((*v, slot_grad.row(i).to_owned().insert_axis(ndarray::Axis(0))));
        }
        for (i, v) in vars.values.iter().enumerate() {
            seeds.push((*v, value_grad.row(i).to_owned().insert_axis(ndarray::Axis(0))));
        }
        if !seeds.is_empty() {
            grads.merge(&shared.backward_from(seeds).params);
        }
    }
    Ok(BatchOutput {
        grads,
        losses,
        skipped_spans,
    })
}

/// RMSProp without momentum.
#[derive(Clone, Debug)]
pub struct RmsProp {
    decay: f64,
    eps: f64,
    square: Vec<Matrix>,
}

impl RmsProp {
    pub fn new(params: &ParamSet, decay: f64, eps: f64) -> Self {
        RmsProp {
            decay,
            eps,
            square: params.ids().map(|id| Matrix::zeros(params.get(id).dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) {
        for (id, g) in grads.iter() {
            let sq = &mut self.square[id.0];
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(sq).and(g).for_each(|p, s, &g| {
                *s = self.decay * *s + (1.0 - self.decay) * g * g;
                *p -= lr * g / (s.sqrt() + self.eps);
            });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MlmWarmup,
    Finetune,
}

/// One metrics-log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub phase: Phase,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub grad_norm: f64,
    pub skipped_spans: usize,
}

pub struct TrainOutcome {
    pub model: DstModel,
    pub metrics: Vec<StepMetrics>,
    pub skipped_spans: usize,
    /// Checkpoint directories written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// Vocabulary over corpus and auxiliary text plus every schema string.
pub fn build_tokenizer(corpus: &Corpus, aux: &[String], max_words: usize) -> Tokenizer {
    let mut texts: Vec<&str> = Vec::new();
    for d in &corpus.dialogues {
        texts.extend(d.turns.iter().map(|t| t.text.as_str()));
    }
    texts.extend(aux.iter().map(String::as_str));
    for s in corpus.schema.slots() {
        texts.push(&s.name);
        texts.extend(s.candidate_values.iter().map(String::as_str));
    }
    Tokenizer::build(texts, max_words)
}

/// Deterministic source of training batches.
pub struct BatchSampler<'a> {
    corpus: &'a Corpus,
    aux: &'a [String],
    target_pool: Vec<String>,
    vocab_words: Vec<String>,
    gold: Vec<(usize, usize)>,
    batch_rng: StreamRng,
    perturb_rng: StreamRng,
    mask_rng: StreamRng,
    dropout_root: u64,
    counter: u64,
}

impl<'a> BatchSampler<'a> {
    pub fn new(corpus: &'a Corpus, aux: &'a [String], tokenizer: &Tokenizer, seed: u64) -> Result<Self> {
        let gold: Vec<(usize, usize)> = corpus
            .dialogues
            .iter()
            .enumerate()
            .flat_map(|(i, d)| d.gold_turns().map(move |t| (i, t)))
            .collect();
        if gold.is_empty() {
            return Err(DstError::Config("training corpus has no gold user turns".into()));
        }
        Ok(BatchSampler {
            corpus,
            aux,
            target_pool: target_utterances(corpus),
            vocab_words: tokenizer.words(),
            gold,
            batch_rng: rng::stream(seed, "batches"),
            perturb_rng: rng::stream(seed, "perturbation"),
            mask_rng: rng::stream(seed, "masking"),
            dropout_root: rng::derive_seed(seed, "dropout"),
            counter: 0,
        })
    }

    fn next_dropout_seed(&mut self) -> u64 {
        self.counter += 1;
        rng::derive_indexed(self.dropout_root, self.counter)
    }

    fn masked(&mut self, text: &str, model: &DstModel, cfg: &TrainConfig) -> MaskedInput {
        let ids = build_single(&model.tokenizer, text, &model.config.encoder);
        mask_for_mlm(&ids, cfg.mlm_prob, model.tokenizer.vocab_size(), &mut self.mask_rng)
    }

    /// A fine-tuning batch: prefixes ending at uniformly drawn gold turns,
    /// optionally perturbed, with MLM inputs alternating between target and
    /// auxiliary utterances.
    pub fn dst_batch(&mut self, model: &DstModel, cfg: &TrainConfig) -> Result<Vec<Example>> {
        let picks: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|_| self.gold[self.batch_rng.gen_range(0..self.gold.len())])
            .collect();
        let prefixes: Vec<Dialogue> = picks
            .iter()
            .map(|&(d, t)| {
                let src = &self.corpus.dialogues[d];
                Dialogue {
                    id: src.id.clone(),
                    turns: src.turns[..=t].to_vec(),
                }
            })
            .collect();
        let dialogues = match &cfg.perturbation {
            Some(p) if p.probability > 0.0 => {
                let utterances: &[String] = match p.source {
                    InsertionSource::Auxiliary => self.aux,
                    InsertionSource::Target => &self.target_pool,
                    InsertionSource::RandomWords => &[],
                };
                let pool = InsertionPool {
                    utterances,
                    vocab: &self.vocab_words,
                };
                perturb_batch(&prefixes, p, &pool, &mut self.perturb_rng, cfg.execution)?
            }
            _ => prefixes,
        };
        let mut out = Vec::with_capacity(dialogues.len());
        for (i, d) in dialogues.into_iter().enumerate() {
            let gold = d.turns.last().and_then(|t| t.gold_state.clone()).expect("prefix ends at a gold turn");
            let mlm = if cfg.mlm_active() {
                let use_aux = cfg.mlm_mode == MlmMode::TargetPlusAuxiliary && i % 2 == 1 && !self.aux.is_empty();
                let text = if use_aux {
                    self.aux[self.mask_rng.gen_range(0..self.aux.len())].clone()
                } else {
                    let originals: Vec<&Turn> = d.original_turns().collect();
                    originals[self.mask_rng.gen_range(0..originals.len())].text.clone()
                };
                Some(self.masked(&text, model, cfg))
            } else {
                None
            };
            out.push(Example {
                dst: Some((d.turns, gold)),
                mlm,
                dropout_seed: self.next_dropout_seed(),
            });
        }
        Ok(out)
    }

    /// An MLM-only batch over target and auxiliary utterances.
    pub fn mlm_batch(&mut self, model: &DstModel, cfg: &TrainConfig) -> Vec<Example> {
        let n_target = self.target_pool.len();
        let n = n_target + self.aux.len();
        (0..cfg.batch_size)
            .map(|_| {
                let k = self.mask_rng.gen_range(0..n);
                let text = if k < n_target {
                    self.target_pool[k].clone()
                } else {
                    self.aux[k - n_target].clone()
                };
                Example {
                    dst: None,
                    mlm: Some(self.masked(&text, model, cfg)),
                    dropout_seed: self.next_dropout_seed(),
                }
            })
            .collect()
    }
}

fn clip(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Trains a fresh model. When `run_dir` is given, writes `metrics.jsonl`
/// and checkpoints under `step-{n}/` there.
pub fn train(corpus: &Corpus, aux: &[String], cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.dialogues.is_empty() {
        return Err(DstError::Config("training corpus is empty".into()));
    }
    let tokenizer = build_tokenizer(corpus, aux, cfg.max_vocab_words);
    let mut init_rng = rng::stream(cfg.seed, "init");
    let mut model = DstModel::new(cfg.model_config(), tokenizer, corpus.schema.clone(), &mut init_rng)?;
    let mut sampler = BatchSampler::new(corpus, aux, &model.tokenizer, cfg.seed)?;
    let mut optimizer = RmsProp::new(&model.params, cfg.rms_decay, cfg.rms_eps);

    let mut log = match run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| DstError::io(dir, e))?;
            let path = dir.join("metrics.jsonl");
            Some((std::fs::File::create(&path).map_err(|e| DstError::io(&path, e))?, path))
        }
        None => None,
    };
    let mut outcome_metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut skipped_total = 0;
    let warmup = if cfg.mlm_mode == MlmMode::Off { 0 } else { cfg.mlm_warmup_steps };
    let total_steps = warmup + cfg.steps;

    for step in 0..total_steps {
        let (phase, examples) = if step < warmup {
            (Phase::MlmWarmup, sampler.mlm_batch(&model, cfg))
        } else {
            (Phase::Finetune, sampler.dst_batch(&model, cfg)?)
        };
        let mut batch = compute_batch(&model, &examples, cfg, true)?;
        let value = batch.losses.total;
        let grad_norm = clip(&mut batch.grads, cfg.clip_norm);
        if !value.is_finite() || !grad_norm.is_finite() {
            return Err(DstError::Diverged {
                step: step + 1,
                value: if value.is_finite() { grad_norm } else { value },
            });
        }
        let lr = cfg.lr_at(step);
        optimizer.step(&mut model.params, &batch.grads, lr);
        skipped_total += batch.skipped_spans;
        let metrics = StepMetrics {
            step: step + 1,
            phase,
            lr,
            losses: batch.losses,
            grad_norm,
            skipped_spans: batch.skipped_spans,
        };
        if let Some((f, path)) = log.as_mut() {
            let line = serde_json::to_string(&metrics).expect("metrics serialize");
            writeln!(f, "{line}").map_err(|e| DstError::io(&*path, e))?;
        }
        if (step + 1) % 50 == 0 || step + 1 == total_steps {
            log::info!(
                "step {}/{} loss {:.4} (dst {:.4}, mlm {:.4})",
                step + 1,
                total_steps,
                value,
                batch.losses.dst_total,
                batch.losses.mlm
            );
        }
        outcome_metrics.push(metrics);
        let n = step + 1;
        let due = (cfg.checkpoint_every > 0 && n % cfg.checkpoint_every == 0) || n == total_steps;
        if let (Some(dir), true) = (run_dir, due) {
            let ckpt = dir.join(format!("step-{n}"));
            model.save(&ckpt)?;
            checkpoints.push(ckpt);
        }
    }
    Ok(TrainOutcome {
        model,
        metrics: outcome_metrics,
        skipped_spans: skipped_total,
        checkpoints,
    })
}

/// Means of consecutive windows, used to check loss trends.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests;
