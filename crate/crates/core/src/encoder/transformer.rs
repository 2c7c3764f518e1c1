//! Pre-LN transformer encoder with learned positional embeddings.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{Matrix, ParamId, ParamSet, Tape, Var};
use super::tokenizer::{Tokenizer, CLS, SEP, SYS, USR};
use crate::corpus::{Speaker, Turn};
use crate::error::{DstError, Result};
use crate::rng::StreamRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub max_sequence_length: usize,
    /// Oldest utterances beyond this count are dropped before tokenization.
    pub max_context_turns: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: 128,
            num_layers: 2,
            num_heads: 4,
            vocab_size: 0,
            max_sequence_length: 256,
            max_context_turns: 25,
            dropout: 0.0,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DstError::Config(m));
        if self.hidden_dim == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return fail("hidden_dim, num_heads and num_layers must be positive".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_sequence_length < 16 {
            return fail(format!("max_sequence_length {} is below 16", self.max_sequence_length));
        }
        if self.max_context_turns == 0 {
            return fail("max_context_turns must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size == 0 {
            return Err(DstError::EmptyVocabulary);
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w_qkv: ParamId,
    pub b_qkv: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w_1: ParamId,
    pub b_1: ParamId,
    pub w_2: ParamId,
    pub b_2: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<LayerParams>,
    pub ln_f_g: ParamId,
    pub ln_f_b: ParamId,
    pub pool_w: ParamId,
    pub pool_b: ParamId,
    pub mlm_bias: ParamId,
}

pub(crate) fn normal(rng: &mut impl Rng, shape: (usize, usize), std: f64) -> Matrix {
    let dist = Normal::new(0.0, std).expect("finite std");
    Matrix::from_shape_simple_fn(shape, || dist.sample(rng))
}

impl EncoderParams {
    pub fn init(params: &mut ParamSet, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.hidden_dim;
        let std = cfg.init_std;
        let ones = || Matrix::ones((1, d));
        let zeros = |n: usize| Matrix::zeros((1, n));
        let tok_emb = params.add("enc.tok_emb", normal(rng, (cfg.vocab_size, d), std));
        let pos_emb = params.add("enc.pos_emb", normal(rng, (cfg.max_sequence_length, d), std));
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let p = |n: &str| format!("enc.layer{l}.{n}");
            layers.push(LayerParams {
                ln1_g: params.add(p("ln1_g"), ones()),
                ln1_b: params.add(p("ln1_b"), zeros(d)),
                w_qkv: params.add(p("w_qkv"), normal(rng, (d, 3 * d), std)),
                b_qkv: params.add(p("b_qkv"), zeros(3 * d)),
                w_o: params.add(p("w_o"), normal(rng, (d, d), std)),
                b_o: params.add(p("b_o"), zeros(d)),
                ln2_g: params.add(p("ln2_g"), ones()),
                ln2_b: params.add(p("ln2_b"), zeros(d)),
                w_1: params.add(p("w_1"), normal(rng, (d, 4 * d), std)),
                b_1: params.add(p("b_1"), zeros(4 * d)),
                w_2: params.add(p("w_2"), normal(rng, (4 * d, d), std)),
                b_2: params.add(p("b_2"), zeros(d)),
            });
        }
        EncoderParams {
            tok_emb,
            pos_emb,
            layers,
            ln_f_g: params.add("enc.ln_f_g", ones()),
            ln_f_b: params.add("enc.ln_f_b", zeros(d)),
            pool_w: params.add("enc.pool_w", normal(rng, (d, d), std)),
            pool_b: params.add("enc.pool_b", zeros(d)),
            mlm_bias: params.add("enc.mlm_bias", zeros(cfg.vocab_size)),
        }
    }
}

/// Token sequence for one encoder pass plus its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextInput {
    pub ids: Vec<u32>,
    /// Index (into the turns given to [`build_context`]) of the turn each
    /// token came from; `None` for the leading `[CLS]`.
    pub token_turn: Vec<Option<usize>>,
    /// Byte offsets into the originating turn's text; `(0, 0)` for markers.
    pub offsets: Vec<(usize, usize)>,
    /// First turn that survived left-truncation.
    pub first_turn: usize,
}

impl ContextInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Joins turns as `[CLS] [USR] u1 [SEP] [SYS] a1 [SEP] …`, dropping whole
/// turns from the left until the sequence fits.
pub fn build_context(tok: &Tokenizer, turns: &[Turn], cfg: &EncoderConfig) -> Result<ContextInput> {
    if turns.is_empty() {
        return Err(DstError::Config("context needs at least one turn".into()));
    }
    let cap = cfg.max_sequence_length;
    let mut budget = cap - 1;
    let mut kept: Vec<(usize, Vec<super::tokenizer::Token>)> = Vec::new();
    for (k, turn) in turns.iter().enumerate().rev() {
        if kept.len() == cfg.max_context_turns {
            break;
        }
        let toks = tok.tokenize_with_offsets(&turn.text);
        let cost = toks.len() + 2;
        if cost > budget {
            if kept.is_empty() {
                return Err(DstError::TurnTooLong { tokens: cost + 1, cap });
            }
            break;
        }
        budget -= cost;
        kept.push((k, toks));
    }
    kept.reverse();
    let mut input = ContextInput {
        ids: vec![CLS],
        token_turn: vec![None],
        offsets: vec![(0, 0)],
        first_turn: kept[0].0,
    };
    for (k, toks) in kept {
        let marker = match turns[k].speaker {
            Speaker::User => USR,
            Speaker::Agent => SYS,
        };
        input.ids.push(marker);
        input.token_turn.push(Some(k));
        input.offsets.push((0, 0));
        for t in toks {
            input.ids.push(t.id);
            input.token_turn.push(Some(k));
            input.offsets.push((t.start, t.end));
        }
        input.ids.push(SEP);
        input.token_turn.push(Some(k));
        input.offsets.push((0, 0));
    }
    Ok(input)
}

/// `[CLS] text [SEP]`, truncated on the right to fit.
pub fn build_single(tok: &Tokenizer, text: &str, cfg: &EncoderConfig) -> Vec<u32> {
    let mut ids = vec![CLS];
    ids.extend(tok.tokenize(text).into_iter().take(cfg.max_sequence_length - 2));
    ids.push(SEP);
    ids
}

/// Tape handles of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `L × d`
    pub sequence: Var,
    /// `1 × d`
    pub pooled: Var,
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut StreamRng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let shape = tape.shape(x);
            let mask = Matrix::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { 0.0 } else { keep });
            tape.mul_const(x, mask)
        }
        _ => x,
    }
}

/// Runs the encoder over `ids`. Dropout is applied only when `rng` is given.
pub fn forward(
    tape: &mut Tape,
    enc: &EncoderParams,
    cfg: &EncoderConfig,
    ids: &[u32],
    mut rng: Option<&mut StreamRng>,
) -> EncoderOutput {
    let len = ids.len();
    assert!(len > 0 && len <= cfg.max_sequence_length, "sequence length {len} out of range");
    let d = cfg.hidden_dim;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let tok = tape.param(enc.tok_emb);
    let pos = tape.param(enc.pos_emb);
    let e = tape.gather_rows(tok, ids.iter().map(|&i| i as usize).collect());
    let p = tape.slice_rows(pos, 0, len);
    let mut x = tape.add(e, p);
    x = dropout(tape, x, cfg.dropout, rng.as_deref_mut());

    for layer in &enc.layers {
        let g = tape.param(layer.ln1_g);
        let b = tape.param(layer.ln1_b);
        let h = tape.layer_norm(x, g, b);
        let w = tape.param(layer.w_qkv);
        let bias = tape.param(layer.b_qkv);
        let qkv = tape.matmul(h, w);
        let qkv = tape.add_row(qkv, bias);
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for hd in 0..cfg.num_heads {
            let q = tape.slice_cols(qkv, hd * dh, dh);
            let k = tape.slice_cols(qkv, d + hd * dh, dh);
            let v = tape.slice_cols(qkv, 2 * d + hd * dh, dh);
            let s = tape.matmul_t(q, k);
            let s = tape.scale(s, scale);
            let a = tape.softmax_rows(s);
            heads.push(tape.matmul(a, v));
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        let w = tape.param(layer.w_o);
        let bias = tape.param(layer.b_o);
        let o = tape.matmul(cat, w);
        let o = tape.add_row(o, bias);
        let o = dropout(tape, o, cfg.dropout, rng.as_deref_mut());
        x = tape.add(x, o);

        let g = tape.param(layer.ln2_g);
        let b = tape.param(layer.ln2_b);
        let h = tape.layer_norm(x, g, b);
        let w1 = tape.param(layer.w_1);
        let b1 = tape.param(layer.b_1);
        let f = tape.matmul(h, w1);
        let f = tape.add_row(f, b1);
        let f = tape.gelu(f);
        let w2 = tape.param(layer.w_2);
        let b2 = tape.param(layer.b_2);
        let f = tape.matmul(f, w2);
        let f = tape.add_row(f, b2);
        let f = dropout(tape, f, cfg.dropout, rng.as_deref_mut());
        x = tape.add(x, f);
    }
    let g = tape.param(enc.ln_f_g);
    let b = tape.param(enc.ln_f_b);
    let sequence = tape.layer_norm(x, g, b);
    let cls = tape.slice_rows(sequence, 0, 1);
    let w = tape.param(enc.pool_w);
    let bias = tape.param(enc.pool_b);
    let pooled = tape.matmul(cls, w);
    let pooled = tape.add_row(pooled, bias);
    let pooled = tape.tanh(pooled);
    EncoderOutput { sequence, pooled }
}

/// Plain-value result of encoding a dialogue context.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEncoding {
    /// `1 × d`
    pub pooled: Matrix,
    /// `L × d`
    pub sequence: Matrix,
    pub length: usize,
    pub token_turn_map: Vec<Option<usize>>,
}

/// Minimal encoder bundle: configuration, vocabulary and parameters.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamSet,
    pub ids: EncoderParams,
}

impl Encoder {
    pub fn new(config: EncoderConfig, tokenizer: Tokenizer, rng: &mut impl Rng) -> Result<Self> {
        let config = EncoderConfig {
            vocab_size: tokenizer.vocab_size(),
            ..config
        };
        config.validate()?;
        let mut params = ParamSet::default();
        let ids = EncoderParams::init(&mut params, &config, rng);
        Ok(Encoder {
            config,
            tokenizer,
            params,
            ids,
        })
    }

    pub fn encode_context(&self, turns: &[Turn]) -> Result<ContextEncoding> {
        let input = build_context(&self.tokenizer, turns, &self.config)?;
        let mut tape = Tape::new(&self.params);
        let out = forward(&mut tape, &self.ids, &self.config, &input.ids, None);
        Ok(ContextEncoding {
            pooled: tape.value(out.pooled).clone(),
            sequence: tape.value(out.sequence).clone(),
            length: input.len(),
            token_turn_map: input.token_turn,
        })
    }

    pub fn encode_slot(&self, name: &str) -> Matrix {
        let ids = build_single(&self.tokenizer, name, &self.config);
        let mut tape = Tape::new(&self.params);
        let out = forward(&mut tape, &self.ids, &self.config, &ids, None);
        tape.value(out.pooled).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BeliefState;

    fn encoder(d: usize, cap: usize) -> Encoder {
        let tok = Tokenizer::build(["i want a cheap hotel", "sure which area", "north please"], 100);
        let cfg = EncoderConfig {
            hidden_dim: d,
            num_heads: 2,
            max_sequence_length: cap,
            ..EncoderConfig::default()
        };
        Encoder::new(cfg, tok, &mut crate::rng::seeded(1)).unwrap()
    }

    fn dialogue(n: usize) -> Vec<Turn> {
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Turn::user("i want a cheap hotel", BeliefState::default())
                } else {
                    Turn::agent("sure which area")
                }
            })
            .collect()
    }

    #[test]
    fn shapes_follow_token_count() {
        let enc = encoder(8, 64);
        let turns = vec![Turn::user("north please", BeliefState::default())];
        let out = enc.encode_context(&turns).unwrap();
        // [CLS] [USR] north please [SEP]
        assert_eq!(out.length, 5);
        assert_eq!(out.sequence.dim(), (5, 8));
        assert_eq!(out.pooled.dim(), (1, 8));
        assert_eq!(out.token_turn_map[0], None);
        assert!(out.token_turn_map[1..].iter().all(|t| *t == Some(0)));
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = encoder(8, 64);
        let turns = dialogue(3);
        assert_eq!(enc.encode_context(&turns).unwrap(), enc.encode_context(&turns).unwrap());
        assert_eq!(enc.encode_slot("hotel-name"), enc.encode_slot("hotel-name"));
    }

    #[test]
    fn long_context_drops_oldest_whole_turns() {
        let enc = encoder(8, 40);
        let turns = dialogue(25);
        let out = enc.encode_context(&turns).unwrap();
        assert!(out.length <= 40);
        let kept: Vec<usize> = out.token_turn_map.iter().flatten().copied().collect();
        let first = kept[0];
        assert!(first > 0, "oldest turns must be dropped");
        assert_eq!(*kept.last().unwrap(), 24, "latest turn is kept");
        // every kept turn is complete: marker + tokens + [SEP]
        let input = build_context(&enc.tokenizer, &turns, &enc.config).unwrap();
        for k in first..25 {
            let n = input.token_turn.iter().filter(|t| **t == Some(k)).count();
            assert_eq!(n, enc.tokenizer.tokenize(&turns[k].text).len() + 2);
        }
    }

    #[test]
    fn utterance_cap_limits_turns() {
        let enc = encoder(8, 256);
        let input = build_context(&enc.tokenizer, &dialogue(40), &enc.config).unwrap();
        assert_eq!(input.first_turn, 15);
    }

    #[test]
    fn oversized_latest_turn_is_an_error() {
        let enc = encoder(8, 16);
        let long = "i want a cheap hotel ".repeat(5);
        let turns = vec![Turn::user(&long, BeliefState::default())];
        assert!(matches!(enc.encode_context(&turns), Err(DstError::TurnTooLong { .. })));
    }

    #[test]
    fn config_validation() {
        let bad = EncoderConfig {
            hidden_dim: 10,
            num_heads: 4,
            vocab_size: 10,
            ..EncoderConfig::default()
        };
        assert!(bad.validate().is_err());
        let short = EncoderConfig {
            max_sequence_length: 8,
            vocab_size: 10,
            ..EncoderConfig::default()
        };
        assert!(short.validate().is_err());
    }
}
