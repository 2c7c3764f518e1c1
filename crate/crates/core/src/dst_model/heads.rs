//! Prediction heads as tape operations.
//!
//! All attention functions are single-head scaled dot-product attention
//! with learned query/key/value projections. Keys and values of the
//! context are computed once per head and reused for every slot query.

use rand::Rng;

use crate::encoder::tensor::{Matrix, ParamId, ParamSet, Tape, Var};
use crate::encoder::transformer::normal;

#[derive(Clone, Debug)]
pub struct AttnParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl AttnParams {
    fn init(params: &mut ParamSet, name: &str, d: usize, std: f64, rng: &mut impl Rng) -> Self {
        AttnParams {
            wq: params.add(format!("{name}.wq"), normal(rng, (d, d), std)),
            wk: params.add(format!("{name}.wk"), normal(rng, (d, d), std)),
            wv: params.add(format!("{name}.wv"), normal(rng, (d, d), std)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub dom_query: ParamId,
    pub dom_attn: AttnParams,
    pub dom_w: ParamId,
    pub dom_b: ParamId,
    pub stat_attn: AttnParams,
    pub stat_w1: ParamId,
    pub stat_b1: ParamId,
    pub stat_w2: ParamId,
    pub stat_b2: ParamId,
    pub cat_attn: AttnParams,
    pub cat_w: ParamId,
    pub span_wh: ParamId,
    pub span_ws: ParamId,
    pub span_b1: ParamId,
    pub span_w2: ParamId,
    pub span_b2: ParamId,
}

impl HeadParams {
    pub fn init(params: &mut ParamSet, d: usize, num_domains: usize, std: f64, rng: &mut impl Rng) -> Self {
        HeadParams {
            dom_query: params.add("head.dom.query", normal(rng, (1, d), std)),
            dom_attn: AttnParams::init(params, "head.dom.attn", d, std, rng),
            dom_w: params.add("head.dom.w", normal(rng, (d, num_domains), std)),
            dom_b: params.add("head.dom.b", Matrix::zeros((1, num_domains))),
            stat_attn: AttnParams::init(params, "head.stat.attn", d, std, rng),
            stat_w1: params.add("head.stat.w1", normal(rng, (d, d), std)),
            stat_b1: params.add("head.stat.b1", Matrix::zeros((1, d))),
            stat_w2: params.add("head.stat.w2", normal(rng, (d, 3), std)),
            stat_b2: params.add("head.stat.b2", Matrix::zeros((1, 3))),
            cat_attn: AttnParams::init(params, "head.cat.attn", d, std, rng),
            cat_w: params.add("head.cat.w", normal(rng, (d, d), std)),
            span_wh: params.add("head.span.wh", normal(rng, (d, d), std)),
            span_ws: params.add("head.span.ws", normal(rng, (d, d), std)),
            span_b1: params.add("head.span.b1", Matrix::zeros((1, d))),
            span_w2: params.add("head.span.w2", normal(rng, (d, 2), std)),
            span_b2: params.add("head.span.b2", Matrix::zeros((1, 2))),
        }
    }
}

fn linear(tape: &mut Tape, x: Var, w: ParamId, b: ParamId) -> Var {
    let w = tape.param(w);
    let b = tape.param(b);
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

/// Lazily computed per-context quantities shared across slot queries.
pub struct HeadContext {
    pub sequence: Var,
    pub pooled: Var,
    dom_kv: Option<(Var, Var)>,
    stat_kv: Option<(Var, Var)>,
    cat_kv: Option<(Var, Var)>,
    span_h: Option<Var>,
}

impl HeadContext {
    pub fn new(sequence: Var, pooled: Var) -> Self {
        HeadContext {
            sequence,
            pooled,
            dom_kv: None,
            stat_kv: None,
            cat_kv: None,
            span_h: None,
        }
    }
}

fn keys_values(tape: &mut Tape, attn: &AttnParams, seq: Var) -> (Var, Var) {
    let wk = tape.param(attn.wk);
    let wv = tape.param(attn.wv);
    (tape.matmul(seq, wk), tape.matmul(seq, wv))
}

/// `softmax(q Wq · Kᵀ / √d) · V` for each query row.
fn attend(tape: &mut Tape, attn: &AttnParams, queries: Var, kv: (Var, Var)) -> Var {
    let d = tape.shape(queries).1;
    let wq = tape.param(attn.wq);
    let q = tape.matmul(queries, wq);
    let s = tape.matmul_t(q, kv.0);
    let s = tape.scale(s, 1.0 / (d as f64).sqrt());
    let p = tape.softmax_rows(s);
    tape.matmul(p, kv.1)
}

/// `1 × |D|` domain logits.
pub fn domain_logits(tape: &mut Tape, heads: &HeadParams, ctx: &mut HeadContext) -> Var {
    let kv = *ctx
        .dom_kv
        .get_or_insert_with(|| keys_values(tape, &heads.dom_attn, ctx.sequence));
    let q = tape.param(heads.dom_query);
    let a = attend(tape, &heads.dom_attn, q, kv);
    linear(tape, a, heads.dom_w, heads.dom_b)
}

/// `n × 3` status logits for the given slot encodings (`n × d`), columns
/// ordered active, dontcare, inactive.
pub fn status_logits(tape: &mut Tape, heads: &HeadParams, ctx: &mut HeadContext, slots: Var) -> Var {
    let kv = *ctx
        .stat_kv
        .get_or_insert_with(|| keys_values(tape, &heads.stat_attn, ctx.sequence));
    let a = attend(tape, &heads.stat_attn, slots, kv);
    let z = tape.add(slots, a);
    let h = linear(tape, z, heads.stat_w1, heads.stat_b1);
    let h = tape.gelu(h);
    linear(tape, h, heads.stat_w2, heads.stat_b2)
}

/// `1 × k` candidate scores: dot products of the projected
/// `h_u + Atten_c(h_slot, H)` with the candidate-value encodings (`k × d`).
pub fn candidate_scores(tape: &mut Tape, heads: &HeadParams, ctx: &mut HeadContext, slot: Var, values: Var) -> Var {
    let kv = *ctx
        .cat_kv
        .get_or_insert_with(|| keys_values(tape, &heads.cat_attn, ctx.sequence));
    let a = attend(tape, &heads.cat_attn, slot, kv);
    let z = tape.add(ctx.pooled, a);
    let w = tape.param(heads.cat_w);
    let z = tape.matmul(z, w);
    tape.matmul_t(z, values)
}

/// `L × 2` start/end logits from a GELU layer over `H ⊕ h_slot`.
pub fn span_logits(tape: &mut Tape, heads: &HeadParams, ctx: &mut HeadContext, slot: Var) -> Var {
    let hs = *ctx.span_h.get_or_insert_with(|| {
        let w = tape.param(heads.span_wh);
        tape.matmul(ctx.sequence, w)
    });
    let t = linear(tape, slot, heads.span_ws, heads.span_b1);
    let h = tape.add_row(hs, t);
    let h = tape.gelu(h);
    linear(tape, h, heads.span_w2, heads.span_b2)
}
