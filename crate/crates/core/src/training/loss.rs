//! DST loss terms and their assembly on the tape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefState, SlotStatus};
use crate::dst_model::StatusMode;
use crate::encoder::tensor::{Matrix, ParamSet, Tape, Var};
use crate::error::{DstError, Result};
use crate::schema::{Schema, SlotId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub domain: f64,
    pub status: f64,
    pub categorical: f64,
    pub span: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            domain: 1.0,
            status: 1.0,
            categorical: 1.0,
            span: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.domain, self.status, self.categorical, self.span];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DstError::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Per-component losses. `dst_total` is the weighted sum of the four DST
/// terms and `total = dst_total + mlm_weight · mlm`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub dst_total: f64,
    pub domain_bce: f64,
    pub status_ce: f64,
    pub categorical_ce: f64,
    pub span_ce: f64,
    pub mlm: f64,
}

impl LossBreakdown {
    pub fn add_scaled(&mut self, other: &LossBreakdown, c: f64) {
        self.total += c * other.total;
        self.dst_total += c * other.dst_total;
        self.domain_bce += c * other.domain_bce;
        self.status_ce += c * other.status_ce;
        self.categorical_ce += c * other.categorical_ce;
        self.span_ce += c * other.span_ce;
        self.mlm += c * other.mlm;
    }

    pub fn components(&self) -> [f64; 5] {
        [self.domain_bce, self.status_ce, self.categorical_ce, self.span_ce, self.mlm]
    }
}

/// Supervision targets for one gold user turn.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TurnTargets {
    /// 1.0 for gold-active domains.
    pub domains: Vec<f64>,
    /// (slot, status class) for every supervised status instance.
    pub statuses: Vec<(SlotId, usize)>,
    /// (slot, gold candidate index) for gold-active categorical slots.
    pub categorical: Vec<(SlotId, usize)>,
    /// (slot, start, end) for gold-active non-categorical slots.
    pub spans: Vec<(SlotId, usize, usize)>,
    /// Gold-active span slots whose value was not found in the context.
    pub skipped_spans: usize,
}

impl TurnTargets {
    /// Hierarchical mode supervises statuses only for slots of gold-active
    /// domains (teacher forcing); flat mode supervises every slot.
    pub fn from_gold(
        schema: &Schema,
        gold: &BeliefState,
        mode: StatusMode,
        mut locate: impl FnMut(&str) -> Option<(usize, usize)>,
    ) -> Result<Self> {
        let active = schema.active_domains(gold);
        let mut t = TurnTargets {
            domains: active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect(),
            ..TurnTargets::default()
        };
        for (id, spec) in schema.slots().iter().enumerate() {
            let status = gold.status(&spec.name);
            if mode == StatusMode::Flat || active[spec.domain] {
                t.statuses.push((id, status.index()));
            }
            if status != SlotStatus::Active {
                continue;
            }
            let value = gold.value(&spec.name).unwrap_or("");
            if spec.is_categorical() {
                let idx = spec.candidate_values.iter().position(|c| c == value).ok_or_else(|| {
                    DstError::Config(format!("gold value {value:?} is not a candidate of {}", spec.name))
                })?;
                t.categorical.push((id, idx));
            } else {
                match locate(value) {
                    Some((s, e)) => t.spans.push((id, s, e)),
                    None => t.skipped_spans += 1,
                }
            }
        }
        Ok(t)
    }
}

/// Logit handles aligned with a [`TurnTargets`]: `status` row `i` belongs to
/// `status_rows[i]`-th row selection, categorical and span entries follow
/// the target order.
pub struct LogitVars {
    pub domain: Var,
    pub status: Option<Var>,
    /// Row of `status` holding each status target.
    pub status_rows: Vec<usize>,
    pub categorical: Vec<Var>,
    pub spans: Vec<Var>,
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Var {
    if terms.is_empty() {
        return tape.constant_scalar(0.0);
    }
    let w = 1.0 / terms.len() as f64;
    let weighted: Vec<(Var, f64)> = terms.iter().map(|&v| (v, w)).collect();
    tape.weighted_sum(&weighted)
}

/// Builds the weighted DST loss. Each component is a mean over its own
/// instances; components with no instances contribute zero.
pub fn assemble_dst_loss(
    tape: &mut Tape,
    logits: &LogitVars,
    targets: &TurnTargets,
    weights: &LossWeights,
    inactive_weight: f64,
) -> (Var, LossBreakdown) {
    let domain = tape.bce_with_logits(
        logits.domain,
        Matrix::from_shape_vec((1, targets.domains.len()), targets.domains.clone()).unwrap(),
    );
    let status = match logits.status {
        Some(s) if !targets.statuses.is_empty() => {
            let rows = tape.gather_rows(s, logits.status_rows.clone());
            let classes: Vec<usize> = targets.statuses.iter().map(|t| t.1).collect();
            let w = classes
                .iter()
                .map(|&c| if c == SlotStatus::Inactive.index() { inactive_weight } else { 1.0 })
                .collect();
            tape.cross_entropy(rows, classes, Some(w))
        }
        _ => tape.constant_scalar(0.0),
    };
    let cat_terms: Vec<Var> = logits
        .categorical
        .iter()
        .zip(&targets.categorical)
        .map(|(&l, &(_, gold))| tape.cross_entropy(l, vec![gold], None))
        .collect();
    let categorical = mean_of(tape, &cat_terms);
    let span_terms: Vec<Var> = logits
        .spans
        .iter()
        .zip(&targets.spans)
        .map(|(&l, &(_, s, e))| {
            let start = tape.slice_cols(l, 0, 1);
            let start = tape.transpose(start);
            let end = tape.slice_cols(l, 1, 1);
            let end = tape.transpose(end);
            let a = tape.cross_entropy(start, vec![s], None);
            let b = tape.cross_entropy(end, vec![e], None);
            tape.weighted_sum(&[(a, 1.0), (b, 1.0)])
        })
        .collect();
    let span = mean_of(tape, &span_terms);
    let total = tape.weighted_sum(&[
        (domain, weights.domain),
        (status, weights.status),
        (categorical, weights.categorical),
        (span, weights.span),
    ]);
    let breakdown = LossBreakdown {
        total: tape.scalar(total),
        dst_total: tape.scalar(total),
        domain_bce: tape.scalar(domain),
        status_ce: tape.scalar(status),
        categorical_ce: tape.scalar(categorical),
        span_ce: tape.scalar(span),
        mlm: 0.0,
    };
    (total, breakdown)
}

/// Plain-value logits of one turn.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TurnLogits {
    pub domain: Vec<f64>,
    /// Per slot id, over (active, dontcare, inactive).
    pub status: Vec<[f64; 3]>,
    pub categorical: BTreeMap<SlotId, Vec<f64>>,
    pub spans: BTreeMap<SlotId, (Vec<f64>, Vec<f64>)>,
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
}

/// Evaluates the DST loss on given logits; returns the breakdown and the
/// gradient with respect to the per-slot status logits.
pub fn dst_loss_with_status_grad(
    logits: &TurnLogits,
    targets: &TurnTargets,
    weights: &LossWeights,
    inactive_weight: f64,
) -> (LossBreakdown, Matrix) {
    let params = ParamSet::default();
    let mut tape = Tape::new(&params);
    let domain = tape.input(row(&logits.domain));
    let status_m = Matrix::from_shape_fn((logits.status.len(), 3), |(r, c)| logits.status[r][c]);
    let status = tape.input(status_m);
    let categorical = targets
        .categorical
        .iter()
        .map(|(s, _)| tape.input(row(&logits.categorical[s])))
        .collect();
    let spans = targets
        .spans
        .iter()
        .map(|(s, _, _)| {
            let (a, b) = &logits.spans[s];
            let m = Matrix::from_shape_fn((a.len(), 2), |(r, c)| if c == 0 { a[r] } else { b[r] });
            tape.input(m)
        })
        .collect();
    let vars = LogitVars {
        domain,
        status: Some(status),
        status_rows: targets.statuses.iter().map(|t| t.0).collect(),
        categorical,
        spans,
    };
    let (total, breakdown) = assemble_dst_loss(&mut tape, &vars, targets, weights, inactive_weight);
    let back = tape.backward(total);
    let grad = back
        .grad(status)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros((logits.status.len(), 3)));
    (breakdown, grad)
}

pub fn dst_loss(logits: &TurnLogits, targets: &TurnTargets, weights: &LossWeights) -> LossBreakdown {
    dst_loss_with_status_grad(logits, targets, weights, 1.0).0
}
