//! Masked-language-model corruption and loss.

use rand::Rng;

use super::tensor::{Tape, Var};
use super::tokenizer::{is_special, MASK, NUM_SPECIAL};
use super::transformer::EncoderParams;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskedInput {
    pub ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Selects each non-special token with probability `mask_prob`; selected
/// tokens become `[MASK]` 80% of the time, a random word 10%, and stay
/// unchanged otherwise.
pub fn mask_for_mlm(ids: &[u32], mask_prob: f64, vocab_size: usize, rng: &mut impl Rng) -> MaskedInput {
    let mut out = MaskedInput {
        ids: ids.to_vec(),
        ..MaskedInput::default()
    };
    if mask_prob <= 0.0 {
        return out;
    }
    let random_range = NUM_SPECIAL..vocab_size as u32;
    for (i, &id) in ids.iter().enumerate() {
        if is_special(id) || rng.gen::<f64>() >= mask_prob {
            continue;
        }
        out.positions.push(i);
        out.targets.push(id);
        let r: f64 = rng.gen();
        if r < 0.8 {
            out.ids[i] = MASK;
        } else if r < 0.9 && !random_range.is_empty() {
            out.ids[i] = rng.gen_range(random_range.clone());
        }
    }
    out
}

/// Mean cross-entropy of the tied-embedding output layer at the target
/// positions; a constant zero when there are no targets.
pub fn mlm_loss(tape: &mut Tape, enc: &EncoderParams, sequence: Var, positions: &[usize], targets: &[u32]) -> Var {
    if positions.is_empty() {
        return tape.constant_scalar(0.0);
    }
    let rows = tape.gather_rows(sequence, positions.to_vec());
    let emb = tape.param(enc.tok_emb);
    let logits = tape.matmul_t(rows, emb);
    let bias = tape.param(enc.mlm_bias);
    let logits = tape.add_row(logits, bias);
    tape.cross_entropy(logits, targets.iter().map(|&t| t as usize).collect(), None)
}
