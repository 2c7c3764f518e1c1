//! Training-time utterance insertion.
//!
//! A perturbed dialogue receives `num_insertions` distractor turns at turn
//! boundaries. Original turns keep their order, text and gold states;
//! inserted turns are flagged and never carry a state.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Speaker, Turn};
use crate::error::{DstError, Result};
use crate::exec::{self, Execution};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertionSource {
    Auxiliary,
    Target,
    RandomWords,
}

impl InsertionSource {
    pub const ALL: [InsertionSource; 3] = [
        InsertionSource::Auxiliary,
        InsertionSource::Target,
        InsertionSource::RandomWords,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InsertionSource::Auxiliary => "auxiliary",
            InsertionSource::Target => "target",
            InsertionSource::RandomWords => "random_words",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionPolicy {
    RandomBoundary,
    AfterUserOnly,
    AfterAgentOnly,
}

impl PositionPolicy {
    pub const ALL: [PositionPolicy; 3] = [
        PositionPolicy::RandomBoundary,
        PositionPolicy::AfterUserOnly,
        PositionPolicy::AfterAgentOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PositionPolicy::RandomBoundary => "random_boundary",
            PositionPolicy::AfterUserOnly => "after_user_only",
            PositionPolicy::AfterAgentOnly => "after_agent_only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Per-example perturbation probability.
    pub probability: f64,
    /// Number of utterances inserted into a perturbed example.
    pub num_insertions: usize,
    pub source: InsertionSource,
    pub position_policy: PositionPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PerturbationConfig {
    /// Two auxiliary utterances at random boundaries with probability 0.2.
    fn default() -> Self {
        PerturbationConfig {
            probability: 0.2,
            num_insertions: 2,
            source: InsertionSource::Auxiliary,
            position_policy: PositionPolicy::RandomBoundary,
            seed: 0,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(DstError::Config(format!(
                "perturbation probability must be in [0,1], got {}",
                self.probability
            )));
        }
        if self.num_insertions == 0 {
            return Err(DstError::Config("num_insertions must be >= 1".into()));
        }
        Ok(())
    }
}

/// Material for inserted turns: utterances for the auxiliary/target sources
/// and vocabulary tokens for the random-words source.
#[derive(Clone, Copy, Debug, Default)]
pub struct InsertionPool<'a> {
    pub utterances: &'a [String],
    pub vocab: &'a [String],
}

impl InsertionPool<'_> {
    fn check(&self, source: InsertionSource) -> Result<()> {
        match source {
            InsertionSource::RandomWords if self.vocab.is_empty() => Err(DstError::EmptyVocabulary),
            InsertionSource::Auxiliary | InsertionSource::Target if self.utterances.is_empty() => {
                Err(DstError::EmptyPool)
            }
            _ => Ok(()),
        }
    }
}

pub const RANDOM_UTTERANCE_MIN_WORDS: usize = 4;
pub const RANDOM_UTTERANCE_MAX_WORDS: usize = 16;

/// `length` vocabulary tokens sampled uniformly and joined by spaces.
pub fn random_word_utterance<R: Rng + ?Sized>(
    length: usize,
    vocab: &[String],
    rng: &mut R,
) -> Result<String> {
    if vocab.is_empty() {
        return Err(DstError::EmptyVocabulary);
    }
    if length == 0 {
        return Err(DstError::Config("random utterance length must be >= 1".into()));
    }
    let words: Vec<&str> = (0..length)
        .map(|_| vocab[rng.gen_range(0..vocab.len())].as_str())
        .collect();
    Ok(words.join(" "))
}

/// Insertion points, expressed as "before original turn k".
fn eligible_boundaries(original: &[Turn], policy: PositionPolicy) -> Vec<usize> {
    let n = original.len();
    match policy {
        PositionPolicy::RandomBoundary => (0..n).collect(),
        PositionPolicy::AfterUserOnly => (1..n)
            .filter(|&k| original[k - 1].speaker == Speaker::User)
            .collect(),
        PositionPolicy::AfterAgentOnly => (1..n)
            .filter(|&k| original[k - 1].speaker == Speaker::Agent)
            .collect(),
    }
}

fn distractor_texts<R: Rng + ?Sized>(
    cfg: &PerturbationConfig,
    pool: &InsertionPool<'_>,
    rng: &mut R,
) -> Result<Vec<String>> {
    let n = cfg.num_insertions;
    match cfg.source {
        InsertionSource::RandomWords => (0..n)
            .map(|_| {
                let len = rng.gen_range(RANDOM_UTTERANCE_MIN_WORDS..=RANDOM_UTTERANCE_MAX_WORDS);
                random_word_utterance(len, pool.vocab, rng)
            })
            .collect(),
        _ if pool.utterances.len() >= n => Ok(pool
            .utterances
            .choose_multiple(rng, n)
            .cloned()
            .collect()),
        _ => Ok((0..n)
            .map(|_| pool.utterances.choose(rng).unwrap().clone())
            .collect()),
    }
}

/// Perturbs one dialogue with probability `cfg.probability`.
///
/// If the position policy admits no boundary in `d` the dialogue is returned
/// unchanged.
pub fn perturb_dialogue<R: Rng + ?Sized>(
    d: &Dialogue,
    cfg: &PerturbationConfig,
    pool: &InsertionPool<'_>,
    rng: &mut R,
) -> Result<Dialogue> {
    cfg.validate()?;
    pool.check(cfg.source)?;
    if !rng.gen_bool(cfg.probability) {
        return Ok(d.clone());
    }
    let boundaries = eligible_boundaries(&d.turns, cfg.position_policy);
    if boundaries.is_empty() {
        return Ok(d.clone());
    }
    let n = cfg.num_insertions;
    let mut points: Vec<usize> = if boundaries.len() >= n {
        boundaries.choose_multiple(rng, n).copied().collect()
    } else {
        (0..n).map(|_| *boundaries.choose(rng).unwrap()).collect()
    };
    points.sort_unstable();
    let texts = distractor_texts(cfg, pool, rng)?;

    let mut turns = Vec::with_capacity(d.turns.len() + n);
    let mut next_insert = 0;
    for (k, turn) in d.turns.iter().enumerate() {
        let mut speaker = match cfg.position_policy {
            PositionPolicy::AfterUserOnly => Speaker::Agent,
            PositionPolicy::AfterAgentOnly => Speaker::User,
            PositionPolicy::RandomBoundary => Speaker::User,
        };
        while next_insert < n && points[next_insert] == k {
            if cfg.position_policy == PositionPolicy::RandomBoundary {
                speaker = if rng.gen_bool(0.5) { Speaker::User } else { Speaker::Agent };
            }
            turns.push(Turn::inserted(speaker, texts[next_insert].clone()));
            speaker = speaker.other();
            next_insert += 1;
        }
        turns.push(turn.clone());
    }
    Ok(Dialogue {
        id: d.id.clone(),
        turns,
    })
}

/// Applies [`perturb_dialogue`] independently to every example, each with its
/// own sub-stream derived from one draw of `rng`.
pub fn perturb_batch<R: Rng + ?Sized>(
    batch: &[Dialogue],
    cfg: &PerturbationConfig,
    pool: &InsertionPool<'_>,
    rng: &mut R,
    exec: Execution,
) -> Result<Vec<Dialogue>> {
    cfg.validate()?;
    pool.check(cfg.source)?;
    let base: u64 = rng.gen();
    exec::map_ordered(exec, batch, |i, d| {
        let mut sub = rng::seeded(rng::derive_indexed(base, i as u64));
        perturb_dialogue(d, cfg, pool, &mut sub)
    })
    .into_iter()
    .collect()
}

/// Checks a perturbed dialogue against its source. Returns human-readable
/// violations; empty means every invariant holds.
pub fn verify_perturbation(
    input: &Dialogue,
    output: &Dialogue,
    policy: PositionPolicy,
) -> Vec<String> {
    let mut problems = Vec::new();
    let kept: Vec<&Turn> = output.turns.iter().filter(|t| !t.inserted).collect();
    if kept.len() != input.turns.len() || kept.iter().zip(&input.turns).any(|(a, b)| *a != b) {
        problems.push("original turns are not preserved as a subsequence".to_string());
    }
    let mut last_original: Option<&Turn> = None;
    for (i, t) in output.turns.iter().enumerate() {
        if !t.inserted {
            last_original = Some(t);
            continue;
        }
        if t.gold_state.is_some() {
            problems.push(format!("inserted turn {i} carries a gold state"));
        }
        let ok = match policy {
            PositionPolicy::RandomBoundary => true,
            PositionPolicy::AfterUserOnly => {
                matches!(last_original, Some(p) if p.speaker == Speaker::User)
            }
            PositionPolicy::AfterAgentOnly => {
                matches!(last_original, Some(p) if p.speaker == Speaker::Agent)
            }
        };
        if !ok {
            problems.push(format!("inserted turn {i} violates {}", policy.as_str()));
        }
    }
    if let Some(last) = output.turns.last() {
        if last.inserted && !input.turns.is_empty() {
            problems.push("insertion after the final turn".to_string());
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BeliefState;
    use proptest::prelude::*;

    fn dialogue(n: usize) -> Dialogue {
        let turns = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    let mut s = BeliefState::default();
                    s.set_active("hotel-name", &format!("h{i}"));
                    Turn::user(&format!("user {i}"), s)
                } else {
                    Turn::agent(&format!("agent {i}"))
                }
            })
            .collect();
        Dialogue {
            id: "d".into(),
            turns,
        }
    }

    fn pool() -> (Vec<String>, Vec<String>) {
        (
            (0..10).map(|i| format!("distractor {i}")).collect(),
            vec!["a".into(), "b".into(), "c".into()],
        )
    }

    #[test]
    fn zero_probability_is_identity() {
        let (u, v) = pool();
        let p = InsertionPool { utterances: &u, vocab: &v };
        let cfg = PerturbationConfig {
            probability: 0.0,
            ..Default::default()
        };
        let mut r = rng::seeded(1);
        for n in 1..8 {
            let d = dialogue(n);
            assert_eq!(perturb_dialogue(&d, &cfg, &p, &mut r).unwrap(), d);
        }
    }

    #[test]
    fn forced_insertion_adds_exactly_n() {
        let (u, v) = pool();
        let p = InsertionPool { utterances: &u, vocab: &v };
        let cfg = PerturbationConfig {
            probability: 1.0,
            num_insertions: 2,
            ..Default::default()
        };
        let d = dialogue(4);
        let out = perturb_dialogue(&d, &cfg, &p, &mut rng::seeded(3)).unwrap();
        assert_eq!(out.turns.len(), 6);
        assert_eq!(out.turns.iter().filter(|t| t.inserted).count(), 2);
        assert!(verify_perturbation(&d, &out, cfg.position_policy).is_empty());
    }

    #[test]
    fn default_config_matches_best_setting() {
        let cfg = PerturbationConfig::default();
        assert_eq!(cfg.source, InsertionSource::Auxiliary);
        assert_eq!(cfg.num_insertions, 2);
        assert_eq!(cfg.probability, 0.2);
        assert_eq!(cfg.position_policy, PositionPolicy::RandomBoundary);
        cfg.validate().unwrap();
    }

    #[test]
    fn seeded_replay_reproduces_positions() {
        let (u, v) = pool();
        let p = InsertionPool { utterances: &u, vocab: &v };
        let cfg = PerturbationConfig {
            probability: 1.0,
            num_insertions: 3,
            ..Default::default()
        };
        let d = dialogue(6);
        let a = perturb_dialogue(&d, &cfg, &p, &mut rng::seeded(7)).unwrap();
        let b = perturb_dialogue(&d, &cfg, &p, &mut rng::seeded(7)).unwrap();
        let flags = |d: &Dialogue| d.turns.iter().map(|t| t.inserted).collect::<Vec<_>>();
        assert_eq!(flags(&a), flags(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn random_words() {
        let vocab = vec!["a".to_string()];
        let mut r = rng::seeded(0);
        assert_eq!(random_word_utterance(1, &vocab, &mut r).unwrap(), "a");
        let vocab: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let s = random_word_utterance(5, &vocab, &mut r).unwrap();
        assert_eq!(s.split(' ').count(), 5);
        let a = random_word_utterance(9, &vocab, &mut rng::seeded(5)).unwrap();
        let b = random_word_utterance(9, &vocab, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            random_word_utterance(3, &[], &mut r),
            Err(DstError::EmptyVocabulary)
        ));
    }

    #[test]
    fn empty_pool_errors() {
        let v = vec!["a".to_string()];
        let p = InsertionPool { utterances: &[], vocab: &v };
        let cfg = PerturbationConfig::default();
        assert!(matches!(
            perturb_dialogue(&dialogue(3), &cfg, &p, &mut rng::seeded(0)),
            Err(DstError::EmptyPool)
        ));
        let words = PerturbationConfig {
            source: InsertionSource::RandomWords,
            ..Default::default()
        };
        assert!(perturb_dialogue(&dialogue(3), &words, &p, &mut rng::seeded(0)).is_ok());
    }

    #[test]
    fn batch_fraction_and_edges() {
        let (u, v) = pool();
        let p = InsertionPool { utterances: &u, vocab: &v };
        let cfg = PerturbationConfig {
            probability: 0.2,
            ..Default::default()
        };
        let batch: Vec<Dialogue> = (0..10_000).map(|_| dialogue(5)).collect();
        let out = perturb_batch(&batch, &cfg, &p, &mut rng::seeded(11), Execution::Parallel).unwrap();
        let frac = out.iter().filter(|d| d.is_perturbed()).count() as f64 / 10_000.0;
        assert!((frac - 0.2).abs() <= 0.02, "{frac}");

        let all = PerturbationConfig {
            probability: 1.0,
            ..Default::default()
        };
        let out = perturb_batch(&batch[..50], &all, &p, &mut rng::seeded(1), Execution::Sequential).unwrap();
        assert!(out.iter().all(Dialogue::is_perturbed));
        assert!(perturb_batch(&[], &all, &p, &mut rng::seeded(1), Execution::Sequential)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn batch_is_execution_independent() {
        let (u, v) = pool();
        let p = InsertionPool { utterances: &u, vocab: &v };
        let cfg = PerturbationConfig {
            probability: 0.5,
            ..Default::default()
        };
        let batch: Vec<Dialogue> = (1..60).map(|n| dialogue(n % 9 + 1)).collect();
        let a = perturb_batch(&batch, &cfg, &p, &mut rng::seeded(2), Execution::Sequential).unwrap();
        let b = perturb_batch(&batch, &cfg, &p, &mut rng::seeded(2), Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    fn any_source() -> impl Strategy<Value = InsertionSource> {
        prop::sample::select(InsertionSource::ALL.to_vec())
    }

    fn any_policy() -> impl Strategy<Value = PositionPolicy> {
        prop::sample::select(PositionPolicy::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn invariants_hold(
            n in 1usize..12,
            k in 1usize..5,
            prob in 0.0f64..=1.0,
            source in any_source(),
            policy in any_policy(),
            seed in any::<u64>(),
        ) {
            let (u, v) = pool();
            let p = InsertionPool { utterances: &u, vocab: &v };
            let cfg = PerturbationConfig { probability: prob, num_insertions: k, source, position_policy: policy, seed };
            let d = dialogue(n);
            let out = perturb_dialogue(&d, &cfg, &p, &mut rng::seeded(seed)).unwrap();
            prop_assert!(verify_perturbation(&d, &out, policy).is_empty());
            let inserted = out.turns.iter().filter(|t| t.inserted).count();
            prop_assert!(inserted == 0 || inserted == k);
        }
    }
}
