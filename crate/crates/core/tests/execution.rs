//! Sequential and parallel execution must agree bit for bit.

use dstlab::corpus::synth::{generate_synthetic, SynthConfig};
use dstlab::corpus::target_utterances;
use dstlab::dst_model::{predict_corpus, DstModel};
use dstlab::encoder::transformer::EncoderConfig;
use dstlab::perturbation::{perturb_batch, InsertionPool, InsertionSource, PerturbationConfig};
use dstlab::rng;
use dstlab::training::{build_tokenizer, compute_batch, train, BatchSampler, MlmMode, TrainConfig};
use dstlab::Execution;

fn corpus() -> dstlab::corpus::Corpus {
    let cfg = SynthConfig {
        num_dialogues: 16,
        max_user_turns: 3,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, 21).unwrap()
}

fn cfg(execution: Execution) -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig {
            hidden_dim: 16,
            num_layers: 1,
            num_heads: 2,
            max_sequence_length: 96,
            ..EncoderConfig::default()
        },
        mlm_mode: MlmMode::TargetOnly,
        batch_size: 4,
        steps: 3,
        warmup_steps: 1,
        seed: 5,
        execution,
        ..TrainConfig::default()
    }
}

#[test]
fn batch_gradients_agree() {
    let c = corpus();
    let seq = cfg(Execution::Sequential);
    let tok = build_tokenizer(&c, &[], 500);
    let model = DstModel::new(seq.model_config(), tok, c.schema.clone(), &mut rng::seeded(1)).unwrap();
    let mut sampler = BatchSampler::new(&c, &[], &model.tokenizer, 3).unwrap();
    let batch = sampler.dst_batch(&model, &seq).unwrap();
    let a = compute_batch(&model, &batch, &seq, true).unwrap();
    let b = compute_batch(&model, &batch, &cfg(Execution::Parallel), true).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.grads.norm().to_bits(), b.grads.norm().to_bits());
    for (id, g) in a.grads.iter() {
        assert_eq!(Some(g), b.grads.get(id));
    }
}

#[test]
fn training_and_prediction_agree() {
    let c = corpus();
    let a = train(&c, &[], &cfg(Execution::Sequential), None).unwrap();
    let b = train(&c, &[], &cfg(Execution::Parallel), None).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model.params, b.model.params);
    let pa = predict_corpus(&a.model, &c, true, Execution::Sequential).unwrap();
    let pb = predict_corpus(&a.model, &c, true, Execution::Parallel).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn perturbation_agrees() {
    let c = corpus();
    let utterances = target_utterances(&c);
    let pool = InsertionPool {
        utterances: &utterances,
        vocab: &[],
    };
    let cfg = PerturbationConfig {
        probability: 0.5,
        num_insertions: 3,
        source: InsertionSource::Target,
        ..PerturbationConfig::default()
    };
    let run = |exec| perturb_batch(&c.dialogues, &cfg, &pool, &mut rng::seeded(4), exec).unwrap();
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}
