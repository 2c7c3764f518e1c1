//! Sequential against rayon execution for the three batch loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dstlab::corpus::synth::{generate_synthetic, SynthConfig};
use dstlab::corpus::target_utterances;
use dstlab::dst_model::{predict_corpus, DstModel};
use dstlab::encoder::transformer::EncoderConfig;
use dstlab::perturbation::{perturb_batch, InsertionPool, InsertionSource, PerturbationConfig};
use dstlab::rng;
use dstlab::training::{build_tokenizer, compute_batch, BatchSampler, TrainConfig};
use dstlab::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn small_train_config(execution: Execution) -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig {
            hidden_dim: 32,
            num_layers: 2,
            num_heads: 4,
            max_sequence_length: 128,
            ..EncoderConfig::default()
        },
        batch_size: 8,
        execution,
        ..TrainConfig::default()
    }
}

fn corpus(n: usize) -> dstlab::corpus::Corpus {
    let cfg = SynthConfig {
        num_dialogues: n,
        max_user_turns: 4,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, 1).unwrap()
}

fn bench_compute_batch(c: &mut Criterion) {
    let corpus = corpus(50);
    let base = small_train_config(Execution::Sequential);
    let tok = build_tokenizer(&corpus, &[], base.max_vocab_words);
    let model = DstModel::new(base.model_config(), tok, corpus.schema.clone(), &mut rng::seeded(0)).unwrap();
    let mut sampler = BatchSampler::new(&corpus, &[], &model.tokenizer, 2).unwrap();
    let batch = sampler.dst_batch(&model, &base).unwrap();
    let mut group = c.benchmark_group("compute_batch");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = small_train_config(exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| compute_batch(&model, &batch, &cfg, true).unwrap())
        });
    }
    group.finish();
}

fn bench_predict_corpus(c: &mut Criterion) {
    let corpus = corpus(20);
    let cfg = small_train_config(Execution::Sequential);
    let tok = build_tokenizer(&corpus, &[], cfg.max_vocab_words);
    let model = DstModel::new(cfg.model_config(), tok, corpus.schema.clone(), &mut rng::seeded(0)).unwrap();
    let mut group = c.benchmark_group("predict_corpus");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| predict_corpus(&model, &corpus, false, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_perturb_batch(c: &mut Criterion) {
    let corpus = corpus(2000);
    let utterances = target_utterances(&corpus);
    let pool = InsertionPool {
        utterances: &utterances,
        vocab: &[],
    };
    let cfg = PerturbationConfig {
        probability: 0.6,
        num_insertions: 3,
        source: InsertionSource::Target,
        ..PerturbationConfig::default()
    };
    let mut group = c.benchmark_group("perturb_batch");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut r = rng::seeded(5);
                perturb_batch(&corpus.dialogues, &cfg, &pool, &mut r, exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_compute_batch, bench_predict_corpus, bench_perturb_batch);
criterion_main!(benches);
