use super::*;
use crate::corpus::synth::{generate_synthetic, SynthConfig};
use crate::corpus::AuxSource;
use crate::encoder::tensor::ParamId;
use crate::perturbation::PositionPolicy;

fn corpus(n: usize, seed: u64) -> Corpus {
    let cfg = SynthConfig {
        num_dialogues: n,
        max_user_turns: 4,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, seed).unwrap()
}

fn aux() -> Vec<String> {
    crate::corpus::auxiliary_corpus(&[AuxSource::Synthetic { seed: 1, size: 200 }], None).unwrap()
}

fn tiny(steps: usize) -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig {
            hidden_dim: 16,
            num_layers: 1,
            num_heads: 2,
            max_sequence_length: 128,
            ..EncoderConfig::default()
        },
        steps,
        batch_size: 4,
        warmup_steps: 5,
        learning_rate: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn warmup_schedule_is_linear() {
    let cfg = TrainConfig {
        learning_rate: 1.0,
        warmup_steps: 4,
        ..TrainConfig::default()
    };
    let lrs: Vec<f64> = (0..6).map(|s| cfg.lr_at(s)).collect();
    assert_eq!(lrs, vec![0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
}

#[test]
fn losses_add_up_every_step() {
    let c = corpus(20, 1);
    let cfg = TrainConfig {
        mlm_mode: MlmMode::TargetPlusAuxiliary,
        ..tiny(6)
    };
    let out = train(&c, &aux(), &cfg, None).unwrap();
    assert_eq!(out.metrics.len(), 6);
    for m in &out.metrics {
        let l = &m.losses;
        assert!(l.components().iter().all(|&x| x >= 0.0));
        let sum = l.domain_bce + l.status_ce + l.categorical_ce + l.span_ce;
        assert!((l.dst_total - sum).abs() < 1e-6);
        assert!((l.total - (l.dst_total + l.mlm)).abs() < 1e-6);
        assert!(l.mlm > 0.0);
    }
}

#[test]
fn mlm_off_matches_zero_weight() {
    let c = corpus(20, 2);
    let off = train(&c, &aux(), &tiny(4), None).unwrap();
    let zero = TrainConfig {
        mlm_mode: MlmMode::TargetOnly,
        mlm_weight: 0.0,
        ..tiny(4)
    };
    let zero = train(&c, &aux(), &zero, None).unwrap();
    assert_eq!(off.metrics, zero.metrics);
    assert_eq!(off.model.params, zero.model.params);
}

#[test]
fn runs_are_deterministic_across_execution_modes() {
    let c = corpus(20, 3);
    let base = TrainConfig {
        mlm_mode: MlmMode::TargetOnly,
        perturbation: Some(PerturbationConfig {
            probability: 0.5,
            ..PerturbationConfig::default()
        }),
        ..tiny(4)
    };
    let a = train(&c, &aux(), &base, None).unwrap();
    let b = train(&c, &aux(), &base, None).unwrap();
    let seq = TrainConfig {
        execution: Execution::Sequential,
        ..base.clone()
    };
    let s = train(&c, &aux(), &seq, None).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics, s.metrics);
    assert_eq!(a.model.params, s.model.params);
}

#[test]
fn perturbed_training_never_loses_spans() {
    let c = corpus(40, 4);
    let cfg = TrainConfig {
        perturbation: Some(PerturbationConfig::default()),
        batch_size: 16,
        ..tiny(10)
    };
    let out = train(&c, &aux(), &cfg, None).unwrap();
    assert_eq!(out.skipped_spans, 0);
}

#[test]
fn every_perturbation_source_trains() {
    let c = corpus(10, 5);
    for source in InsertionSource::ALL {
        let cfg = TrainConfig {
            perturbation: Some(PerturbationConfig {
                probability: 1.0,
                num_insertions: 3,
                source,
                position_policy: PositionPolicy::AfterAgentOnly,
                seed: 0,
            }),
            ..tiny(2)
        };
        train(&c, &aux(), &cfg, None).unwrap();
    }
}

#[test]
fn mlm_warmup_runs_before_finetuning() {
    let c = corpus(10, 6);
    let cfg = TrainConfig {
        mlm_mode: MlmMode::TargetPlusAuxiliary,
        mlm_warmup_steps: 3,
        ..tiny(2)
    };
    let out = train(&c, &aux(), &cfg, None).unwrap();
    let phases: Vec<Phase> = out.metrics.iter().map(|m| m.phase).collect();
    assert_eq!(phases, [Phase::MlmWarmup, Phase::MlmWarmup, Phase::MlmWarmup, Phase::Finetune, Phase::Finetune]);
    assert_eq!(out.metrics[0].losses.dst_total, 0.0);
}

#[test]
fn checkpoints_and_metrics_are_written() {
    let c = corpus(10, 7);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..tiny(5)
    };
    let out = train(&c, &[], &cfg, Some(dir.path())).unwrap();
    let names: Vec<String> = out
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["step-2", "step-4", "step-5"]);
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    let parsed: Vec<StepMetrics> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, out.metrics);
    let loaded = DstModel::load(&out.checkpoints[2]).unwrap();
    assert_eq!(loaded.params, out.model.params);
}

#[test]
fn divergence_aborts() {
    let c = corpus(10, 8);
    let cfg = TrainConfig {
        learning_rate: 1e250,
        warmup_steps: 0,
        ..tiny(20)
    };
    assert!(matches!(train(&c, &[], &cfg, None), Err(DstError::Diverged { .. })));
}

#[test]
fn loss_trends_down() {
    let c = corpus(100, 9);
    let cfg = TrainConfig {
        batch_size: 8,
        ..tiny(200)
    };
    let out = train(&c, &[], &cfg, None).unwrap();
    let totals: Vec<f64> = out.metrics.iter().map(|m| m.losses.total).collect();
    let s = smoothed(&totals, 40);
    assert!(s.last().unwrap() < &(0.7 * s[0]), "smoothed losses {s:?}");
}

/// Central differences of the full DST + MLM batch loss.
#[test]
fn batch_gradient_matches_finite_differences() {
    let c = corpus(6, 10);
    let aux = aux();
    let cfg = TrainConfig {
        encoder: EncoderConfig {
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            max_sequence_length: 96,
            init_std: 0.3,
            ..EncoderConfig::default()
        },
        mlm_mode: MlmMode::TargetPlusAuxiliary,
        batch_size: 3,
        execution: Execution::Sequential,
        ..TrainConfig::default()
    };
    let tok = build_tokenizer(&c, &aux[..20], 60);
    let model = DstModel::new(cfg.model_config(), tok, c.schema.clone(), &mut rng::seeded(3)).unwrap();
    assert!(model.params.num_scalars() <= 10_000, "{}", model.params.num_scalars());
    let mut sampler = BatchSampler::new(&c, &aux[..20], &model.tokenizer, 11).unwrap();
    let batch = sampler.dst_batch(&model, &cfg).unwrap();
    let analytic = compute_batch(&model, &batch, &cfg, true).unwrap().grads;
    let mut rng = rng::seeded(99);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let id = ParamId(rng.gen_range(0..model.params.len()));
        let (r, cdim) = model.params.get(id).dim();
        let (i, j) = (rng.gen_range(0..r), rng.gen_range(0..cdim));
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params.get_mut(id)[[i, j]] += delta;
            compute_batch(&m, &batch, &cfg, false).unwrap().losses.total
        };
        let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
        let a = analytic.coordinate(id, i, j);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "{}[{i},{j}] analytic {a} numeric {numeric}", model.params.name(id));
    }
    assert!(worst < 1e-4);
}
