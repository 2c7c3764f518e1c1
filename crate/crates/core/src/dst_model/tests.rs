use super::scripted::ScriptedScorer;
use super::*;
use crate::corpus::synth::{builtin_schema, generate_synthetic, SynthConfig};
use crate::corpus::Speaker;

fn small_schema() -> Schema {
    use crate::schema::SlotDecl;
    Schema::new(
        vec!["hotel".into(), "train".into()],
        vec![
            SlotDecl::categorical("hotel-pricerange", "hotel", &["cheap", "expensive"]),
            SlotDecl::noncategorical("hotel-name", "hotel"),
            SlotDecl::noncategorical("train-leaveat", "train"),
        ],
    )
    .unwrap()
}

fn tiny_model(schema: Arc<Schema>) -> DstModel {
    let texts = ["i want a cheap hotel called a and b guest house", "leave at 14:19 please"];
    let mut all: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
    for s in schema.slots() {
        all.push(s.name.clone());
        all.extend(s.candidate_values.iter().cloned());
    }
    let tok = Tokenizer::build(all.iter().map(String::as_str), 1000);
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            hidden_dim: 16,
            num_heads: 2,
            num_layers: 1,
            max_sequence_length: 64,
            init_std: 0.3,
            ..EncoderConfig::default()
        },
        status_mode: StatusMode::Hierarchical,
    };
    DstModel::new(cfg, tok, schema, &mut crate::rng::seeded(5)).unwrap()
}

#[test]
fn zero_domain_logits_gate_everything() {
    let schema = small_schema();
    let mut s = ScriptedScorer::for_text(&schema, "hello there");
    for id in 0..schema.num_slots() {
        s.set_status(id, SlotStatus::Active);
    }
    let pred = predict_turn(&mut s, &schema, StatusMode::Hierarchical).unwrap();
    assert!(pred.domain_probs.iter().all(|&p| p == 0.5));
    assert!(pred.domain_active.iter().all(|&a| !a));
    assert!(pred.statuses.values().all(|&st| st == SlotStatus::Inactive));
    assert_eq!(s.status_calls, 0);
    assert_eq!(s.value_calls, 0);
}

#[test]
fn saturated_domain_logit_activates() {
    let schema = small_schema();
    let mut s = ScriptedScorer::for_text(&schema, "x");
    s.domain[1] = f64::INFINITY;
    let (probs, active) = predict_domains(&mut s);
    assert_eq!(active, vec![false, true]);
    assert!(probs[1] > 0.5);
}

#[test]
fn forced_active_hierarchy_equals_flat() {
    let schema = builtin_schema();
    let mut rng = crate::rng::seeded(9);
    for _ in 0..50 {
        let mut s = ScriptedScorer::random(&schema, 12, &mut rng);
        s.force_all_domains(true);
        let h = predict_turn(&mut s.clone(), &schema, StatusMode::Hierarchical).unwrap();
        let f = predict_turn(&mut s, &schema, StatusMode::Flat).unwrap();
        assert_eq!(h.statuses, f.statuses);
        assert_eq!(h.categorical, f.categorical);
        assert_eq!(h.spans, f.spans);
    }
}

#[test]
fn one_active_domain_scores_only_its_slots() {
    let schema = Schema::from_json_str(crate::fixtures::MULTIWOZ_SCHEMA).unwrap();
    let mut total = 0;
    for d in 0..schema.num_domains() {
        let mut s = ScriptedScorer::for_text(&schema, "x");
        s.force_all_domains(false);
        s.domain[d] = 10.0;
        predict_turn(&mut s, &schema, StatusMode::Hierarchical).unwrap();
        assert_eq!(s.status_slots_scored, schema.domain_slots(d).len());
        total += s.status_slots_scored;
    }
    assert_eq!(total as f64 / schema.num_domains() as f64, 5.0);
    let mut s = ScriptedScorer::for_text(&schema, "x");
    predict_turn(&mut s, &schema, StatusMode::Flat).unwrap();
    assert_eq!(s.status_slots_scored, 35);
}

#[test]
fn categorical_rules() {
    let schema = small_schema();
    let mut s = ScriptedScorer::for_text(&schema, "x");
    assert_eq!(predict_categorical(&mut s, &schema, 0).unwrap(), "cheap", "ties go to the first candidate");
    s.candidates[0] = vec![0.0, 1.0];
    assert_eq!(predict_categorical(&mut s, &schema, 0).unwrap(), "expensive");
    assert!(matches!(
        predict_categorical(&mut s, &schema, 1),
        Err(DstError::WrongSlotKind { .. })
    ));
    assert!(predict_span(&mut s, &schema, 0).is_err());
}

#[test]
fn span_rules() {
    let schema = small_schema();
    let mut s = ScriptedScorer::for_text(&schema, "leave at 14:19 please");
    // tokens: [special] leave at 14 : 19 please
    s.spans[2] = (vec![0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0]);
    assert_eq!(predict_span(&mut s, &schema, 2).unwrap().text, "14");
    s.spans[2].1 = vec![0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0];
    assert_eq!(predict_span(&mut s, &schema, 2).unwrap().text, "14:19");
    s.spans[2].1 = vec![0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert_eq!(predict_span(&mut s, &schema, 2).unwrap().text, "", "end before start");
    s.spans[2] = (vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0]);
    assert_eq!(predict_span(&mut s, &schema, 2).unwrap().text, "", "special start");
}

#[test]
fn gold_wired_scorer_reproduces_gold() {
    let schema = small_schema();
    let mut gold = BeliefState::default();
    gold.set_active("hotel-pricerange", "cheap");
    gold.set_active("hotel-name", "a and b guest house");
    gold.set_dontcare("train-leaveat");
    let text = "a cheap place like a and b guest house , any time";
    let mut s = ScriptedScorer::from_gold(&schema, &gold, text);
    let pred = predict_turn(&mut s, &schema, StatusMode::Hierarchical).unwrap();
    assert_eq!(pred.state(), gold);
    assert!(pred.violations(&schema, StatusMode::Hierarchical).is_empty());
}

#[test]
fn oracle_statuses_keep_and_fill_values() {
    let schema = small_schema();
    let mut gold = BeliefState::default();
    gold.set_active("hotel-pricerange", "cheap");
    gold.set_active("train-leaveat", "14:19");
    let text = "cheap please , leave at 15:15 no 14:19";
    let mut s = ScriptedScorer::from_gold(&schema, &gold, text);
    // the predictor says everything is inactive
    s.force_all_domains(false);
    let pred = predict_turn(&mut s, &schema, StatusMode::Hierarchical).unwrap();
    assert!(pred.state().is_empty());
    let calls = s.value_calls;
    let oracle = set_oracle_statuses(&pred, &gold, &schema, &mut s).unwrap();
    assert_eq!(s.value_calls - calls, 2, "value heads run for each newly active slot");
    assert_eq!(oracle.state(), gold);
    // re-applying is a no-op that needs no value heads
    let calls = s.value_calls;
    let again = set_oracle_statuses(&oracle, &gold, &schema, &mut s).unwrap();
    assert_eq!(again, oracle);
    assert_eq!(s.value_calls, calls);
}

#[test]
fn untrained_model_predictions_are_well_formed_and_stable() {
    let schema = Arc::new(small_schema());
    let model = tiny_model(schema.clone());
    let enc = model.encode_schema();
    let turns = vec![
        Turn::user("i want a cheap hotel", BeliefState::default()),
        Turn::agent("a and b guest house"),
        Turn::user("leave at 14:19 please", BeliefState::default()),
    ];
    for mode in [StatusMode::Hierarchical, StatusMode::Flat] {
        let mut s1 = NeuralScorer::new(&model, &enc, &turns).unwrap();
        let p1 = predict_turn(&mut s1, &schema, mode).unwrap();
        assert!(p1.violations(&schema, mode).is_empty());
        let mut s2 = NeuralScorer::new(&model, &enc, &turns).unwrap();
        assert_eq!(predict_turn(&mut s2, &schema, mode).unwrap(), p1);
    }
    // flat mode scores all slots: force every status active to reach the value heads
    let mut s = NeuralScorer::new(&model, &enc, &turns).unwrap();
    for slot in 0..schema.num_slots() {
        if schema.slot(slot).is_categorical() {
            assert!(schema.slot(slot).candidate_values.contains(&predict_categorical(&mut s, &schema, slot).unwrap()));
        } else {
            let span = predict_span(&mut s, &schema, slot).unwrap();
            assert!(span.start < s.input().len() && span.end < s.input().len());
        }
    }
}

#[test]
fn neural_span_text_maps_to_source() {
    let schema = Arc::new(small_schema());
    let model = tiny_model(schema);
    let enc = model.encode_schema();
    let turns = vec![Turn::user("Leave at 14:19 please", BeliefState::default())];
    let s = NeuralScorer::new(&model, &enc, &turns).unwrap();
    // [CLS] [USR] leave at 14 : 19 please [SEP]
    assert_eq!(s.span_text(4, 6).as_deref(), Some("14:19"));
    assert_eq!(s.span_text(2, 2).as_deref(), Some("Leave"));
    assert_eq!(s.span_text(0, 3), None);
    assert_eq!(s.span_text(4, 8), None);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let schema = Arc::new(small_schema());
    let model = tiny_model(schema.clone());
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = DstModel::load(dir.path()).unwrap();
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.encode_schema(), model.encode_schema());
}

#[test]
fn corpus_prediction_dump_round_trip() {
    let cfg = SynthConfig {
        num_dialogues: 4,
        ..SynthConfig::default()
    };
    let corpus = generate_synthetic(&cfg, 3).unwrap();
    let mut texts: Vec<String> = corpus.dialogues.iter().flat_map(|d| d.turns.iter().map(|t| t.text.clone())).collect();
    for s in corpus.schema.slots() {
        texts.push(s.name.clone());
        texts.extend(s.candidate_values.iter().cloned());
    }
    let tok = Tokenizer::build(texts.iter().map(String::as_str), 5000);
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            hidden_dim: 8,
            num_heads: 2,
            num_layers: 1,
            ..EncoderConfig::default()
        },
        status_mode: StatusMode::Flat,
    };
    let model = DstModel::new(cfg, tok, corpus.schema.clone(), &mut crate::rng::seeded(1)).unwrap();
    let seq = predict_corpus(&model, &corpus, true, Execution::Sequential).unwrap();
    let par = predict_corpus(&model, &corpus, true, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq.predicted.len(), corpus.num_gold_turns());
    let gold_users = corpus
        .dialogues
        .iter()
        .flat_map(|d| d.turns.iter())
        .filter(|t| t.speaker == Speaker::User)
        .count();
    assert_eq!(seq.predicted.len(), gold_users);
    for (o, d) in seq.oracle.as_ref().unwrap().iter().zip(&seq.predicted) {
        assert_eq!((o.dialogue_id.as_str(), o.turn), (d.dialogue_id.as_str(), d.turn));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.jsonl");
    write_predictions(&path, &seq.predicted).unwrap();
    assert_eq!(read_predictions(&path).unwrap(), seq.predicted);
}
