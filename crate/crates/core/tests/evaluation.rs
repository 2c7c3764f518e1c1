//! Metrics against an independent comparator that works on raw JSON.

use serde_json::Value;

use dstlab::dst_model::{read_predictions, write_predictions};
use dstlab::evaluation::{bucket_thresholds, component_breakdown, evaluate, joint_goal_accuracy, Predictions};
use dstlab::fixtures::eval_fixture;

fn norm(v: &Value) -> String {
    v.as_str().unwrap_or("").to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn status(state: &Value, slot: &str) -> String {
    state
        .get(slot)
        .and_then(|e| e.get("status"))
        .and_then(Value::as_str)
        .unwrap_or("inactive")
        .to_string()
}

fn slot_ok(pred: &Value, gold: &Value, slot: &str) -> bool {
    let s = status(gold, slot);
    s == status(pred, slot) && (s != "active" || norm(&pred[slot]["value"]) == norm(&gold[slot]["value"]))
}

/// Every gold turn as (dialogue length, gold state, predicted state), read
/// back from the serialized corpus and prediction dump.
fn raw_turns(corpus_json: &str, preds_jsonl: &str) -> Vec<(usize, Value, Value)> {
    let dialogues: Value = serde_json::from_str(corpus_json).unwrap();
    let preds: Vec<Value> = preds_jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mut out = Vec::new();
    for d in dialogues.as_array().unwrap() {
        let id = d["id"].as_str().unwrap();
        let turns = d["turns"].as_array().unwrap();
        for (i, t) in turns.iter().enumerate() {
            if t["speaker"] != "user" || t.get("state").is_none() {
                continue;
            }
            let p = preds
                .iter()
                .find(|p| p["dialogue_id"] == id && p["turn"] == i)
                .expect("prediction present");
            out.push((turns.len(), t["state"].clone(), p["state"].clone()));
        }
    }
    out
}

#[test]
fn fixture_metrics_match_raw_json_comparator() {
    let (corpus, records) = eval_fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("preds.jsonl");
    write_predictions(&path, &records).unwrap();
    let read_back = read_predictions(&path).unwrap();
    assert_eq!(read_back, records);

    let slots: Vec<String> = corpus.schema.slots().iter().map(|s| s.name.clone()).collect();
    let raw = raw_turns(&corpus.to_json_string(), &std::fs::read_to_string(&path).unwrap());
    let preds = Predictions::from_records(&read_back);

    let correct = raw.iter().filter(|(_, g, p)| slots.iter().all(|s| slot_ok(p, g, s))).count();
    let jga = joint_goal_accuracy(&preds, &corpus).unwrap();
    assert_eq!(jga, correct as f64 / raw.len() as f64);

    let mut lengths: Vec<usize> = corpus.dialogues.iter().map(|d| d.turns.len()).collect();
    lengths.sort();
    let k = (lengths.len() * 3).div_ceil(10);
    let t = bucket_thresholds(&corpus).unwrap();
    assert_eq!((t.short_max_utts, t.long_min_utts), (lengths[k - 1], lengths[lengths.len() - k]));

    let b = component_breakdown(&preds, &corpus, &t).unwrap();
    let (mut st, mut n) = (0, 0);
    let (mut cat, mut ncat) = (0, 0);
    for (_, g, p) in raw.iter().filter(|(len, _, _)| *len >= t.long_min_utts) {
        for s in corpus.schema.slots() {
            n += 1;
            st += (status(p, &s.name) == status(g, &s.name)) as usize;
            if s.is_categorical() && status(g, &s.name) == "active" {
                ncat += 1;
                cat += slot_ok(p, g, &s.name) as usize;
            }
        }
    }
    assert_eq!(b.long.status, Some(st as f64 / n as f64));
    assert_eq!(b.long.categorical, Some(cat as f64 / ncat as f64));

    let report = evaluate(&preds, None, &corpus).unwrap();
    let short_ok = raw
        .iter()
        .filter(|(len, _, _)| *len <= t.short_max_utts)
        .map(|(_, g, p)| slots.iter().all(|s| slot_ok(p, g, s)) as usize)
        .collect::<Vec<_>>();
    assert_eq!(report.counts.short.turns, short_ok.len());
    assert_eq!(report.jga_short, short_ok.iter().sum::<usize>() as f64 / short_ok.len() as f64);
}
