//! Implementations behind the subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dstlab::corpus::{generate_synthetic, split_corpus, target_utterances, Corpus, SynthConfig};
use dstlab::dst_model::{predict_corpus, write_predictions, DstModel, PredictionRecord};
use dstlab::evaluation::{compare_reports, evaluate, Comparison, EvalReport, Predictions};
use dstlab::perturbation::{perturb_batch, InsertionPool, InsertionSource, PerturbationConfig, PositionPolicy};
use dstlab::rng;
use dstlab::training::{build_tokenizer, train};
use dstlab::Execution;

use crate::spec::ExperimentSpec;
use crate::util::{fresh_dir, sha256_hex, write_file, write_json};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub dialogues: usize,
    pub gold_turns: usize,
}

/// Written next to generated corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub files: BTreeMap<String, FileEntry>,
}

/// Generates a synthetic corpus and writes `schema.json`, the three split
/// files and `manifest.json` into `out`.
pub fn generate(config: &SynthConfig, seed: u64, out: &Path) -> Result<Manifest> {
    let corpus = generate_synthetic(config, seed)?;
    let schema = corpus.schema.clone();
    let splits = split_corpus(corpus, config.split_fractions);
    let mut files = BTreeMap::new();
    let schema_text = schema.to_json_string();
    write_file(&out.join("schema.json"), &schema_text)?;
    files.insert(
        "schema.json".to_string(),
        FileEntry {
            sha256: sha256_hex(schema_text.as_bytes()),
            dialogues: 0,
            gold_turns: 0,
        },
    );
    for c in &splits {
        let name = format!("{}.json", c.split.as_str());
        let text = c.to_json_string();
        write_file(&out.join(&name), &text)?;
        files.insert(
            name,
            FileEntry {
                sha256: sha256_hex(text.as_bytes()),
                dialogues: c.dialogues.len(),
                gold_turns: c.num_gold_turns(),
            },
        );
    }
    let manifest = Manifest {
        seed,
        config: config.clone(),
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Insertion material for `source`: the auxiliary pool, the corpus' own
/// utterances or its vocabulary words.
pub fn insertion_material(corpus: &Corpus, aux: &[String], source: InsertionSource) -> Result<(Vec<String>, Vec<String>)> {
    Ok(match source {
        InsertionSource::Auxiliary => {
            if aux.is_empty() {
                bail!("the auxiliary source needs an auxiliary pool (--aux or --aux-synthetic)");
            }
            (aux.to_vec(), Vec::new())
        }
        InsertionSource::Target => (target_utterances(corpus), Vec::new()),
        InsertionSource::RandomWords => (Vec::new(), build_tokenizer(corpus, aux, usize::MAX).words()),
    })
}

/// Perturbs every dialogue of `corpus` once and writes the result to `out`
/// with a `.manifest.json` sidecar. Returns the number of perturbed
/// dialogues.
pub fn perturb_corpus_file(corpus: &Corpus, cfg: &PerturbationConfig, aux: &[String], out: &Path) -> Result<usize> {
    let (utterances, vocab) = insertion_material(corpus, aux, cfg.source)?;
    let pool = InsertionPool {
        utterances: &utterances,
        vocab: &vocab,
    };
    let mut r = rng::stream(cfg.seed, "perturbation");
    let dialogues = perturb_batch(&corpus.dialogues, cfg, &pool, &mut r, Execution::Parallel)?;
    let perturbed = dialogues.iter().filter(|d| d.is_perturbed()).count();
    let output = Corpus::new(corpus.schema.clone(), dialogues, corpus.split);
    let text = output.to_json_string();
    write_file(out, &text)?;
    let manifest = serde_json::json!({
        "input_sha256": sha256_hex(corpus.to_json_string().as_bytes()),
        "output_sha256": sha256_hex(text.as_bytes()),
        "config": cfg,
        "dialogues": output.dialogues.len(),
        "perturbed": perturbed,
    });
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".manifest.json");
    write_json(Path::new(&sidecar), &manifest)?;
    Ok(perturbed)
}

/// Overrides applied on top of a spec.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub overwrite: bool,
}

pub struct RunResult {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub model: DstModel,
}

/// Spec with the command-line overrides applied.
pub fn effective_spec(spec: &ExperimentSpec, opts: &RunOptions) -> ExperimentSpec {
    let mut spec = spec.clone();
    if let Some(seed) = opts.seed {
        spec.train.seed = seed;
    }
    if let Some(dir) = &opts.output_dir {
        spec.output_dir = dir.clone();
    }
    spec
}

/// Trains one spec and evaluates it on its eval split.
///
/// The run directory receives `spec.json` (the frozen effective spec),
/// `inputs.json` (hashes of every input), `metrics.jsonl`, the `step-{n}`
/// checkpoints, the predicted and oracle-status prediction dumps and
/// `report.json`.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunResult> {
    let spec = effective_spec(spec, opts);
    spec.validate()?;
    let base = spec.output_dir.join(format!("{}-seed{}", spec.name, spec.seed()));
    let dir = fresh_dir(&base, opts.overwrite)?;
    write_file(&dir.join("spec.json"), spec.to_json() + "\n")?;
    let inputs = spec.resolve()?;
    write_json(&dir.join("inputs.json"), &inputs.hashes())?;
    log::info!("training {} into {}", spec.name, dir.display());

    let outcome = train(&inputs.train, &inputs.aux, &spec.train, Some(&dir))?;
    if outcome.skipped_spans > 0 {
        log::warn!("{} gold spans could not be located and were skipped", outcome.skipped_spans);
    }
    let eval = inputs.eval_corpus(spec.eval_split);
    let preds = predict_corpus(&outcome.model, eval, true, spec.train.execution)?;
    let oracle = preds.oracle.unwrap_or_default();
    write_predictions(dir.join("predictions.jsonl"), &preds.predicted)?;
    write_predictions(dir.join("oracle_predictions.jsonl"), &oracle)?;
    let mut report = evaluate(
        &Predictions::from_records(&preds.predicted),
        Some(&Predictions::from_records(&oracle)),
        eval,
    )?;
    report.config_hash = Some(spec.hash());
    report.write(dir.join("report.json"))?;
    Ok(RunResult {
        dir,
        report,
        model: outcome.model,
    })
}

/// Evaluates a prediction dump, optionally with an oracle-status dump.
pub fn eval_predictions(preds: &[PredictionRecord], oracle: Option<&[PredictionRecord]>, corpus: &Corpus) -> Result<EvalReport> {
    let oracle = oracle.map(Predictions::from_records);
    Ok(evaluate(&Predictions::from_records(preds), oracle.as_ref(), corpus)?)
}

pub fn summary_lines(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "jga_all={:?}", report.jga_all);
    let _ = writeln!(out, "jga_short={:?}", report.jga_short);
    let _ = writeln!(out, "jga_long={:?}", report.jga_long);
    if let Some(o) = report.oracle_jga {
        let _ = writeln!(out, "oracle_jga={o:?}");
    }
    let _ = writeln!(
        out,
        "buckets: short <= {} utterances ({} turns), long >= {} utterances ({} turns), {} turns total",
        report.thresholds.short_max_utts,
        report.counts.short.turns,
        report.thresholds.long_min_utts,
        report.counts.long.turns,
        report.counts.all.turns
    );
    out
}

pub fn compare(before: &EvalReport, after: &EvalReport) -> Result<Comparison> {
    Ok(compare_reports(before, after)?)
}

/// Axes of the perturbation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub sources: Vec<InsertionSource>,
    pub probabilities: Vec<f64>,
    pub num_insertions: Vec<usize>,
    pub positions: Vec<PositionPolicy>,
}

impl Default for SweepGrid {
    /// Every source and position policy with p in {0.2, 0.4, 0.6} and
    /// N in {2, 3, 4}.
    fn default() -> Self {
        SweepGrid {
            sources: InsertionSource::ALL.to_vec(),
            probabilities: vec![0.2, 0.4, 0.6],
            num_insertions: vec![2, 3, 4],
            positions: PositionPolicy::ALL.to_vec(),
        }
    }
}

impl SweepGrid {
    /// Every cell, in source-major order.
    pub fn cells(&self) -> Vec<PerturbationConfig> {
        let mut out = Vec::new();
        for &source in &self.sources {
            for &probability in &self.probabilities {
                for &num_insertions in &self.num_insertions {
                    for &position_policy in &self.positions {
                        out.push(PerturbationConfig {
                            probability,
                            num_insertions,
                            source,
                            position_policy,
                            seed: 0,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: PerturbationConfig,
    pub outcome: std::result::Result<(EvalReport, PathBuf), String>,
}

fn cell_name(base: &str, c: &PerturbationConfig) -> String {
    format!(
        "{base}-{}-p{}-n{}-{}",
        c.source.as_str(),
        c.probability,
        c.num_insertions,
        c.position_policy.as_str()
    )
}

/// Trains and evaluates every grid cell under `out`, `jobs` cells at a
/// time. Failed cells are recorded and the sweep carries on. Writes
/// `sweep.csv` and `by_axis.csv`.
pub fn sweep(base: &ExperimentSpec, grid: &SweepGrid, out: &Path, jobs: usize, overwrite: bool) -> Result<Vec<CellResult>> {
    let cells = grid.cells();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(i) else { break };
        let mut spec = base.clone();
        spec.name = cell_name(&base.name, cell);
        spec.output_dir = out.to_path_buf();
        spec.train.perturbation = Some(PerturbationConfig {
            seed: spec.train.seed,
            ..cell.clone()
        });
        let opts = RunOptions {
            overwrite,
            ..RunOptions::default()
        };
        let outcome = match run_experiment(&spec, &opts) {
            Ok(r) => {
                log::info!("cell {}/{} {}: jga {:.4}", i + 1, cells.len(), spec.name, r.report.jga_all);
                Ok((r.report, r.dir))
            }
            Err(e) => {
                log::error!("cell {}/{} {} failed: {e:#}", i + 1, cells.len(), spec.name);
                Err(format!("{e:#}"))
            }
        };
        results.lock().unwrap()[i] = Some(CellResult {
            cell: cell.clone(),
            outcome,
        });
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(worker);
        }
    });
    let results: Vec<CellResult> = results.into_inner().unwrap().into_iter().map(Option::unwrap).collect();
    write_file(&out.join("sweep.csv"), sweep_csv(&results))?;
    write_file(&out.join("by_axis.csv"), by_axis_csv(&results))?;
    Ok(results)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const SWEEP_HEADER: &str = "source,probability,num_insertions,position,status,jga_all,jga_short,jga_long,oracle_jga,run_dir";

/// One row per cell.
pub fn sweep_csv(results: &[CellResult]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in results {
        let c = &r.cell;
        let _ = write!(
            out,
            "{},{},{},{},",
            c.source.as_str(),
            c.probability,
            c.num_insertions,
            c.position_policy.as_str()
        );
        match &r.outcome {
            Ok((rep, dir)) => {
                let oracle = rep.oracle_jga.map(|o| o.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "ok,{},{},{},{},{}",
                    rep.jga_all,
                    rep.jga_short,
                    rep.jga_long,
                    oracle,
                    csv_field(&dir.display().to_string())
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{},,,,,", csv_field(&format!("failed: {e}")));
            }
        }
    }
    out
}

/// Per-axis layout: each axis varied around the reference
/// cell (auxiliary source, p = 0.2, N = 2, random boundary).
pub fn by_axis_csv(results: &[CellResult]) -> String {
    let reference = PerturbationConfig::default();
    let mut out = String::from("axis,value,jga_all\n");
    let mut row = |axis: &str, value: String, pick: &dyn Fn(&PerturbationConfig) -> bool| {
        let hit = results.iter().find(|r| {
            let c = &r.cell;
            pick(c)
        });
        let jga = match hit.map(|r| &r.outcome) {
            Some(Ok((rep, _))) => rep.jga_all.to_string(),
            Some(Err(_)) => "failed".to_string(),
            None => String::new(),
        };
        let _ = writeln!(out, "{axis},{value},{jga}");
    };
    let same = |a: &PerturbationConfig, b: &PerturbationConfig| {
        a.source == b.source
            && a.probability == b.probability
            && a.num_insertions == b.num_insertions
            && a.position_policy == b.position_policy
    };
    let mut axes: Vec<(&str, Vec<PerturbationConfig>)> = Vec::new();
    let mut collect = |axis: &'static str, vary: &dyn Fn(&PerturbationConfig) -> bool| {
        let mut seen: Vec<PerturbationConfig> = Vec::new();
        for r in results {
            if vary(&r.cell) && !seen.iter().any(|s| same(s, &r.cell)) {
                seen.push(r.cell.clone());
            }
        }
        axes.push((axis, seen));
    };
    collect("num_insertions", &|c| {
        c.source == reference.source && c.probability == reference.probability && c.position_policy == reference.position_policy
    });
    collect("probability", &|c| {
        c.source == reference.source && c.num_insertions == reference.num_insertions && c.position_policy == reference.position_policy
    });
    collect("source", &|c| {
        c.probability == reference.probability && c.num_insertions == reference.num_insertions && c.position_policy == reference.position_policy
    });
    collect("position", &|c| {
        c.source == reference.source && c.probability == reference.probability && c.num_insertions == reference.num_insertions
    });
    for (axis, cells) in axes {
        for c in cells {
            let value = match axis {
                "num_insertions" => c.num_insertions.to_string(),
                "probability" => c.probability.to_string(),
                "source" => c.source.as_str().to_string(),
                _ => c.position_policy.as_str().to_string(),
            };
            row(axis, value, &|x| same(x, &c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_the_full_three_by_three_by_three_by_three() {
        let cells = SweepGrid::default().cells();
        assert_eq!(cells.len(), 81);
        let mut keys: Vec<String> = cells.iter().map(|c| cell_name("g", c)).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 81);
    }

    #[test]
    fn failed_cells_are_marked_and_rows_stay_complete() {
        let cells = SweepGrid::default().cells();
        let results: Vec<CellResult> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| CellResult {
                cell: c.clone(),
                outcome: Err(format!("cell {i}, broken")),
            })
            .collect();
        let csv = sweep_csv(&results);
        assert_eq!(csv.lines().count(), 82);
        assert!(csv.lines().nth(1).unwrap().contains("\"failed: cell 0, broken\""));
        let table = by_axis_csv(&results);
        // four axes, three values each, around the reference cell
        assert_eq!(table.lines().count(), 13);
        assert!(table.lines().skip(1).all(|l| l.ends_with(",failed")));
    }

    #[test]
    fn by_axis_reads_the_reference_neighbourhood() {
        let (corpus, records) = dstlab::fixtures::eval_fixture();
        let fixture = evaluate(&Predictions::from_records(&records), None, &corpus).unwrap();
        let grid = SweepGrid::default();
        let results: Vec<CellResult> = grid
            .cells()
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut report = fixture.clone();
                report.jga_all = i as f64;
                CellResult {
                    cell: c,
                    outcome: Ok((report, PathBuf::new())),
                }
            })
            .collect();
        let table = by_axis_csv(&results);
        // the reference cell (auxiliary, 0.2, 2, random_boundary) is index 0
        assert!(table.contains("num_insertions,2,0\n"));
        assert!(table.contains("source,auxiliary,0\n"));
        // p = 0.4 with everything else at the reference: 1 * 9
        assert!(table.contains("probability,0.4,9\n"));
        // target source: 27
        assert!(table.contains("source,target,27\n"));
    }
}
