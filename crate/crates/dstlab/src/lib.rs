//! Command-line front end for dstlab: corpus generation, perturbation,
//! training runs, evaluation, report comparison and the perturbation sweep.

pub mod commands;
pub mod spec;
pub mod util;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use dstlab::corpus::synth::builtin_schema;
use dstlab::corpus::{auxiliary_corpus, ingest_multiwoz, AuxSource, Corpus, Split, SynthConfig};
use dstlab::dst_model::read_predictions;
use dstlab::evaluation::EvalReport;
use dstlab::perturbation::{InsertionSource, PerturbationConfig, PositionPolicy};
use dstlab::schema::load_schema;
use dstlab::training::TrainConfig;

use commands::{RunOptions, SweepGrid};
use spec::{ExperimentSpec, Preset};

#[derive(Debug, Parser)]
#[command(name = "dstlab", version, about = "Dialogue state tracking experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus split into train/dev/test files.
    Generate(GenerateArgs),
    /// Insert distracting turns into a corpus.
    Perturb(PerturbArgs),
    /// Train one experiment and evaluate it on its eval split.
    Train(TrainArgs),
    /// Score a prediction dump against a gold corpus.
    Eval(EvalArgs),
    /// Relative gains of one report over another.
    Compare(CompareArgs),
    /// Train and evaluate every cell of the perturbation grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Root seed; overrides the seed in any config file.
    #[arg(long, env = "DSTLAB_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// SynthConfig JSON; defaults are used for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_dialogues: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Input corpus (dialogue-JSON).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output corpus; a `.manifest.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// PerturbationConfig JSON. Individual flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Schema JSON; the built-in schema when absent.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub probability: Option<f64>,
    #[arg(long)]
    pub num_insertions: Option<usize>,
    /// auxiliary, target or random_words.
    #[arg(long, value_parser = parse_snake::<InsertionSource>)]
    pub source: Option<InsertionSource>,
    /// random_boundary, after_user_only or after_agent_only.
    #[arg(long, value_parser = parse_snake::<PositionPolicy>)]
    pub position: Option<PositionPolicy>,
    /// Auxiliary utterances, one per line.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    /// Size of a generated auxiliary pool, used when --aux is absent.
    #[arg(long)]
    pub aux_synthetic: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub seed: SeedArg,
    /// Parent directory for run directories.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Reuse an existing run directory instead of picking a fresh one.
    #[arg(long)]
    pub overwrite: bool,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed.seed,
            output_dir: self.output_dir.clone(),
            overwrite: self.overwrite,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// ExperimentSpec JSON.
    #[arg(long, required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Ablation rung applied to the spec, or to a synthetic default spec
    /// when no --config is given.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction dump (JSON lines).
    #[arg(long, required_unless_present = "model")]
    pub predictions: Option<PathBuf>,
    /// Checkpoint directory to predict with instead of a dump.
    #[arg(long, conflicts_with = "predictions")]
    pub model: Option<PathBuf>,
    /// Gold corpus (dialogue-JSON).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Oracle-status prediction dump.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Where to write the report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    /// Plot data: bucket, before, after, relative gain.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Base ExperimentSpec JSON; the perturbation setting of each cell
    /// replaces its own.
    #[arg(long)]
    pub config: PathBuf,
    /// SweepGrid JSON; the full 3x3x3x3 grid when absent.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub run: RunArgs,
}

fn parse_snake<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_corpus(path: &Path, schema: Option<&Path>, split: Split) -> Result<Corpus> {
    let schema = Arc::new(match schema {
        Some(p) => load_schema(p).with_context(|| format!("loading schema {}", p.display()))?,
        None => builtin_schema(),
    });
    ingest_multiwoz(path, schema, split).with_context(|| format!("loading corpus {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Perturb(a) => perturb(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut config: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(n) = a.num_dialogues {
        config.num_dialogues = n;
    }
    let seed = a.seed.seed.unwrap_or(0);
    let manifest = commands::generate(&config, seed, &a.out)?;
    for (name, f) in &manifest.files {
        println!("{name}: {} dialogues, {} gold turns, sha256 {}", f.dialogues, f.gold_turns, f.sha256);
    }
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let mut cfg: PerturbationConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => PerturbationConfig::default(),
    };
    if let Some(p) = a.probability {
        cfg.probability = p;
    }
    if let Some(n) = a.num_insertions {
        cfg.num_insertions = n;
    }
    if let Some(s) = a.source {
        cfg.source = s;
    }
    if let Some(p) = a.position {
        cfg.position_policy = p;
    }
    if let Some(seed) = a.seed.seed {
        cfg.seed = seed;
    }
    let corpus = load_corpus(&a.input, a.schema.as_deref(), Split::Train)?;
    let sources: Vec<AuxSource> = match (&a.aux, a.aux_synthetic) {
        (Some(p), _) => vec![AuxSource::File(p.clone())],
        (None, Some(size)) => vec![AuxSource::Synthetic { seed: cfg.seed, size }],
        (None, None) => Vec::new(),
    };
    let aux = if sources.is_empty() {
        Vec::new()
    } else {
        auxiliary_corpus(&sources, Some(&corpus))?
    };
    let n = commands::perturb_corpus_file(&corpus, &cfg, &aux, &a.out)?;
    println!("perturbed {n} of {} dialogues", corpus.dialogues.len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::synthetic("run", SynthConfig::default(), TrainConfig::default()),
    };
    if let Some(seed) = a.run.seed.seed {
        // presets derive pool seeds from the run seed
        spec.train.seed = seed;
    }
    if let Some(p) = a.preset {
        spec = p.apply(&spec);
    }
    if let Some(steps) = a.steps {
        spec.train.steps = steps;
    }
    let result = commands::run_experiment(&spec, &a.run.options())?;
    println!("run directory: {}", result.dir.display());
    print!("{}", commands::summary_lines(&result.report));
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus, a.schema.as_deref(), Split::Test)?;
    let report = match (&a.predictions, &a.model) {
        (Some(p), _) => {
            let preds = read_predictions(p).with_context(|| format!("reading {}", p.display()))?;
            let oracle = match &a.oracle {
                Some(o) => Some(read_predictions(o).with_context(|| format!("reading {}", o.display()))?),
                None => None,
            };
            commands::eval_predictions(&preds, oracle.as_deref(), &corpus)?
        }
        (None, Some(dir)) => {
            let model = dstlab::dst_model::DstModel::load(dir)
                .with_context(|| format!("loading checkpoint {}", dir.display()))?;
            let preds =
                dstlab::dst_model::predict_corpus(&model, &corpus, true, dstlab::Execution::Parallel)?;
            commands::eval_predictions(&preds.predicted, preds.oracle.as_deref(), &corpus)?
        }
        (None, None) => bail!("either --predictions or --model is required"),
    };
    if let Some(out) = &a.out {
        report.write(out).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", commands::summary_lines(&report));
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let read = |p: &Path| EvalReport::read(p).with_context(|| format!("reading report {}", p.display()));
    let cmp = commands::compare(&read(&a.before)?, &read(&a.after)?)?;
    if let Some(p) = &a.csv {
        util::write_file(p, cmp.to_csv())?;
    }
    if let Some(p) = &a.json {
        util::write_json(p, &cmp)?;
    }
    print!("{}", cmp.to_table());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut base = ExperimentSpec::load(&a.config)?;
    if let Some(seed) = a.run.seed.seed {
        base.train.seed = seed;
    }
    let grid: SweepGrid = match &a.grid {
        Some(p) => read_json(p)?,
        None => SweepGrid::default(),
    };
    let out = a.run.output_dir.clone().unwrap_or_else(|| base.output_dir.join(format!("{}-sweep", base.name)));
    let results = commands::sweep(&base, &grid, &out, a.jobs, a.run.overwrite)?;
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    println!("{} cells, {failed} failed; table in {}", results.len(), out.join("sweep.csv").display());
    if failed == results.len() && !results.is_empty() {
        bail!("every sweep cell failed");
    }
    Ok(())
}
