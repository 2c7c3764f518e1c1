//! Experiment specifications and the inputs they resolve to.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dstlab::corpus::synth::builtin_schema;
use dstlab::dst_model::StatusMode;
use dstlab::perturbation::PerturbationConfig;
use dstlab::corpus::{auxiliary_corpus, generate_synthetic, ingest_multiwoz, split_corpus, AuxSource, Corpus, Split, SynthConfig};
use dstlab::rng::derive_seed;
use dstlab::schema::{load_schema, Schema};
use dstlab::training::{MlmMode, TrainConfig};

use crate::util::sha256_hex;

/// Where the dialogues of a run come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSpec {
    /// Dialogue-JSON files, one per split.
    Files { train: PathBuf, dev: PathBuf, test: PathBuf },
    /// Generated on the fly and split by `config.split_fractions`. Without a
    /// seed the corpus seed is derived from the run seed.
    Synthetic {
        #[serde(default)]
        config: SynthConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuxSpec {
    File { path: PathBuf },
    Synthetic { seed: u64, size: usize },
}

impl AuxSpec {
    fn source(&self) -> AuxSource {
        match self {
            AuxSpec::File { path } => AuxSource::File(path.clone()),
            AuxSpec::Synthetic { seed, size } => AuxSource::Synthetic {
                seed: *seed,
                size: *size,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Dev,
    Test,
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Schema file for file corpora; the built-in schema when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    pub corpus: CorpusSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<AuxSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval_split: EvalSplit,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentSpec {
    pub fn synthetic(name: &str, config: SynthConfig, train: TrainConfig) -> Self {
        ExperimentSpec {
            name: name.to_string(),
            schema: None,
            corpus: CorpusSpec::Synthetic { config, seed: None },
            aux: None,
            train,
            eval_split: EvalSplit::Dev,
            output_dir: default_output_dir(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: ExperimentSpec =
            serde_json::from_str(&text).with_context(|| format!("parsing experiment spec {}", path.display()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            bail!("experiment name {:?} must be a non-empty single path component", self.name);
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs serialize")
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut spec = self.clone();
        spec.output_dir = PathBuf::new();
        sha256_hex(spec.to_json().as_bytes())
    }

    fn load_schema(&self) -> Result<Arc<Schema>> {
        Ok(Arc::new(match &self.schema {
            Some(p) => load_schema(p).with_context(|| format!("loading schema {}", p.display()))?,
            None => builtin_schema(),
        }))
    }

    /// Loads or generates the three splits and the auxiliary pool.
    pub fn resolve(&self) -> Result<Inputs> {
        let [train, dev, test] = match &self.corpus {
            CorpusSpec::Files { train, dev, test } => {
                let schema = self.load_schema()?;
                let read = |p: &PathBuf, split| {
                    ingest_multiwoz(p, schema.clone(), split).with_context(|| format!("loading corpus {}", p.display()))
                };
                [read(train, Split::Train)?, read(dev, Split::Dev)?, read(test, Split::Test)?]
            }
            CorpusSpec::Synthetic { config, seed } => {
                let seed = seed.unwrap_or_else(|| derive_seed(self.seed(), "corpus"));
                let corpus = generate_synthetic(config, seed)?;
                split_corpus(corpus, config.split_fractions)
            }
        };
        let aux = match &self.aux {
            Some(a) => auxiliary_corpus(&[a.source()], Some(&train))?,
            None => Vec::new(),
        };
        Ok(Inputs { train, dev, test, aux })
    }
}

/// Resolved inputs of a run.
pub struct Inputs {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub aux: Vec<String>,
}

impl Inputs {
    pub fn eval_corpus(&self, split: EvalSplit) -> &Corpus {
        match split {
            EvalSplit::Dev => &self.dev,
            EvalSplit::Test => &self.test,
        }
    }

    /// Identity hashes recorded next to every run.
    pub fn hashes(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": sha256_hex(self.train.schema.fingerprint().as_bytes()),
            "train": self.train.identity_hash(),
            "dev": self.dev.identity_hash(),
            "test": self.test.identity_hash(),
            "aux": sha256_hex(self.aux.join("\n").as_bytes()),
            "aux_size": self.aux.len(),
        })
    }
}

/// Rungs of the ablation ladder, each adding one ingredient to the last.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Flat status head, no MLM, no insertion.
    Base,
    Hier,
    ContinuedMlm,
    AuxMlm,
    Insertion,
}

impl Preset {
    pub const LADDER: [Preset; 5] = [
        Preset::Base,
        Preset::Hier,
        Preset::ContinuedMlm,
        Preset::AuxMlm,
        Preset::Insertion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Base => "base",
            Preset::Hier => "hier",
            Preset::ContinuedMlm => "continued-mlm",
            Preset::AuxMlm => "aux-mlm",
            Preset::Insertion => "insertion",
        }
    }

    /// `base` with this rung's switches applied. Rungs from `aux-mlm` on
    /// need an auxiliary pool and get a synthetic one if `base` has none.
    pub fn apply(self, base: &ExperimentSpec) -> ExperimentSpec {
        let mut spec = base.clone();
        spec.name = format!("{}-{}", base.name, self.as_str());
        let rank = Preset::LADDER.iter().position(|p| *p == self).expect("preset on ladder");
        spec.train.status_mode = if rank >= 1 {
            StatusMode::Hierarchical
        } else {
            StatusMode::Flat
        };
        spec.train.mlm_mode = match rank {
            0 | 1 => MlmMode::Off,
            2 => MlmMode::TargetOnly,
            _ => MlmMode::TargetPlusAuxiliary,
        };
        if rank >= 3 && spec.aux.is_none() {
            spec.aux = Some(AuxSpec::Synthetic {
                seed: derive_seed(spec.seed(), "aux"),
                size: 2000,
            });
        }
        spec.train.perturbation = (rank >= 4).then(|| PerturbationConfig {
            seed: spec.seed(),
            ..PerturbationConfig::default()
        });
        spec
    }
}
