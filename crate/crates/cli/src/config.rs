//! Experiment configuration (JSON) and its canonical hash.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use msa_core::data::MultiStateDataset;
use msa_core::estimators::TimeGrid;
use msa_core::markov_tests::{Adjustment, TestMethod, TestOptions};
use msa_core::model::{Activation, Architecture, Candidate, CvSettings, ModelKind, TrainConfig};
use msa_core::pseudo::{JackknifeMode, SelectionOptions, Task};
use msa_core::simulate::Family;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// One of the four simulation designs. `n` is the final cohort size,
    /// including subjects appended by incremental censoring.
    Simulate {
        family: Family,
        n: usize,
        /// Administrative censoring time; paths run to absorption when absent.
        #[serde(default)]
        tau: Option<f64>,
        #[serde(default)]
        censoring_rate: Option<f64>,
    },
    /// Long-format records, optional covariates and a graph JSON; `truth`
    /// optionally holds complete trajectories of the same subjects.
    Csv {
        records: PathBuf,
        #[serde(default)]
        covariates: Option<PathBuf>,
        graph: PathBuf,
        #[serde(default)]
        horizon: Option<f64>,
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Censoring {
    #[default]
    None,
    Incremental {
        rate: f64,
    },
    Induced {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GridSpec {
    Linspace { start: f64, stop: f64, points: usize },
    /// Levels `i / (points + 1)` of the observed transition times after `s`.
    Quantiles {
        #[serde(default = "default_quantiles")]
        points: usize,
    },
    Explicit { points: Vec<f64> },
}

fn default_quantiles() -> usize {
    30
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Quantiles {
            points: default_quantiles(),
        }
    }
}

impl GridSpec {
    /// Parses `start:stop:M`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            bail!("grid {text:?} is not of the form start:stop:M");
        }
        let num = |v: &str| v.trim().parse::<f64>().with_context(|| format!("bad grid bound {v:?}"));
        Ok(GridSpec::Linspace {
            start: num(parts[0])?,
            stop: num(parts[1])?,
            points: parts[2].trim().parse().with_context(|| format!("bad grid size {:?}", parts[2]))?,
        })
    }

    pub fn resolve(&self, dataset: &MultiStateDataset, after: f64) -> Result<TimeGrid> {
        Ok(match self {
            GridSpec::Linspace { start, stop, points } => TimeGrid::linspace(*start, *stop, *points)?,
            GridSpec::Quantiles { points } => TimeGrid::event_quantiles(dataset, *points, after)?,
            GridSpec::Explicit { points } => TimeGrid::new(points.clone())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evaluation {
    /// True states when complete trajectories are available, IPCW otherwise.
    #[default]
    Auto,
    TrueState,
    Ipcw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSettings {
    pub adjustment: Adjustment,
    pub permutations: usize,
    /// Test driving estimator selection; CA for the dynamic SOP and
    /// log-rank for TP when absent.
    pub method: Option<TestMethod>,
}

impl Default for TestSettings {
    fn default() -> Self {
        let t = TestOptions::default();
        Self {
            adjustment: t.adjustment,
            permutations: t.permutations,
            method: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub runs: usize,
    pub validation_fraction: f64,
    pub renormalize: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        let c = CvSettings::default();
        Self {
            folds: c.folds,
            runs: c.runs,
            validation_fraction: c.validation_fraction,
            renormalize: c.renormalize,
        }
    }
}

/// Hyperparameter grid expanded into msPseudo candidates (Cartesian product).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub hidden_layers: Vec<Vec<usize>>,
    #[serde(default = "default_activations")]
    pub activation: Vec<Activation>,
    pub dropout_rate: Vec<f64>,
    pub learning_rate: Vec<f64>,
    #[serde(default = "default_batch_sizes")]
    pub batch_size: Vec<usize>,
    /// Remaining training settings shared by all grid points.
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_activations() -> Vec<Activation> {
    vec![Activation::Relu]
}

fn default_batch_sizes() -> Vec<usize> {
    vec![TrainConfig::default().batch_size]
}

impl SearchGrid {
    pub fn expand(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for h in &self.hidden_layers {
            for &activation in &self.activation {
                for &d in &self.dropout_rate {
                    for &lr in &self.learning_rate {
                        for &b in &self.batch_size {
                            let widths: Vec<String> = h.iter().map(|w| w.to_string()).collect();
                            let act = match activation {
                                Activation::Relu => "relu",
                                Activation::Tanh => "tanh",
                            };
                            out.push(Candidate {
                                name: format!("mspseudo-h{}-{act}-d{d}-lr{lr}-b{b}", widths.join("x")),
                                kind: ModelKind::MsPseudo {
                                    architecture: Architecture {
                                        hidden_layers: h.clone(),
                                        activation,
                                        dropout_rate: d,
                                        seed: 0,
                                    },
                                },
                                train: TrainConfig {
                                    learning_rate: lr,
                                    batch_size: b,
                                    ..self.train.clone()
                                },
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    #[serde(default)]
    pub censoring: Censoring,
    pub task: Task,
    /// Landmark time; required for `dynamic-sop` and `tp`.
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_epsilon")]
    pub epsilon: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub tests: TestSettings,
    #[serde(default)]
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub search: Option<SearchGrid>,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub evaluation: Evaluation,
    /// Master seed for simulation, censoring, folds, tests and training.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_epsilon() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a config; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv {
            records,
            covariates,
            graph,
            truth,
            ..
        } = &mut cfg.data
        {
            for p in [Some(records), covariates.as_mut(), Some(graph), truth.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Landmark time used by the task (0 for the SOP).
    pub fn conditioning_time(&self) -> f64 {
        match self.task {
            Task::Sop => 0.0,
            _ => self.s.unwrap_or(0.0),
        }
    }

    /// Explicit candidates followed by the expanded search grid.
    pub fn all_candidates(&self) -> Vec<Candidate> {
        let mut out = self.candidates.clone();
        if let Some(g) = &self.search {
            out.extend(g.expand());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.task != Task::Sop && self.s.is_none() {
            bail!("field `s` is required for task {}", self.task);
        }
        if let Some(s) = self.s {
            if !(s.is_finite() && s >= 0.0) {
                bail!("field `s` must be finite and non-negative");
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("field `alpha` must lie in (0, 1)");
        }
        match self.censoring {
            Censoring::None => {}
            Censoring::Incremental { rate } | Censoring::Induced { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    bail!("field `censoring.rate` must lie in [0, 1)");
                }
            }
        }
        match &self.data {
            DataSource::Simulate { n, censoring_rate, .. } => {
                if *n == 0 {
                    bail!("field `data.n` must be positive");
                }
                if censoring_rate.is_some() && matches!(self.censoring, Censoring::Incremental { .. }) {
                    bail!("incremental censoring needs an uncensored base: drop `data.censoring_rate`");
                }
            }
            DataSource::Csv {
                records,
                covariates,
                graph,
                truth,
                ..
            } => {
                for p in [Some(records), covariates.as_ref(), Some(graph), truth.as_ref()].into_iter().flatten() {
                    if !p.exists() {
                        bail!("referenced file {} does not exist", p.display());
                    }
                }
                if matches!(self.censoring, Censoring::Incremental { .. }) {
                    bail!("incremental censoring simulates new subjects and needs a `simulate` data source");
                }
            }
        }
        let candidates = self.all_candidates();
        if candidates.is_empty() {
            bail!("no candidates: set `candidates` or `search`");
        }
        for (i, c) in candidates.iter().enumerate() {
            if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)) {
                bail!("candidate name {:?} must be non-empty and use only [A-Za-z0-9._-]", c.name);
            }
            if candidates[..i].iter().any(|o| o.name == c.name) {
                bail!("duplicate candidate name {:?}", c.name);
            }
            c.train.check()?;
        }
        if self.cv.folds < 2 || self.cv.runs == 0 {
            bail!("cv needs at least 2 folds and 1 run");
        }
        Ok(())
    }

    pub fn selection(&self) -> SelectionOptions {
        SelectionOptions {
            epsilon: self.epsilon,
            alpha: self.alpha,
            test_choice: self.tests.method,
            tests: TestOptions {
                adjustment: self.tests.adjustment,
                permutations: self.tests.permutations,
                seed: self.seed,
            },
            mode: JackknifeMode::Fast,
        }
    }

    pub fn cv_settings(&self) -> CvSettings {
        CvSettings {
            folds: self.cv.folds,
            runs: self.cv.runs,
            seed: self.seed,
            validation_fraction: self.cv.validation_fraction,
            renormalize: self.cv.renormalize,
        }
    }

    /// Canonical JSON: defaults filled in, keys sorted, no whitespace, and
    /// the output directory left out.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("out");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    /// SHA-256 of [`canonical_json`](Self::canonical_json), lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
