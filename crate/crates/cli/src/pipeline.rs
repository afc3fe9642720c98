//! `msa run`: data, censoring, cross-validation and result files.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use msa_core::data::io::{load_dataset, read_graph};
use msa_core::data::MultiStateDataset;
use msa_core::metrics::write_series_csv;
use msa_core::model::{cross_validate, save_checkpoint, CvSummary};
use msa_core::pseudo::write_decision_log;
use msa_core::simulate::{
    apply_incremental_censoring, apply_induced_censoring, simulate_cohort, Cohort, CohortConfig, IntensitySpec,
};
use serde::Serialize;

use crate::config::{Censoring, DataSource, Evaluation, ExperimentConfig};
use crate::output::{write_cells_csv, write_summary_csv};

/// Observed data and, when known, the complete trajectories of the same subjects.
pub struct Materialized {
    pub observed: MultiStateDataset,
    pub truth: Option<MultiStateDataset>,
}

/// Builds the analysis dataset: loads or simulates it, then applies the
/// censoring setting.
pub fn materialize(cfg: &ExperimentConfig) -> Result<Materialized> {
    match &cfg.data {
        DataSource::Simulate {
            family,
            n,
            tau,
            censoring_rate,
        } => {
            let spec = IntensitySpec::family(*family);
            let base_n = match cfg.censoring {
                Censoring::Incremental { rate } => (((1.0 - rate) * *n as f64).round() as usize).max(1),
                _ => *n,
            };
            let base = simulate_cohort(
                &spec,
                &CohortConfig {
                    n: base_n,
                    tau: *tau,
                    censoring_rate: *censoring_rate,
                    seed: cfg.seed,
                },
            )?;
            let cohort = match cfg.censoring {
                Censoring::None => base,
                Censoring::Incremental { rate } => apply_incremental_censoring(&base, &spec, rate, cfg.seed)?,
                Censoring::Induced { rate } => Cohort {
                    observed: apply_induced_censoring(&base.observed, rate, cfg.seed)?,
                    truth: base.truth,
                },
            };
            Ok(Materialized {
                observed: cohort.observed,
                truth: Some(cohort.truth),
            })
        }
        DataSource::Csv {
            records,
            covariates,
            graph,
            horizon,
            truth,
        } => {
            let g = read_graph(graph)?;
            let observed = load_dataset(records, covariates.as_deref(), g.clone(), *horizon)?;
            let truth = match truth {
                Some(p) => {
                    let t = load_dataset(p, covariates.as_deref(), g, None)?;
                    let aligned = t.len() == observed.len()
                        && t.subjects().iter().zip(observed.subjects()).all(|(a, b)| a.id == b.id);
                    if !aligned {
                        return Err(anyhow!("truth {} does not list the same subjects in the same order", p.display()));
                    }
                    Some(t)
                }
                None => None,
            };
            let observed = match cfg.censoring {
                Censoring::Induced { rate } => apply_induced_censoring(&observed, rate, cfg.seed)?,
                _ => observed,
            };
            Ok(Materialized { observed, truth })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Seeds {
    pub master: u64,
    pub simulation: u64,
    pub censoring: u64,
    pub markov_tests: u64,
    /// Fold-assignment seed of each CV run.
    pub cv_runs: Vec<u64>,
    /// Training seed offset of each `(run, fold)` cell: `run * folds + fold`.
    pub cell_offsets: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub subjects: usize,
    pub censoring_rate: f64,
    pub weighting: String,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Seeds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_model: Option<String>,
    pub files: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub status: String,
}

/// Result of a completed run.
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub summary: CvSummary,
    pub manifest: Manifest,
}

fn seeds(cfg: &ExperimentConfig) -> Seeds {
    Seeds {
        master: cfg.seed,
        simulation: cfg.seed,
        censoring: cfg.seed,
        markov_tests: cfg.seed,
        cv_runs: (0..cfg.cv.runs as u64).map(|r| cfg.seed.wrapping_add(r)).collect(),
        cell_offsets: (0..(cfg.cv.runs * cfg.cv.folds) as u64).collect(),
    }
}

struct Stages {
    records: Vec<StageRecord>,
}

impl Stages {
    fn run<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        log::info!("stage {stage}");
        match f() {
            Ok(v) => {
                self.records.push(StageRecord {
                    stage: stage.into(),
                    status: "ok".into(),
                    error: None,
                });
                Ok(v)
            }
            Err(e) => {
                let msg = format!("{e:#}");
                self.records.push(StageRecord {
                    stage: stage.into(),
                    status: "failed".into(),
                    error: Some(msg.clone()),
                });
                Err(e.context(format!("stage {stage} failed")))
            }
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Runs the experiment and writes its files into `cfg.out` (or
/// `results/<name>`). The manifest is written on success and on failure.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let out_dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
    let mut manifest = Manifest {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        config: serde_json::from_str(&cfg.canonical_json()).expect("canonical json"),
        seeds: seeds(cfg),
        data: None,
        best_model: None,
        files: vec![],
        stages: vec![],
        status: "failed".into(),
    };
    let mut stages = Stages { records: vec![] };
    let result = run_stages(cfg, &out_dir, &mut stages, &mut manifest);
    manifest.stages = stages.records;
    if result.is_ok() {
        manifest.status = "success".into();
    }
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join("manifest.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    drop(w);
    let summary = result?;
    Ok(RunOutput {
        out_dir,
        summary,
        manifest,
    })
}

fn run_stages(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    stages: &mut Stages,
    manifest: &mut Manifest,
) -> Result<CvSummary> {
    stages.run("config", || cfg.validate())?;
    let data = stages.run("data", || materialize(cfg))?;
    let s = cfg.conditioning_time();
    let grid = stages.run("grid", || cfg.grid.resolve(&data.observed, s))?;
    let truth = match cfg.evaluation {
        Evaluation::Ipcw => None,
        Evaluation::Auto => data.truth.as_ref(),
        Evaluation::TrueState => Some(
            data.truth
                .as_ref()
                .ok_or_else(|| anyhow!("evaluation true-state needs complete trajectories"))?,
        ),
    };
    let candidates = cfg.all_candidates();
    let summary = stages.run("cross-validation", || {
        Ok(cross_validate(
            &data.observed,
            truth,
            cfg.task,
            &grid,
            s,
            &cfg.selection(),
            &candidates,
            &cfg.cv_settings(),
        )?)
    })?;
    manifest.data = Some(DataSummary {
        subjects: data.observed.len(),
        censoring_rate: data.observed.censoring_rate(),
        weighting: summary.weighting.to_string(),
        grid: grid.points().to_vec(),
    });
    manifest.best_model = summary.best.map(|b| summary.candidates[b].name.clone());
    let files = stages.run("outputs", || write_outputs(out_dir, &summary))?;
    manifest.files = files;
    Ok(summary)
}

fn write_outputs(out_dir: &Path, summary: &CvSummary) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir.join("checkpoints")).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut files = Vec::new();
    write_summary_csv(summary, create(&out_dir.join("summary.csv"))?)?;
    files.push("summary.csv".to_string());
    write_cells_csv(summary, create(&out_dir.join("cells.csv"))?)?;
    files.push("cells.csv".to_string());
    for c in &summary.candidates {
        let (b, a) = c.series(summary);
        let name = format!("series_{}.csv", c.name);
        write_series_csv(&b, &a, create(&out_dir.join(&name))?)?;
        files.push(name);
    }
    write_decision_log(&summary.decisions, create(&out_dir.join("decisions.csv"))?)?;
    files.push("decisions.csv".to_string());
    for (c, model) in summary.candidates.iter().zip(&summary.first_cell_models) {
        if let Some(m) = model {
            let name = format!("checkpoints/{}.json", c.name);
            save_checkpoint(m, create(&out_dir.join(&name))?)?;
            files.push(name);
        }
    }
    Ok(files)
}
