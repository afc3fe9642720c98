//! Repeated k-fold cross-validation of pseudo-value models.
//!
//! Every `(run, fold)` cell derives pseudo values (with estimator
//! selection) on the training fold alone, fits each candidate, and scores
//! it on the held-out fold. The nonparametric reference predicts the
//! training-fold AJ/LMAJ curve of the subject's landmark group.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    mask, predict_dataset, scope_matrix, stratified_split, train_mspseudo, Architecture, LossHistory, ModelError,
    PredictionMatrix, PseudoModel, TrainConfig,
};
use crate::data::MultiStateDataset;
use crate::estimators::{landmark_members, sop_values, tp_row_values, TimeGrid};
use crate::metrics::{auc_series, brier_series, MetricSeries, TruthSource, Weighting};
use crate::pseudo::{derive_pseudo_values, DecisionTrace, EstimatorKind, PseudoValueTable, SelectionOptions, Target, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    MsPseudo { architecture: Architecture },
    LinearPseudo,
    /// Training-fold AJ/LMAJ curves: the fixed `estimator` when given,
    /// otherwise the estimator selected for each target.
    Reference {
        #[serde(default)]
        estimator: Option<EstimatorKind>,
    },
}

/// A named model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvSettings {
    pub folds: usize,
    pub runs: usize,
    pub seed: u64,
    /// Share of each training fold held out for early stopping.
    pub validation_fraction: f64,
    /// Rescale predicted SOPs to sum to one.
    pub renormalize: bool,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            folds: 5,
            runs: 5,
            seed: 0,
            validation_fraction: 0.2,
            renormalize: false,
        }
    }
}

/// Fold index of every subject: a seeded permutation dealt round-robin.
pub fn fold_assignments(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut out = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

/// Scores of one candidate on one cell, or the error that stopped it.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub run: usize,
    pub fold: usize,
    pub candidate: usize,
    pub result: Result<(MetricSeries, MetricSeries), ModelError>,
    pub history: Option<LossHistory>,
}

#[derive(Debug, Clone)]
pub struct CandidateSummary {
    pub name: String,
    pub kind: ModelKind,
    /// Mean over cells of each target's integrated Brier score.
    pub target_ibs: Vec<Option<f64>>,
    pub target_iauc: Vec<Option<f64>>,
    /// Mean and standard deviation over cells of the target-averaged values.
    pub mean_ibs: Option<f64>,
    pub sd_ibs: Option<f64>,
    pub mean_iauc: Option<f64>,
    pub sd_iauc: Option<f64>,
    /// Cell-averaged series, `targets x M`.
    pub brier: Array2<f64>,
    pub auc: Array2<f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CvSummary {
    pub task: Task,
    pub grid: TimeGrid,
    pub conditioning_time: f64,
    pub targets: Vec<Target>,
    pub weighting: Weighting,
    pub candidates: Vec<CandidateSummary>,
    /// Lowest mean iBS among the msPseudo candidates.
    pub best: Option<usize>,
    pub outcomes: Vec<FoldOutcome>,
    /// Estimator selection of every cell, `(run, fold, trace)`.
    pub decisions: Vec<(usize, usize, DecisionTrace)>,
    /// Trained models of the first cell, per candidate.
    pub first_cell_models: Vec<Option<PseudoModel>>,
}

struct Cell {
    run: usize,
    fold: usize,
    outcomes: Vec<FoldOutcome>,
    trace: DecisionTrace,
    models: Vec<Option<PseudoModel>>,
}

/// Repeated k-fold cross-validation. `truth`, when given, holds complete
/// trajectories aligned with `dataset` and switches scoring to true states;
/// otherwise held-out subjects are scored with IPCW.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    dataset: &MultiStateDataset,
    truth: Option<&MultiStateDataset>,
    task: Task,
    grid: &TimeGrid,
    s: f64,
    selection: &SelectionOptions,
    candidates: &[Candidate],
    settings: &CvSettings,
) -> Result<CvSummary, ModelError> {
    let k = settings.folds;
    if k < 2 || settings.runs == 0 {
        return Err(ModelError::InvalidSpec("cross-validation needs at least 2 folds and 1 run".into()));
    }
    if let Some(t) = truth {
        if t.len() != dataset.len() {
            return Err(ModelError::ShapeMismatch("truth does not align with the dataset".into()));
        }
    }
    let n = dataset.len();
    let needed = dataset.num_states();
    let assignments: Vec<Vec<usize>> = (0..settings.runs)
        .map(|r| fold_assignments(n, k, settings.seed.wrapping_add(r as u64)))
        .collect();
    for a in &assignments {
        for f in 0..k {
            let size = a.iter().filter(|&&v| v == f).count();
            if size < needed {
                return Err(ModelError::FoldTooSmall { fold: f, size, needed });
            }
        }
    }
    let cells: Vec<(usize, usize)> = (0..settings.runs).flat_map(|r| (0..k).map(move |f| (r, f))).collect();
    let results: Vec<Result<Cell, ModelError>> = cells
        .par_iter()
        .map(|&(run, fold)| {
            let a = &assignments[run];
            let train: Vec<usize> = (0..n).filter(|&i| a[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| a[i] == fold).collect();
            run_cell(dataset, truth, task, grid, s, selection, candidates, settings, run, fold, &train, &test)
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut decisions = Vec::new();
    let mut first_cell_models = vec![None; candidates.len()];
    for (idx, r) in results.into_iter().enumerate() {
        let cell = r?;
        if idx == 0 {
            first_cell_models = cell.models;
        }
        decisions.push((cell.run, cell.fold, cell.trace));
        outcomes.extend(cell.outcomes);
    }
    let targets = crate::pseudo::task_targets(dataset, task);
    let summaries: Vec<CandidateSummary> = candidates
        .iter()
        .enumerate()
        .map(|(c, cand)| summarize(cand, c, &outcomes, targets.len(), grid.len()))
        .collect();
    let best = summaries
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.kind, ModelKind::MsPseudo { .. }))
        .filter_map(|(i, s)| s.mean_ibs.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(CvSummary {
        task,
        grid: grid.clone(),
        conditioning_time: if task == Task::Sop { 0.0 } else { s },
        targets,
        weighting: if truth.is_some() { Weighting::TrueState } else { Weighting::Ipcw },
        candidates: summaries,
        best,
        outcomes,
        decisions,
        first_cell_models,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    dataset: &MultiStateDataset,
    truth: Option<&MultiStateDataset>,
    task: Task,
    grid: &TimeGrid,
    s: f64,
    selection: &SelectionOptions,
    candidates: &[Candidate],
    settings: &CvSettings,
    run: usize,
    fold: usize,
    train: &[usize],
    test: &[usize],
) -> Result<Cell, ModelError> {
    let train_ds = dataset.subset(train);
    let test_ds = dataset.subset(test);
    let truth_test = truth.map(|t| t.subset(test));
    let source = match &truth_test {
        Some(t) => TruthSource::Trajectories(t),
        None => TruthSource::Ipcw(&test_ds),
    };
    let (pseudo, trace) = derive_pseudo_values(&train_ds, task, grid, s, selection)?;
    let cell_seed = (run * settings.folds + fold) as u64;
    let rows: Vec<usize> = (0..train_ds.len()).collect();
    let split = stratified_split(
        &train_ds,
        &rows,
        settings.validation_fraction,
        settings.seed.wrapping_add(cell_seed),
    );
    let mut outcomes = Vec::with_capacity(candidates.len());
    let mut models = Vec::with_capacity(candidates.len());
    for (c, cand) in candidates.iter().enumerate() {
        let mut cfg = cand.train.clone();
        cfg.seed = cfg.seed.wrapping_add(cell_seed);
        let fitted = match &cand.kind {
            ModelKind::Reference { estimator } => Ok((reference_predictions(&train_ds, &test_ds, &pseudo, *estimator), None, None)),
            ModelKind::MsPseudo { architecture } => {
                let mut arch = architecture.clone();
                arch.seed = arch.seed.wrapping_add(cell_seed);
                fit_and_predict(&train_ds, &test_ds, &pseudo, &arch, &cfg, &split)
            }
            ModelKind::LinearPseudo => {
                let arch = Architecture::linear(cfg.seed);
                fit_and_predict(&train_ds, &test_ds, &pseudo, &arch, &cfg, &split)
            }
        };
        let (result, history, model) = match fitted {
            Ok((mut pred, history, model)) => {
                if settings.renormalize {
                    pred.renormalize();
                }
                let scored = brier_series(&pred, source)
                    .and_then(|b| auc_series(&pred, source).map(|a| (b, a)))
                    .map_err(|e| ModelError::ShapeMismatch(e.to_string()));
                (scored, history, model)
            }
            Err(e) => {
                log::warn!("{} failed in run {run}, fold {fold}: {e}", cand.name);
                (Err(e), None, None)
            }
        };
        outcomes.push(FoldOutcome {
            run,
            fold,
            candidate: c,
            result,
            history,
        });
        models.push(model);
    }
    Ok(Cell {
        run,
        fold,
        outcomes,
        trace,
        models,
    })
}

type Fitted = (PredictionMatrix, Option<LossHistory>, Option<PseudoModel>);

fn fit_and_predict(
    train_ds: &MultiStateDataset,
    test_ds: &MultiStateDataset,
    pseudo: &PseudoValueTable,
    arch: &Architecture,
    cfg: &TrainConfig,
    split: &super::Split,
) -> Result<Fitted, ModelError> {
    let (model, history) = train_mspseudo(
        train_ds.covariates().view(),
        pseudo,
        train_ds.num_states(),
        arch,
        cfg,
        split,
    )?;
    let pred = predict_dataset(&model, test_ds)?;
    Ok((pred, Some(history), Some(model)))
}

/// Predicts, for every held-out subject, the training-fold estimate of its
/// landmark group under `estimator`, or the estimator chosen for each target.
pub(crate) fn reference_predictions(
    train_ds: &MultiStateDataset,
    test_ds: &MultiStateDataset,
    pseudo: &PseudoValueTable,
    estimator: Option<EstimatorKind>,
) -> PredictionMatrix {
    let task = pseudo.task;
    let s = pseudo.conditioning_time;
    let k = train_ds.num_states();
    let m = pseudo.grid.len();
    let g = pseudo.grid.points();
    let all: Vec<usize> = (0..train_ds.len()).collect();
    let states: Vec<Option<usize>> = (0..test_ds.len()).map(|i| test_ds.state_at_index(i, s)).collect();
    let mut values = Array2::from_elem((test_ds.len(), pseudo.targets.len() * m), f64::NAN);
    let sop = (task == Task::Sop).then(|| sop_values(train_ds, &all, g));
    // [grid][state] rows per (from-state, estimator)
    let mut rows: Vec<((usize, EstimatorKind), Vec<f64>)> = Vec::new();
    let mut row = |j: usize, est: EstimatorKind| -> Vec<f64> {
        if let Some((_, r)) = rows.iter().find(|(key, _)| *key == (j, est)) {
            return r.clone();
        }
        let members = match est {
            EstimatorKind::Lmaj => {
                let group = landmark_members(train_ds, &all, j, s);
                if group.is_empty() {
                    all.clone()
                } else {
                    group
                }
            }
            EstimatorKind::Aj => all.clone(),
        };
        let r = tp_row_values(train_ds, &members, j, s, g);
        rows.push(((j, est), r.clone()));
        r
    };
    for (i, st) in states.iter().enumerate() {
        for (t, (&target, &est)) in pseudo.targets.iter().zip(&pseudo.estimators).enumerate() {
            let to = match target {
                Target::State(q) | Target::Transition(_, q) => q,
            };
            let curve = match (&sop, st) {
                (Some(v), _) => v.clone(),
                (None, Some(j)) => row(*j, estimator.unwrap_or(est)),
                (None, None) => continue,
            };
            for gi in 0..m {
                values[[i, t * m + gi]] = curve[gi * k + to - 1];
            }
        }
    }
    let scope = scope_matrix(task, &pseudo.targets, &states);
    mask(&mut values, &scope, m);
    PredictionMatrix {
        task,
        grid: pseudo.grid.clone(),
        conditioning_time: s,
        targets: pseudo.targets.clone(),
        subject_ids: test_ds.subjects().iter().map(|p| p.id.clone()).collect(),
        values,
        scope,
    }
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(sd))
}

fn nan_mean(sum: &Array2<f64>, count: &Array2<f64>) -> Array2<f64> {
    let mut out = sum.clone();
    out.zip_mut_with(count, |v, &c| *v = if c > 0.0 { *v / c } else { f64::NAN });
    out
}

fn summarize(cand: &Candidate, c: usize, outcomes: &[FoldOutcome], t_count: usize, m: usize) -> CandidateSummary {
    let mut ibs_cells = Vec::new();
    let mut iauc_cells = Vec::new();
    let mut per_target_b: Vec<Vec<f64>> = vec![Vec::new(); t_count];
    let mut per_target_a: Vec<Vec<f64>> = vec![Vec::new(); t_count];
    let (mut bsum, mut bcnt) = (Array2::zeros((t_count, m)), Array2::zeros((t_count, m)));
    let (mut asum, mut acnt) = (Array2::zeros((t_count, m)), Array2::zeros((t_count, m)));
    let mut failures = Vec::new();
    for o in outcomes.iter().filter(|o| o.candidate == c) {
        match &o.result {
            Ok((b, a)) => {
                if let Some(v) = b.average() {
                    ibs_cells.push(v);
                }
                if let Some(v) = a.average() {
                    iauc_cells.push(v);
                }
                for t in 0..t_count {
                    if let Some(v) = b.integrated(t) {
                        per_target_b[t].push(v);
                    }
                    if let Some(v) = a.integrated(t) {
                        per_target_a[t].push(v);
                    }
                }
                accumulate(&mut bsum, &mut bcnt, &b.values);
                accumulate(&mut asum, &mut acnt, &a.values);
            }
            Err(e) => failures.push(format!("run {} fold {}: {e}", o.run, o.fold)),
        }
    }
    let (mean_ibs, sd_ibs) = mean_sd(&ibs_cells);
    let (mean_iauc, sd_iauc) = mean_sd(&iauc_cells);
    CandidateSummary {
        name: cand.name.clone(),
        kind: cand.kind.clone(),
        target_ibs: per_target_b.iter().map(|v| mean_sd(v).0).collect(),
        target_iauc: per_target_a.iter().map(|v| mean_sd(v).0).collect(),
        mean_ibs,
        sd_ibs,
        mean_iauc,
        sd_iauc,
        brier: nan_mean(&bsum, &bcnt),
        auc: nan_mean(&asum, &acnt),
        failures,
    }
}

fn accumulate(sum: &mut Array2<f64>, count: &mut Array2<f64>, values: &Array2<f64>) {
    for ((idx, v), c) in values.indexed_iter().zip(count.iter_mut()) {
        if v.is_finite() {
            sum[idx] += v;
            *c += 1.0;
        }
    }
}

impl CandidateSummary {
    /// Cell-averaged series as [`MetricSeries`] values.
    pub fn series(&self, summary: &CvSummary) -> (MetricSeries, MetricSeries) {
        let mk = |metric, values: &Array2<f64>| MetricSeries {
            metric,
            task: summary.task,
            grid: summary.grid.points().to_vec(),
            targets: summary.targets.clone(),
            weighting: summary.weighting,
            values: values.clone(),
        };
        (
            mk(crate::metrics::Metric::Brier, &self.brier),
            mk(crate::metrics::Metric::Auc, &self.auc),
        )
    }
}
