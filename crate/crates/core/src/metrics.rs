//! Time-dependent Brier score and AUC with their integrated summaries.
//!
//! Labels are `1{X_i(t) = k}` for state `k` (SOP tasks) or the destination
//! `k` of a transition `j -> k` (TP task, scored on subjects in `j` at `s`).
//! Truth comes either from complete trajectories (weight 1) or from a
//! censored dataset with inverse-probability-of-censoring weights: subjects
//! absorbed by `t` get `1 / G(T-)`, subjects still observed at `t` get
//! `1 / G(t)` and subjects censored before `t` are dropped, with `G` the
//! Kaplan-Meier estimate of the censoring distribution. Weights are
//! renormalized over the evaluable subjects.

use std::fmt;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::MultiStateDataset;
use crate::model::PredictionMatrix;
use crate::pseudo::{Target, Task};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("truth has {truth} subjects, predictions have {predictions}")]
    SubjectMismatch { truth: usize, predictions: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    TrueState,
    Ipcw,
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::TrueState => "true-state",
            Weighting::Ipcw => "ipcw",
        })
    }
}

/// Where labels come from. Rows align with the prediction rows.
#[derive(Debug, Clone, Copy)]
pub enum TruthSource<'a> {
    Trajectories(&'a MultiStateDataset),
    Ipcw(&'a MultiStateDataset),
}

impl TruthSource<'_> {
    pub fn weighting(&self) -> Weighting {
        match self {
            TruthSource::Trajectories(_) => Weighting::TrueState,
            TruthSource::Ipcw(_) => Weighting::Ipcw,
        }
    }

    fn dataset(&self) -> &MultiStateDataset {
        match self {
            TruthSource::Trajectories(d) | TruthSource::Ipcw(d) => d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Brier,
    Auc,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Brier => "iBS",
            Metric::Auc => "iAUC",
        })
    }
}

/// One metric over targets and grid points. Skipped points are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub metric: Metric,
    pub task: Task,
    pub grid: Vec<f64>,
    pub targets: Vec<Target>,
    pub weighting: Weighting,
    /// `targets x M`.
    pub values: Array2<f64>,
}

impl MetricSeries {
    /// Grid-integrated value of a target, `None` when every point was skipped.
    pub fn integrated(&self, target: usize) -> Option<f64> {
        integrate(&self.grid, self.values.row(target).as_slice().expect("row-major"))
    }

    /// Mean of the integrated values over targets that have one.
    pub fn average(&self) -> Option<f64> {
        let v: Vec<f64> = (0..self.targets.len()).filter_map(|t| self.integrated(t)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Normalized integration weights on `grid`: interior points get half the
/// span to their neighbours and endpoints the adjacent spacing, so a
/// uniform grid weighs every point equally.
pub fn integration_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    if m == 1 {
        return vec![1.0];
    }
    let mut w: Vec<f64> = (0..m)
        .map(|i| {
            if i == 0 {
                grid[1] - grid[0]
            } else if i == m - 1 {
                grid[m - 1] - grid[m - 2]
            } else {
                (grid[i + 1] - grid[i - 1]) / 2.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Weighted mean of the finite entries of `values`.
pub fn integrate(grid: &[f64], values: &[f64]) -> Option<f64> {
    let w = integration_weights(grid);
    let (mut num, mut den) = (0.0, 0.0);
    for (v, wi) in values.iter().zip(&w) {
        if v.is_finite() {
            num += v * wi;
            den += wi;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Kaplan-Meier estimate of the censoring survival function. Absorptions
/// tied with censoring are taken to happen first.
#[derive(Debug, Clone)]
pub struct CensoringSurvival {
    times: Vec<f64>,
    surv: Vec<f64>,
}

impl CensoringSurvival {
    pub fn new(dataset: &MultiStateDataset) -> Self {
        let mut ends: Vec<(f64, bool)> = dataset
            .subjects()
            .iter()
            .map(|p| (p.last_time(), p.is_censored()))
            .collect();
        ends.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = ends.len();
        let (mut times, mut surv) = (Vec::new(), Vec::new());
        let mut s = 1.0;
        let mut i = 0;
        while i < n {
            let t = ends[i].0;
            let at_risk = (n - i) as f64;
            let mut censored = 0usize;
            while i < n && ends[i].0 == t {
                censored += ends[i].1 as usize;
                i += 1;
            }
            if censored > 0 {
                s *= 1.0 - censored as f64 / at_risk;
                times.push(t);
                surv.push(s);
            }
        }
        Self { times, surv }
    }

    /// `G(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u <= t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }

    /// `G(t-)`.
    pub fn before(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u < t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }
}

/// Label and weight of every subject at `t`; `None` when not evaluable.
fn labelled(truth: &TruthSource, g: Option<&CensoringSurvival>, t: f64) -> Vec<Option<(usize, f64)>> {
    let ds = truth.dataset();
    let graph = ds.graph();
    (0..ds.len())
        .map(|i| {
            let state = ds.state_at_index(i, t)?;
            match (truth, g) {
                (TruthSource::Ipcw(_), Some(g)) => {
                    let p = ds.subject(i);
                    let gw = if p.is_absorbed(graph) && p.last_time() <= t {
                        g.before(p.last_time())
                    } else {
                        g.at(t)
                    };
                    (gw > 0.0).then(|| (state, 1.0 / gw))
                }
                _ => Some((state, 1.0)),
            }
        })
        .collect()
}

fn destination(target: Target) -> usize {
    match target {
        Target::State(k) | Target::Transition(_, k) => k,
    }
}

fn check(pred: &PredictionMatrix, truth: &TruthSource) -> Result<(), MetricsError> {
    let n = truth.dataset().len();
    if n != pred.num_subjects() {
        return Err(MetricsError::SubjectMismatch {
            truth: n,
            predictions: pred.num_subjects(),
        });
    }
    Ok(())
}

fn series<F>(pred: &PredictionMatrix, truth: TruthSource, metric: Metric, score: F) -> Result<MetricSeries, MetricsError>
where
    F: Fn(&[(f64, bool, f64)]) -> Option<f64>,
{
    check(pred, &truth)?;
    let g = matches!(truth, TruthSource::Ipcw(_)).then(|| CensoringSurvival::new(truth.dataset()));
    let grid = pred.grid.points().to_vec();
    let mut values = Array2::from_elem((pred.targets.len(), grid.len()), f64::NAN);
    for (m, &t) in grid.iter().enumerate() {
        let labels = labelled(&truth, g.as_ref(), t);
        for (ti, &target) in pred.targets.iter().enumerate() {
            let k = destination(target);
            let rows: Vec<(f64, bool, f64)> = labels
                .iter()
                .enumerate()
                .filter_map(|(i, l)| {
                    let (state, w) = (*l)?;
                    let p = pred.value(i, ti, m);
                    (pred.scope[[i, ti]] && p.is_finite()).then_some((p, state == k, w))
                })
                .collect();
            match score(&rows) {
                Some(v) => values[[ti, m]] = v,
                None => log::debug!("{metric} skipped for target {target} at t={t}"),
            }
        }
    }
    Ok(MetricSeries {
        metric,
        task: pred.task,
        grid,
        targets: pred.targets.clone(),
        weighting: truth.weighting(),
        values,
    })
}

/// Weighted mean of `(1{label} - p)^2`; `None` without evaluable subjects.
pub fn weighted_brier(rows: &[(f64, bool, f64)]) -> Option<f64> {
    let den: f64 = rows.iter().map(|r| r.2).sum();
    if rows.is_empty() || den <= 0.0 {
        return None;
    }
    let num: f64 = rows
        .iter()
        .map(|&(p, y, w)| {
            let r = y as u8 as f64 - p;
            w * r * r
        })
        .sum();
    Some(num / den)
}

/// Weighted probability that a positive outranks a negative, ties counting
/// one half; `None` when either class is empty.
pub fn weighted_auc(rows: &[(f64, bool, f64)]) -> Option<f64> {
    let pos: f64 = rows.iter().filter(|r| r.1).map(|r| r.2).sum();
    let neg: f64 = rows.iter().filter(|r| !r.1).map(|r| r.2).sum();
    if pos <= 0.0 || neg <= 0.0 {
        return None;
    }
    let mut sorted: Vec<&(f64, bool, f64)> = rows.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut below = 0.0;
    let mut concordant = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut tie_pos, mut tie_neg) = (0.0, 0.0);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                tie_pos += sorted[j].2;
            } else {
                tie_neg += sorted[j].2;
            }
            j += 1;
        }
        concordant += tie_pos * (below + 0.5 * tie_neg);
        below += tie_neg;
        i = j;
    }
    Some(concordant / (pos * neg))
}

pub fn brier_series(pred: &PredictionMatrix, truth: TruthSource) -> Result<MetricSeries, MetricsError> {
    series(pred, truth, Metric::Brier, weighted_brier)
}

pub fn auc_series(pred: &PredictionMatrix, truth: TruthSource) -> Result<MetricSeries, MetricsError> {
    series(pred, truth, Metric::Auc, weighted_auc)
}

/// Writes `target,time,brier,auc` rows for a matching Brier/AUC pair. Times
/// are written in shortest round-trip form, metrics with [`format_value`].
pub fn write_series_csv<W: Write>(brier: &MetricSeries, auc: &MetricSeries, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["target", "time", "brier", "auc"])?;
    for (t, target) in brier.targets.iter().enumerate() {
        for (m, time) in brier.grid.iter().enumerate() {
            w.write_record([
                target.to_string(),
                time.to_string(),
                format_value(brier.values[[t, m]]),
                format_value(auc.values[[t, m]]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fixed-precision rendering shared by all metric outputs; `NA` for
/// missing values.
pub fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "NA".into()
    }
}
