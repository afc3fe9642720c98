//! Tests of the Markov assumption.
//!
//! Both tests look for the canonical violation: transition hazards out of a
//! state depending on when that state was entered. They are Cox score tests
//! on calendar time, optionally adjusted for the baseline covariates (fitted
//! under the null), and depend on the time axis only through ranks.
//!
//! - [`ca_global_test`]: for every transition out of a state that is both
//!   entered and left, the score test of the midrank of entry time; the
//!   per-transition chi-square(1) statistics are summed.
//! - [`logrank_transition_test`]: at each landmark time, subjects in the
//!   from-state are split at the median entry time and the two groups are
//!   compared by a log-rank score for the target transition; the maximum
//!   absolute standardized score is calibrated by permuting group labels
//!   within landmarks.

mod cox;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::MultiStateDataset;
use cox::{fit_null, NullFit, SurvivalTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    Ca,
    Logrank,
}

impl TestMethod {
    pub fn name(self) -> &'static str {
        match self {
            TestMethod::Ca => "ca",
            TestMethod::Logrank => "logrank",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestScope {
    Global,
    Transition(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestMethod,
    pub scope: TestScope,
    /// Chi-square type statistic (for log-rank, the squared maximum
    /// standardized score).
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl TestResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarkovTestError {
    #[error("no state is both entered and left; the Markov test is undefined")]
    NoInteriorTransitions,
    #[error("entry times into state {from} do not split at any landmark for {from}->{to} (p-value 1 by convention)")]
    DegenerateSplit { from: usize, to: usize },
    #[error("transition {from}->{to} is not in the graph")]
    UnknownTransition { from: usize, to: usize },
}

/// Baseline-covariate terms fitted under the null before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjustment {
    None,
    /// Main effects.
    Linear,
    /// Main effects, squares and pairwise products.
    Quadratic,
    /// Quadratic terms plus cubes of the main effects.
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestOptions {
    pub adjustment: Adjustment,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            adjustment: Adjustment::Quadratic,
            permutations: 500,
            seed: 0,
        }
    }
}

/// Midranks (average ranks of ties), starting at 1.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Type-1 (inverse empirical CDF) quantile of sorted values.
pub(crate) fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let idx = ((level * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

fn standardize(columns: Vec<Vec<f64>>, n: usize) -> (Vec<f64>, usize) {
    let mut kept = Vec::new();
    for col in columns {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if var > 1e-12 {
            let sd = var.sqrt();
            kept.push(col.into_iter().map(|v| (v - mean) / sd).collect::<Vec<_>>());
        }
    }
    let q = kept.len();
    let mut out = vec![0.0; n * q];
    for (c, col) in kept.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[i * q + c] = *v;
        }
    }
    (out, q)
}

/// Events needed per nuisance term; richer adjustments fall back to simpler
/// ones below this.
const EVENTS_PER_TERM: usize = 5;

/// Row-major nuisance design for `subjects` (rows may repeat a subject).
fn nuisance_design(dataset: &MultiStateDataset, subjects: &[usize], adjustment: Adjustment, events: usize) -> (Vec<f64>, usize) {
    let p = dataset.num_covariates();
    let quadratic_terms = p + p * (p + 1) / 2;
    let adjustment = match adjustment {
        Adjustment::Cubic if events < EVENTS_PER_TERM * (quadratic_terms + p) => Adjustment::Quadratic,
        a => a,
    };
    let adjustment = match adjustment {
        Adjustment::Quadratic if events < EVENTS_PER_TERM * quadratic_terms => Adjustment::Linear,
        a => a,
    };
    let adjustment = match adjustment {
        Adjustment::Linear if events < EVENTS_PER_TERM * p => Adjustment::None,
        a => a,
    };
    if adjustment == Adjustment::None || p == 0 || subjects.is_empty() {
        return (vec![], 0);
    }
    let x = dataset.covariates();
    let (main, q) = standardize(
        (0..p).map(|c| subjects.iter().map(|&i| x[[i, c]]).collect()).collect(),
        subjects.len(),
    );
    if adjustment == Adjustment::Linear || q == 0 {
        return (main, q);
    }
    let n = subjects.len();
    let mut cols: Vec<Vec<f64>> = (0..q).map(|c| (0..n).map(|i| main[i * q + c]).collect()).collect();
    for a in 0..q {
        for b in a..q {
            cols.push((0..n).map(|i| main[i * q + a] * main[i * q + b]).collect());
        }
    }
    if adjustment == Adjustment::Cubic {
        for a in 0..q {
            cols.push((0..n).map(|i| main[i * q + a].powi(3)).collect());
        }
    }
    standardize(cols, n)
}

/// States with at least one observed entry and one observed exit.
fn interior_states(dataset: &MultiStateDataset) -> Vec<usize> {
    let k = dataset.num_states();
    let mut entered = vec![false; k + 1];
    let mut left = vec![false; k + 1];
    for s in dataset.subjects() {
        for (n, so) in s.sojourns.iter().enumerate() {
            if n > 0 {
                entered[so.state] = true;
            }
            if so.exit_to.is_some() {
                left[so.state] = true;
            }
        }
    }
    (1..=k).filter(|&j| entered[j] && left[j]).collect()
}

/// Global score test of entry-time dependence, summed over transitions out
/// of interior states.
pub fn ca_global_test(dataset: &MultiStateDataset, opts: &TestOptions) -> Result<TestResult, MarkovTestError> {
    let graph = dataset.graph();
    let mut statistic = 0.0;
    let mut dof = 0;
    for j in interior_states(dataset) {
        let mut rows = Vec::new();
        for (i, s) in dataset.subjects().iter().enumerate() {
            for so in s.sojourns.iter().filter(|so| so.state == j) {
                rows.push((i, *so));
            }
        }
        let subjects: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let z = midranks(&rows.iter().map(|r| r.1.start).collect::<Vec<_>>());
        for (_, k) in graph.outgoing(j) {
            let event: Vec<bool> = rows.iter().map(|r| r.1.exit_to == Some(k)).collect();
            let events = event.iter().filter(|&&e| e).count();
            if events == 0 {
                continue;
            }
            let (x, p) = nuisance_design(dataset, &subjects, opts.adjustment, events);
            let fit = fit_null(SurvivalTable {
                start: rows.iter().map(|r| r.1.start).collect(),
                stop: rows.iter().map(|r| r.1.stop).collect(),
                event,
                x,
                p,
            });
            if let Some(c) = fit.score(&z).chi2() {
                log::debug!("ca component {j}->{k}: {c:.4}");
                statistic += c;
                dof += 1;
            }
        }
    }
    if dof == 0 {
        return Err(MarkovTestError::NoInteriorTransitions);
    }
    let p_value = ChiSquared::new(dof as f64).expect("dof >= 1").sf(statistic);
    Ok(TestResult {
        method: TestMethod::Ca,
        scope: TestScope::Global,
        statistic,
        dof,
        p_value: p_value.clamp(0.0, 1.0),
    })
}

/// Default landmarks: type-1 quartiles of the observed entry times into `state`.
pub fn default_landmarks(dataset: &MultiStateDataset, state: usize) -> Vec<f64> {
    let mut entries: Vec<f64> = dataset
        .subjects()
        .iter()
        .flat_map(|s| s.sojourns.iter().skip(1).filter(|so| so.state == state).map(|so| so.start))
        .collect();
    if entries.is_empty() {
        return vec![];
    }
    entries.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&q| quantile_sorted(&entries, q)).collect();
    out.dedup();
    out
}

struct LandmarkArm {
    fit: NullFit,
    labels: Vec<f64>,
}

impl LandmarkArm {
    fn z(&self, labels: &[f64]) -> Option<f64> {
        self.fit.score(labels).z()
    }
}

fn landmark_arm(dataset: &MultiStateDataset, from: usize, to: usize, s: f64, adjustment: Adjustment) -> Option<LandmarkArm> {
    let mut rows = Vec::new();
    for (i, subj) in dataset.subjects().iter().enumerate() {
        if dataset.state_at_index(i, s) != Some(from) {
            continue;
        }
        if let Some(n) = subj.sojourn_index_at(s) {
            rows.push((i, subj.sojourns[n]));
        }
    }
    if rows.len() < 2 {
        return None;
    }
    let mut entries: Vec<f64> = rows.iter().map(|r| r.1.start).collect();
    entries.sort_by(f64::total_cmp);
    let n = entries.len();
    let median = if n % 2 == 1 {
        entries[n / 2]
    } else {
        0.5 * (entries[n / 2 - 1] + entries[n / 2])
    };
    let labels: Vec<f64> = rows.iter().map(|r| if r.1.start <= median { 1.0 } else { 0.0 }).collect();
    let ones = labels.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return None;
    }
    let event: Vec<bool> = rows.iter().map(|r| r.1.exit_to == Some(to)).collect();
    let events = event.iter().filter(|&&e| e).count();
    if events == 0 {
        return None;
    }
    let subjects: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let (x, p) = nuisance_design(dataset, &subjects, adjustment, events);
    let fit = fit_null(SurvivalTable {
        start: vec![s; n],
        stop: rows.iter().map(|r| r.1.stop).collect(),
        event,
        x,
        p,
    });
    Some(LandmarkArm { fit, labels })
}

/// Landmark log-rank test for transition `from -> to`. `landmarks` defaults
/// to [`default_landmarks`] of `from`.
pub fn logrank_transition_test(
    dataset: &MultiStateDataset,
    from: usize,
    to: usize,
    landmarks: Option<&[f64]>,
    opts: &TestOptions,
) -> Result<TestResult, MarkovTestError> {
    if dataset.graph().transition_index(from, to).is_none() {
        return Err(MarkovTestError::UnknownTransition { from, to });
    }
    let owned;
    let landmarks = match landmarks {
        Some(l) => l,
        None => {
            owned = default_landmarks(dataset, from);
            &owned
        }
    };
    let arms: Vec<LandmarkArm> = landmarks
        .iter()
        .filter_map(|&s| landmark_arm(dataset, from, to, s, opts.adjustment))
        .filter(|a| a.z(&a.labels).is_some())
        .collect();
    if arms.is_empty() {
        return Err(MarkovTestError::DegenerateSplit { from, to });
    }
    let max_abs = |labels: &[Vec<f64>]| -> f64 {
        arms.iter()
            .zip(labels)
            .map(|(a, l)| a.z(l).map_or(0.0, f64::abs))
            .fold(0.0, f64::max)
    };
    let observed: Vec<Vec<f64>> = arms.iter().map(|a| a.labels.clone()).collect();
    let obs = max_abs(&observed);
    let exceed = (0..opts.permutations)
        .into_par_iter()
        .filter(|&b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64 + 1);
            let perm: Vec<Vec<f64>> = observed
                .iter()
                .map(|l| {
                    let mut l = l.clone();
                    l.shuffle(&mut rng);
                    l
                })
                .collect();
            max_abs(&perm) >= obs * (1.0 - 1e-9) - 1e-12
        })
        .count();
    let p_value = (1 + exceed) as f64 / (1 + opts.permutations) as f64;
    Ok(TestResult {
        method: TestMethod::Logrank,
        scope: TestScope::Transition(from, to),
        statistic: obs * obs,
        dof: 1,
        p_value,
    })
}
