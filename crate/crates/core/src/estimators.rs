//! Aalen-Johansen and landmark Aalen-Johansen estimators.
//!
//! `P(s, t)` is the product integral of Nelson-Aalen increments over the
//! distinct transition times in `(s, t]`:
//!
//! ```text
//! P(s, t) = prod_{s < u <= t} (I + dA(u)),   dA_jk(u) = dN_jk(u) / Y_j(u)
//! ```
//!
//! with `dA_jk(u) = 0` when `Y_j(u) = 0` and diagonals making each row of the
//! increment sum to one. All simultaneous transitions at `u` enter a single
//! increment. Everything here is evaluated as row vectors pushed through the
//! increments (`r <- r (I + dA(u))`), which is what both the SOP
//! (`pi(0)^T P(0, t)`) and the TP rows need and avoids K x K products.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CountingProcess, MultiStateDataset, SubjectContribution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("grid point {point} is not after the origin {origin}")]
    GridBeforeOrigin { point: f64, origin: f64 },
    #[error("grid point {point} is beyond the study horizon {horizon}")]
    GridOutsideHorizon { point: f64, horizon: f64 },
    #[error("no subject occupies state {state} at landmark time {s}")]
    EmptyLandmark { state: usize, s: f64 },
}

/// Strictly increasing evaluation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = EstimationError;

    fn try_from(points: Vec<f64>) -> Result<Self, Self::Error> {
        TimeGrid::new(points)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.points
    }
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self, EstimationError> {
        if points.is_empty() {
            return Err(EstimationError::InvalidGrid("grid is empty".into()));
        }
        if points.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(EstimationError::InvalidGrid("grid points must be finite and >= 0".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EstimationError::InvalidGrid("grid points must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// `m` equally spaced points from `start` to `stop` inclusive.
    pub fn linspace(start: f64, stop: f64, m: usize) -> Result<Self, EstimationError> {
        match m {
            0 => Err(EstimationError::InvalidGrid("need at least one point".into())),
            1 => Self::new(vec![start]),
            _ => {
                let h = (stop - start) / (m - 1) as f64;
                Self::new((0..m).map(|i| if i == m - 1 { stop } else { start + h * i as f64 }).collect())
            }
        }
    }

    /// Quantiles at levels `i / (m + 1)`, `i = 1..=m`, of the observed
    /// transition times strictly after `after`; duplicates are merged.
    pub fn event_quantiles(dataset: &MultiStateDataset, m: usize, after: f64) -> Result<Self, EstimationError> {
        let mut all: Vec<f64> = dataset
            .subjects()
            .iter()
            .flat_map(|s| s.sojourns.iter().filter(|j| j.exit_to.is_some()).map(|j| j.stop))
            .filter(|&t| t > after)
            .collect();
        if all.is_empty() || m == 0 {
            return Err(EstimationError::InvalidGrid(format!("no transition times after {after}")));
        }
        all.sort_by(f64::total_cmp);
        let n = all.len();
        let mut pts: Vec<f64> = (1..=m)
            .map(|i| {
                let p = i as f64 / (m + 1) as f64;
                let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
                all[idx]
            })
            .collect();
        pts.dedup();
        Self::new(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn check(&self, origin: f64, strict: bool, horizon: f64) -> Result<(), EstimationError> {
        for &p in &self.points {
            if p < origin || (strict && p == origin) {
                return Err(EstimationError::GridBeforeOrigin { point: p, origin });
            }
            if p > horizon {
                return Err(EstimationError::GridOutsideHorizon { point: p, horizon });
            }
        }
        Ok(())
    }
}

/// `P(s, t)` at every grid point.
#[derive(Debug, Clone)]
pub struct TransitionProbabilitySeries {
    pub origin: f64,
    pub grid: TimeGrid,
    /// One `K x K` row-stochastic matrix per grid point.
    pub matrices: Vec<Array2<f64>>,
}

/// A distribution over states at every grid point (unconditional SOP, a
/// dynamic SOP, or a row of a transition-probability matrix).
#[derive(Debug, Clone)]
pub struct OccupationSeries {
    pub grid: TimeGrid,
    /// `M x K`.
    pub probabilities: Array2<f64>,
    pub conditioning_time: f64,
    /// State occupied at `conditioning_time`, for landmark quantities.
    pub conditioning_state: Option<usize>,
}

/// Row-vector propagation through the AJ increments of one counting process.
pub(crate) struct AjSweep<'a> {
    cp: &'a CountingProcess,
    transitions: Vec<(usize, usize)>,
    /// Number of event indices at or before each grid point.
    cuts: Vec<usize>,
}

impl<'a> AjSweep<'a> {
    pub(crate) fn new(dataset: &MultiStateDataset, cp: &'a CountingProcess, grid: &[f64]) -> Self {
        let transitions = dataset
            .graph()
            .transitions()
            .iter()
            .map(|&(j, k)| (j - 1, k - 1))
            .collect();
        let cuts = grid.iter().map(|&g| cp.times().partition_point(|&t| t <= g)).collect();
        Self { cp, transitions, cuts }
    }

    /// Pushes each start vector through the increments and returns values in
    /// `[row][grid][state]` layout. With `skip`, that subject's at-risk and
    /// event contributions are removed first (leave-one-out).
    pub(crate) fn run(&self, starts: &[Vec<f64>], skip: Option<&SubjectContribution>) -> Vec<f64> {
        let k = self.cp.num_states();
        let m = self.cuts.len();
        let rows = starts.len();
        let mut cur: Vec<Vec<f64>> = starts.to_vec();
        let mut out = vec![0.0; rows * m * k];
        let mut hazards: Vec<(usize, usize, f64)> = Vec::with_capacity(self.transitions.len());
        let mut delta = vec![0.0; k];

        let empty = SubjectContribution::default();
        let skip = skip.unwrap_or(&empty);
        let mut range_ptr = 0usize;
        let mut event_ptr = 0usize;
        let mut ev = 0usize;

        for (gi, &cut) in self.cuts.iter().enumerate() {
            while ev < cut {
                while range_ptr < skip.at_risk.len() && skip.at_risk[range_ptr].1 <= ev {
                    range_ptr += 1;
                }
                let removed_state = skip
                    .at_risk
                    .get(range_ptr)
                    .filter(|r| r.0 <= ev)
                    .map(|r| r.2);
                let y = self.cp.at_risk(ev);
                let dn = self.cp.events(ev);
                hazards.clear();
                for (q, &(j, to)) in self.transitions.iter().enumerate() {
                    let mut d = dn[q];
                    while event_ptr < skip.events.len() && skip.events[event_ptr].0 < ev {
                        event_ptr += 1;
                    }
                    if skip.events[event_ptr..]
                        .iter()
                        .take_while(|e| e.0 == ev)
                        .any(|e| e.1 == q)
                    {
                        d -= 1.0;
                    }
                    if d <= 0.0 {
                        continue;
                    }
                    let mut r = y[j];
                    if removed_state == Some(j) {
                        r -= 1.0;
                    }
                    if r > 0.0 {
                        hazards.push((j, to, d / r));
                    }
                }
                if !hazards.is_empty() {
                    for row in cur.iter_mut() {
                        delta.iter_mut().for_each(|v| *v = 0.0);
                        for &(j, to, h) in &hazards {
                            let flow = row[j] * h;
                            delta[to] += flow;
                            delta[j] -= flow;
                        }
                        for (v, d) in row.iter_mut().zip(&delta) {
                            *v += d;
                        }
                    }
                }
                ev += 1;
            }
            for (r, row) in cur.iter().enumerate() {
                let base = (r * m + gi) * k;
                out[base..base + k].copy_from_slice(row);
            }
        }
        out
    }
}

fn all_members(dataset: &MultiStateDataset) -> Vec<usize> {
    (0..dataset.len()).collect()
}

/// Members whose observed state at `s` is `state`.
pub fn landmark_members(dataset: &MultiStateDataset, members: &[usize], state: usize, s: f64) -> Vec<usize> {
    members
        .iter()
        .copied()
        .filter(|&i| dataset.state_at_index(i, s) == Some(state))
        .collect()
}

pub(crate) fn unit(k: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[j - 1] = 1.0;
    v
}

/// Initial-state distribution of a sample.
pub(crate) fn initial_distribution(dataset: &MultiStateDataset, members: &[usize], skip: Option<usize>) -> Vec<f64> {
    let mut d = vec![0.0; dataset.num_states()];
    let mut n = 0.0;
    for &i in members {
        if Some(i) == skip {
            continue;
        }
        d[dataset.subject(i).initial_state() - 1] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        d.iter_mut().for_each(|v| *v /= n);
    }
    d
}

/// Full AJ transition-probability matrices `P(s, t)` on the grid.
pub fn aj_transition_probability(
    dataset: &MultiStateDataset,
    s: f64,
    grid: &TimeGrid,
) -> Result<TransitionProbabilitySeries, EstimationError> {
    grid.check(s, true, dataset.horizon())?;
    let k = dataset.num_states();
    let cp = CountingProcess::build(dataset, &all_members(dataset), s);
    let sweep = AjSweep::new(dataset, &cp, grid.points());
    let starts: Vec<Vec<f64>> = (1..=k).map(|j| unit(k, j)).collect();
    let flat = sweep.run(&starts, None);
    let m = grid.len();
    let matrices = (0..m)
        .map(|g| Array2::from_shape_fn((k, k), |(r, c)| flat[(r * m + g) * k + c]))
        .collect();
    Ok(TransitionProbabilitySeries {
        origin: s,
        grid: grid.clone(),
        matrices,
    })
}

/// Unconditional state occupation `pi(t) = pi(0)^T P(0, t)` with the empirical
/// initial distribution.
pub fn aj_state_occupation(dataset: &MultiStateDataset, grid: &TimeGrid) -> Result<OccupationSeries, EstimationError> {
    grid.check(0.0, false, dataset.horizon())?;
    let members = all_members(dataset);
    let values = sop_values(dataset, &members, grid.points());
    Ok(OccupationSeries {
        grid: grid.clone(),
        probabilities: Array2::from_shape_vec((grid.len(), dataset.num_states()), values).expect("shape"),
        conditioning_time: 0.0,
        conditioning_state: None,
    })
}

/// `[grid][state]` AJ SOP values for a sample (no grid checks).
pub(crate) fn sop_values(dataset: &MultiStateDataset, members: &[usize], grid: &[f64]) -> Vec<f64> {
    let cp = CountingProcess::build(dataset, members, 0.0);
    let sweep = AjSweep::new(dataset, &cp, grid);
    sweep.run(&[initial_distribution(dataset, members, None)], None)
}

/// `[grid][state]` values of row `state` of the AJ `P(s, t)` for a sample.
pub(crate) fn tp_row_values(dataset: &MultiStateDataset, members: &[usize], state: usize, s: f64, grid: &[f64]) -> Vec<f64> {
    let cp = CountingProcess::build(dataset, members, s);
    let sweep = AjSweep::new(dataset, &cp, grid);
    sweep.run(&[unit(dataset.num_states(), state)], None)
}

fn row_series(values: Vec<f64>, grid: &TimeGrid, k: usize, s: f64, state: usize) -> OccupationSeries {
    OccupationSeries {
        grid: grid.clone(),
        probabilities: Array2::from_shape_vec((grid.len(), k), values).expect("shape"),
        conditioning_time: s,
        conditioning_state: Some(state),
    }
}

/// Row `state` of the AJ `P(s, t)` computed on the whole cohort: the
/// Markov-based prediction of `pi(t | X(s) = state)`.
pub fn aj_dynamic_sop(
    dataset: &MultiStateDataset,
    state: usize,
    s: f64,
    grid: &TimeGrid,
) -> Result<OccupationSeries, EstimationError> {
    grid.check(s, true, dataset.horizon())?;
    let values = tp_row_values(dataset, &all_members(dataset), state, s, grid.points());
    Ok(row_series(values, grid, dataset.num_states(), s, state))
}

/// Landmark AJ: row `state` of `P(s, t)` estimated only from subjects
/// observed in `state` at `s`.
pub fn lmaj_transition_probability(
    dataset: &MultiStateDataset,
    state: usize,
    s: f64,
    grid: &TimeGrid,
) -> Result<OccupationSeries, EstimationError> {
    grid.check(s, true, dataset.horizon())?;
    let members = landmark_members(dataset, &all_members(dataset), state, s);
    if members.is_empty() {
        return Err(EstimationError::EmptyLandmark { state, s });
    }
    let values = tp_row_values(dataset, &members, state, s, grid.points());
    Ok(row_series(values, grid, dataset.num_states(), s, state))
}

/// Landmark dynamic SOP `pi(t | X(s) = j)` for every state `j`; empty
/// landmark groups are reported per state.
pub fn lmaj_dynamic_sop(
    dataset: &MultiStateDataset,
    s: f64,
    grid: &TimeGrid,
) -> Result<Vec<(usize, Result<OccupationSeries, EstimationError>)>, EstimationError> {
    grid.check(s, true, dataset.horizon())?;
    Ok((1..=dataset.num_states())
        .map(|j| (j, lmaj_transition_probability(dataset, j, s, grid)))
        .collect())
}
