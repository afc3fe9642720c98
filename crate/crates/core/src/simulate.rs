//! Synthetic cohorts and censoring schemes.
//!
//! A subject in state `j`, entered at time `e`, leaves along `j -> k` with
//! intensity `baseline * m(x) * exp(gamma * e)`. The multiplier `m` is
//! `exp(beta'x)` (linear) or `exp(clip(sin(beta1'x) + (beta2'x)^2 / 4))`
//! (nonlinear). With `gamma = 0` the process is time-homogeneous Markov given
//! `x`; otherwise the hazard depends on the entry time into the current
//! state. Intensities are constant within a sojourn, so paths are sampled
//! exactly by competing exponentials.
//!
//! Every subject draws from its own stream (`seed`, subject index), so a
//! cohort is reproducible and independent of thread count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    validate_dataset, MultiStateDataset, RawDataset, Sojourn, SubjectPath, TransitionGraph, TransitionRecord,
};

/// Bound on the nonlinear log-multiplier.
pub const NONLINEAR_CLIP: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("censoring rate {target} unreachable (closest {closest:.3})")]
    UnreachableCensoringRate { target: f64, closest: f64 },
    #[error("need {needed} uncensored subjects to flip, only {available} available")]
    InsufficientUncensored { needed: usize, available: usize },
    #[error("invalid intensity specification: {0}")]
    InvalidSpec(String),
    #[error("path of subject {0} does not terminate without a horizon")]
    UnboundedPath(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateEffect {
    None,
    Linear { beta: Vec<f64> },
    Nonlinear { beta1: Vec<f64>, beta2: Vec<f64> },
}

impl CovariateEffect {
    pub fn multiplier(&self, x: &[f64]) -> f64 {
        let dot = |b: &[f64]| b.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        match self {
            CovariateEffect::None => 1.0,
            CovariateEffect::Linear { beta } => dot(beta).exp(),
            CovariateEffect::Nonlinear { beta1, beta2 } => {
                let q = dot(beta2);
                (dot(beta1).sin() + q * q / 4.0).clamp(-NONLINEAR_CLIP, NONLINEAR_CLIP).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionIntensity {
    pub from: usize,
    pub to: usize,
    pub baseline: f64,
    pub effect: CovariateEffect,
    /// `gamma` in `exp(gamma * entry_time)`; 0 for Markov transitions.
    #[serde(default)]
    pub entry_time_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySpec {
    pub graph: TransitionGraph,
    pub num_covariates: usize,
    #[serde(default = "one")]
    pub initial_state: usize,
    /// One entry per graph transition, in graph order.
    pub transitions: Vec<TransitionIntensity>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LinearMarkov,
    NonlinearMarkov,
    LinearNonMarkov,
    NonlinearNonMarkov,
}

impl Family {
    pub fn is_markov(self) -> bool {
        matches!(self, Family::LinearMarkov | Family::NonlinearMarkov)
    }

    pub fn default_tau(self) -> f64 {
        5.0
    }
}

fn padded(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(10, 0.0);
    out
}

impl IntensitySpec {
    pub fn new(graph: TransitionGraph, num_covariates: usize, transitions: Vec<TransitionIntensity>) -> Result<Self, SimulationError> {
        let spec = Self {
            graph,
            num_covariates,
            initial_state: 1,
            transitions,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidSpec(m));
        if self.transitions.len() != self.graph.num_transitions() {
            return bad("one intensity per graph transition is required".into());
        }
        if !self.graph.contains_state(self.initial_state) {
            return bad(format!("initial state {} not in graph", self.initial_state));
        }
        if self.graph.is_absorbing(self.initial_state) {
            return bad("initial state must not be absorbing".into());
        }
        for (t, &(j, k)) in self.transitions.iter().zip(self.graph.transitions()) {
            if (t.from, t.to) != (j, k) {
                return bad(format!("intensity {}->{} out of graph order (expected {j}->{k})", t.from, t.to));
            }
            if !(t.baseline >= 0.0 && t.baseline.is_finite() && t.entry_time_effect.is_finite()) {
                return bad(format!("baseline of {j}->{k} must be finite and non-negative"));
            }
            let lens = match &t.effect {
                CovariateEffect::None => vec![],
                CovariateEffect::Linear { beta } => vec![beta.len()],
                CovariateEffect::Nonlinear { beta1, beta2 } => vec![beta1.len(), beta2.len()],
            };
            if lens.iter().any(|&l| l != self.num_covariates) {
                return bad(format!("coefficients of {j}->{k} must have length {}", self.num_covariates));
            }
        }
        Ok(())
    }

    /// The four simulation designs with their fixed constants (p = 10).
    pub fn family(family: Family) -> Self {
        let lin = |b: &[f64]| CovariateEffect::Linear { beta: padded(b) };
        let nl = |b1: &[f64], b2: &[f64]| CovariateEffect::Nonlinear {
            beta1: padded(b1),
            beta2: padded(b2),
        };
        let tr = |from, to, baseline, effect, gamma| TransitionIntensity {
            from,
            to,
            baseline,
            effect,
            entry_time_effect: gamma,
        };
        let (graph, transitions) = match family {
            Family::LinearMarkov => (
                TransitionGraph::illness_death(),
                vec![
                    tr(1, 2, 0.5, lin(&[0.8, -0.6, 0.4]), 0.0),
                    tr(1, 3, 0.2, lin(&[0.0, 0.5, 0.0, -0.7, 0.3]), 0.0),
                    tr(2, 3, 0.4, lin(&[0.6, 0.0, 0.0, 0.0, -0.5, 0.4]), 0.0),
                ],
            ),
            Family::NonlinearMarkov => (
                TransitionGraph::illness_death(),
                vec![
                    tr(1, 2, 0.3, nl(&[1.25, 1.25], &[2.4, 0.0, -1.8]), 0.0),
                    tr(1, 3, 0.1, nl(&[0.0, -1.25, 1.25], &[0.0, 0.0, 0.0, 2.4, 1.8]), 0.0),
                    tr(2, 3, 0.25, nl(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.2, -0.9]), 0.0),
                ],
            ),
            Family::LinearNonMarkov | Family::NonlinearNonMarkov => {
                let linear = family == Family::LinearNonMarkov;
                let e = |b: &[f64], b1: &[f64], b2: &[f64]| if linear { lin(b) } else { nl(b1, b2) };
                let g = 0.6;
                (
                    TransitionGraph::reversible_four_state(),
                    vec![
                        tr(1, 2, 0.5, e(&[0.6, -0.4], &[1.25], &[2.4, -1.6]), 0.0),
                        tr(1, 3, 0.3, e(&[0.0, 0.5, 0.3], &[0.0, 1.25], &[0.0, 0.0, 2.4, 1.6]), 0.0),
                        tr(1, 4, 0.05, e(&[0.3, 0.0, 0.0, 0.4], &[0.75], &[0.0, 0.0, 0.0, 2.0]), 0.0),
                        tr(2, 1, 0.2, e(&[0.0, 0.0, 0.0, 0.0, 0.5], &[0.0, 0.0, 0.0, 0.0, 1.25], &[0.0, 0.0, 0.0, 0.0, 2.0]), g),
                        tr(2, 3, 0.2, e(&[-0.4, 0.0, 0.0, 0.0, 0.0, 0.5], &[-1.0], &[0.0, 0.0, 0.0, 0.0, 0.0, 2.4]), g),
                        tr(2, 4, 0.15, e(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.25], &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.6]), g),
                        tr(3, 1, 0.15, e(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.25], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.4]), g),
                        tr(3, 2, 0.15, e(&[0.0, -0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5], &[0.0, -1.0], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.4]), g),
                        tr(3, 4, 0.2, e(&[0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.6, 2.0]), g),
                    ],
                )
            }
        };
        Self {
            graph,
            num_covariates: 10,
            initial_state: 1,
            transitions,
        }
    }

    /// Intensity of transition index `q` for covariates `x` in a sojourn entered at `entry`.
    pub fn intensity(&self, q: usize, x: &[f64], entry: f64) -> f64 {
        let t = &self.transitions[q];
        if t.baseline == 0.0 {
            return 0.0;
        }
        t.baseline * t.effect.multiplier(x) * (t.entry_time_effect * entry).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n: usize,
    /// Administrative censoring time; paths run to absorption when absent.
    pub tau: Option<f64>,
    /// Target fraction of censored subjects (administrative plus random).
    pub censoring_rate: Option<f64>,
    pub seed: u64,
}

/// A simulated cohort: the observed (censored) data and the full paths.
/// Both share subject ids, order and covariates.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub observed: MultiStateDataset,
    pub truth: MultiStateDataset,
}

struct Draw {
    x: Vec<f64>,
    path: Vec<Sojourn>,
    /// Unit-rate exponential for random censoring (common random numbers).
    unit_censor: f64,
    uniform: f64,
}

fn subject_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_subject(spec: &IntensitySpec, tau: f64, seed: u64, index: usize) -> Result<Draw, SimulationError> {
    let mut rng = subject_rng(seed, index);
    let x: Vec<f64> = (0..spec.num_covariates).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut path = Vec::new();
    let mut state = spec.initial_state;
    let mut t = 0.0;
    let outgoing: Vec<Vec<(usize, usize)>> = (0..=spec.graph.num_states())
        .map(|j| if j == 0 { vec![] } else { spec.graph.outgoing(j).collect() })
        .collect();
    loop {
        if path.len() > 100_000 {
            return Err(SimulationError::UnboundedPath(index));
        }
        let rates: Vec<(usize, f64)> = outgoing[state]
            .iter()
            .map(|&(q, to)| (to, spec.intensity(q, &x, t)))
            .collect();
        let total: f64 = rates.iter().map(|r| r.1).sum();
        let e: f64 = Exp1.sample(&mut rng);
        let u: f64 = rng.random();
        let next = if total > 0.0 { t + e / total } else { f64::INFINITY };
        if spec.graph.is_absorbing(state) {
            break;
        }
        if next > tau {
            if !tau.is_finite() {
                return Err(SimulationError::UnboundedPath(index));
            }
            path.push(Sojourn {
                state,
                start: t,
                stop: tau,
                exit_to: None,
            });
            break;
        }
        let mut acc = 0.0;
        let mut to = rates.last().expect("non-absorbing state has exits").0;
        for &(k, r) in &rates {
            acc += r;
            if u * total < acc {
                to = k;
                break;
            }
        }
        path.push(Sojourn {
            state,
            start: t,
            stop: next,
            exit_to: Some(to),
        });
        state = to;
        t = next;
    }
    let unit_censor = Exp1.sample(&mut rng);
    let uniform = rng.random();
    Ok(Draw {
        x,
        path,
        unit_censor,
        uniform,
    })
}

fn path_end(path: &[Sojourn]) -> f64 {
    path.last().map_or(0.0, |s| s.stop)
}

fn absorbed(path: &[Sojourn]) -> bool {
    path.last().is_some_and(|s| s.exit_to.is_some())
}

/// Truncates a path at `c`: the state held at `c` becomes censored there.
fn censor_path(path: &[Sojourn], c: f64) -> Vec<Sojourn> {
    let mut out = Vec::new();
    for s in path {
        if s.start >= c {
            break;
        }
        if s.stop > c {
            out.push(Sojourn {
                stop: c,
                exit_to: None,
                ..*s
            });
            break;
        }
        out.push(*s);
    }
    out
}

fn to_records(id: &str, path: &[Sojourn]) -> Vec<TransitionRecord> {
    SubjectPath {
        id: id.to_string(),
        sojourns: path.to_vec(),
    }
    .records()
    .collect()
}

fn covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|c| format!("x{c}")).collect()
}

fn assemble(
    graph: &TransitionGraph,
    p: usize,
    subjects: &[(String, Vec<f64>, Vec<Sojourn>)],
    horizon: f64,
) -> MultiStateDataset {
    let raw = RawDataset {
        graph: graph.clone(),
        records: subjects.iter().flat_map(|(id, _, path)| to_records(id, path)).collect(),
        covariate_names: covariate_names(p),
        covariates: subjects.iter().map(|(id, x, _)| (id.clone(), x.clone())).collect(),
        horizon: Some(horizon),
    };
    validate_dataset(raw).expect("simulated paths are valid")
}

fn censored_fraction(draws: &[Draw], rate: f64) -> f64 {
    let n = draws.len() as f64;
    draws
        .iter()
        .filter(|d| !absorbed(&d.path) || (rate > 0.0 && d.unit_censor / rate < path_end(&d.path)))
        .count() as f64
        / n
}

/// Exponential censoring rate whose censored fraction is closest to `target`.
fn tune_censoring(draws: &[Draw], target: f64) -> Result<f64, SimulationError> {
    let base = censored_fraction(draws, 0.0);
    if target <= base {
        return if base - target <= 0.02 {
            Ok(0.0)
        } else {
            Err(SimulationError::UnreachableCensoringRate { target, closest: base })
        };
    }
    let mut hi = 1e-3;
    while censored_fraction(draws, hi) < target && hi < 1e12 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censored_fraction(draws, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (fl, fh) = (censored_fraction(draws, lo), censored_fraction(draws, hi));
    let (rate, got) = if (fl - target).abs() <= (fh - target).abs() { (lo, fl) } else { (hi, fh) };
    if (got - target).abs() > 0.02 {
        return Err(SimulationError::UnreachableCensoringRate { target, closest: got });
    }
    Ok(rate)
}

/// Simulates `cfg.n` subjects with ids `1..=n`.
pub fn simulate_cohort(spec: &IntensitySpec, cfg: &CohortConfig) -> Result<Cohort, SimulationError> {
    spec.check()?;
    let tau = cfg.tau.unwrap_or(f64::INFINITY);
    let draws = (0..cfg.n)
        .into_par_iter()
        .map(|i| draw_subject(spec, tau, cfg.seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let rate = match cfg.censoring_rate {
        Some(target) => tune_censoring(&draws, target)?,
        None => 0.0,
    };
    let horizon = cfg
        .tau
        .unwrap_or_else(|| draws.iter().map(|d| path_end(&d.path)).fold(0.0, f64::max));
    let mut truth = Vec::with_capacity(cfg.n);
    let mut observed = Vec::with_capacity(cfg.n);
    for (i, d) in draws.into_iter().enumerate() {
        let id = (i + 1).to_string();
        let obs = if rate > 0.0 { censor_path(&d.path, d.unit_censor / rate) } else { d.path.clone() };
        observed.push((id.clone(), d.x.clone(), obs));
        truth.push((id, d.x, d.path));
    }
    log::debug!("simulated {} subjects, censoring rate parameter {rate:.5}", cfg.n);
    Ok(Cohort {
        observed: assemble(&spec.graph, spec.num_covariates, &observed, horizon),
        truth: assemble(&spec.graph, spec.num_covariates, &truth, horizon),
    })
}

fn split(ds: &MultiStateDataset) -> Vec<(String, Vec<f64>, Vec<Sojourn>)> {
    ds.subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), ds.covariate_row(i).to_vec(), s.sojourns.clone()))
        .collect()
}

/// Appends newly simulated subjects, each censored at a uniform time over
/// its own path, until the censored fraction reaches `target_rate` (to the
/// nearest subject). Original subjects are untouched. New subjects use
/// streams `n, n+1, ...` of `seed` and ids continuing after `n`.
pub fn apply_incremental_censoring(
    base: &Cohort,
    spec: &IntensitySpec,
    target_rate: f64,
    seed: u64,
) -> Result<Cohort, SimulationError> {
    spec.check()?;
    let n0 = base.observed.len();
    let c0 = base.observed.subjects().iter().filter(|s| s.is_censored()).count() as f64;
    let m = if target_rate <= 0.0 || target_rate >= 1.0 {
        0
    } else {
        ((target_rate * n0 as f64 - c0) / (1.0 - target_rate)).round().max(0.0) as usize
    };
    if m == 0 {
        return Ok(base.clone());
    }
    let tau = base.observed.horizon();
    let admin = base
        .truth
        .subjects()
        .iter()
        .any(|s| s.is_censored());
    let path_tau = if admin { tau } else { f64::INFINITY };
    let draws = (n0..n0 + m)
        .into_par_iter()
        .map(|i| draw_subject(spec, path_tau, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut observed = split(&base.observed);
    let mut truth = split(&base.truth);
    let mut horizon = tau;
    for (k, d) in draws.into_iter().enumerate() {
        let id = (n0 + k + 1).to_string();
        let end = path_end(&d.path);
        horizon = horizon.max(end);
        let c = (d.uniform * end).max(f64::MIN_POSITIVE);
        observed.push((id.clone(), d.x.clone(), censor_path(&d.path, c)));
        truth.push((id, d.x, d.path));
    }
    Ok(Cohort {
        observed: assemble(&spec.graph, spec.num_covariates, &observed, horizon),
        truth: assemble(&spec.graph, spec.num_covariates, &truth, horizon),
    })
}

/// Flips the final transition of randomly chosen uncensored subjects into a
/// censoring at the same time until the censored fraction reaches
/// `target_rate` (to the nearest subject).
pub fn apply_induced_censoring(
    dataset: &MultiStateDataset,
    target_rate: f64,
    seed: u64,
) -> Result<MultiStateDataset, SimulationError> {
    let n = dataset.len();
    let mut uncensored: Vec<usize> = (0..n).filter(|&i| !dataset.subject(i).is_censored()).collect();
    let c0 = n - uncensored.len();
    let needed = (target_rate * n as f64).round() as isize - c0 as isize;
    if needed <= 0 {
        return Ok(dataset.clone());
    }
    let needed = needed as usize;
    if needed > uncensored.len() {
        return Err(SimulationError::InsufficientUncensored {
            needed,
            available: uncensored.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uncensored.shuffle(&mut rng);
    let mut flip = vec![false; n];
    for &i in &uncensored[..needed] {
        flip[i] = true;
    }
    let mut subjects = split(dataset);
    for (i, (_, _, path)) in subjects.iter_mut().enumerate() {
        if flip[i] {
            path.last_mut().expect("non-empty").exit_to = None;
        }
    }
    let raw = RawDataset {
        graph: dataset.graph().clone(),
        records: subjects.iter().flat_map(|(id, _, path)| to_records(id, path)).collect(),
        covariate_names: dataset.covariate_names().to_vec(),
        covariates: subjects.iter().map(|(id, x, _)| (id.clone(), x.clone())).collect(),
        horizon: Some(dataset.horizon()),
    };
    Ok(validate_dataset(raw).expect("flipping preserves validity"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn censor_path_truncates_inside_a_sojourn() {
        let path = vec![
            Sojourn { state: 1, start: 0.0, stop: 1.0, exit_to: Some(2) },
            Sojourn { state: 2, start: 1.0, stop: 3.0, exit_to: Some(3) },
        ];
        let c = censor_path(&path, 2.0);
        assert_eq!(c.len(), 2);
        assert_eq!(c[1], Sojourn { state: 2, start: 1.0, stop: 2.0, exit_to: None });
        assert_eq!(censor_path(&path, 5.0), path);
    }

    #[test]
    fn presets_are_consistent() {
        for f in [Family::LinearMarkov, Family::NonlinearMarkov, Family::LinearNonMarkov, Family::NonlinearNonMarkov] {
            let spec = IntensitySpec::family(f);
            spec.check().unwrap();
            let json = serde_json::to_string(&spec).unwrap();
            let back: IntensitySpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec);
            assert_eq!(f.is_markov(), spec.transitions.iter().all(|t| t.entry_time_effect == 0.0));
        }
    }

    #[test]
    fn nonlinear_multiplier_is_bounded() {
        let e = CovariateEffect::Nonlinear { beta1: vec![1.0], beta2: vec![10.0] };
        assert_eq!(e.multiplier(&[5.0]), NONLINEAR_CLIP.exp());
    }
}
