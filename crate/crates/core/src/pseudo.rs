//! Jackknife pseudo values and test-driven estimator selection.
//!
//! For an estimate `y` computed from a sample and a scope of `n` subjects,
//! subject `i`'s pseudo value is `n * y - (n - 1) * y_{-i}`, where `y_{-i}`
//! is the same estimator with `i` left out of the sample. For the
//! unconditional SOP the scope is the whole sample. For landmark quantities
//! the scope is the landmark group (subjects observed in state `j` at `s`)
//! and `n` is its size; the sample is the group itself for LMAJ and the
//! whole cohort for AJ.
//!
//! [`derive_pseudo_values`] chooses the estimator per target from Markov
//! tests: AJ for the SOP, a global test for the dynamic SOP and
//! transition-specific tests (guarded by a minimum landmark population) for
//! transition probabilities.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CountingProcess, MultiStateDataset};
use crate::estimators::{initial_distribution, unit, AjSweep, EstimationError, TimeGrid};
use crate::markov_tests::{ca_global_test, logrank_transition_test, MarkovTestError, TestMethod, TestOptions, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sop,
    DynamicSop,
    Tp,
}

impl Task {
    pub fn is_landmark(self) -> bool {
        self != Task::Sop
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Sop => "sop",
            Task::DynamicSop => "dynamic-sop",
            Task::Tp => "tp",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sop" => Ok(Task::Sop),
            "dynamic-sop" => Ok(Task::DynamicSop),
            "tp" => Ok(Task::Tp),
            other => Err(format!("unknown task {other:?} (expected sop, dynamic-sop or tp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Aj,
    Lmaj,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Aj => "AJ",
            EstimatorKind::Lmaj => "LMAJ",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "AJ" => Ok(EstimatorKind::Aj),
            "LMAJ" => Ok(EstimatorKind::Lmaj),
            other => Err(format!("unknown estimator {other:?}")),
        }
    }
}

/// A state (SOP tasks) or a transition (TP task).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    State(usize),
    Transition(usize, usize),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::State(k) => write!(f, "{k}"),
            Target::Transition(j, k) => write!(f, "{j}->{k}"),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad target {s:?}"));
        match s.split_once("->") {
            Some((a, b)) => Ok(Target::Transition(num(a)?, num(b)?)),
            None => Ok(Target::State(num(s)?)),
        }
    }
}

/// Targets of a task on a graph, in output order.
pub fn task_targets(dataset: &MultiStateDataset, task: Task) -> Vec<Target> {
    match task {
        Task::Sop | Task::DynamicSop => (1..=dataset.num_states()).map(Target::State).collect(),
        Task::Tp => dataset
            .graph()
            .transitions()
            .iter()
            .map(|&(j, k)| Target::Transition(j, k))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PseudoError {
    #[error("no subject is in scope for pseudo values")]
    ScopeEmpty,
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Test(#[from] MarkovTestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JackknifeMode {
    /// Leave-one-out by removing the subject's counts from the full process.
    Fast,
    /// Leave-one-out by re-estimating on the reduced sample.
    Naive,
}

/// Pseudo values for every subject of a dataset (rows) and every
/// `(target, grid point)` (columns, target-major). Cells of subjects outside
/// a target's scope are `NaN` and masked out.
#[derive(Debug, Clone)]
pub struct PseudoValueTable {
    pub task: Task,
    pub grid: TimeGrid,
    /// Landmark time `s` (0 for the SOP).
    pub conditioning_time: f64,
    pub subject_ids: Vec<String>,
    pub targets: Vec<Target>,
    /// Estimator used per target.
    pub estimators: Vec<EstimatorKind>,
    /// `n x (targets * M)`.
    pub values: Array2<f64>,
    /// `n x targets`.
    pub membership: Array2<bool>,
    /// Observed state at `s` per subject (landmark tasks).
    pub landmark_states: Vec<Option<usize>>,
}

impl PseudoValueTable {
    pub fn num_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn value(&self, subject: usize, target: usize, m: usize) -> f64 {
        self.values[[subject, target * self.grid.len() + m]]
    }

    pub fn is_member(&self, subject: usize, target: usize) -> bool {
        self.membership[[subject, target]]
    }

    /// Subjects with at least one target in scope.
    pub fn in_scope(&self) -> Vec<usize> {
        (0..self.num_subjects())
            .filter(|&i| self.membership.row(i).iter().any(|&b| b))
            .collect()
    }

    /// Rows of the CSV form, subjects in table order, then targets, then time.
    pub fn rows(&self) -> Vec<PseudoRow> {
        let m = self.grid.len();
        let mut out = Vec::new();
        for (i, id) in self.subject_ids.iter().enumerate() {
            for (t, target) in self.targets.iter().enumerate() {
                if !self.is_member(i, t) {
                    continue;
                }
                for g in 0..m {
                    out.push(PseudoRow {
                        id: id.clone(),
                        target: *target,
                        time: self.grid.points()[g],
                        value: self.value(i, t, g),
                        estimator: self.estimators[t],
                    });
                }
            }
        }
        out
    }

    /// CSV `id,target,time,value,estimator`; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        write_pseudo_rows(writer, &self.rows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoRow {
    pub id: String,
    pub target: Target,
    pub time: f64,
    pub value: f64,
    pub estimator: EstimatorKind,
}

pub const PSEUDO_HEADER: [&str; 5] = ["id", "target", "time", "value", "estimator"];

pub fn write_pseudo_rows<W: Write>(writer: W, rows: &[PseudoRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PSEUDO_HEADER)?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.target.to_string(),
            r.time.to_string(),
            r.value.to_string(),
            r.estimator.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pseudo_rows<R: Read>(reader: R) -> Result<Vec<PseudoRow>, String> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != PSEUDO_HEADER {
        return Err(format!("expected header {}", PSEUDO_HEADER.join(",")));
    }
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = n + 2;
        let f = |c: usize| rec.get(c).ok_or_else(|| format!("line {line}: missing column {c}"));
        let num = |c: usize| -> Result<f64, String> { f(c)?.parse().map_err(|_| format!("line {line}: bad number")) };
        out.push(PseudoRow {
            id: f(0)?.to_string(),
            target: f(1)?.parse().map_err(|e| format!("line {line}: {e}"))?,
            time: num(2)?,
            value: num(3)?,
            estimator: f(4)?.parse().map_err(|e| format!("line {line}: {e}"))?,
        });
    }
    Ok(out)
}

/// Generic jackknife: `estimate(None)` is the full-sample estimate and
/// `estimate(Some(i))` the estimate without subject `i`. Returns one vector
/// per scope member, with `n = scope.len()`.
pub fn jackknife<F>(scope: &[usize], estimate: F) -> Result<Vec<Vec<f64>>, PseudoError>
where
    F: Fn(Option<usize>) -> Vec<f64> + Sync,
{
    if scope.is_empty() {
        return Err(PseudoError::ScopeEmpty);
    }
    let n = scope.len() as f64;
    let full = estimate(None);
    Ok(scope
        .par_iter()
        .map(|&i| {
            let loo = estimate(Some(i));
            full.iter().zip(&loo).map(|(y, l)| n * y - (n - 1.0) * l).collect()
        })
        .collect())
}

fn without(members: &[usize], i: usize) -> Vec<usize> {
    members.iter().copied().filter(|&m| m != i).collect()
}

/// SOP pseudo values (`[grid][state]` per member) with the whole `members`
/// sample as scope.
pub fn sop_pseudo_values(
    dataset: &MultiStateDataset,
    members: &[usize],
    grid: &[f64],
    mode: JackknifeMode,
) -> Result<Vec<Vec<f64>>, PseudoError> {
    match mode {
        JackknifeMode::Naive => jackknife(members, |skip| {
            let sample = skip.map_or_else(|| members.to_vec(), |i| without(members, i));
            crate::estimators::sop_values(dataset, &sample, grid)
        }),
        JackknifeMode::Fast => {
            let cp = CountingProcess::build(dataset, members, 0.0);
            let sweep = AjSweep::new(dataset, &cp, grid);
            jackknife(members, |skip| {
                let start = initial_distribution(dataset, members, skip);
                let contribution = skip.map(|i| cp.contribution(dataset, i));
                sweep.run(&[start], contribution.as_ref())
            })
        }
    }
}

/// Pseudo values of row `state` of `P(s, t)` (`[grid][state]` per scope
/// member), estimated on `sample`.
pub fn row_pseudo_values(
    dataset: &MultiStateDataset,
    sample: &[usize],
    scope: &[usize],
    state: usize,
    s: f64,
    grid: &[f64],
    mode: JackknifeMode,
) -> Result<Vec<Vec<f64>>, PseudoError> {
    let start = unit(dataset.num_states(), state);
    match mode {
        JackknifeMode::Naive => jackknife(scope, |skip| {
            let sub = skip.map_or_else(|| sample.to_vec(), |i| without(sample, i));
            crate::estimators::tp_row_values(dataset, &sub, state, s, grid)
        }),
        JackknifeMode::Fast => {
            let cp = CountingProcess::build(dataset, sample, s);
            let sweep = AjSweep::new(dataset, &cp, grid);
            jackknife(scope, |skip| {
                let contribution = skip.map(|i| cp.contribution(dataset, i));
                sweep.run(std::slice::from_ref(&start), contribution.as_ref())
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionOptions {
    /// Minimum landmark population for LMAJ on the TP task.
    pub epsilon: usize,
    pub alpha: f64,
    /// Test driving the choice; defaults to CA for the dynamic SOP and
    /// log-rank for TP.
    pub test_choice: Option<TestMethod>,
    pub tests: TestOptions,
    pub mode: JackknifeMode,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            epsilon: 1,
            alpha: 0.05,
            test_choice: None,
            tests: TestOptions::default(),
            mode: JackknifeMode::Fast,
        }
    }
}

/// One estimator choice and the evidence for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// `sop`, `global`, a state or a transition.
    pub scope: String,
    pub test: Option<TestResult>,
    pub landmark_size: Option<usize>,
    pub estimator: EstimatorKind,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub decisions: Vec<Decision>,
}

const DECISION_HEADER: [&str; 8] = ["scope", "method", "statistic", "dof", "p_value", "landmark_size", "estimator", "note"];

impl Decision {
    fn csv_fields(&self) -> [String; 8] {
        let (m, st, dof, p) = match &self.test {
            Some(t) => (
                t.method.name().to_string(),
                format!("{:.6}", t.statistic),
                t.dof.to_string(),
                format!("{:.6}", t.p_value),
            ),
            None => Default::default(),
        };
        [
            self.scope.clone(),
            m,
            st,
            dof,
            p,
            self.landmark_size.map(|v| v.to_string()).unwrap_or_default(),
            self.estimator.to_string(),
            self.note.clone(),
        ]
    }
}

impl DecisionTrace {
    /// CSV `scope,method,statistic,dof,p_value,landmark_size,estimator,note`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(DECISION_HEADER)?;
        for d in &self.decisions {
            w.write_record(d.csv_fields())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decisions of several cross-validation cells, CSV `run,fold,` followed by
/// the [`DecisionTrace::write_csv`] columns.
pub fn write_decision_log<W: Write>(cells: &[(usize, usize, DecisionTrace)], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run", "fold"].into_iter().chain(DECISION_HEADER))?;
    for (run, fold, trace) in cells {
        for d in &trace.decisions {
            w.write_record([run.to_string(), fold.to_string()].into_iter().chain(d.csv_fields()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Outcome of a test run for selection: `Ok(result)`, or a defined
/// non-rejection with an explanatory note.
fn run_test(
    method: TestMethod,
    dataset: &MultiStateDataset,
    transition: Option<(usize, usize)>,
    opts: &TestOptions,
) -> (Option<TestResult>, String) {
    let r = match (method, transition) {
        (TestMethod::Logrank, Some((j, k))) => logrank_transition_test(dataset, j, k, None, opts),
        _ => ca_global_test(dataset, opts),
    };
    match r {
        Ok(t) => (Some(t), String::new()),
        Err(e) => {
            log::info!("{e}; not rejecting");
            (None, e.to_string())
        }
    }
}

/// Estimator-selection plan without pseudo values.
pub fn plan_estimators(
    dataset: &MultiStateDataset,
    task: Task,
    s: f64,
    opts: &SelectionOptions,
) -> (Vec<(Target, EstimatorKind)>, DecisionTrace) {
    let targets = task_targets(dataset, task);
    let mut trace = DecisionTrace::default();
    let group_size = |j: usize| (0..dataset.len()).filter(|&i| dataset.state_at_index(i, s) == Some(j)).count();
    let plan = match task {
        Task::Sop => {
            trace.decisions.push(Decision {
                scope: "sop".into(),
                test: None,
                landmark_size: None,
                estimator: EstimatorKind::Aj,
                note: String::new(),
            });
            targets.iter().map(|&t| (t, EstimatorKind::Aj)).collect()
        }
        Task::DynamicSop => {
            let method = opts.test_choice.unwrap_or(TestMethod::Ca);
            let significant = match method {
                TestMethod::Ca => {
                    let (test, note) = run_test(method, dataset, None, &opts.tests);
                    let sig = test.as_ref().is_some_and(|t| t.rejects(opts.alpha));
                    trace.decisions.push(Decision {
                        scope: "global".into(),
                        test,
                        landmark_size: None,
                        estimator: if sig { EstimatorKind::Lmaj } else { EstimatorKind::Aj },
                        note,
                    });
                    sig
                }
                TestMethod::Logrank => {
                    let transitions = dataset.graph().transitions().to_vec();
                    let level = opts.alpha / transitions.len() as f64;
                    let mut any = false;
                    for (j, k) in transitions {
                        let (test, note) = run_test(method, dataset, Some((j, k)), &opts.tests);
                        let sig = test.as_ref().is_some_and(|t| t.rejects(level));
                        any |= sig;
                        trace.decisions.push(Decision {
                            scope: format!("{j}->{k}"),
                            test,
                            landmark_size: Some(group_size(j)),
                            estimator: if sig { EstimatorKind::Lmaj } else { EstimatorKind::Aj },
                            note: if note.is_empty() { "bonferroni".into() } else { note },
                        });
                    }
                    any
                }
            };
            let est = if significant { EstimatorKind::Lmaj } else { EstimatorKind::Aj };
            for j in 1..=dataset.num_states() {
                let size = group_size(j);
                let (estimator, note) = if size == 0 {
                    (EstimatorKind::Aj, "empty landmark group".to_string())
                } else {
                    (est, String::new())
                };
                trace.decisions.push(Decision {
                    scope: format!("X(s)={j}"),
                    test: None,
                    landmark_size: Some(size),
                    estimator,
                    note,
                });
            }
            targets.iter().map(|&t| (t, est)).collect()
        }
        Task::Tp => {
            let method = opts.test_choice.unwrap_or(TestMethod::Logrank);
            let global = (method == TestMethod::Ca).then(|| run_test(method, dataset, None, &opts.tests));
            targets
                .iter()
                .map(|&t| {
                    let Target::Transition(j, k) = t else { unreachable!("tp targets are transitions") };
                    let (test, mut note) = match &global {
                        Some(g) => g.clone(),
                        None => run_test(method, dataset, Some((j, k)), &opts.tests),
                    };
                    let sig = test.as_ref().is_some_and(|r| r.rejects(opts.alpha));
                    let size = group_size(j);
                    let estimator = if sig && size >= opts.epsilon {
                        EstimatorKind::Lmaj
                    } else {
                        if sig {
                            log::warn!("{j}->{k}: landmark population {size} below epsilon {}; using AJ", opts.epsilon);
                            note = format!("landmark population {size} < epsilon {}", opts.epsilon);
                        }
                        EstimatorKind::Aj
                    };
                    trace.decisions.push(Decision {
                        scope: t.to_string(),
                        test,
                        landmark_size: Some(size),
                        estimator,
                        note,
                    });
                    (t, estimator)
                })
                .collect()
        }
    };
    (plan, trace)
}

/// Pseudo values with the estimator chosen per target by the Markov tests.
pub fn derive_pseudo_values(
    dataset: &MultiStateDataset,
    task: Task,
    grid: &TimeGrid,
    s: f64,
    opts: &SelectionOptions,
) -> Result<(PseudoValueTable, DecisionTrace), PseudoError> {
    let (plan, trace) = plan_estimators(dataset, task, s, opts);
    let table = pseudo_table(dataset, task, grid, s, &plan, opts.mode)?;
    Ok((table, trace))
}

/// Pseudo values for a fixed estimator plan.
pub fn pseudo_table(
    dataset: &MultiStateDataset,
    task: Task,
    grid: &TimeGrid,
    s: f64,
    plan: &[(Target, EstimatorKind)],
    mode: JackknifeMode,
) -> Result<PseudoValueTable, PseudoError> {
    let n = dataset.len();
    let k = dataset.num_states();
    let m = grid.len();
    let t_count = plan.len();
    let all: Vec<usize> = (0..n).collect();
    let mut values = Array2::from_elem((n, t_count * m), f64::NAN);
    let mut membership = Array2::from_elem((n, t_count), false);
    let s = if task == Task::Sop { 0.0 } else { s };
    let landmark_states: Vec<Option<usize>> = if task.is_landmark() {
        grid.check(s, true, dataset.horizon())?;
        (0..n).map(|i| dataset.state_at_index(i, s)).collect()
    } else {
        grid.check(0.0, false, dataset.horizon())?;
        vec![None; n]
    };

    if task == Task::Sop {
        let pv = sop_pseudo_values(dataset, &all, grid.points(), mode)?;
        for (i, row) in pv.iter().enumerate() {
            for (t, (target, _)) in plan.iter().enumerate() {
                let Target::State(state) = *target else { unreachable!() };
                membership[[i, t]] = true;
                for g in 0..m {
                    values[[i, t * m + g]] = row[g * k + state - 1];
                }
            }
        }
    } else {
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, st) in landmark_states.iter().enumerate() {
            if let Some(j) = st {
                groups.entry(*j).or_default().push(i);
            }
        }
        if groups.is_empty() {
            return Err(PseudoError::ScopeEmpty);
        }
        // (from-state, estimator) -> per-member `[grid][state]` pseudo values
        let mut cache: HashMap<(usize, EstimatorKind), Vec<Vec<f64>>> = HashMap::new();
        let mut needed: Vec<(usize, EstimatorKind)> = Vec::new();
        for (target, est) in plan {
            let froms: Vec<usize> = match *target {
                Target::State(_) => (1..=k).collect(),
                Target::Transition(j, _) => vec![j],
            };
            for j in froms {
                if groups.contains_key(&j) && !needed.contains(&(j, *est)) {
                    needed.push((j, *est));
                }
            }
        }
        for (j, est) in needed {
            let scope = &groups[&j];
            let sample: &[usize] = match est {
                EstimatorKind::Lmaj => scope,
                EstimatorKind::Aj => &all,
            };
            let pv = row_pseudo_values(dataset, sample, scope, j, s, grid.points(), mode)?;
            cache.insert((j, est), pv);
        }
        for (t, (target, est)) in plan.iter().enumerate() {
            match *target {
                Target::State(state) => {
                    for (&j, scope) in &groups {
                        let pv = &cache[&(j, *est)];
                        for (r, &i) in scope.iter().enumerate() {
                            membership[[i, t]] = true;
                            for g in 0..m {
                                values[[i, t * m + g]] = pv[r][g * k + state - 1];
                            }
                        }
                    }
                }
                Target::Transition(j, to) => {
                    let Some(scope) = groups.get(&j) else { continue };
                    let pv = &cache[&(j, *est)];
                    for (r, &i) in scope.iter().enumerate() {
                        membership[[i, t]] = true;
                        for g in 0..m {
                            values[[i, t * m + g]] = pv[r][g * k + to - 1];
                        }
                    }
                }
            }
        }
    }
    Ok(PseudoValueTable {
        task,
        grid: grid.clone(),
        conditioning_time: s,
        subject_ids: dataset.subjects().iter().map(|p| p.id.clone()).collect(),
        targets: plan.iter().map(|p| p.0).collect(),
        estimators: plan.iter().map(|p| p.1).collect(),
        values,
        membership,
        landmark_states,
    })
}
