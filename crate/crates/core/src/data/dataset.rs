use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};

use super::{
    DataError, IssueKind, RecordStatus, TransitionGraph, TransitionRecord, ValidationIssue,
    ValidationReport,
};

/// Unvalidated input: records in any order, covariates keyed by subject id.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub graph: TransitionGraph,
    pub records: Vec<TransitionRecord>,
    pub covariate_names: Vec<String>,
    pub covariates: Vec<(String, Vec<f64>)>,
    /// Study horizon; the largest `t_stop` when absent.
    pub horizon: Option<f64>,
}

/// A maximal interval spent in one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sojourn {
    pub state: usize,
    pub start: f64,
    pub stop: f64,
    /// Destination when the sojourn ends in a transition, `None` when censored.
    pub exit_to: Option<usize>,
}

/// One subject's observed trajectory as a chain of sojourns.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPath {
    pub id: String,
    pub sojourns: Vec<Sojourn>,
}

impl SubjectPath {
    pub fn initial_state(&self) -> usize {
        self.sojourns[0].state
    }

    pub fn entry_time(&self) -> f64 {
        self.sojourns[0].start
    }

    /// Last time at which the state is observed.
    pub fn last_time(&self) -> f64 {
        self.last().stop
    }

    /// State held at (and from) `last_time`.
    pub fn final_state(&self) -> usize {
        let last = self.last();
        last.exit_to.unwrap_or(last.state)
    }

    pub fn is_censored(&self) -> bool {
        self.last().exit_to.is_none()
    }

    pub fn is_absorbed(&self, graph: &TransitionGraph) -> bool {
        !self.is_censored() && graph.is_absorbing(self.final_state())
    }

    fn last(&self) -> &Sojourn {
        self.sojourns.last().expect("validated paths are non-empty")
    }

    /// Index of the sojourn whose state is held at `t`, if any.
    pub fn sojourn_index_at(&self, t: f64) -> Option<usize> {
        if t < self.entry_time() || t >= self.last_time() {
            return None;
        }
        let i = self.sojourns.partition_point(|s| s.start <= t);
        Some(i - 1)
    }

    /// State occupied at `t`; transitions take effect at their time.
    pub fn state_at(&self, t: f64, graph: &TransitionGraph) -> Option<usize> {
        if t < self.entry_time() {
            return None;
        }
        let last = self.last_time();
        if t > last {
            return self.is_absorbed(graph).then(|| self.final_state());
        }
        if t == last {
            return Some(self.final_state());
        }
        self.sojourn_index_at(t).map(|i| self.sojourns[i].state)
    }

    /// Start of the sojourn held at `t` (entry time into the current state).
    pub fn entry_into_state_at(&self, t: f64) -> Option<f64> {
        self.sojourn_index_at(t).map(|i| self.sojourns[i].start)
    }

    pub fn records(&self) -> impl Iterator<Item = TransitionRecord> + '_ {
        self.sojourns.iter().map(|s| TransitionRecord {
            subject_id: self.id.clone(),
            from_state: s.state,
            to_state: s.exit_to.unwrap_or(s.state),
            t_start: s.start,
            t_stop: s.stop,
            status: if s.exit_to.is_some() {
                RecordStatus::Transitioned
            } else {
                RecordStatus::Censored
            },
        })
    }
}

/// A validated cohort. Immutable; subjects keep their first-appearance order.
#[derive(Debug, Clone)]
pub struct MultiStateDataset {
    graph: TransitionGraph,
    subjects: Vec<SubjectPath>,
    covariate_names: Vec<String>,
    covariates: Array2<f64>,
    horizon: f64,
    index: HashMap<String, usize>,
}

impl MultiStateDataset {
    pub fn graph(&self) -> &TransitionGraph {
        &self.graph
    }

    pub fn num_states(&self) -> usize {
        self.graph.num_states()
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subjects(&self) -> &[SubjectPath] {
        &self.subjects
    }

    pub fn subject(&self, i: usize) -> &SubjectPath {
        &self.subjects[i]
    }

    pub fn subject_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// `n x p` covariate matrix, rows in subject order.
    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn covariate_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    pub fn state_at(&self, subject_id: &str, t: f64) -> Result<Option<usize>, DataError> {
        let i = self
            .subject_index(subject_id)
            .ok_or_else(|| DataError::UnknownSubject(subject_id.to_string()))?;
        Ok(self.subjects[i].state_at(t, &self.graph))
    }

    pub fn state_at_index(&self, i: usize, t: f64) -> Option<usize> {
        self.subjects[i].state_at(t, &self.graph)
    }

    pub fn records(&self) -> impl Iterator<Item = TransitionRecord> + '_ {
        self.subjects.iter().flat_map(|s| s.records())
    }

    /// Fraction of subjects whose last record is censored.
    pub fn censoring_rate(&self) -> f64 {
        if self.subjects.is_empty() {
            return 0.0;
        }
        let c = self.subjects.iter().filter(|s| s.is_censored()).count();
        c as f64 / self.subjects.len() as f64
    }

    /// Empirical initial-state distribution (length K).
    pub fn initial_distribution(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_states()];
        for s in &self.subjects {
            d[s.initial_state() - 1] += 1.0;
        }
        let n = self.subjects.len().max(1) as f64;
        d.iter_mut().for_each(|v| *v /= n);
        d
    }

    /// Sorted distinct transition times.
    pub fn event_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .subjects
            .iter()
            .flat_map(|s| s.sojourns.iter().filter(|j| j.exit_to.is_some()).map(|j| j.stop))
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// The cohort restricted to the given subjects, in the given order.
    pub fn subset(&self, indices: &[usize]) -> MultiStateDataset {
        let subjects: Vec<SubjectPath> = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        let covariates = self.covariates.select(ndarray::Axis(0), indices);
        let index = subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        MultiStateDataset {
            graph: self.graph.clone(),
            subjects,
            covariate_names: self.covariate_names.clone(),
            covariates,
            horizon: self.horizon,
            index,
        }
    }

    pub fn to_raw(&self) -> RawDataset {
        RawDataset {
            graph: self.graph.clone(),
            records: self.records().collect(),
            covariate_names: self.covariate_names.clone(),
            covariates: self
                .subjects
                .iter()
                .enumerate()
                .map(|(i, s)| (s.id.clone(), self.covariates.row(i).to_vec()))
                .collect(),
            horizon: Some(self.horizon),
        }
    }
}

/// Checks every record and path invariant; returns the validated cohort or a
/// report listing all violations.
pub fn validate_dataset(raw: RawDataset) -> Result<MultiStateDataset, ValidationReport> {
    let RawDataset {
        graph,
        records,
        covariate_names,
        covariates,
        horizon,
    } = raw;
    let horizon = horizon.unwrap_or_else(|| {
        records
            .iter()
            .map(|r| r.t_stop)
            .filter(|t| t.is_finite())
            .fold(0.0, f64::max)
    });

    let mut report = ValidationReport::default();
    fn issue(report: &mut ValidationReport, kind: IssueKind, subject_id: &str, record_index: Option<usize>, detail: String) {
        report.issues.push(ValidationIssue {
            kind,
            subject_id: subject_id.to_string(),
            record_index,
            detail,
        })
    }

    // Group by subject, first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<TransitionRecord>> = HashMap::new();
    for r in records {
        let g = groups.entry(r.subject_id.clone()).or_insert_with(|| {
            order.push(r.subject_id.clone());
            Vec::new()
        });
        g.push(r);
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in &order {
        let mut recs = groups.remove(id).unwrap_or_default();
        recs.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.t_stop.total_cmp(&b.t_stop)));
        let before = report.issues.len();

        for (i, r) in recs.iter().enumerate() {
            if !graph.contains_state(r.from_state)
                || (r.status == RecordStatus::Transitioned && !graph.contains_state(r.to_state))
            {
                issue(
                    &mut report,
                    IssueKind::UnknownState,
                    id,
                    Some(i),
                    format!("states {}->{} outside 1..={}", r.from_state, r.to_state, graph.num_states()),
                );
                continue;
            }
            if !(r.t_start.is_finite() && r.t_stop.is_finite() && r.t_start >= 0.0 && r.t_stop > r.t_start)
            {
                issue(
                    &mut report,
                    IssueKind::InvalidTimes,
                    id,
                    Some(i),
                    format!("interval ({}, {}]", r.t_start, r.t_stop),
                );
            } else if r.t_stop > horizon {
                issue(
                    &mut report,
                    IssueKind::OutsideHorizon,
                    id,
                    Some(i),
                    format!("t_stop {} beyond horizon {horizon}", r.t_stop),
                );
            }
            match r.status {
                RecordStatus::Transitioned => {
                    if graph.transition_index(r.from_state, r.to_state).is_none() {
                        issue(
                            &mut report,
                            IssueKind::IllegalTransition,
                            id,
                            Some(i),
                            format!("{}->{} is not in the graph", r.from_state, r.to_state),
                        );
                    }
                }
                RecordStatus::Censored => {
                    if graph.is_absorbing(r.from_state) {
                        issue(
                            &mut report,
                            IssueKind::IllegalTransition,
                            id,
                            Some(i),
                            format!("record starts in absorbing state {}", r.from_state),
                        );
                    }
                }
            }
            if i > 0 {
                let prev = &recs[i - 1];
                if prev.status == RecordStatus::Censored {
                    issue(
                        &mut report,
                        IssueKind::CensoredNotLast,
                        id,
                        Some(i - 1),
                        format!("censored at {} but followed by another record", prev.t_stop),
                    );
                }
                if r.t_start < prev.t_stop {
                    issue(
                        &mut report,
                        IssueKind::OverlappingIntervals,
                        id,
                        Some(i),
                        format!("starts at {} before previous stop {}", r.t_start, prev.t_stop),
                    );
                } else if r.t_start > prev.t_stop {
                    issue(
                        &mut report,
                        IssueKind::NonChainingPath,
                        id,
                        Some(i),
                        format!("gap between {} and {}", prev.t_stop, r.t_start),
                    );
                }
                if prev.status == RecordStatus::Transitioned && r.from_state != prev.to_state {
                    issue(
                        &mut report,
                        IssueKind::NonChainingPath,
                        id,
                        Some(i),
                        format!("from_state {} does not match previous to_state {}", r.from_state, prev.to_state),
                    );
                }
            }
        }

        if report.issues.len() == before {
            subjects.push(SubjectPath {
                id: id.clone(),
                sojourns: recs
                    .iter()
                    .map(|r| Sojourn {
                        state: r.from_state,
                        start: r.t_start,
                        stop: r.t_stop,
                        exit_to: (r.status == RecordStatus::Transitioned).then_some(r.to_state),
                    })
                    .collect(),
            });
        }
    }

    let p = covariate_names.len();
    let mut cov_map: HashMap<&str, &Vec<f64>> = HashMap::new();
    for (cid, row) in &covariates {
        if cov_map.insert(cid.as_str(), row).is_some() {
            issue(
                &mut report,
                IssueKind::CovariateShape,
                cid,
                None,
                "duplicate covariate row".into(),
            );
        }
    }
    let has_covariates = p > 0 || !covariates.is_empty();
    if has_covariates {
        for id in &order {
            match cov_map.get(id.as_str()) {
                None => issue(&mut report, IssueKind::MissingCovariates, id, None, "no covariate row".into()),
                Some(row) if row.len() != p => issue(
                    &mut report,
                    IssueKind::CovariateShape,
                    id,
                    None,
                    format!("{} covariate values, expected {p}", row.len()),
                ),
                Some(row) if row.iter().any(|v| !v.is_finite()) => {
                    issue(&mut report, IssueKind::CovariateShape, id, None, "non-finite covariate".into())
                }
                Some(_) => {}
            }
        }
    }

    if !report.is_empty() {
        return Err(report);
    }
    let index = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), i))
        .collect();
    let mut cov = Array2::<f64>::zeros((subjects.len(), p));
    if has_covariates {
        for (i, s) in subjects.iter().enumerate() {
            cov.row_mut(i).assign(&ArrayView1::from(cov_map[s.id.as_str()].as_slice()));
        }
    }
    Ok(MultiStateDataset {
        graph,
        subjects,
        covariate_names,
        covariates: cov,
        horizon,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, from: usize, to: usize, a: f64, b: f64, moved: bool) -> TransitionRecord {
        TransitionRecord {
            subject_id: id.into(),
            from_state: from,
            to_state: to,
            t_start: a,
            t_stop: b,
            status: if moved {
                RecordStatus::Transitioned
            } else {
                RecordStatus::Censored
            },
        }
    }

    fn raw(records: Vec<TransitionRecord>) -> RawDataset {
        RawDataset {
            graph: TransitionGraph::illness_death(),
            records,
            covariate_names: vec![],
            covariates: vec![],
            horizon: None,
        }
    }

    #[test]
    fn chained_path_is_valid() {
        let ds = validate_dataset(raw(vec![
            rec("a", 2, 3, 1.0, 2.0, true),
            rec("a", 1, 2, 0.0, 1.0, true),
        ]))
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.subject(0).sojourns.len(), 2);
        assert_eq!(ds.horizon(), 2.0);
    }

    #[test]
    fn from_state_mismatch_is_non_chaining() {
        let err = validate_dataset(raw(vec![
            rec("a", 1, 2, 0.0, 1.0, true),
            rec("a", 1, 3, 1.0, 2.0, true),
        ]))
        .unwrap_err();
        assert_eq!(err.kinds(), vec![IssueKind::NonChainingPath]);
        assert_eq!(err.issues[0].subject_id, "a");
        assert_eq!(err.issues[0].record_index, Some(1));
    }

    #[test]
    fn backward_transition_is_illegal() {
        let err = validate_dataset(raw(vec![rec("a", 3, 1, 0.0, 1.0, true)])).unwrap_err();
        assert!(err.has(IssueKind::IllegalTransition));
    }

    #[test]
    fn reports_every_violation() {
        let mut r = raw(vec![
            rec("a", 1, 1, 0.0, 1.0, false),
            rec("a", 1, 2, 1.0, 2.0, true),
            rec("b", 1, 2, 0.0, 2.0, true),
            rec("b", 2, 3, 1.5, 3.0, true),
            rec("c", 1, 2, 0.0, 1.0, true),
        ]);
        r.covariate_names = vec!["x1".into()];
        r.covariates = vec![("a".into(), vec![0.0]), ("b".into(), vec![1.0, 2.0])];
        let err = validate_dataset(r).unwrap_err();
        assert!(err.has(IssueKind::CensoredNotLast));
        assert!(err.has(IssueKind::OverlappingIntervals));
        assert!(err.has(IssueKind::MissingCovariates));
        assert!(err.has(IssueKind::CovariateShape));
    }

    #[test]
    fn state_at_follows_boundary_conventions() {
        let ds = validate_dataset(raw(vec![
            rec("a", 1, 2, 0.0, 1.0, true),
            rec("a", 2, 2, 1.0, 3.0, false),
            rec("b", 1, 1, 0.0, 3.0, false),
            rec("c", 1, 3, 0.0, 2.0, true),
        ]))
        .unwrap();
        assert_eq!(ds.state_at("a", 0.5).unwrap(), Some(1));
        assert_eq!(ds.state_at("a", 1.0).unwrap(), Some(2));
        assert_eq!(ds.state_at("a", 3.0).unwrap(), Some(2));
        assert_eq!(ds.state_at("b", 4.0).unwrap(), None);
        assert_eq!(ds.state_at("c", 2.0).unwrap(), Some(3));
        assert_eq!(ds.state_at("c", 100.0).unwrap(), Some(3));
        assert!(matches!(ds.state_at("zz", 1.0), Err(DataError::UnknownSubject(_))));
    }

    #[test]
    fn round_trip_through_raw_is_identity() {
        let ds = validate_dataset(raw(vec![
            rec("a", 1, 2, 0.0, 1.0, true),
            rec("a", 2, 3, 1.0, 2.0, true),
            rec("b", 1, 1, 0.0, 3.0, false),
        ]))
        .unwrap();
        let again = validate_dataset(ds.to_raw()).unwrap();
        assert_eq!(again.subjects(), ds.subjects());
        assert_eq!(again.horizon(), ds.horizon());
    }
}
