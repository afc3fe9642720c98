//! Multi-state event-history data.
//!
//! Raw input is a long-format list of [`TransitionRecord`]s (one row per
//! observed interval) plus a covariate table. [`validate_dataset`] checks every
//! record-level and path-level invariant and produces a [`MultiStateDataset`],
//! which stores one chained [`SubjectPath`] per subject. Everything downstream
//! (estimators, tests, pseudo values, metrics) consumes the validated form.
//!
//! Conventions:
//! - a record covers the half-open interval `(t_start, t_stop]` for risk-set
//!   purposes, and a transition takes effect at `t_stop`;
//! - a subject censored at `u` is still at risk for events at `u`;
//! - absorbed subjects stay in their absorbing state forever.

mod counting;
mod dataset;
mod graph;
pub mod io;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counting::{event_timeline, CountingProcess, RiskSetSnapshot, SubjectContribution};
pub use dataset::{validate_dataset, MultiStateDataset, RawDataset, Sojourn, SubjectPath};
pub use graph::{GraphSpec, TransitionGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordStatus {
    Transitioned,
    Censored,
}

impl RecordStatus {
    pub fn code(self) -> u8 {
        match self {
            RecordStatus::Transitioned => 1,
            RecordStatus::Censored => 0,
        }
    }
}

/// One observed interval of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub subject_id: String,
    pub from_state: usize,
    pub to_state: usize,
    pub t_start: f64,
    pub t_stop: f64,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IssueKind {
    NonChainingPath,
    OverlappingIntervals,
    IllegalTransition,
    CensoredNotLast,
    MissingCovariates,
    CovariateShape,
    InvalidTimes,
    OutsideHorizon,
    UnknownState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub subject_id: String,
    /// Index of the offending record within the subject's time-ordered records.
    pub record_index: Option<usize>,
    pub detail: String,
}

/// Every violated invariant found in a raw dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn kinds(&self) -> Vec<IssueKind> {
        self.issues.iter().map(|i| i.kind).collect()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation issue(s)", self.issues.len())?;
        for issue in &self.issues {
            write!(f, "\n  {:?} subject={}", issue.kind, issue.subject_id)?;
            if let Some(r) = issue.record_index {
                write!(f, " record={r}")?;
            }
            write!(f, ": {}", issue.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid transition graph: {0}")]
    InvalidGraph(String),
    #[error("{0}")]
    Validation(ValidationReport),
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<ValidationReport> for DataError {
    fn from(r: ValidationReport) -> Self {
        DataError::Validation(r)
    }
}
