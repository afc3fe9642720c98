//! Standalone estimator, pseudo-value and Markov-test tables for `msa estimate`.
//!
//! - AJ SOP: `state,time,probability`.
//! - AJ or LMAJ rows of `P(s, t)`: `from,state,time,probability`.
//! - Markov test: `method,statistic,dof,p_value`.
//!
//! Floats are written in shortest round-trip form.

use std::io::{Read, Write};

use anyhow::{anyhow, bail, Result};
use msa_core::data::MultiStateDataset;
use msa_core::estimators::{aj_state_occupation, aj_transition_probability, lmaj_dynamic_sop, TimeGrid};
use msa_core::markov_tests::{ca_global_test, logrank_transition_test, MarkovTestError, TestMethod, TestOptions, TestResult, TestScope};

/// `[grid][state]` probabilities.
type Rows = Vec<Vec<f64>>;

pub fn write_aj_sop<W: Write>(dataset: &MultiStateDataset, grid: &TimeGrid, writer: W) -> Result<()> {
    let sop = aj_state_occupation(dataset, grid)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["state", "time", "probability"])?;
    for k in 0..dataset.num_states() {
        for (m, t) in grid.points().iter().enumerate() {
            w.write_record([(k + 1).to_string(), t.to_string(), sop.probabilities[[m, k]].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_rows<W: Write>(rows: &[(usize, Rows)], grid: &TimeGrid, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["from", "state", "time", "probability"])?;
    for (from, probs) in rows {
        let k = probs.first().map_or(0, Vec::len);
        for state in 0..k {
            for (m, t) in grid.points().iter().enumerate() {
                w.write_record([from.to_string(), (state + 1).to_string(), t.to_string(), probs[m][state].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Every row of the AJ `P(s, t)`.
pub fn write_aj_tp<W: Write>(dataset: &MultiStateDataset, s: f64, grid: &TimeGrid, writer: W) -> Result<()> {
    let tp = aj_transition_probability(dataset, s, grid)?;
    let rows: Vec<(usize, Rows)> = (0..dataset.num_states())
        .map(|j| (j + 1, tp.matrices.iter().map(|p| p.row(j).to_vec()).collect()))
        .collect();
    write_rows(&rows, grid, writer)
}

/// LMAJ rows of `P(s, t)` for every non-empty landmark group.
pub fn write_lmaj_tp<W: Write>(dataset: &MultiStateDataset, s: f64, grid: &TimeGrid, writer: W) -> Result<()> {
    let mut rows = Vec::new();
    for (j, r) in lmaj_dynamic_sop(dataset, s, grid)? {
        match r {
            Ok(series) => rows.push((j, series.probabilities.rows().into_iter().map(|r| r.to_vec()).collect())),
            Err(e) => log::warn!("{e}; state {j} skipped"),
        }
    }
    write_rows(&rows, grid, writer)
}

/// A row of an estimator table; `from` is absent for the SOP.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRow {
    pub from: Option<usize>,
    pub state: usize,
    pub time: f64,
    pub probability: f64,
}

pub fn read_probability_csv<R: Read>(reader: R) -> Result<Vec<ProbabilityRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let with_from = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["state", "time", "probability"] => false,
        ["from", "state", "time", "probability"] => true,
        _ => bail!("unexpected header {header:?}"),
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| anyhow!("line {line}: bad number {:?}", &rec[i]));
        let u = |i: usize| rec[i].parse::<usize>().map_err(|_| anyhow!("line {line}: bad state {:?}", &rec[i]));
        let o = usize::from(with_from);
        out.push(ProbabilityRow {
            from: if with_from { Some(u(0)?) } else { None },
            state: u(o)?,
            time: f(o + 1)?,
            probability: f(o + 2)?,
        });
    }
    Ok(out)
}

/// Runs a Markov test. A log-rank test without a usable split reports
/// statistic 0 and p-value 1 (with a warning).
pub fn markov_test(
    dataset: &MultiStateDataset,
    method: TestMethod,
    transition: Option<(usize, usize)>,
    landmarks: Option<&[f64]>,
    opts: &TestOptions,
) -> Result<TestResult> {
    match method {
        TestMethod::Ca => Ok(ca_global_test(dataset, opts)?),
        TestMethod::Logrank => {
            let (j, k) = transition.ok_or_else(|| anyhow!("the log-rank test needs --transition j->k"))?;
            match logrank_transition_test(dataset, j, k, landmarks, opts) {
                Err(e @ MarkovTestError::DegenerateSplit { .. }) => {
                    log::warn!("{e}");
                    Ok(TestResult {
                        method,
                        scope: TestScope::Transition(j, k),
                        statistic: 0.0,
                        dof: 1,
                        p_value: 1.0,
                    })
                }
                r => Ok(r?),
            }
        }
    }
}

pub fn write_test_report<W: Write>(result: &TestResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "statistic", "dof", "p_value"])?;
    w.write_record([
        result.method.name().to_string(),
        result.statistic.to_string(),
        result.dof.to_string(),
        result.p_value.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// `(method, statistic, dof, p_value)` from a test report.
pub fn read_test_report<R: Read>(reader: R) -> Result<(String, f64, usize, f64)> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["method", "statistic", "dof", "p_value"] {
        bail!("test report header must be method,statistic,dof,p_value");
    }
    let rec = rdr.records().next().ok_or_else(|| anyhow!("empty test report"))??;
    Ok((
        rec[0].to_string(),
        rec[1].parse()?,
        rec[2].parse()?,
        rec[3].parse()?,
    ))
}
