//! Result tables: writers and the matching readers.
//!
//! - `summary.csv`: `model,metric,<target columns>,Avg`, one `iBS` and one
//!   `iAUC` row per candidate. State targets are headed `S1..SK`,
//!   transitions `j->k`. Values are means over CV cells; `NA` when missing.
//! - `cells.csv`: `run,fold,model,iBS,iAUC,status`, one row per cell and candidate.
//! - `series_<model>.csv`: `target,time,brier,auc` (cell-averaged curves).

use std::io::{Read, Write};

use anyhow::{anyhow, bail, Result};
use msa_core::metrics::format_value;
use msa_core::model::CvSummary;
use msa_core::pseudo::Target;

pub fn target_column(target: &Target) -> String {
    match target {
        Target::State(k) => format!("S{k}"),
        Target::Transition(..) => target.to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    format_value(v.unwrap_or(f64::NAN))
}

pub fn write_summary_csv<W: Write>(summary: &CvSummary, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["model".to_string(), "metric".to_string()];
    header.extend(summary.targets.iter().map(target_column));
    header.push("Avg".into());
    w.write_record(&header)?;
    for c in &summary.candidates {
        for (metric, per_target, avg) in [("iBS", &c.target_ibs, c.mean_ibs), ("iAUC", &c.target_iauc, c.mean_iauc)] {
            let mut row = vec![c.name.clone(), metric.to_string()];
            row.extend(per_target.iter().map(|v| opt(*v)));
            row.push(opt(avg));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub metric: String,
    /// Per-target values in column order.
    pub values: Vec<Option<f64>>,
    pub avg: Option<f64>,
}

fn parse_value(raw: &str) -> Result<Option<f64>> {
    if raw == "NA" {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| anyhow!("cannot parse {raw:?} as a number"))
}

/// Reads `summary.csv`; returns the target column names and the rows.
pub fn read_summary_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<SummaryRow>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header.len() < 4 || header[0] != "model" || header[1] != "metric" || header.last().map(String::as_str) != Some("Avg") {
        bail!("summary header must be model,metric,<targets>,Avg");
    }
    let targets = header[2..header.len() - 1].to_vec();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut values = Vec::new();
        for f in rec.iter().skip(2).take(targets.len()) {
            values.push(parse_value(f).map_err(|e| anyhow!("line {line}: {e}"))?);
        }
        rows.push(SummaryRow {
            model: rec[0].to_string(),
            metric: rec[1].to_string(),
            values,
            avg: parse_value(&rec[header.len() - 1]).map_err(|e| anyhow!("line {line}: {e}"))?,
        });
    }
    Ok((targets, rows))
}

pub fn write_cells_csv<W: Write>(summary: &CvSummary, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["run", "fold", "model", "iBS", "iAUC", "status"])?;
    for o in &summary.outcomes {
        let name = &summary.candidates[o.candidate].name;
        let (ibs, iauc, status) = match &o.result {
            Ok((b, a)) => (b.average(), a.average(), "ok".to_string()),
            Err(e) => (None, None, e.to_string()),
        };
        w.write_record([o.run.to_string(), o.fold.to_string(), name.clone(), opt(ibs), opt(iauc), status])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a `series_<model>.csv` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub target: Target,
    pub time: f64,
    pub brier: Option<f64>,
    pub auc: Option<f64>,
}

pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<SeriesRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != ["target", "time", "brier", "auc"] {
        bail!("series header must be target,time,brier,auc");
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |e: String| anyhow!("line {line}: {e}");
        out.push(SeriesRow {
            target: rec[0].parse().map_err(err)?,
            time: rec[1].parse().map_err(|_| err(format!("bad time {:?}", &rec[1])))?,
            brier: parse_value(&rec[2]).map_err(|e| err(e.to_string()))?,
            auc: parse_value(&rec[3]).map_err(|e| err(e.to_string()))?,
        });
    }
    Ok(out)
}
