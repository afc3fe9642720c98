//! CSV and JSON interchange for event-history data.
//!
//! Records: header `id,from,to,tstart,tstop,status`, status `1` = transitioned,
//! `0` = censored (`to` is ignored and written equal to `from`).
//! Covariates: header `id,<name1>,...,<namep>`. Graphs: JSON [`GraphSpec`](super::GraphSpec).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{
    validate_dataset, DataError, MultiStateDataset, RawDataset, RecordStatus, TransitionGraph,
    TransitionRecord,
};

pub const RECORDS_HEADER: [&str; 6] = ["id", "from", "to", "tstart", "tstop", "status"];

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_error(source: &str, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Parse {
        path: source.to_string(),
        line,
        message: e.to_string(),
    }
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    source: &str,
) -> Result<T, DataError> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec.get(idx).ok_or_else(|| DataError::Parse {
        path: source.to_string(),
        line,
        message: format!("missing column {name}"),
    })?;
    raw.trim().parse().map_err(|_| DataError::Parse {
        path: source.to_string(),
        line,
        message: format!("cannot parse {name} from {raw:?}"),
    })
}

pub fn read_records<R: Read>(reader: R, source: &str) -> Result<Vec<TransitionRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != RECORDS_HEADER {
        return Err(DataError::Parse {
            path: source.to_string(),
            line: 1,
            message: format!("expected header {:?}, got {:?}", RECORDS_HEADER.join(","), headers),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(source, e))?;
        let status: u8 = field(&row, 5, "status", source)?;
        let status = match status {
            1 => RecordStatus::Transitioned,
            0 => RecordStatus::Censored,
            other => {
                return Err(DataError::Parse {
                    path: source.to_string(),
                    line: row.position().map_or(0, |p| p.line()),
                    message: format!("status must be 0 or 1, got {other}"),
                })
            }
        };
        let from: usize = field(&row, 1, "from", source)?;
        let to: usize = field(&row, 2, "to", source)?;
        out.push(TransitionRecord {
            subject_id: field(&row, 0, "id", source)?,
            from_state: from,
            to_state: if status == RecordStatus::Censored { from } else { to },
            t_start: field(&row, 3, "tstart", source)?,
            t_stop: field(&row, 4, "tstop", source)?,
            status,
        });
    }
    Ok(out)
}

/// Covariate names and rows keyed by subject id.
pub type CovariateTable = (Vec<String>, Vec<(String, Vec<f64>)>);

pub fn read_covariates<R: Read>(reader: R, source: &str) -> Result<CovariateTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    if headers.get(0) != Some("id") {
        return Err(DataError::Parse {
            path: source.to_string(),
            line: 1,
            message: "first covariate column must be id".into(),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(source, e))?;
        let id: String = field(&row, 0, "id", source)?;
        let values = (1..=names.len())
            .map(|c| field::<f64>(&row, c, &names[c - 1], source))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((id, values));
    }
    Ok((names, rows))
}

pub fn write_records<W: Write>(writer: W, records: impl IntoIterator<Item = TransitionRecord>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORDS_HEADER)?;
    for r in records {
        w.write_record([
            r.subject_id,
            r.from_state.to_string(),
            r.to_state.to_string(),
            r.t_start.to_string(),
            r.t_stop.to_string(),
            r.status.code().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_covariates<W: Write>(writer: W, dataset: &MultiStateDataset) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(dataset.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for (i, s) in dataset.subjects().iter().enumerate() {
        let mut row = vec![s.id.clone()];
        row.extend(dataset.covariate_row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<TransitionGraph, DataError> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    serde_json::from_str(&s).map_err(|e| DataError::Parse {
        path: path.display().to_string(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Reads a long-format records CSV (and optional covariates CSV) and validates it.
pub fn load_dataset(
    records: &Path,
    covariates: Option<&Path>,
    graph: TransitionGraph,
    horizon: Option<f64>,
) -> Result<MultiStateDataset, DataError> {
    let records_vec = read_records(open(records)?, &records.display().to_string())?;
    let (covariate_names, covariates) = match covariates {
        Some(p) => read_covariates(open(p)?, &p.display().to_string())?,
        None => (vec![], vec![]),
    };
    Ok(validate_dataset(RawDataset {
        graph,
        records: records_vec,
        covariate_names,
        covariates,
        horizon,
    })?)
}

/// Writes `records.csv` and `covariates.csv` into `dir`.
pub fn save_dataset(dataset: &MultiStateDataset, dir: &Path) -> Result<(), DataError> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| DataError::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let rp = dir.join("records.csv");
    let f = File::create(&rp).map_err(io(&rp))?;
    write_records(f, dataset.records()).map_err(|e| csv_error(&rp.display().to_string(), e))?;
    let cp = dir.join("covariates.csv");
    let f = File::create(&cp).map_err(io(&cp))?;
    write_covariates(f, dataset).map_err(|e| csv_error(&cp.display().to_string(), e))?;
    Ok(())
}
