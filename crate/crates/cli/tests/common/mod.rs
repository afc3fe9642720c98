#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msa_core::data::{
    validate_dataset, MultiStateDataset, RawDataset, RecordStatus, TransitionGraph, TransitionRecord,
};
use ndarray::Array2;

pub fn rec(id: &str, from: usize, to: usize, a: f64, b: f64, moved: bool) -> TransitionRecord {
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

/// A: 1->2 at 1, 2->3 at 2; B: 1->3 at 1.5; C: censored in 1 at 3.
pub fn illness_death_records() -> Vec<TransitionRecord> {
    vec![
        rec("A", 1, 2, 0.0, 1.0, true),
        rec("A", 2, 3, 1.0, 2.0, true),
        rec("B", 1, 3, 0.0, 1.5, true),
        rec("C", 1, 1, 0.0, 3.0, false),
    ]
}

pub fn illness_death() -> MultiStateDataset {
    validate_dataset(RawDataset {
        graph: TransitionGraph::illness_death(),
        records: illness_death_records(),
        covariate_names: vec![],
        covariates: vec![],
        horizon: Some(3.0),
    })
    .unwrap()
}

/// Writes the illness-death fixture as `records.csv` and `graph.json`.
pub fn write_illness_death(dir: &Path) -> (PathBuf, PathBuf) {
    let records = dir.join("records.csv");
    let mut text = String::from("id,from,to,tstart,tstop,status\n");
    for r in illness_death_records() {
        text += &format!(
            "{},{},{},{},{},{}\n",
            r.subject_id,
            r.from_state,
            r.to_state,
            r.t_start,
            r.t_stop,
            r.status.code()
        );
    }
    std::fs::write(&records, text).unwrap();
    let graph = dir.join("graph.json");
    std::fs::write(&graph, serde_json::to_string(&TransitionGraph::illness_death()).unwrap()).unwrap();
    (records, graph)
}

/// Product integral straight from the record list: risk sets are counted
/// record by record at each transition time and the `K x K` increments are
/// multiplied out.
pub fn brute_force_tp(records: &[TransitionRecord], k: usize, s: f64, t: f64) -> Array2<f64> {
    let mut times: Vec<f64> = records
        .iter()
        .filter(|r| r.status == RecordStatus::Transitioned && r.t_stop > s && r.t_stop <= t)
        .map(|r| r.t_stop)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut p = Array2::<f64>::eye(k);
    for u in times {
        let mut y = vec![0.0; k];
        for r in records {
            if r.t_start < u && u <= r.t_stop {
                y[r.from_state - 1] += 1.0;
            }
        }
        let mut inc = Array2::<f64>::eye(k);
        for r in records {
            if r.status == RecordStatus::Transitioned && r.t_stop == u {
                let (j, l) = (r.from_state - 1, r.to_state - 1);
                inc[[j, l]] += 1.0 / y[j];
                inc[[j, j]] -= 1.0 / y[j];
            }
        }
        p = p.dot(&inc);
    }
    p
}

/// Empirical initial distribution times the brute-force product.
pub fn brute_force_sop(records: &[TransitionRecord], k: usize, t: f64) -> Vec<f64> {
    let mut first: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = first.entry(&r.subject_id).or_insert((r.t_start, r.from_state));
        if r.t_start < e.0 {
            *e = (r.t_start, r.from_state);
        }
    }
    let n = first.len() as f64;
    let mut pi0 = vec![0.0; k];
    for (_, (_, s)) in first {
        pi0[s - 1] += 1.0 / n;
    }
    let p = brute_force_tp(records, k, 0.0, t);
    (0..k).map(|c| (0..k).map(|r| pi0[r] * p[[r, c]]).sum()).collect()
}

pub fn without(records: &[TransitionRecord], id: &str) -> Vec<TransitionRecord> {
    records.iter().filter(|r| r.subject_id != id).cloned().collect()
}

/// Fraction of subjects observed in each state at `t`.
pub fn empirical_occupation(ds: &MultiStateDataset, t: f64) -> Vec<f64> {
    let mut v = vec![0.0; ds.num_states()];
    for i in 0..ds.len() {
        let s = ds.state_at_index(i, t).expect("state known");
        v[s - 1] += 1.0;
    }
    v.iter().map(|c| c / ds.len() as f64).collect()
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn expm(a: &Array2<f64>) -> Array2<f64> {
    let norm = a.iter().map(|v| v.abs()).fold(0.0, f64::max) * a.nrows() as f64;
    let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let scaled = a / 2f64.powi(squarings);
    let n = a.nrows();
    let mut term = Array2::<f64>::eye(n);
    let mut sum = Array2::<f64>::eye(n);
    for i in 1..30 {
        term = term.dot(&scaled) / i as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}

pub fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn msa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msa"))
        .args(args)
        .env("MSA_LOG", "error")
        .output()
        .expect("msa runs")
}

/// Every file under `dir`, relative path to contents.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
