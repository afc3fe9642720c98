#![allow(dead_code)]

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

pub fn build(graph: TransitionGraph, records: Vec<TransitionRecord>, horizon: f64) -> MultiStateDataset {
    validate_dataset(RawDataset {
        graph,
        records,
        covariate_names: vec![],
        covariates: vec![],
        horizon: Some(horizon),
    })
    .unwrap()
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
    build(TransitionGraph::illness_death(), illness_death_records(), 3.0)
}

/// Product integral computed straight from the record list: risk sets are
/// counted record by record at each transition time, increments are full
/// `K x K` matrices, and the product is taken with matrix multiplication.
pub fn brute_force_tp(records: &[TransitionRecord], k: usize, s: f64, t: f64) -> Array2<f64> {
    let mut times: Vec<f64> = records
        .iter()
        .filter(|r| r.status == RecordStatus::Transitioned && r.t_stop > s && r.t_stop <= t)
        .map(|r| r.t_stop)
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
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

/// SOP oracle: empirical initial distribution times the brute-force product.
pub fn brute_force_sop(records: &[TransitionRecord], k: usize, t: f64) -> Vec<f64> {
    let mut first: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
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

/// Fraction of subjects observed in each state at `t` (counting oracle).
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
        sum = sum + &term;
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}

/// One subject drawn from coded choices: each step picks an outgoing
/// transition (`choice % out-degree`) after `0.5 * (dt + 1)` time units.
/// The path then ends censored at `end` (if not absorbed and `end` is later)
/// or, when `to_horizon`, censored exactly at the horizon.
pub fn coded_subject(
    graph: &TransitionGraph,
    id: &str,
    initial: usize,
    steps: &[(u8, u8)],
    end: Option<u8>,
    to_horizon: bool,
    horizon: f64,
) -> Vec<TransitionRecord> {
    let mut out = Vec::new();
    let mut state = initial;
    let mut t = 0.0;
    for &(choice, dt) in steps {
        let outs: Vec<usize> = graph.outgoing(state).map(|(_, to)| to).collect();
        if outs.is_empty() {
            break;
        }
        let next_t = t + 0.5 * (dt as f64 + 1.0);
        if next_t >= horizon {
            break;
        }
        let to = outs[choice as usize % outs.len()];
        out.push(rec(id, state, to, t, next_t, true));
        state = to;
        t = next_t;
    }
    if graph.is_absorbing(state) {
        return out;
    }
    if to_horizon {
        out.push(rec(id, state, state, t, horizon, false));
    } else if let Some(e) = end {
        let stop = (t + 0.25 * (e as f64 + 1.0)).min(horizon);
        if stop > t {
            out.push(rec(id, state, state, t, stop, false));
        }
    }
    if out.is_empty() {
        out.push(rec(id, state, state, 0.0, horizon, false));
    }
    out
}

pub type CodedSubject = (u8, Vec<(u8, u8)>, Option<u8>);

pub fn coded_dataset(
    graph: &TransitionGraph,
    subjects: &[CodedSubject],
    to_horizon: bool,
    horizon: f64,
) -> MultiStateDataset {
    let starts: Vec<usize> = (1..=graph.num_states()).filter(|&s| !graph.is_absorbing(s)).collect();
    let mut records = Vec::new();
    for (i, (init, steps, end)) in subjects.iter().enumerate() {
        let initial = starts[*init as usize % starts.len()];
        records.extend(coded_subject(graph, &format!("s{i}"), initial, steps, *end, to_horizon, horizon));
    }
    build(graph.clone(), records, horizon)
}

pub mod strategies {
    use super::CodedSubject;
    use proptest::prelude::*;

    pub fn subjects(max_n: usize) -> impl Strategy<Value = Vec<CodedSubject>> {
        proptest::collection::vec(
            (
                0u8..3,
                proptest::collection::vec((0u8..4, 0u8..6), 0..5),
                proptest::option::of(0u8..12),
            ),
            1..max_n,
        )
    }
}
