use super::{MultiStateDataset, TransitionGraph};

/// Risk sets `Y_j(u)` and transition counts `dN_jk(u)` at one event time.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetSnapshot {
    pub time: f64,
    /// Indexed by `state - 1`.
    pub at_risk: Vec<usize>,
    /// Indexed by transition index of the graph.
    pub event_counts: Vec<usize>,
}

impl RiskSetSnapshot {
    pub fn at_risk_in(&self, state: usize) -> usize {
        self.at_risk[state - 1]
    }

    pub fn events(&self, graph: &TransitionGraph, from: usize, to: usize) -> usize {
        graph
            .transition_index(from, to)
            .map_or(0, |q| self.event_counts[q])
    }
}

/// Counting-process summary of a sample of subjects over `(origin, inf)`.
///
/// Only distinct transition times after `origin` are kept. A sojourn
/// `(start, stop]` in state `j` contributes to `Y_j(u)` for every kept `u`
/// with `start < u <= stop`.
#[derive(Debug, Clone)]
pub struct CountingProcess {
    num_states: usize,
    num_transitions: usize,
    origin: f64,
    times: Vec<f64>,
    at_risk: Vec<f64>,
    events: Vec<f64>,
}

/// Where a single subject enters the counts of a [`CountingProcess`].
#[derive(Debug, Clone, Default)]
pub struct SubjectContribution {
    /// `(lo, hi, state_index)`: at risk in the state for event indices `lo..hi`.
    pub at_risk: Vec<(usize, usize, usize)>,
    /// `(event index, transition index)`.
    pub events: Vec<(usize, usize)>,
}

impl CountingProcess {
    pub fn build(dataset: &MultiStateDataset, members: &[usize], origin: f64) -> Self {
        let graph = dataset.graph();
        let k = graph.num_states();
        let q = graph.num_transitions();

        let mut times: Vec<f64> = members
            .iter()
            .flat_map(|&i| dataset.subject(i).sojourns.iter())
            .filter(|s| s.exit_to.is_some() && s.stop > origin)
            .map(|s| s.stop)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let e = times.len();

        let mut this = Self {
            num_states: k,
            num_transitions: q,
            origin,
            times,
            at_risk: vec![0.0; e * k],
            events: vec![0.0; e * q],
        };
        // difference array over event indices, one column per state
        let mut diff = vec![0i64; (e + 1) * k];
        for &i in members {
            let c = this.contribution(dataset, i);
            for (lo, hi, j) in c.at_risk {
                diff[lo * k + j] += 1;
                diff[hi * k + j] -= 1;
            }
            for (ev, tq) in c.events {
                this.events[ev * q + tq] += 1.0;
            }
        }
        let mut running = vec![0i64; k];
        for ev in 0..e {
            for j in 0..k {
                running[j] += diff[ev * k + j];
                this.at_risk[ev * k + j] = running[j] as f64;
            }
        }
        this
    }

    /// Locates one subject's risk intervals and events on this process's time axis.
    /// The subject need not be a member (the ranges are then hypothetical).
    pub fn contribution(&self, dataset: &MultiStateDataset, subject: usize) -> SubjectContribution {
        let graph = dataset.graph();
        let mut out = SubjectContribution::default();
        for s in &dataset.subject(subject).sojourns {
            if s.stop <= self.origin {
                continue;
            }
            let lo = self.times.partition_point(|&t| t <= s.start);
            let hi = self.times.partition_point(|&t| t <= s.stop);
            if lo < hi {
                out.at_risk.push((lo, hi, s.state - 1));
            }
            if let Some(to) = s.exit_to {
                let ev = self
                    .times
                    .binary_search_by(|t| t.total_cmp(&s.stop))
                    .expect("event times include every member transition");
                let tq = graph
                    .transition_index(s.state, to)
                    .expect("validated transition");
                out.events.push((ev, tq));
            }
        }
        out
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_transitions(&self) -> usize {
        self.num_transitions
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn at_risk(&self, ev: usize) -> &[f64] {
        &self.at_risk[ev * self.num_states..(ev + 1) * self.num_states]
    }

    pub fn events(&self, ev: usize) -> &[f64] {
        &self.events[ev * self.num_transitions..(ev + 1) * self.num_transitions]
    }
}

/// Risk-set snapshots at every distinct transition time, ascending.
pub fn event_timeline(dataset: &MultiStateDataset) -> Vec<RiskSetSnapshot> {
    let members: Vec<usize> = (0..dataset.len()).collect();
    let cp = CountingProcess::build(dataset, &members, f64::NEG_INFINITY);
    (0..cp.len())
        .map(|ev| RiskSetSnapshot {
            time: cp.times[ev],
            at_risk: cp.at_risk(ev).iter().map(|&y| y as usize).collect(),
            event_counts: cp.events(ev).iter().map(|&d| d as usize).collect(),
        })
        .collect()
}
