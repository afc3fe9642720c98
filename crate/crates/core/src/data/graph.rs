use serde::{Deserialize, Serialize};

use super::DataError;

/// Finite state space with the allowed instantaneous transitions.
///
/// States carry 1-based labels `1..=K`. Transitions are indexed in the order
/// they were declared; that index is the column order for every
/// transition-valued quantity (event counts, TP targets, pseudo values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct TransitionGraph {
    num_states: usize,
    transitions: Vec<(usize, usize)>,
    absorbing: Vec<bool>,
}

/// Wire form of a [`TransitionGraph`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphSpec {
    pub num_states: usize,
    pub transitions: Vec<(usize, usize)>,
    pub absorbing: Vec<bool>,
}

impl TryFrom<GraphSpec> for TransitionGraph {
    type Error = DataError;

    fn try_from(spec: GraphSpec) -> Result<Self, Self::Error> {
        TransitionGraph::new(spec.num_states, spec.transitions, spec.absorbing)
    }
}

impl From<TransitionGraph> for GraphSpec {
    fn from(g: TransitionGraph) -> Self {
        GraphSpec {
            num_states: g.num_states,
            transitions: g.transitions,
            absorbing: g.absorbing,
        }
    }
}

impl TransitionGraph {
    pub fn new(
        num_states: usize,
        transitions: Vec<(usize, usize)>,
        absorbing: Vec<bool>,
    ) -> Result<Self, DataError> {
        let bad = |msg: String| Err(DataError::InvalidGraph(msg));
        if num_states < 2 {
            return bad(format!("need at least 2 states, got {num_states}"));
        }
        if absorbing.len() != num_states {
            return bad(format!(
                "absorbing flags has length {}, expected {num_states}",
                absorbing.len()
            ));
        }
        if transitions.is_empty() {
            return bad("transition list is empty".into());
        }
        for (i, &(from, to)) in transitions.iter().enumerate() {
            if from == 0 || from > num_states || to == 0 || to > num_states {
                return bad(format!("transition {from}->{to} references a state outside 1..={num_states}"));
            }
            if from == to {
                return bad(format!("self-transition {from}->{to}"));
            }
            if absorbing[from - 1] {
                return bad(format!("absorbing state {from} has outgoing transition {from}->{to}"));
            }
            if transitions[..i].contains(&(from, to)) {
                return bad(format!("duplicate transition {from}->{to}"));
            }
        }
        Ok(Self {
            num_states,
            transitions,
            absorbing,
        })
    }

    /// Three-state forward chain `1->2, 1->3, 2->3` with state 3 absorbing.
    pub fn illness_death() -> Self {
        Self::new(3, vec![(1, 2), (1, 3), (2, 3)], vec![false, false, true])
            .expect("static graph is valid")
    }

    /// Four states where 1..=3 communicate in both directions and 4 is absorbing.
    pub fn reversible_four_state() -> Self {
        Self::new(
            4,
            vec![
                (1, 2),
                (1, 3),
                (1, 4),
                (2, 1),
                (2, 3),
                (2, 4),
                (3, 1),
                (3, 2),
                (3, 4),
            ],
            vec![false, false, false, true],
        )
        .expect("static graph is valid")
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_transitions(&self) -> usize {
        self.transitions.len()
    }

    pub fn transitions(&self) -> &[(usize, usize)] {
        &self.transitions
    }

    pub fn contains_state(&self, state: usize) -> bool {
        (1..=self.num_states).contains(&state)
    }

    pub fn is_absorbing(&self, state: usize) -> bool {
        self.absorbing[state - 1]
    }

    pub fn absorbing_flags(&self) -> &[bool] {
        &self.absorbing
    }

    pub fn transition_index(&self, from: usize, to: usize) -> Option<usize> {
        self.transitions.iter().position(|&t| t == (from, to))
    }

    /// Transitions leaving `state`, as `(transition index, to_state)`.
    pub fn outgoing(&self, state: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.transitions
            .iter()
            .enumerate()
            .filter(move |(_, &(f, _))| f == state)
            .map(|(q, &(_, to))| (q, to))
    }

    pub fn has_outgoing(&self, state: usize) -> bool {
        self.outgoing(state).next().is_some()
    }
}
