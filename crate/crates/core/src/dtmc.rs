//! Per-situation discrete-time Markov chains and bounded reachability.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::scg::{validate_scg, AugmentedScg, ROW_SUM_TOLERANCE};

/// Matrices with at most this fraction of nonzero entries are stored sparsely.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub enum TransitionMatrix {
    /// Row-major `n * n`.
    Dense { n: usize, data: Vec<f64> },
    Sparse { rows: Vec<Vec<(usize, f64)>> },
}

impl TransitionMatrix {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let nnz: usize = rows.iter().map(Vec::len).sum();
        if n > 0 && (nnz as f64) > SPARSE_DENSITY_THRESHOLD * (n * n) as f64 {
            let mut data = vec![0.0; n * n];
            for (i, row) in rows.iter().enumerate() {
                for &(j, p) in row {
                    data[i * n + j] += p;
                }
            }
            TransitionMatrix::Dense { n, data }
        } else {
            TransitionMatrix::Sparse { rows }
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, TransitionMatrix::Dense { .. })
    }

    /// `out[i] = sum_j P(i, j) * x[j]` for every non-target `i`; targets are
    /// pinned to 1.
    fn step(&self, x: &[f64], target: &[bool], out: &mut [f64]) {
        match self {
            TransitionMatrix::Dense { n, data } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = if target[i] {
                        1.0
                    } else {
                        data[i * n..(i + 1) * n].iter().zip(x).map(|(p, v)| p * v).sum()
                    };
                }
            }
            TransitionMatrix::Sparse { rows } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = if target[i] {
                        1.0
                    } else {
                        rows[i].iter().map(|&(j, p)| p * x[j]).sum()
                    };
                }
            }
        }
    }

    pub fn probability(&self, from: usize, to: usize) -> f64 {
        match self {
            TransitionMatrix::Dense { n, data } => data[from * n + to],
            TransitionMatrix::Sparse { rows } => rows[from].iter().filter(|(j, _)| *j == to).map(|(_, p)| p).sum(),
        }
    }

    pub fn nonzero_count(&self) -> usize {
        match self {
            TransitionMatrix::Dense { data, .. } => data.iter().filter(|p| **p != 0.0).count(),
            TransitionMatrix::Sparse { rows } => rows.iter().map(|r| r.iter().filter(|(_, p)| *p != 0.0).count()).sum(),
        }
    }
}

/// A labelled DTMC with a single initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtmc {
    states: Vec<String>,
    initial: usize,
    matrix: TransitionMatrix,
    labels: BTreeMap<String, BTreeSet<usize>>,
}

impl Dtmc {
    /// Builds a DTMC from sparse rows indexed like `states`. Each row must be
    /// a probability distribution (within [`ROW_SUM_TOLERANCE`]).
    pub fn new(
        states: Vec<String>,
        initial: usize,
        rows: Vec<Vec<(usize, f64)>>,
        labels: BTreeMap<String, BTreeSet<usize>>,
    ) -> Result<Self> {
        let n = states.len();
        if rows.len() != n {
            return Err(Error::InvalidModel(format!("{} rows for {n} states", rows.len())));
        }
        if initial >= n {
            return Err(Error::InvalidModel(format!("initial state {initial} out of range")));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, p) in row {
                if j >= n || !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidModel(format!("bad transition {}->{j} ({p})", states[i])));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidModel(format!("row {} sums to {sum}", states[i])));
            }
        }
        if let Some((label, _)) = labels.iter().find(|(_, set)| set.iter().any(|&s| s >= n)) {
            return Err(Error::InvalidModel(format!("label `{label}` refers to a missing state")));
        }
        Ok(Dtmc {
            states,
            initial,
            matrix: TransitionMatrix::from_rows(rows),
            labels,
        })
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn initial_id(&self) -> &str {
        &self.states[self.initial]
    }

    pub fn matrix(&self) -> &TransitionMatrix {
        &self.matrix
    }

    pub fn labels(&self) -> &BTreeMap<String, BTreeSet<usize>> {
        &self.labels
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s == id)
    }

    /// Same chain, different initial state.
    pub fn with_initial(&self, initial: usize) -> Result<Self> {
        if initial >= self.states.len() {
            return Err(Error::InvalidModel(format!("initial state {initial} out of range")));
        }
        let mut out = self.clone();
        out.initial = initial;
        Ok(out)
    }

    /// Adds (or replaces) an atomic proposition.
    pub fn with_label(mut self, label: impl Into<String>, states: BTreeSet<usize>) -> Result<Self> {
        if states.iter().any(|&s| s >= self.states.len()) {
            return Err(Error::InvalidModel("label refers to a missing state".into()));
        }
        self.labels.insert(label.into(), states);
        Ok(self)
    }

    /// Probability, for every state, of reaching a `target` state within `k`
    /// steps.
    pub fn reach_probabilities(&self, target: &[bool], k: u32) -> Vec<f64> {
        assert_eq!(target.len(), self.states.len(), "target mask length");
        let mut x: Vec<f64> = target.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        let mut next = vec![0.0; x.len()];
        for _ in 0..k {
            self.matrix.step(&x, target, &mut next);
            std::mem::swap(&mut x, &mut next);
        }
        x
    }

    fn target_mask(&self, label: &str) -> Result<Vec<bool>> {
        let set = self
            .labels
            .get(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        let mut mask = vec![false; self.states.len()];
        for &s in set {
            mask[s] = true;
        }
        Ok(mask)
    }
}

/// Builds the DTMC of `scg` started in situation `initial`: all situations
/// followed by all failures, with failures turned into labelled sinks.
pub fn build_model(scg: &AugmentedScg, initial: &str) -> Result<Dtmc> {
    scg.require_situation(initial)?;
    let report = validate_scg(scg);
    if !report.is_empty() {
        return Err(Error::InvalidScg(report));
    }
    let states: Vec<String> = scg.state_ids().map(str::to_string).collect();
    let index: HashMap<&str, usize> = states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(states.len());
    for situation in scg.situation_ids() {
        let row = scg.row(situation).expect("validated SCG has a row per situation");
        rows.push(
            row.iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(target, p)| (index[target], p))
                .collect(),
        );
    }
    let mut labels: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for failure in scg.failures() {
        let i = index[failure.id.as_str()];
        rows.push(vec![(i, 1.0)]);
        labels.entry(failure.label.clone()).or_default().insert(i);
    }
    let start = index[initial];
    drop(index);
    Dtmc::new(states, start, rows, labels)
}

/// Probability of reaching a `target_label` state within `horizon` steps from
/// the initial state, by `horizon` rounds of value iteration.
pub fn check_bounded_reach(model: &Dtmc, target_label: &str, horizon: u32) -> Result<f64> {
    let mask = model.target_mask(target_label)?;
    let value = model.reach_probabilities(&mask, horizon)[model.initial];
    debug_assert!((0.0..=1.0 + ROW_SUM_TOLERANCE).contains(&value), "probability {value} out of range");
    Ok(value)
}
