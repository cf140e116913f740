//! Operational Design Domain attributes, the Situation Coverage Grid (SCG) and
//! its augmentation with failure states and probabilistic transitions.
//!
//! A situation assigns exactly one value to every ODD attribute; the grid is
//! the Cartesian product of attribute values, enumerated lexicographically and
//! named `s0`, `s1`, ... in that order. The augmented SCG adds user-named
//! failure states and a transition function `delta` defined on situations only;
//! failures are absorbing by construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose sum is this close to 1 are accepted as-is.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;
/// Rows within this distance of 1 (but outside [`ROW_SUM_TOLERANCE`]) are
/// renormalised on load with a warning.
pub const RENORMALISE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OddAttribute {
    pub name: String,
    pub values: Vec<String>,
}

impl OddAttribute {
    pub fn new<S: Into<String>>(name: impl Into<String>, values: impl IntoIterator<Item = S>) -> Self {
        OddAttribute {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Situation {
    pub id: String,
    /// One value index per ODD attribute.
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMode {
    pub id: String,
    /// Atomic proposition used by properties to refer to this failure.
    pub label: String,
    #[serde(default)]
    pub description: String,
}

impl FailureMode {
    /// A failure whose label equals its id.
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        let id = id.into();
        FailureMode {
            label: id.clone(),
            id,
            description: description.into(),
        }
    }
}

/// Sparse probability distribution over state ids. Absent ids have
/// probability zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(BTreeMap<String, f64>);

impl Distribution {
    pub fn new() -> Self {
        Distribution(BTreeMap::new())
    }

    pub fn point(id: impl Into<String>) -> Self {
        let mut d = Distribution::new();
        d.set(id, 1.0);
        d
    }

    pub fn get(&self, id: &str) -> f64 {
        self.0.get(id).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, id: impl Into<String>, p: f64) {
        self.0.insert(id.into(), p);
    }

    pub fn remove(&mut self, id: &str) -> Option<f64> {
        self.0.remove(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn support(&self) -> impl Iterator<Item = &str> + '_ {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains_key(id)
    }

    /// Drops entries that are exactly zero.
    pub fn prune_zeros(&mut self) {
        self.0.retain(|_, p| *p != 0.0);
    }

    /// Total-variation distance `0.5 * sum |p - q|` over the union of supports.
    pub fn total_variation(&self, other: &Distribution) -> f64 {
        let ids: BTreeSet<&str> = self.support().chain(other.support()).collect();
        0.5 * ids
            .into_iter()
            .map(|id| (self.get(id) - other.get(id)).abs())
            .sum::<f64>()
    }

    fn scale(&mut self, factor: f64) {
        for p in self.0.values_mut() {
            *p *= factor;
        }
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for Distribution {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Distribution(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Situation,
    Failure,
}

impl StateKind {
    pub fn name(self) -> &'static str {
        match self {
            StateKind::Situation => "situation",
            StateKind::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    InvalidAttribute,
    DuplicateId,
    InvalidAssignment,
    MissingRow,
    UnknownRow,
    FailureHasOutgoing,
    UnknownTarget,
    ProbabilityRange,
    RowSum,
    UnknownSunk,
    SunkNotAbsorbing,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::InvalidAttribute => "invalid-attribute",
            ViolationKind::DuplicateId => "duplicate-id",
            ViolationKind::InvalidAssignment => "invalid-assignment",
            ViolationKind::MissingRow => "missing-row",
            ViolationKind::UnknownRow => "unknown-row",
            ViolationKind::FailureHasOutgoing => "failure-has-outgoing",
            ViolationKind::UnknownTarget => "unknown-target",
            ViolationKind::ProbabilityRange => "probability-range",
            ViolationKind::RowSum => "row-sum",
            ViolationKind::UnknownSunk => "unknown-sunk",
            ViolationKind::SunkNotAbsorbing => "sunk-not-absorbing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// The offending row, attribute or id.
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.kind.as_str(), self.subject, self.detail)
    }
}

/// Enumerates every situation of the grid spanned by `attributes`, in
/// lexicographic order of value indices.
pub fn enumerate_situations(attributes: &[OddAttribute]) -> Result<Vec<Situation>> {
    if attributes.is_empty() {
        return Err(Error::InvalidOdd("no attributes".into()));
    }
    if let Some(empty) = attributes.iter().find(|a| a.values.is_empty()) {
        return Err(Error::InvalidOdd(format!("attribute `{}` has no values", empty.name)));
    }
    let total: usize = attributes.iter().map(|a| a.values.len()).product();
    let mut out = Vec::with_capacity(total);
    let mut assignment = vec![0usize; attributes.len()];
    for i in 0..total {
        out.push(Situation {
            id: format!("s{i}"),
            assignment: assignment.clone(),
        });
        // odometer increment, last attribute fastest
        for pos in (0..attributes.len()).rev() {
            assignment[pos] += 1;
            if assignment[pos] < attributes[pos].values.len() {
                break;
            }
            assignment[pos] = 0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScgDocument", into = "ScgDocument")]
pub struct AugmentedScg {
    attributes: Vec<OddAttribute>,
    situations: Vec<Situation>,
    failures: Vec<FailureMode>,
    delta: BTreeMap<String, Distribution>,
    sunk: BTreeSet<String>,
}

impl AugmentedScg {
    /// Assembles an SCG without checking it. Use [`AugmentedScg::checked`]
    /// or [`validate_scg`] to enforce well-formedness.
    pub fn from_parts(
        attributes: Vec<OddAttribute>,
        failures: Vec<FailureMode>,
        delta: BTreeMap<String, Distribution>,
        sunk: BTreeSet<String>,
    ) -> Result<Self> {
        let situations = enumerate_situations(&attributes)?;
        Ok(AugmentedScg {
            attributes,
            situations,
            failures,
            delta,
            sunk,
        })
    }

    /// Assembles an SCG, renormalising rows within [`RENORMALISE_TOLERANCE`]
    /// of 1 and rejecting anything that fails validation.
    pub fn checked(
        attributes: Vec<OddAttribute>,
        failures: Vec<FailureMode>,
        mut delta: BTreeMap<String, Distribution>,
        sunk: BTreeSet<String>,
    ) -> Result<Self> {
        for (id, row) in delta.iter_mut() {
            let sum = row.sum();
            let err = (sum - 1.0).abs();
            if err > ROW_SUM_TOLERANCE && err <= RENORMALISE_TOLERANCE {
                log::warn!("renormalising row `{id}` (sum {sum})");
                row.scale(1.0 / sum);
            }
        }
        let scg = Self::from_parts(attributes, failures, delta, sunk)?;
        let report = validate_scg(&scg);
        if report.is_empty() {
            Ok(scg)
        } else {
            Err(Error::InvalidScg(report))
        }
    }

    pub fn attributes(&self) -> &[OddAttribute] {
        &self.attributes
    }

    pub fn situations(&self) -> &[Situation] {
        &self.situations
    }

    pub fn failures(&self) -> &[FailureMode] {
        &self.failures
    }

    pub fn delta(&self) -> &BTreeMap<String, Distribution> {
        &self.delta
    }

    pub fn row(&self, situation: &str) -> Option<&Distribution> {
        self.delta.get(situation)
    }

    pub fn sunk(&self) -> &BTreeSet<String> {
        &self.sunk
    }

    pub fn is_sunk(&self, id: &str) -> bool {
        self.sunk.contains(id)
    }

    pub fn situation_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.situations.iter().map(|s| s.id.as_str())
    }

    /// Situations still able to leave their state, in grid order.
    pub fn active_situation_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.situation_ids().filter(|id| !self.sunk.contains(*id))
    }

    pub fn failure_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.failures.iter().map(|f| f.id.as_str())
    }

    /// All state ids: situations first, then failures.
    pub fn state_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.situation_ids().chain(self.failure_ids())
    }

    pub fn kind_of(&self, id: &str) -> Option<StateKind> {
        if self.situation(id).is_some() {
            Some(StateKind::Situation)
        } else if self.failures.iter().any(|f| f.id == id) {
            Some(StateKind::Failure)
        } else {
            None
        }
    }

    pub fn situation(&self, id: &str) -> Option<&Situation> {
        // ids are positional, so try the fast path first
        id.strip_prefix('s')
            .and_then(|n| n.parse::<usize>().ok())
            .and_then(|i| self.situations.get(i))
            .filter(|s| s.id == id)
            .or_else(|| self.situations.iter().find(|s| s.id == id))
    }

    pub fn failure_by_label(&self, label: &str) -> Option<&FailureMode> {
        self.failures.iter().find(|f| f.label == label)
    }

    /// Human-readable value tuple, e.g. `(none,low,short)`.
    pub fn describe(&self, id: &str) -> Option<String> {
        let situation = self.situation(id)?;
        let values: Vec<&str> = situation
            .assignment
            .iter()
            .zip(&self.attributes)
            .map(|(&i, attr)| attr.values[i].as_str())
            .collect();
        Some(format!("({})", values.join(",")))
    }

    /// Number of nonzero transitions across all situation rows.
    pub fn transition_count(&self) -> usize {
        self.delta
            .values()
            .map(|row| row.iter().filter(|(_, p)| *p > 0.0).count())
            .sum()
    }

    /// Replaces the row of `situation`. Callers are responsible for keeping
    /// the SCG valid.
    pub fn set_row(&mut self, situation: impl Into<String>, row: Distribution) {
        self.delta.insert(situation.into(), row);
    }

    pub(crate) fn require_situation(&self, id: &str) -> Result<()> {
        match self.kind_of(id) {
            Some(StateKind::Situation) => Ok(()),
            Some(StateKind::Failure) => Err(Error::WrongKind {
                id: id.to_string(),
                expected: StateKind::Situation.name(),
                actual: StateKind::Failure.name(),
            }),
            None => Err(Error::NotFound(id.to_string())),
        }
    }

    /// In-place variant of [`sink_situation`].
    pub fn sink(&mut self, target: &str) -> Result<()> {
        self.require_situation(target)?;
        self.delta.insert(target.to_string(), Distribution::point(target));
        self.sunk.insert(target.to_string());
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::error::from_json_str(text)
    }
}

/// Returns a copy of `scg` where `target` only loops back to itself.
/// Incoming transitions are left untouched.
pub fn sink_situation(scg: &AugmentedScg, target: &str) -> Result<AugmentedScg> {
    let mut out = scg.clone();
    out.sink(target)?;
    Ok(out)
}

/// Checks every structural invariant of an augmented SCG. An empty report
/// means the SCG is well formed.
pub fn validate_scg(scg: &AugmentedScg) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |kind, subject: &str, detail: String| {
        report.push(Violation {
            kind,
            subject: subject.to_string(),
            detail,
        })
    };

    let mut attr_names = HashSet::new();
    for attr in &scg.attributes {
        if !attr_names.insert(attr.name.as_str()) {
            push(ViolationKind::InvalidAttribute, &attr.name, "duplicate attribute name".into());
        }
        if attr.values.is_empty() {
            push(ViolationKind::InvalidAttribute, &attr.name, "no values".into());
        }
        let mut seen = HashSet::new();
        for v in &attr.values {
            if !seen.insert(v.as_str()) {
                push(ViolationKind::InvalidAttribute, &attr.name, format!("duplicate value `{v}`"));
            }
        }
    }

    for situation in &scg.situations {
        let ok = situation.assignment.len() == scg.attributes.len()
            && situation
                .assignment
                .iter()
                .zip(&scg.attributes)
                .all(|(&i, attr)| i < attr.values.len());
        if !ok {
            push(
                ViolationKind::InvalidAssignment,
                &situation.id,
                format!("assignment {:?} does not fit the ODD", situation.assignment),
            );
        }
    }

    let situation_ids: HashSet<&str> = scg.situation_ids().collect();
    let mut failure_ids = HashSet::new();
    let mut labels = HashSet::new();
    for failure in &scg.failures {
        if !failure_ids.insert(failure.id.as_str()) || situation_ids.contains(failure.id.as_str()) {
            push(ViolationKind::DuplicateId, &failure.id, "failure id is not unique".into());
        }
        if !labels.insert(failure.label.as_str()) {
            push(ViolationKind::DuplicateId, &failure.id, format!("duplicate label `{}`", failure.label));
        }
    }

    for id in scg.situation_ids() {
        if !scg.delta.contains_key(id) {
            push(ViolationKind::MissingRow, id, "no outgoing distribution".into());
        }
    }

    for (id, row) in &scg.delta {
        if failure_ids.contains(id.as_str()) {
            push(ViolationKind::FailureHasOutgoing, id, "failures are sink states".into());
            continue;
        }
        if !situation_ids.contains(id.as_str()) {
            push(ViolationKind::UnknownRow, id, "row for an unknown state".into());
            continue;
        }
        for (target, p) in row.iter() {
            if !situation_ids.contains(target) && !failure_ids.contains(target) {
                push(ViolationKind::UnknownTarget, id, format!("target `{target}` is not a state"));
            }
            if !(0.0..=1.0).contains(&p) {
                push(ViolationKind::ProbabilityRange, id, format!("P({target}) = {p} outside [0,1]"));
            }
        }
        let sum = row.sum();
        if sum.is_nan() || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            push(ViolationKind::RowSum, id, format!("row sums to {sum}"));
        }
    }

    for id in &scg.sunk {
        if !situation_ids.contains(id.as_str()) {
            push(ViolationKind::UnknownSunk, id, "sunk id is not a situation".into());
        } else if scg.delta.get(id) != Some(&Distribution::point(id.as_str())) {
            push(ViolationKind::SunkNotAbsorbing, id, "sunk situation must be a self-loop".into());
        }
    }

    report
}

/// On-disk form of an augmented SCG.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScgDocument {
    pub attributes: Vec<OddAttribute>,
    pub failures: Vec<FailureMode>,
    pub delta: BTreeMap<String, Distribution>,
    #[serde(default)]
    pub sunk: BTreeSet<String>,
}

impl TryFrom<ScgDocument> for AugmentedScg {
    type Error = Error;

    fn try_from(doc: ScgDocument) -> Result<Self> {
        AugmentedScg::checked(doc.attributes, doc.failures, doc.delta, doc.sunk)
    }
}

impl From<AugmentedScg> for ScgDocument {
    fn from(scg: AugmentedScg) -> Self {
        ScgDocument {
            attributes: scg.attributes,
            failures: scg.failures,
            delta: scg.delta,
            sunk: scg.sunk,
        }
    }
}
