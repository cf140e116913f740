//! Criticality scores and situation ranking.
//!
//! A score is the signed deviation of a checked probability from its bound:
//! `value - bound` for upper-bound properties and `bound - value` for
//! lower-bound ones. Positive scores are violations; the larger, the worse.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtmc::{build_model, check_bounded_reach, Dtmc};
use crate::error::{Error, Result};
use crate::property::BoundedReachProperty;
use crate::scg::AugmentedScg;

/// Scores are snapped to multiples of `1 / SCORE_SCALE` so that e.g.
/// `0.96 - 0.85` reports `0.11` rather than `0.10999999999999999`.
pub const SCORE_SCALE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub value: f64,
    pub score: f64,
    pub compliant: bool,
}

/// Signed deviation snapped to twelve decimals. A nonzero deviation
/// never snaps to zero, so the sign always survives.
pub fn signed_deviation(value: f64, bound: f64) -> f64 {
    let raw = value - bound;
    let snapped = (raw * SCORE_SCALE).round() / SCORE_SCALE;
    if raw == 0.0 {
        0.0
    } else if snapped == 0.0 {
        raw
    } else {
        snapped
    }
}

pub fn score_for(prop: &BoundedReachProperty, value: f64) -> f64 {
    if prop.comparator.is_upper_bound() {
        signed_deviation(value, prop.bound)
    } else {
        signed_deviation(prop.bound, value)
    }
}

pub fn verdict_for(prop: &BoundedReachProperty, value: f64) -> Verdict {
    Verdict {
        property: prop.name.clone(),
        value,
        score: score_for(prop, value),
        compliant: prop.comparator.holds(value, prop.bound),
    }
}

pub fn criticality(model: &Dtmc, prop: &BoundedReachProperty) -> Result<Verdict> {
    let value = check_bounded_reach(model, &prop.target_label, prop.horizon)?;
    Ok(verdict_for(prop, value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationReport {
    /// One verdict per property, in property order.
    pub verdicts: Vec<Verdict>,
    pub worst_score: f64,
}

impl SituationReport {
    pub fn from_verdicts(verdicts: Vec<Verdict>) -> Self {
        let worst_score = verdicts.iter().map(|v| v.score).fold(f64::NEG_INFINITY, f64::max);
        SituationReport { verdicts, worst_score }
    }

    pub fn compliant(&self) -> bool {
        self.verdicts.iter().all(|v| v.compliant)
    }

    pub fn violated(&self) -> impl Iterator<Item = &str> + '_ {
        self.verdicts.iter().filter(|v| !v.compliant).map(|v| v.property.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub properties: Vec<String>,
    pub situations: BTreeMap<String, SituationReport>,
    pub worst_situation: Option<String>,
}

impl CriticalityReport {
    fn new(properties: Vec<String>, situations: BTreeMap<String, SituationReport>) -> Self {
        let worst_situation = argmax(situations.iter());
        CriticalityReport {
            properties,
            situations,
            worst_situation,
        }
    }

    pub fn all_compliant(&self) -> bool {
        self.situations.values().all(SituationReport::compliant)
    }

    /// Properties violated in at least one situation, in property order.
    pub fn violated_properties(&self) -> Vec<String> {
        self.properties
            .iter()
            .filter(|p| {
                self.situations
                    .values()
                    .any(|s| s.verdicts.iter().any(|v| &v.property == *p && !v.compliant))
            })
            .cloned()
            .collect()
    }

    pub fn worst_score(&self) -> Option<f64> {
        self.worst_situation
            .as_ref()
            .map(|id| self.situations[id].worst_score)
    }

    /// Like `worst_situation`, restricted to situations that violate
    /// something. Differs only when a strict bound is met with equality.
    pub fn worst_violating_situation(&self) -> Option<String> {
        argmax(self.situations.iter().filter(|(_, s)| !s.compliant()))
    }
}

/// Highest worst-score; ties go to the lexicographically smallest id
/// (the iteration order of the map).
fn argmax<'a>(iter: impl Iterator<Item = (&'a String, &'a SituationReport)>) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (id, report) in iter {
        if best.is_none_or(|(_, score)| report.worst_score > score) {
            best = Some((id, report.worst_score));
        }
    }
    best.map(|(id, _)| id.clone())
}

/// Checks every property against the DTMC of every non-sunk situation.
pub fn rank_situations(scg: &AugmentedScg, properties: &[BoundedReachProperty]) -> Result<CriticalityReport> {
    if properties.is_empty() {
        return Err(Error::InvalidConfig("at least one property is required".into()));
    }
    for prop in properties {
        if scg.failure_by_label(&prop.target_label).is_none() {
            return Err(Error::UnknownLabel(prop.target_label.clone()));
        }
    }
    let active: Vec<&str> = scg.active_situation_ids().collect();
    let names = properties.iter().map(|p| p.name.clone()).collect();
    let Some(first) = active.first() else {
        return Ok(CriticalityReport::new(names, BTreeMap::new()));
    };
    // one validated chain, re-rooted per situation
    let base = build_model(scg, first)?;
    let situations = active
        .par_iter()
        .map(|id| {
            let model = base.with_initial(base.index_of(id).expect("situation is a state"))?;
            let verdicts = properties
                .iter()
                .map(|p| criticality(&model, p))
                .collect::<Result<Vec<_>>>()?;
            Ok((id.to_string(), SituationReport::from_verdicts(verdicts)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CriticalityReport::new(names, situations.into_iter().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::property::{parse_property, Comparator};
    use crate::scg::{Distribution, FailureMode, OddAttribute};
    use std::collections::BTreeSet;

    fn at_least(bound: f64) -> BoundedReachProperty {
        BoundedReachProperty::new("success", "ok", 50, Comparator::Ge, bound)
    }

    #[test]
    fn lower_bound_scores() {
        let a = verdict_for(&at_least(0.96), 0.85);
        assert_eq!(a.score, 0.11);
        assert!(!a.compliant);
        let b = verdict_for(&at_least(0.96), 0.94);
        assert_eq!(b.score, 0.02);
        assert!(!b.compliant);
        assert!(a.score > b.score);
    }

    #[test]
    fn strict_boundary_is_zero_and_non_compliant() {
        let p = parse_property("phi", "P < 0.95 [ F<=50 f2 ]").unwrap();
        let v = verdict_for(&p, 0.95);
        assert_eq!(v.score, 0.0);
        assert!(!v.compliant);
        let q = parse_property("phi", "P <= 0.95 [ F<=50 f2 ]").unwrap();
        assert!(verdict_for(&q, 0.95).compliant);
    }

    #[test]
    fn tiny_deviations_keep_their_sign() {
        assert!(signed_deviation(0.5 + 1e-15, 0.5) > 0.0);
        assert!(signed_deviation(0.5 - 1e-15, 0.5) < 0.0);
        assert_eq!(signed_deviation(0.5, 0.5), 0.0);
        assert!(signed_deviation(0.5, 0.5).is_sign_positive());
    }

    fn three_situations(rows: [&[(&str, f64)]; 3]) -> AugmentedScg {
        let delta = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("s{i}"), r.iter().map(|(t, p)| (*t, *p)).collect::<Distribution>()))
            .collect();
        AugmentedScg::from_parts(
            vec![OddAttribute::new("situation", ["a", "b", "c"])],
            vec![FailureMode::new("f1", ""), FailureMode::new("f2", "")],
            delta,
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn compliant_scg_ties_break_to_smallest_id() {
        let scg = three_situations([&[("s0", 1.0)], &[("s1", 1.0)], &[("s2", 1.0)]]);
        let props = [parse_property("phi2", "P < 0.95 [ F<=50 f2 ]").unwrap()];
        let report = rank_situations(&scg, &props).unwrap();
        assert!(report.all_compliant());
        assert!(report.situations.values().all(|s| s.worst_score <= 0.0));
        assert_eq!(report.worst_situation.as_deref(), Some("s0"));
        assert!(report.violated_properties().is_empty());
    }

    #[test]
    fn sole_violator_is_worst() {
        let scg = three_situations([
            &[("s0", 0.9), ("s1", 0.1)],
            &[("s1", 0.9), ("f1", 0.1)],
            &[("s2", 0.01), ("f2", 0.99)],
        ]);
        let props = [parse_property("phi2", "P < 0.95 [ F<=50 f2 ]").unwrap()];
        let report = rank_situations(&scg, &props).unwrap();
        assert_eq!(report.worst_situation.as_deref(), Some("s2"));
        assert_eq!(report.violated_properties(), ["phi2"]);
        assert!(report.situations["s0"].compliant());
        assert!(!report.situations["s2"].compliant());
    }

    #[test]
    fn sunk_situations_are_not_ranked() {
        let scg = three_situations([&[("f2", 1.0)], &[("s1", 1.0)], &[("s2", 1.0)]]);
        let scg = crate::scg::sink_situation(&scg, "s0").unwrap();
        let props = [parse_property("phi2", "P < 0.95 [ F<=50 f2 ]").unwrap()];
        let report = rank_situations(&scg, &props).unwrap();
        assert!(!report.situations.contains_key("s0"));
        assert_eq!(report.situations.len(), 2);
    }

    #[test]
    fn unknown_label_is_rejected_up_front() {
        let scg = three_situations([&[("s0", 1.0)], &[("s1", 1.0)], &[("s2", 1.0)]]);
        let props = [parse_property("x", "P < 0.5 [ F<=5 f9 ]").unwrap()];
        assert!(matches!(rank_situations(&scg, &props), Err(Error::UnknownLabel(_))));
    }
}
