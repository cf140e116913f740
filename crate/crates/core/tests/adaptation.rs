use std::collections::{BTreeMap, BTreeSet};

use save_core::runtime::{log_from_jsonl, log_to_jsonl, run, Directive, TraceEvent};
use save_core::{
    parse_property, synthesize_safe_controller, AugmentedScg, BoundedReachProperty, Distribution, EstimatorConfig,
    FailureMode, KnowledgeBase, OddAttribute, SynthesisConfig,
};

fn scg(rows: &[(&str, &[(&str, f64)])]) -> AugmentedScg {
    let delta: BTreeMap<String, Distribution> = rows
        .iter()
        .map(|(id, row)| (id.to_string(), row.iter().map(|(t, p)| (*t, *p)).collect()))
        .collect();
    AugmentedScg::from_parts(
        vec![OddAttribute::new("x", (0..rows.len()).map(|i| format!("v{i}")))],
        vec![FailureMode::new("f1", ""), FailureMode::new("f2", "")],
        delta,
        BTreeSet::new(),
    )
    .unwrap()
}

/// Probability of reaching `label` within `k` steps from `from`, summed over
/// explicit paths.
fn oracle(scg: &AugmentedScg, from: &str, label: &str, k: u32) -> f64 {
    if scg.failure_by_label(label).is_some_and(|f| f.id == from) {
        return 1.0;
    }
    if k == 0 || scg.row(from).is_none() {
        return 0.0;
    }
    scg.row(from).unwrap().iter().map(|(next, p)| p * oracle(scg, next, label, k - 1)).sum()
}

fn phi() -> Vec<BoundedReachProperty> {
    vec![parse_property("phi2", "P < 0.5 [ F<=5 f2 ]").unwrap()]
}

#[test]
fn sole_violator_is_avoided_and_others_improve() {
    let model = scg(&[
        ("s0", &[("s0", 0.95), ("s1", 0.05)]),
        ("s1", &[("f2", 0.9), ("s2", 0.1)]),
        ("s2", &[("s2", 0.9), ("s0", 0.1)]),
    ]);
    // only s1 violates before repair
    assert!(oracle(&model, "s1", "f2", 5) >= 0.5);
    assert!(oracle(&model, "s0", "f2", 5) < 0.5 && oracle(&model, "s2", "f2", 5) < 0.5);
    let outcome = synthesize_safe_controller(&model, &phi(), &SynthesisConfig::default()).unwrap();
    assert!(outcome.success);
    assert_eq!(outcome.avoided, ["s1"]);
    for id in ["s0", "s2"] {
        assert!(oracle(&outcome.scg, id, "f2", 5) < oracle(&model, id, "f2", 5), "{id}");
    }
}

#[test]
fn observed_danger_triggers_a_controller_switch() {
    let prior = scg(&[
        ("s0", &[("s0", 0.5), ("s1", 0.5)]),
        ("s1", &[("s1", 0.5), ("s0", 0.5)]),
        ("s2", &[("s2", 1.0)]),
    ]);
    let mut kb = KnowledgeBase::new(prior, phi(), EstimatorConfig::frequentist(0.0), SynthesisConfig::default()).unwrap();
    let trace = [
        TraceEvent::entered(1, "s1"),
        TraceEvent::failure(2, "f2"),
        TraceEvent::reset(2),
        TraceEvent::entered(3, "s0"),
    ];
    let log = run(&mut kb, &trace).unwrap();
    assert!(log[..3].iter().all(|e| e.directive == Directive::Continue));
    assert_eq!(
        log[3].directive,
        Directive::SwitchController {
            controller: "c1".into()
        }
    );
    assert_eq!(log[3].violated, ["phi2"]);
    assert_eq!(kb.active_controller, "c1");
    assert_eq!(kb.controller("c1").unwrap().avoided, ["s1"]);
    // every remaining situation complies under the new controller
    for id in kb.scg.active_situation_ids() {
        assert!(oracle(&kb.scg, id, "f2", 5) < 0.5, "{id}");
    }
    // one history entry per adaptation plus the initial one
    assert_eq!(kb.history.len(), 2);
    // entering the avoided situation stops the system
    let stop = kb.step(&TraceEvent::entered(4, "s1")).unwrap();
    assert!(matches!(stop.directive, Directive::SafeStop { .. }));
}

#[test]
fn baseline_mode_only_analyses() {
    let prior = scg(&[("s0", &[("s0", 0.5), ("s1", 0.5)]), ("s1", &[("s1", 0.5), ("s0", 0.5)])]);
    let mut kb = KnowledgeBase::new(prior, phi(), EstimatorConfig::frequentist(0.0), SynthesisConfig::default())
        .unwrap()
        .baseline(true);
    let trace = [
        TraceEvent::entered(1, "s1"),
        TraceEvent::failure(2, "f2"),
        TraceEvent::reset(2),
        TraceEvent::entered(3, "s0"),
    ];
    let log = run(&mut kb, &trace).unwrap();
    assert_eq!(log[3].directive, Directive::Continue);
    assert_eq!(log[3].violated, ["phi2"]);
    assert_eq!(kb.history.len(), 1);
    assert_eq!(log_from_jsonl(&log_to_jsonl(&log)).unwrap(), log);
}
