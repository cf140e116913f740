//! Export to the PRISM modelling language, for cross-checking results with
//! the external model checker.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::property::{format_property, BoundedReachProperty};
use crate::scg::{validate_scg, AugmentedScg};

/// One module with a single state variable `s`: situations take the values
/// `0..N` in id order, failures follow and loop on themselves.
pub fn export_model(scg: &AugmentedScg, initial: &str) -> Result<String> {
    let report = validate_scg(scg);
    if !report.is_empty() {
        return Err(Error::InvalidScg(report));
    }
    let states: Vec<&str> = scg.state_ids().collect();
    let index = |id: &str| states.iter().position(|s| *s == id);
    let init = match scg.kind_of(initial) {
        Some(crate::scg::StateKind::Situation) => index(initial).expect("known state"),
        Some(kind) => {
            return Err(Error::WrongKind {
                id: initial.to_string(),
                expected: "situation",
                actual: kind.name(),
            })
        }
        None => return Err(Error::NotFound(initial.to_string())),
    };
    let n = scg.situations().len();

    let mut out = String::new();
    let _ = writeln!(out, "dtmc\n\nmodule scg\n");
    let _ = writeln!(out, "  s : [0..{}] init {init};\n", states.len() - 1);
    for (i, id) in scg.situation_ids().enumerate() {
        let row = scg.row(id).expect("validated SCG has every row");
        let updates: Vec<String> = row
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(target, p)| format!("{p}:(s'={})", index(target).expect("validated target")))
            .collect();
        let note = scg.describe(id).unwrap_or_default();
        let _ = writeln!(out, "  // {id} {note}");
        let _ = writeln!(out, "  [] s={i} -> {};", updates.join(" + "));
    }
    let _ = writeln!(out, "  // failures");
    let _ = writeln!(out, "  [] s>={n} -> true;\n\nendmodule\n");
    let mut labels: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for f in scg.failures() {
        labels.entry(f.label.as_str()).or_default().push(index(&f.id).expect("failure state"));
    }
    for (label, ids) in labels {
        let guard: Vec<String> = ids.iter().map(|i| format!("s={i}")).collect();
        let _ = writeln!(out, "label \"{label}\" = {};", guard.join(" | "));
    }
    Ok(out)
}

/// Quantitative queries, each preceded by the property it checks.
pub fn export_properties(properties: &[BoundedReachProperty]) -> String {
    let mut out = String::new();
    for p in properties {
        let _ = writeln!(out, "// {}: {}", p.name, format_property(p));
        let _ = writeln!(out, "P=? [ F<={} \"{}\" ]\n", p.horizon, p.target_label);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::property::parse_property;
    use crate::scg::{Distribution, FailureMode, OddAttribute};
    use std::collections::{BTreeMap, BTreeSet};

    fn two_states() -> AugmentedScg {
        let mut delta = BTreeMap::new();
        delta.insert("s0".to_string(), [("s1", 0.25), ("f1", 0.75)].into_iter().collect::<Distribution>());
        delta.insert("s1".to_string(), Distribution::point("s1"));
        AugmentedScg::from_parts(
            vec![OddAttribute::new("x", ["a", "b"])],
            vec![FailureMode::new("f1", "")],
            delta,
            BTreeSet::new(),
        )
        .unwrap()
    }

    #[test]
    fn model_text() {
        let text = export_model(&two_states(), "s1").unwrap();
        assert!(text.starts_with("dtmc\n"));
        assert!(text.contains("  s : [0..2] init 1;"));
        assert!(text.contains("  [] s=0 -> 0.75:(s'=2) + 0.25:(s'=1);"));
        assert!(text.contains("label \"f1\" = s=2;"));
        assert_eq!(text.matches("] s=").count(), 2);
    }

    #[test]
    fn rejects_failure_as_initial() {
        assert!(matches!(export_model(&two_states(), "f1"), Err(Error::WrongKind { .. })));
        assert!(matches!(export_model(&two_states(), "s7"), Err(Error::NotFound(_))));
    }

    #[test]
    fn properties_text() {
        let p = parse_property("phi1", "P < 0.99 [ F<=50 f1 ]").unwrap();
        assert_eq!(export_properties(&[p]), "// phi1: P < 0.99 [ F<=50 f1 ]\nP=? [ F<=50 \"f1\" ]\n\n");
    }
}
