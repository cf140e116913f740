//! The MAPE-K loop. A [`KnowledgeBase`] consumes monitored trace events,
//! re-estimates the augmented SCG, analyses the current situation and, when
//! a requirement is violated, synthesises a safer controller.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adapt::{analyze, synthesize_safe_controller, AdaptationOutcome, Controller, ControllerOrigin, OutcomeSummary, SynthesisConfig};
use crate::criticality::rank_situations;
use crate::error::{Error, Result};
use crate::learn::{rebuild_scg, EstimatorConfig, TransitionCounts};
use crate::property::BoundedReachProperty;
use crate::scg::{AugmentedScg, StateKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    SituationEntered { id: String },
    FailureObserved { id: String },
    EpisodeReset,
}

/// One monitored observation. Serialised as `{"t": .., "kind": .., "id": ..}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn entered(t: u64, id: impl Into<String>) -> Self {
        TraceEvent {
            t,
            kind: EventKind::SituationEntered { id: id.into() },
        }
    }

    pub fn failure(t: u64, id: impl Into<String>) -> Self {
        TraceEvent {
            t,
            kind: EventKind::FailureObserved { id: id.into() },
        }
    }

    pub fn reset(t: u64) -> Self {
        TraceEvent {
            t,
            kind: EventKind::EpisodeReset,
        }
    }
}

pub fn trace_to_jsonl(events: &[TraceEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("events serialise") + "\n")
        .collect()
}

pub fn trace_from_jsonl(text: &str) -> Result<Vec<TraceEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            crate::error::from_json_str(line).map_err(|e| match e {
                Error::Schema { path, message } => Error::Schema {
                    path: format!("line {}: {path}", i + 1),
                    message,
                },
                other => other,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "directive", rename_all = "snake_case")]
pub enum Directive {
    Continue,
    SwitchController { controller: String },
    SafeStop { reason: String },
}

impl Directive {
    pub fn is_adaptation(&self) -> bool {
        !matches!(self, Directive::Continue)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub t: u64,
    /// Belief version the outcome was computed on.
    pub version: u64,
    pub outcome: AdaptationOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    /// Pre-deployment belief; the prior for every re-estimation.
    pub pre_deployment: AugmentedScg,
    /// Current belief, including the active controller's sunk situations.
    pub scg: AugmentedScg,
    pub counts: TransitionCounts,
    pub properties: Vec<BoundedReachProperty>,
    pub controllers: Vec<Controller>,
    pub active_controller: String,
    pub history: Vec<HistoryEntry>,
    pub estimator: EstimatorConfig,
    pub synthesis: SynthesisConfig,
    /// Analyse but never plan; reproduces a fixed controller.
    pub baseline: bool,
    pub belief_version: u64,
    cursor: Option<String>,
    episode_ended_at: Option<u64>,
    last_t: Option<u64>,
}

/// Everything one step produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub t: u64,
    pub event: EventKind,
    #[serde(flatten)]
    pub directive: Directive,
    /// Properties the current situation's model violated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violated: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeSummary>,
}

impl KnowledgeBase {
    pub fn new(
        scg: AugmentedScg,
        properties: Vec<BoundedReachProperty>,
        estimator: EstimatorConfig,
        synthesis: SynthesisConfig,
    ) -> Result<Self> {
        let report = rank_situations(&scg, &properties)?;
        let initial = AdaptationOutcome {
            success: report.all_compliant(),
            avoided: Vec::new(),
            iterations: 1,
            initial_violations: report.violated_properties(),
            worst_initial_score: report.worst_score().unwrap_or(0.0),
            final_report: report,
            scg: scg.clone(),
            diagnostic: None,
        };
        Ok(KnowledgeBase {
            pre_deployment: scg.clone(),
            controllers: vec![Controller::pre_deployment("c0", scg.clone())],
            active_controller: "c0".into(),
            scg,
            counts: TransitionCounts::new(),
            properties,
            history: vec![HistoryEntry {
                t: 0,
                version: 0,
                outcome: initial,
            }],
            estimator,
            synthesis,
            baseline: false,
            belief_version: 0,
            cursor: None,
            episode_ended_at: None,
            last_t: None,
        })
    }

    pub fn baseline(mut self, on: bool) -> Self {
        self.baseline = on;
        self
    }

    pub fn with_counts(mut self, counts: TransitionCounts) -> Self {
        self.counts = counts;
        self
    }

    pub fn current_situation(&self) -> Option<&str> {
        self.cursor.as_deref()
    }

    pub fn controller(&self, id: &str) -> Option<&Controller> {
        self.controllers.iter().find(|c| c.id == id)
    }

    /// Processes one event and returns what to tell the managed system.
    pub fn step(&mut self, event: &TraceEvent) -> Result<LogEntry> {
        if let Some(last) = self.last_t {
            if event.t < last {
                return Err(Error::OutOfOrder { got: event.t, last });
            }
        }
        let entry = match &event.kind {
            EventKind::SituationEntered { id } => self.on_situation(event.t, id)?,
            EventKind::FailureObserved { id } => {
                self.on_failure(event.t, id)?;
                LogEntry {
                    t: event.t,
                    event: event.kind.clone(),
                    directive: Directive::Continue,
                    violated: Vec::new(),
                    outcome: None,
                }
            }
            EventKind::EpisodeReset => {
                self.cursor = None;
                self.episode_ended_at = None;
                LogEntry {
                    t: event.t,
                    event: event.kind.clone(),
                    directive: Directive::Continue,
                    violated: Vec::new(),
                    outcome: None,
                }
            }
        };
        self.last_t = Some(event.t);
        Ok(entry)
    }

    fn on_failure(&mut self, t: u64, id: &str) -> Result<()> {
        match self.pre_deployment.kind_of(id) {
            Some(StateKind::Failure) => {}
            Some(kind) => {
                return Err(Error::WrongKind {
                    id: id.to_string(),
                    expected: StateKind::Failure.name(),
                    actual: kind.name(),
                })
            }
            None => return Err(Error::NotFound(id.to_string())),
        }
        match self.episode_ended_at {
            // simultaneous failures share the transition already counted
            Some(ended) if ended == t => return Ok(()),
            Some(_) => return Err(Error::InvalidTrace(format!("failure `{id}` at t={t} after the episode ended"))),
            None => {}
        }
        if let Some(prev) = self.cursor.take() {
            self.counts.ingest(&self.pre_deployment, &prev, id)?;
        }
        self.episode_ended_at = Some(t);
        Ok(())
    }

    fn on_situation(&mut self, t: u64, id: &str) -> Result<LogEntry> {
        self.pre_deployment.require_situation(id)?;
        if self.episode_ended_at.is_some() {
            return Err(Error::InvalidTrace(format!("situation `{id}` at t={t} follows a failure without a reset")));
        }
        // M: monitor
        if let Some(prev) = &self.cursor {
            self.counts.ingest(&self.pre_deployment, prev, id)?;
        }
        self.cursor = Some(id.to_string());

        // A: update the model
        let mut prior = self.pre_deployment.clone();
        for sunk in self.scg.sunk() {
            prior.sink(sunk)?;
        }
        self.scg = rebuild_scg(&prior, &self.counts, &self.estimator)?;
        self.belief_version += 1;

        let mut entry = LogEntry {
            t,
            event: EventKind::SituationEntered { id: id.to_string() },
            directive: Directive::Continue,
            violated: Vec::new(),
            outcome: None,
        };
        if self.scg.is_sunk(id) {
            entry.directive = Directive::SafeStop {
                reason: format!("entered avoided situation {id}"),
            };
            return Ok(entry);
        }

        // A: analyse
        let analysis = analyze(&self.scg, id, &self.properties)?;
        entry.violated = analysis.current.violated().map(str::to_string).collect();
        if analysis.compliant() || self.baseline {
            return Ok(entry);
        }

        // P: plan
        let outcome = synthesize_safe_controller(&self.scg, &self.properties, &self.synthesis)?;
        entry.outcome = Some(outcome.summary());
        entry.directive = if outcome.success {
            let controller_id = format!("c{}", self.controllers.len());
            self.scg = outcome.scg.clone();
            self.controllers.push(Controller {
                id: controller_id.clone(),
                scg: outcome.scg.clone(),
                avoided: outcome.scg.sunk().iter().cloned().collect(),
                origin: ControllerOrigin::Synthesised,
            });
            self.active_controller = controller_id.clone();
            if self.scg.is_sunk(id) {
                Directive::SafeStop {
                    reason: format!("current situation {id} avoided by {controller_id}"),
                }
            } else {
                Directive::SwitchController {
                    controller: controller_id,
                }
            }
        } else {
            Directive::SafeStop {
                reason: outcome
                    .diagnostic
                    .clone()
                    .unwrap_or_else(|| "controller synthesis failed".into()),
            }
        };
        self.history.push(HistoryEntry {
            t,
            version: self.belief_version,
            outcome,
        });
        Ok(entry)
    }

    pub fn snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(document: &str) -> Result<Self> {
        crate::error::from_json_str(document)
    }
}

/// Folds [`KnowledgeBase::step`] over a trace.
pub fn run(kb: &mut KnowledgeBase, events: &[TraceEvent]) -> Result<Vec<LogEntry>> {
    events.iter().map(|e| kb.step(e)).collect()
}

pub fn log_to_jsonl(log: &[LogEntry]) -> String {
    log.iter()
        .map(|e| serde_json::to_string(e).expect("log entries serialise") + "\n")
        .collect()
}

pub fn log_from_jsonl(text: &str) -> Result<Vec<LogEntry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(crate::error::from_json_str)
        .collect()
}

/// Fixed-width table for terminals.
pub fn format_log_table(log: &[LogEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>6}  {:<24} {:<28} violated", "t", "event", "directive");
    for e in log {
        let event = match &e.event {
            EventKind::SituationEntered { id } => format!("enter {id}"),
            EventKind::FailureObserved { id } => format!("FAILURE {id}"),
            EventKind::EpisodeReset => "reset".into(),
        };
        let directive = match &e.directive {
            Directive::Continue => "continue".to_string(),
            Directive::SwitchController { controller } => format!("switch -> {controller}"),
            Directive::SafeStop { .. } => "safe-stop".to_string(),
        };
        let _ = writeln!(out, "{:>6}  {:<24} {:<28} {}", e.t, event, directive, e.violated.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::property::parse_property;
    use crate::scg::{Distribution, FailureMode, OddAttribute};
    use std::collections::{BTreeMap, BTreeSet};

    fn scg(rows: &[(&str, &[(&str, f64)])]) -> AugmentedScg {
        let values: Vec<String> = (0..rows.len()).map(|i| format!("v{i}")).collect();
        let delta: BTreeMap<String, Distribution> = rows
            .iter()
            .map(|(id, row)| (id.to_string(), row.iter().map(|(t, p)| (*t, *p)).collect()))
            .collect();
        AugmentedScg::from_parts(
            vec![OddAttribute::new("situation", values)],
            vec![FailureMode::new("f1", ""), FailureMode::new("f2", "")],
            delta,
            BTreeSet::new(),
        )
        .unwrap()
    }

    fn props() -> Vec<BoundedReachProperty> {
        vec![parse_property("phi2", "P < 0.5 [ F<=5 f2 ]").unwrap()]
    }

    fn calm() -> AugmentedScg {
        scg(&[
            ("s0", &[("s0", 0.5), ("s1", 0.5)]),
            ("s1", &[("s0", 0.5), ("s2", 0.5)]),
            ("s2", &[("s2", 0.5), ("s0", 0.5)]),
        ])
    }

    fn kb(scg: AugmentedScg) -> KnowledgeBase {
        KnowledgeBase::new(scg, props(), EstimatorConfig::frequentist(0.0), SynthesisConfig::default()).unwrap()
    }

    #[test]
    fn compliant_stream_continues() {
        let mut kb = kb(calm());
        let trace = [TraceEvent::entered(1, "s0"), TraceEvent::entered(2, "s1"), TraceEvent::entered(3, "s2")];
        let log = run(&mut kb, &trace).unwrap();
        assert!(log.iter().all(|e| e.directive == Directive::Continue));
        assert_eq!(kb.history.len(), 1);
        assert!(run(&mut kb, &[]).unwrap().is_empty());
    }

    #[test]
    fn trace_errors() {
        let mut k = kb(calm());
        k.step(&TraceEvent::entered(5, "s0")).unwrap();
        assert!(matches!(k.step(&TraceEvent::entered(4, "s1")), Err(Error::OutOfOrder { .. })));
        assert!(matches!(k.step(&TraceEvent::entered(6, "s9")), Err(Error::NotFound(_))));
        assert!(matches!(k.step(&TraceEvent::failure(6, "s1")), Err(Error::WrongKind { .. })));
        k.step(&TraceEvent::failure(6, "f1")).unwrap();
        // a second failure at the same timestep is allowed but not re-counted
        k.step(&TraceEvent::failure(6, "f2")).unwrap();
        assert_eq!(k.counts.total("s0"), 1);
        assert!(matches!(k.step(&TraceEvent::entered(7, "s1")), Err(Error::InvalidTrace(_))));
        k.step(&TraceEvent::reset(7)).unwrap();
        k.step(&TraceEvent::entered(8, "s1")).unwrap();
    }

    #[test]
    fn failed_synthesis_stops_safely() {
        let mut k = kb(calm());
        k.synthesis.max_removals = 0;
        // observe s1 -> f2 repeatedly so s1's row turns deadly
        for t in 0..4 {
            k.step(&TraceEvent::entered(10 * t + 1, "s1")).unwrap();
            k.step(&TraceEvent::failure(10 * t + 2, "f2")).unwrap();
            k.step(&TraceEvent::reset(10 * t + 3)).unwrap();
        }
        let entry = k.step(&TraceEvent::entered(100, "s1")).unwrap();
        assert!(matches!(entry.directive, Directive::SafeStop { .. }), "{entry:?}");
        assert!(!entry.outcome.unwrap().success);
        assert!(!k.history.last().unwrap().outcome.success);
        assert_eq!(k.active_controller, "c0");
    }

    #[test]
    fn jsonl_formats() {
        let trace = vec![TraceEvent::entered(1, "s0"), TraceEvent::failure(2, "f1"), TraceEvent::failure(2, "f2"), TraceEvent::reset(2)];
        let text = trace_to_jsonl(&trace);
        assert!(text.starts_with(r#"{"t":1,"kind":"situation_entered","id":"s0"}"#));
        assert!(text.contains(r#"{"t":2,"kind":"episode_reset"}"#));
        assert_eq!(trace_from_jsonl(&text).unwrap(), trace);
        assert!(matches!(trace_from_jsonl("{\"t\":1}"), Err(Error::Schema { .. })));
    }
}
