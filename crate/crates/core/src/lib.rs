//! Runtime safety adaptation for systems whose behaviour is modelled as a
//! situation coverage graph extended with failure states.
//!
//! The pipeline: an [`AugmentedScg`] is turned into one [`Dtmc`] per
//! situation, bounded-reachability properties are checked on each, the
//! situations are ranked by criticality, and unsafe ones are removed until
//! every remaining situation complies.

pub mod adapt;
pub mod bench;
pub mod criticality;
pub mod dtmc;
pub mod error;
pub mod experiments;
pub mod learn;
pub mod prism;
pub mod property;
pub mod runtime;
pub mod scg;
pub mod sim;

pub use adapt::{analyze, select_controller, synthesize_safe_controller, AdaptationOutcome, Controller, SynthesisConfig};
pub use criticality::{rank_situations, CriticalityReport, SituationReport, Verdict};
pub use dtmc::{build_model, check_bounded_reach, Dtmc};
pub use error::{Error, Result};
pub use learn::{estimate_bayesian, estimate_frequentist, rebuild_scg, EstimatorConfig, EstimatorMode, TransitionCounts};
pub use property::{format_property, parse_property, BoundedReachProperty, Comparator, ParseError};
pub use runtime::{Directive, KnowledgeBase, LogEntry, TraceEvent};
pub use scg::{enumerate_situations, sink_situation, validate_scg, AugmentedScg, Distribution, FailureMode, OddAttribute, Situation};
