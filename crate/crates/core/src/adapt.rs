//! Analysis and planning: detect violations, synthesise a safe controller by
//! sinking the most critical situations one at a time, and choose among
//! candidate controllers.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criticality::{criticality, rank_situations, CriticalityReport, SituationReport};
use crate::dtmc::build_model;
use crate::error::{Error, Result};
use crate::property::BoundedReachProperty;
use crate::scg::AugmentedScg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerOrigin {
    PreDeployment,
    Synthesised,
}

/// An SCG together with the situations it blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub id: String,
    pub scg: AugmentedScg,
    /// Sunk situations, in the order they were removed.
    pub avoided: Vec<String>,
    pub origin: ControllerOrigin,
}

impl Controller {
    pub fn pre_deployment(id: impl Into<String>, scg: AugmentedScg) -> Self {
        let avoided = scg.sunk().iter().cloned().collect();
        Controller {
            id: id.into(),
            scg,
            avoided,
            origin: ControllerOrigin::PreDeployment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub max_removals: usize,
    pub rng_seed: u64,
    /// Step bound for out-of-ODD reachability; defaults to the largest
    /// property horizon.
    #[serde(default)]
    pub out_of_odd_horizon: Option<u32>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            max_removals: 4,
            rng_seed: 0,
            out_of_odd_horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationOutcome {
    pub success: bool,
    /// Situations sunk by this synthesis run, in removal order.
    pub avoided: Vec<String>,
    /// Number of rankings performed.
    pub iterations: usize,
    pub initial_violations: Vec<String>,
    pub worst_initial_score: f64,
    pub final_report: CriticalityReport,
    /// The SCG after the removals above.
    pub scg: AugmentedScg,
    #[serde(default)]
    pub diagnostic: Option<String>,
}

/// Compact form of an outcome for logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub success: bool,
    pub avoided: Vec<String>,
    pub iterations: usize,
    pub initial_violations: Vec<String>,
    pub worst_initial_score: f64,
}

impl AdaptationOutcome {
    pub fn summary(&self) -> OutcomeSummary {
        OutcomeSummary {
            success: self.success,
            avoided: self.avoided.clone(),
            iterations: self.iterations,
            initial_violations: self.initial_violations.clone(),
            worst_initial_score: self.worst_initial_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub situation: String,
    pub current: SituationReport,
    /// Present only when the current situation violates a property.
    pub full: Option<CriticalityReport>,
}

impl Analysis {
    /// True when the system may proceed as normal.
    pub fn compliant(&self) -> bool {
        self.current.compliant()
    }
}

/// Checks the model rooted at `current` first and only ranks every
/// situation when it violates something.
pub fn analyze(scg: &AugmentedScg, current: &str, properties: &[BoundedReachProperty]) -> Result<Analysis> {
    if scg.is_sunk(current) {
        return Err(Error::SunkSituation(current.to_string()));
    }
    let model = build_model(scg, current)?;
    let verdicts = properties
        .iter()
        .map(|p| criticality(&model, p))
        .collect::<Result<Vec<_>>>()?;
    let current_report = SituationReport::from_verdicts(verdicts);
    let full = if current_report.compliant() {
        None
    } else {
        Some(rank_situations(scg, properties)?)
    };
    Ok(Analysis {
        situation: current.to_string(),
        current: current_report,
        full,
    })
}

/// Repeatedly sinks the worst situation until every remaining situation
/// complies, or until `max_removals` situations have been sunk.
pub fn synthesize_safe_controller(
    scg: &AugmentedScg,
    properties: &[BoundedReachProperty],
    config: &SynthesisConfig,
) -> Result<AdaptationOutcome> {
    let mut current = scg.clone();
    let mut avoided = Vec::new();
    let mut initial: Option<(Vec<String>, f64)> = None;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let report = rank_situations(&current, properties)?;
        let (initial_violations, worst_initial_score) = initial
            .get_or_insert_with(|| (report.violated_properties(), report.worst_score().unwrap_or(0.0)))
            .clone();
        let finish = |success, diagnostic, report, scg, avoided| {
            Ok(AdaptationOutcome {
                success,
                avoided,
                iterations,
                initial_violations,
                worst_initial_score,
                final_report: report,
                scg,
                diagnostic,
            })
        };
        if report.all_compliant() {
            return finish(true, None, report, current, avoided);
        }
        if avoided.len() >= config.max_removals {
            let diagnostic = format!(
                "still violating {:?} after sinking {} situation(s) (limit {})",
                report.violated_properties(),
                avoided.len(),
                config.max_removals
            );
            return finish(false, Some(diagnostic), report, current, avoided);
        }
        let worst = report
            .worst_violating_situation()
            .expect("a non-compliant report has a violating situation");
        log::debug!("sinking {worst} (score {})", report.situations[&worst].worst_score);
        current.sink(&worst)?;
        avoided.push(worst);
    }
}

/// Max, over the non-sunk situations outside `out_of_odd`, of the
/// probability of reaching an `out_of_odd` situation within `horizon` steps.
pub fn out_of_odd_risk(scg: &AugmentedScg, out_of_odd: &BTreeSet<String>, horizon: u32) -> Result<f64> {
    for id in out_of_odd {
        scg.require_situation(id)?;
    }
    let starts: Vec<&str> = scg.active_situation_ids().filter(|id| !out_of_odd.contains(*id)).collect();
    let Some(first) = starts.first() else { return Ok(0.0) };
    if out_of_odd.is_empty() {
        return Ok(0.0);
    }
    let model = build_model(scg, first)?;
    let mask: Vec<bool> = model.states().iter().map(|s| out_of_odd.contains(s)).collect();
    let reach = model.reach_probabilities(&mask, horizon);
    Ok(starts
        .iter()
        .map(|id| reach[model.index_of(id).expect("situation is a state")])
        .fold(0.0, f64::max))
}

/// Picks a violation-free candidate with minimal out-of-ODD risk; exact ties
/// are broken by a seeded uniform draw. `None` when no candidate complies.
pub fn select_controller<'a>(
    candidates: &'a [Controller],
    properties: &[BoundedReachProperty],
    out_of_odd: &BTreeSet<String>,
    config: &SynthesisConfig,
) -> Result<Option<&'a Controller>> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let horizon = config
        .out_of_odd_horizon
        .unwrap_or_else(|| properties.iter().map(|p| p.horizon).max().unwrap_or(1));
    let mut scored = Vec::new();
    for candidate in candidates {
        if rank_situations(&candidate.scg, properties)?.all_compliant() {
            scored.push((candidate, out_of_odd_risk(&candidate.scg, out_of_odd, horizon)?));
        }
    }
    let Some(best) = scored.iter().map(|(_, r)| *r).reduce(f64::min) else {
        return Ok(None);
    };
    let tied: Vec<&Controller> = scored.into_iter().filter(|(_, r)| *r == best).map(|(c, _)| c).collect();
    let pick = if tied.len() == 1 {
        0
    } else {
        ChaCha8Rng::seed_from_u64(config.rng_seed).random_range(0..tied.len())
    };
    Ok(Some(tied[pick]))
}
