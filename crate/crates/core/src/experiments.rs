//! Drift experiments on the maritime scenario: a batch of drifted variants
//! checked and repaired offline, and a closed-loop run comparing a fixed
//! controller with the adaptive one.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{synthesize_safe_controller, SynthesisConfig};
use crate::criticality::rank_situations;
use crate::dtmc::{build_model, check_bounded_reach};
use crate::error::{Error, Result};
use crate::learn::{rebuild_scg, EstimatorConfig};
use crate::property::BoundedReachProperty;
use crate::runtime::{Directive, EventKind, KnowledgeBase, LogEntry};
use crate::scg::AugmentedScg;
use crate::sim::{count_transitions, generate_scenario, maritime_properties, simulate, GroundTruth, ScenarioConfig, Simulator};

/// Independent seeds for `n` variants, split from one master seed.
pub fn variant_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.next_u64()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rq1Config {
    pub seed: u64,
    pub variants: usize,
    /// Template for each variant; its seed and drift magnitude are overridden.
    pub scenario: ScenarioConfig,
    pub drift_magnitude: f64,
    /// Deployment steps observed under the drifted truth.
    pub deployment_steps: u64,
    pub max_removals: usize,
    pub estimator: EstimatorConfig,
}

impl Default for Rq1Config {
    fn default() -> Self {
        Rq1Config {
            seed: 2024,
            variants: 20,
            scenario: ScenarioConfig::default(),
            drift_magnitude: 0.6,
            deployment_steps: 5000,
            max_removals: 4,
            estimator: EstimatorConfig::default(),
        }
    }
}

/// One row of the variant table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub seed: u64,
    pub properties_violated: Vec<String>,
    pub worst_criticality_score: f64,
    pub save_success: bool,
    pub critical_situations_avoided: Vec<String>,
    /// Independent re-check of the repaired model; `None` when synthesis failed.
    pub recheck_passed: Option<bool>,
}

impl ExperimentRecord {
    pub fn violating(&self) -> bool {
        !self.properties_violated.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub records: Vec<ExperimentRecord>,
    pub violating: usize,
    pub rescued: usize,
    /// `rescued / violating`; `None` when nothing was violated.
    pub rescue_rate: Option<f64>,
}

impl Rq1Report {
    pub fn summary(&self) -> String {
        match self.rescue_rate {
            Some(rate) => format!(
                "rescued {}/{} violating variants (rescue rate {:.1}%)",
                self.rescued,
                self.violating,
                100.0 * rate
            ),
            None => format!("no violating variants among {} (rescue rate n/a)", self.records.len()),
        }
    }
}

/// Checks every property from every active situation, building each model
/// from scratch rather than re-rooting a shared one.
pub fn recheck(scg: &AugmentedScg, properties: &[BoundedReachProperty]) -> Result<bool> {
    for id in scg.active_situation_ids() {
        let model = build_model(scg, id)?;
        for p in properties {
            let value = check_bounded_reach(&model, &p.target_label, p.horizon)?;
            if !p.comparator.holds(value, p.bound) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn run_variant(index: usize, seed: u64, config: &Rq1Config, properties: &[BoundedReachProperty]) -> Result<ExperimentRecord> {
    let scenario = generate_scenario(&ScenarioConfig {
        seed,
        drift_magnitude: config.drift_magnitude,
        drift_time: 0,
        ..config.scenario.clone()
    })?;
    let trace = simulate(&scenario.truth, config.deployment_steps, seed.wrapping_add(2))?;
    let counts = count_transitions(&scenario.belief, &trace)?;
    let observed = rebuild_scg(&scenario.belief, &counts, &config.estimator)?;
    let report = rank_situations(&observed, properties)?;
    let synthesis = SynthesisConfig {
        max_removals: config.max_removals,
        rng_seed: seed,
        out_of_odd_horizon: None,
    };
    let outcome = synthesize_safe_controller(&observed, properties, &synthesis)?;
    let recheck_passed = if outcome.success {
        Some(recheck(&outcome.scg, properties)?)
    } else {
        None
    };
    Ok(ExperimentRecord {
        id: format!("V{}", index + 1),
        seed,
        properties_violated: report.violated_properties(),
        worst_criticality_score: report.worst_score().unwrap_or(0.0),
        save_success: outcome.success,
        critical_situations_avoided: outcome.avoided,
        recheck_passed,
    })
}

/// Drifts, observes and repairs each variant; variants run in parallel and
/// are reported in id order.
pub fn run_rq1(config: &Rq1Config) -> Result<Rq1Report> {
    if !(0.0..=1.0).contains(&config.drift_magnitude) {
        return Err(Error::InvalidConfig(format!("drift magnitude {} outside [0, 1]", config.drift_magnitude)));
    }
    let properties = maritime_properties();
    let seeds = variant_seeds(config.seed, config.variants);
    let records = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| run_variant(i, seed, config, &properties))
        .collect::<Result<Vec<_>>>()?;
    let violating = records.iter().filter(|r| r.violating()).count();
    let rescued = records.iter().filter(|r| r.violating() && r.save_success).count();
    Ok(Rq1Report {
        records,
        violating,
        rescued,
        rescue_rate: (violating > 0).then(|| rescued as f64 / violating as f64),
    })
}

/// Lists as `[a, b]`.
pub fn format_list(items: &[String]) -> String {
    format!("[{}]", items.join(", "))
}

pub const RQ1_CSV_HEADER: &str = "id,properties_violated,worst_criticality_score,save_success,critical_situations_avoided";

pub fn rq1_to_csv(records: &[ExperimentRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(RQ1_CSV_HEADER.split(','))?;
    for r in records {
        let avoided = if r.save_success {
            format_list(&r.critical_situations_avoided)
        } else {
            "-".to_string()
        };
        writer.write_record([
            r.id.clone(),
            format_list(&r.properties_violated),
            format!("{:.6}", r.worst_criticality_score),
            if r.save_success { "yes" } else { "no" }.to_string(),
            avoided,
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rq2Config {
    /// Seed of the simulated deployment.
    pub seed: u64,
    /// Scenario, including the drift magnitude and time.
    pub scenario: ScenarioConfig,
    pub steps: u64,
    pub max_removals: usize,
    pub estimator: EstimatorConfig,
}

impl Default for Rq2Config {
    fn default() -> Self {
        Rq2Config {
            seed: CANONICAL_RQ2_SEED,
            scenario: ScenarioConfig {
                seed: CANONICAL_RQ2_SEED,
                drift_magnitude: 0.6,
                drift_time: 200,
                ..ScenarioConfig::default()
            },
            steps: 600,
            max_removals: 4,
            estimator: EstimatorConfig::default(),
        }
    }
}

/// Seed of the reference closed-loop run.
pub const CANONICAL_RQ2_SEED: u64 = 13;

/// Drives `kb` with the simulator until `steps` timesteps have elapsed.
/// A safe stop ends the running episode and is followed by a reset.
pub fn run_closed_loop(truth: &GroundTruth, kb: &mut KnowledgeBase, steps: u64, seed: u64) -> Result<Vec<LogEntry>> {
    let mut sim = Simulator::new(truth.clone(), seed);
    let mut log = Vec::new();
    while sim.time() < steps {
        for event in sim.advance()? {
            let entry = kb.step(&event)?;
            let stop = matches!(entry.directive, Directive::SafeStop { .. });
            log.push(entry);
            if stop {
                let reset = sim.safe_stop();
                log.push(kb.step(&reset)?);
                break;
            }
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub drift_time: Option<u64>,
    /// First adaptation directive of the adaptive run.
    pub adapted_at: Option<u64>,
    pub adaptation: Option<Directive>,
    /// First failure of the adaptive run after adapting, within that episode.
    pub save_failure_after_adaptation: Option<u64>,
    /// First failure of the fixed run at or after the adaptation step, within that episode.
    pub baseline_failure: Option<(u64, String)>,
    pub baseline_failures: usize,
    pub save_failures: usize,
}

impl Timeline {
    /// The adaptive run adapted after the drift and avoided the failure the
    /// fixed run suffered in the same episode.
    pub fn shows_rescue(&self) -> bool {
        let after_drift = match (self.adapted_at, self.drift_time) {
            (Some(a), Some(d)) => a >= d,
            _ => false,
        };
        after_drift && self.baseline_failure.is_some() && self.save_failure_after_adaptation.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Report {
    pub baseline: Vec<LogEntry>,
    pub save: Vec<LogEntry>,
    pub timeline: Timeline,
}

fn failure_of(entry: &LogEntry) -> Option<&str> {
    match &entry.event {
        EventKind::FailureObserved { id } => Some(id),
        _ => None,
    }
}

/// Index just past the episode containing `log[from]`.
fn episode_end(log: &[LogEntry], from: usize) -> usize {
    log[from..]
        .iter()
        .position(|e| e.event == EventKind::EpisodeReset)
        .map_or(log.len(), |i| from + i)
}

/// Index of the episode start containing `log[at]`.
fn episode_start(log: &[LogEntry], at: usize) -> usize {
    log[..at]
        .iter()
        .rposition(|e| e.event == EventKind::EpisodeReset)
        .map_or(0, |i| i + 1)
}

pub fn timeline(baseline: &[LogEntry], save: &[LogEntry], drift_time: Option<u64>) -> Timeline {
    let adapted = save.iter().position(|e| e.directive.is_adaptation());
    let mut out = Timeline {
        drift_time,
        adapted_at: adapted.map(|i| save[i].t),
        adaptation: adapted.map(|i| save[i].directive.clone()),
        save_failure_after_adaptation: None,
        baseline_failure: None,
        baseline_failures: baseline.iter().filter(|e| failure_of(e).is_some()).count(),
        save_failures: save.iter().filter(|e| failure_of(e).is_some()).count(),
    };
    let Some(i) = adapted else { return out };
    let t = save[i].t;
    out.save_failure_after_adaptation = save[i..episode_end(save, i)]
        .iter()
        .find(|e| failure_of(e).is_some())
        .map(|e| e.t);
    // the runs agree up to the adaptation, so the same step opens the fixed run's episode
    if let Some(j) = baseline.iter().position(|e| e.t >= t) {
        let start = episode_start(baseline, j);
        out.baseline_failure = baseline[start..episode_end(baseline, j)]
            .iter()
            .find(|e| e.t >= t && failure_of(e).is_some())
            .map(|e| (e.t, failure_of(e).unwrap_or_default().to_string()));
    }
    out
}

/// Runs the same drifted deployment twice, once with planning disabled.
pub fn run_rq2(config: &Rq2Config) -> Result<Rq2Report> {
    let scenario = generate_scenario(&config.scenario)?;
    let properties = maritime_properties();
    let synthesis = SynthesisConfig {
        max_removals: config.max_removals,
        rng_seed: config.seed,
        out_of_odd_horizon: None,
    };
    let kb = KnowledgeBase::new(scenario.belief.clone(), properties, config.estimator, synthesis)?;
    let mut fixed = kb.clone().baseline(true);
    let mut adaptive = kb;
    let baseline = run_closed_loop(&scenario.truth, &mut fixed, config.steps, config.seed)?;
    let save = run_closed_loop(&scenario.truth, &mut adaptive, config.steps, config.seed)?;
    let drift_time = scenario.truth.drift_schedule.first().map(|d| d.t);
    let timeline = timeline(&baseline, &save, drift_time);
    Ok(Rq2Report { baseline, save, timeline })
}
