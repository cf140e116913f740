//! Re-estimation of SCG transition probabilities from observed transitions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scg::{validate_scg, AugmentedScg, Distribution};

pub type RowCounts = BTreeMap<String, u64>;

/// Observed transition counts per source situation. Serialises as nested
/// maps of integers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, RowCounts>", into = "BTreeMap<String, RowCounts>")]
pub struct TransitionCounts {
    counts: BTreeMap<String, RowCounts>,
    totals: BTreeMap<String, u64>,
}

impl From<BTreeMap<String, RowCounts>> for TransitionCounts {
    fn from(counts: BTreeMap<String, RowCounts>) -> Self {
        let totals = counts.iter().map(|(k, row)| (k.clone(), row.values().sum())).collect();
        TransitionCounts { counts, totals }
    }
}

impl From<TransitionCounts> for BTreeMap<String, RowCounts> {
    fn from(c: TransitionCounts) -> Self {
        c.counts
    }
}

impl TransitionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one observed `from -> to` transition. `from` must be a
    /// situation of `scg`; `to` a situation or a failure.
    pub fn ingest(&mut self, scg: &AugmentedScg, from: &str, to: &str) -> Result<()> {
        scg.require_situation(from)?;
        if scg.kind_of(to).is_none() {
            return Err(Error::NotFound(to.to_string()));
        }
        self.record(from, to);
        Ok(())
    }

    pub(crate) fn record(&mut self, from: &str, to: &str) {
        *self
            .counts
            .entry(from.to_string())
            .or_default()
            .entry(to.to_string())
            .or_default() += 1;
        *self.totals.entry(from.to_string()).or_default() += 1;
    }

    pub fn get(&self, from: &str, to: &str) -> u64 {
        self.counts.get(from).and_then(|r| r.get(to)).copied().unwrap_or(0)
    }

    pub fn row(&self, from: &str) -> Option<&RowCounts> {
        self.counts.get(from)
    }

    pub fn total(&self, from: &str) -> u64 {
        self.totals.get(from).copied().unwrap_or(0)
    }

    pub fn grand_total(&self) -> u64 {
        self.totals.values().sum()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> + '_ {
        self.counts.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.totals.values().all(|&n| n == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    Frequentist,
    Bayesian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportPolicy {
    /// Prior support plus any target observed at least once.
    ObservedOnly,
    /// Prior support only; observations of other targets are ignored.
    PriorSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub smoothing_alpha: f64,
    pub prior_strength_kappa: f64,
    pub support_policy: SupportPolicy,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mode: EstimatorMode::Bayesian,
            smoothing_alpha: 0.0,
            prior_strength_kappa: 20.0,
            support_policy: SupportPolicy::ObservedOnly,
        }
    }
}

impl EstimatorConfig {
    pub fn frequentist(alpha: f64) -> Self {
        EstimatorConfig {
            mode: EstimatorMode::Frequentist,
            smoothing_alpha: alpha,
            ..Self::default()
        }
    }

    pub fn bayesian(kappa: f64) -> Self {
        EstimatorConfig {
            mode: EstimatorMode::Bayesian,
            prior_strength_kappa: kappa,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.smoothing_alpha >= 0.0 && self.prior_strength_kappa >= 0.0) {
            return Err(Error::InvalidConfig("alpha and kappa must be non-negative".into()));
        }
        Ok(())
    }
}

fn count(row: &RowCounts, target: &str) -> f64 {
    row.get(target).copied().unwrap_or(0) as f64
}

/// Laplace-smoothed relative frequency over `support`:
/// `p(t) = (c(t) + alpha) / (n + alpha * |support|)`. With no evidence and no
/// smoothing the prior row is returned unchanged.
pub fn estimate_frequentist(prior_row: &Distribution, row_counts: &RowCounts, alpha: f64, support: &[String]) -> Distribution {
    let n: f64 = support.iter().map(|t| count(row_counts, t)).sum();
    if n == 0.0 && alpha == 0.0 {
        return prior_row.clone();
    }
    let denom = n + alpha * support.len() as f64;
    support
        .iter()
        .map(|t| (t.clone(), (count(row_counts, t) + alpha) / denom))
        .collect()
}

/// Dirichlet posterior mean with pseudo-counts `kappa * prior_row(t)`:
/// `p(t) = (kappa * p0(t) + c(t)) / (kappa + n)`.
pub fn estimate_bayesian(prior_row: &Distribution, row_counts: &RowCounts, kappa: f64, support: &[String]) -> Distribution {
    let n: f64 = support.iter().map(|t| count(row_counts, t)).sum();
    let denom = kappa + n;
    if denom == 0.0 {
        return prior_row.clone();
    }
    support
        .iter()
        .map(|t| (t.clone(), (kappa * prior_row.get(t) + count(row_counts, t)) / denom))
        .collect()
}

fn support_for(prior_row: &Distribution, row_counts: &RowCounts, policy: SupportPolicy) -> Vec<String> {
    let mut support: BTreeSet<&str> = prior_row.iter().filter(|(_, p)| *p > 0.0).map(|(t, _)| t).collect();
    if policy == SupportPolicy::ObservedOnly {
        support.extend(row_counts.iter().filter(|(_, c)| **c > 0).map(|(t, _)| t.as_str()));
    }
    support.into_iter().map(str::to_string).collect()
}

/// Re-estimates every non-sunk row of `prior` from `counts`. Sunk rows stay
/// self-loops; rows without observations keep their prior distribution.
pub fn rebuild_scg(prior: &AugmentedScg, counts: &TransitionCounts, config: &EstimatorConfig) -> Result<AugmentedScg> {
    config.check()?;
    let report = validate_scg(prior);
    if !report.is_empty() {
        return Err(Error::InvalidScg(report));
    }
    let mut out = prior.clone();
    for id in prior.active_situation_ids() {
        let Some(row_counts) = counts.row(id) else { continue };
        let prior_row = prior.row(id).expect("validated SCG has every row");
        let support = support_for(prior_row, row_counts, config.support_policy);
        let n: u64 = support.iter().map(|t| row_counts.get(t).copied().unwrap_or(0)).sum();
        if n == 0 {
            continue;
        }
        if let Some(unknown) = support.iter().find(|t| prior.kind_of(t).is_none()) {
            return Err(Error::NotFound(unknown.clone()));
        }
        let mut row = match config.mode {
            EstimatorMode::Frequentist => estimate_frequentist(prior_row, row_counts, config.smoothing_alpha, &support),
            EstimatorMode::Bayesian => estimate_bayesian(prior_row, row_counts, config.prior_strength_kappa, &support),
        };
        row.prune_zeros();
        out.set_row(id, row);
    }
    let report = validate_scg(&out);
    if !report.is_empty() {
        return Err(Error::InvalidScg(report));
    }
    Ok(out)
}
