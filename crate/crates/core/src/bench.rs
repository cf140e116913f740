//! Scalability benchmark: time to rank every situation of a random SCG.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criticality::rank_situations;
use crate::error::{Error, Result};
use crate::property::{BoundedReachProperty, Comparator};
use crate::scg::{AugmentedScg, Distribution, FailureMode, OddAttribute};

pub const DEFAULT_LADDER: [usize; 5] = [10, 20, 40, 80, 160];
pub const CSV_HEADER: &str = "n,states,transitions,ms";

/// `n` situations and two failures. Each situation row keeps every target
/// with probability `density` (its self-loop always), with random weights.
pub fn random_scg(n: usize, density: f64, seed: u64) -> Result<AugmentedScg> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 situations, got {n}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidConfig(format!("density {density} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attribute = OddAttribute::new("situation", (0..n).map(|i| format!("v{i}")));
    let failures = vec![FailureMode::new("f1", ""), FailureMode::new("f2", "")];
    let targets: Vec<String> = (0..n).map(|i| format!("s{i}")).chain(["f1".into(), "f2".into()]).collect();
    let mut delta = BTreeMap::new();
    for i in 0..n {
        let mut kept: Vec<(&str, f64)> = Vec::new();
        for (j, t) in targets.iter().enumerate() {
            if j == i || density >= 1.0 || rng.random_bool(density) {
                kept.push((t, rng.random_range(0.05..1.0)));
            }
        }
        let total: f64 = kept.iter().map(|(_, w)| w).sum();
        let row: Distribution = kept.into_iter().map(|(t, w)| (t, w / total)).collect();
        delta.insert(format!("s{i}"), row);
    }
    AugmentedScg::checked(vec![attribute], failures, delta, BTreeSet::new())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub n: usize,
    pub states: usize,
    pub transitions: usize,
    pub ms: f64,
}

/// Properties used for timing: one upper bound per failure with horizon `k`.
pub fn bench_properties(k: u32) -> Vec<BoundedReachProperty> {
    vec![
        BoundedReachProperty::new("phi1", "f1", k, Comparator::Lt, 0.99),
        BoundedReachProperty::new("phi2", "f2", k, Comparator::Lt, 0.95),
    ]
}

pub fn bench_one(n: usize, k: u32, density: f64, seed: u64) -> Result<BenchRecord> {
    let scg = random_scg(n, density, seed)?;
    let properties = bench_properties(k);
    let start = Instant::now();
    rank_situations(&scg, &properties)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(BenchRecord {
        n,
        states: scg.state_ids().count(),
        transitions: scg.transition_count(),
        ms,
    })
}

/// Runs the ladder sequentially so timings do not compete for cores.
pub fn bench_ladder(ns: &[usize], k: u32, density: f64, seed: u64) -> Result<Vec<BenchRecord>> {
    ns.iter()
        .enumerate()
        .map(|(i, &n)| bench_one(n, k, density, seed.wrapping_add(i as u64)))
        .collect()
}

pub fn to_csv(records: &[BenchRecord]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}
