//! Which training records get structured covariates.
//!
//! Each training record `i` has a base probability `p_i` (uniform under
//! random sampling, looked up from a stratum table over background
//! variables in `phi` under selective sampling). A scale `delta` is solved so
//! that `sum_i min(p_i / delta, 1)` hits the target annotation count, and
//! `S_i ~ Bernoulli(min(p_i / delta, 1))` independently. The realized
//! probabilities are handed to the sampling-bias adjustment as the known
//! `P(S = 1 | phi)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::{Benchmark, Dataset, Record};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingKind {
    Random,
    Selective,
}

impl SamplingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingKind::Random => "random",
            SamplingKind::Selective => "selective",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumRow {
    pub key: Vec<u8>,
    pub p: f64,
}

/// Base annotation probabilities keyed by binary background variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumTable {
    /// Background variable names, in key order.
    pub columns: Vec<String>,
    pub rows: Vec<StratumRow>,
}

impl StratumTable {
    /// Favors low-severity encounters: summer visits without COPD or asthma.
    pub fn synsum_default() -> Self {
        let rows = [
            ([0, 0, 0], 0.80),
            ([0, 0, 1], 0.15),
            ([0, 1, 0], 0.15),
            ([1, 0, 0], 0.12),
            ([0, 1, 1], 0.08),
            ([1, 0, 1], 0.08),
            ([1, 1, 0], 0.08),
            ([1, 1, 1], 0.05),
        ];
        Self {
            columns: vec!["winter".into(), "copd".into(), "asthma".into()],
            rows: rows
                .iter()
                .map(|(k, p)| StratumRow { key: k.to_vec(), p: *p })
                .collect(),
        }
    }

    /// Women are annotated five times as often as men.
    pub fn mimic_default() -> Self {
        Self {
            columns: vec!["sex".into()],
            rows: vec![
                StratumRow { key: vec![0], p: 0.75 },
                StratumRow { key: vec![1], p: 0.15 },
            ],
        }
    }

    pub fn for_benchmark(b: Benchmark) -> Self {
        match b {
            Benchmark::Synsum => Self::synsum_default(),
            Benchmark::Mimic => Self::mimic_default(),
        }
    }

    pub fn lookup(&self, key: &[u8]) -> Option<f64> {
        self.rows.iter().find(|r| r.key == key).map(|r| r.p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Config("sampling.strata needs at least one column".into()));
        }
        for row in &self.rows {
            if row.key.len() != self.columns.len() {
                return Err(Error::Config(format!(
                    "sampling.strata key {:?} does not match {} columns",
                    row.key,
                    self.columns.len()
                )));
            }
            if !(row.p > 0.0 && row.p <= 1.0) {
                return Err(Error::Config(format!(
                    "sampling.strata probability {} outside (0, 1]",
                    row.p
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPolicy {
    pub kind: SamplingKind,
    pub target_count: usize,
    /// Required for selective sampling; ignored under random sampling.
    pub strata: Option<StratumTable>,
}

impl SamplingPolicy {
    pub fn random(target_count: usize) -> Self {
        Self {
            kind: SamplingKind::Random,
            target_count,
            strata: None,
        }
    }

    pub fn selective(target_count: usize, strata: StratumTable) -> Self {
        Self {
            kind: SamplingKind::Selective,
            target_count,
            strata: Some(strata),
        }
    }

    /// Unscaled probability for each record. Selective keys are read from
    /// the background slice of `phi` only; `phi_index` maps a background
    /// variable name to its position in `phi`.
    pub fn base_probabilities(
        &self,
        records: &[Record],
        phi_index: impl Fn(&str) -> Option<usize>,
    ) -> Result<Vec<f64>> {
        match self.kind {
            SamplingKind::Random => Ok(vec![1.0; records.len()]),
            SamplingKind::Selective => {
                let table = self.strata.as_ref().ok_or_else(|| {
                    Error::Config("selective sampling requires a stratum table".into())
                })?;
                table.validate()?;
                let cols = table
                    .columns
                    .iter()
                    .map(|c| {
                        phi_index(c).ok_or_else(|| {
                            Error::Config(format!(
                                "sampling.strata column {c:?} is not a background variable"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut key = vec![0u8; cols.len()];
                records
                    .iter()
                    .map(|r| {
                        for (k, &c) in key.iter_mut().zip(&cols) {
                            *k = u8::from(r.phi[c] > 0.5);
                        }
                        table.lookup(&key).ok_or_else(|| {
                            Error::Config(format!("sampling.strata has no entry for key {key:?}"))
                        })
                    })
                    .collect()
            }
        }
    }
}

/// `sum_i min(p_i / delta, 1)`.
pub fn expected_count(base: &[f64], delta: f64) -> f64 {
    base.iter().map(|p| (p / delta).min(1.0)).sum()
}

/// Scale such that the expected number of annotated records equals
/// `target`. Without clipping the answer is `sum(p) / target`; otherwise the
/// monotone map `delta -> expected_count` is bisected on
/// `[min(p), sum(p) / target]`.
pub fn solve_delta(base: &[f64], target: usize) -> Result<f64> {
    if base.is_empty() {
        return Err(Error::Policy("no records to annotate".into()));
    }
    if target == 0 {
        return Err(Error::Policy("target annotation count must be positive".into()));
    }
    if target > base.len() {
        return Err(Error::Policy(format!(
            "target of {target} annotations exceeds {} training records",
            base.len()
        )));
    }
    if let Some(bad) = base.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::Policy(format!("base probability {bad} outside (0, 1]")));
    }
    let target_f = target as f64;
    let total: f64 = base.iter().sum();
    let max = base.iter().copied().fold(f64::MIN, f64::max);
    let min = base.iter().copied().fold(f64::MAX, f64::min);
    let unclipped = total / target_f;
    if unclipped >= max {
        return Ok(unclipped);
    }
    if target == base.len() {
        return Ok(min);
    }
    let (mut lo, mut hi) = (min, unclipped);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if expected_count(base, mid) > target_f {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Training records with annotation applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotated {
    /// `x` is filled in exactly where `s` is set.
    pub records: Vec<Record>,
    /// Realized `P(S = 1 | phi)` per record.
    pub p_s: Vec<f64>,
    pub delta: f64,
}

impl Annotated {
    pub fn count(&self) -> usize {
        self.records.iter().filter(|r| r.s).count()
    }
}

/// Draws `S` for every record and reveals the matching ground-truth
/// covariates from `truth`.
pub fn assign_s(
    records: &[Record],
    truth: &[Vec<f64>],
    policy: &SamplingPolicy,
    phi_index: impl Fn(&str) -> Option<usize>,
    seed: u64,
) -> Result<Annotated> {
    if records.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} records but {} covariate rows",
            records.len(),
            truth.len()
        )));
    }
    let base = policy.base_probabilities(records, phi_index)?;
    let delta = solve_delta(&base, policy.target_count)?;
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(records.len());
    let mut p_s = Vec::with_capacity(records.len());
    for ((r, x), p) in records.iter().zip(truth).zip(&base) {
        let prob = (p / delta).min(1.0);
        let s = rng.random::<f64>() < prob;
        out.push(Record {
            s,
            x: s.then(|| x.clone()),
            ..r.clone()
        });
        p_s.push(prob);
    }
    Ok(Annotated {
        records: out,
        p_s,
        delta,
    })
}

impl Dataset {
    /// Annotates the training split.
    pub fn annotate(&self, policy: &SamplingPolicy, seed: u64) -> Result<Annotated> {
        let truth: Vec<Vec<f64>> = self
            .split
            .train
            .iter()
            .map(|&i| self.covariates[i].clone())
            .collect();
        assign_s(
            &self.train_records(),
            &truth,
            policy,
            |name| self.phi_index(name),
            seed,
        )
    }
}
