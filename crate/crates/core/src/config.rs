//! Experiment configuration files (JSON). Every section and field is
//! optional; unknown keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotation::{SamplingKind, StratumTable};
use crate::dgp::{Benchmark, EncoderConfig, Priors};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, EstimatorKind};
use crate::eval::SweepConfig;

/// Where `P(S = 1 | phi)` for the adjusted estimator comes from. Only the
/// known sampling mechanism is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilitySource {
    #[default]
    Known,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub kind: SamplingKind,
    pub strata: Option<StratumTable>,
    pub probability_source: ProbabilitySource,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            kind: SamplingKind::Random,
            strata: None,
            probability_source: ProbabilitySource::Known,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub annotation_levels: Option<Vec<usize>>,
    pub methods: Vec<EstimatorKind>,
    pub n_runs: usize,
    pub resample_split: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            annotation_levels: None,
            methods: EstimatorKind::ALL.to_vec(),
            n_runs: 5,
            resample_split: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub dataset_size: usize,
    pub seed: u64,
    /// Directory written by `generate`; when absent the dataset is built
    /// in memory from `benchmark`, `dataset_size`, `seed` and `encoder`.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Worker threads for the sweep; all cores when absent.
    pub jobs: Option<usize>,
    pub encoder: EncoderConfig,
    pub priors: Priors,
    pub sampling: SamplingSection,
    pub sweep: SweepSection,
    pub training: EstimatorConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Synsum,
            dataset_size: 10_000,
            seed: 0,
            dataset: None,
            output_dir: PathBuf::from("out"),
            jobs: None,
            encoder: EncoderConfig::default(),
            priors: Priors::default(),
            sampling: SamplingSection::default(),
            sweep: SweepSection::default(),
            training: EstimatorConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        if self.sampling.probability_source == ProbabilitySource::Estimated {
            return Err(Error::Config(
                "sampling.probability_source: estimating P(S=1|phi) is not supported; use \"known\"".into(),
            ));
        }
        Ok(SweepConfig {
            benchmark: self.benchmark,
            sampling: self.sampling.kind,
            strata: self.sampling.strata.clone(),
            annotation_levels: self.sweep.annotation_levels.clone(),
            methods: self.sweep.methods.clone(),
            n_runs: self.sweep.n_runs,
            base_seed: self.seed,
            dataset_size: self.dataset_size,
            resample_split: self.sweep.resample_split,
            encoder: self.encoder.clone(),
            priors: self.priors.clone(),
            training: self.training.clone(),
        })
    }

    /// Fills every defaulted choice (annotation levels, stratum table) in
    /// explicitly and validates the result.
    pub fn resolved(&self) -> Result<Self> {
        let sweep = self.sweep_config()?;
        sweep.validate()?;
        let mut out = self.clone();
        out.sweep.annotation_levels = Some(sweep.levels());
        if out.sampling.kind == SamplingKind::Selective && out.sampling.strata.is_none() {
            out.sampling.strata = Some(StratumTable::for_benchmark(self.benchmark));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"benchmrk": "mimic"}"#).unwrap_err();
        assert!(err.to_string().contains("benchmrk"));
        let err = ExperimentConfig::from_json(r#"{"training": {"epoch": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn bad_benchmark_names_the_field() {
        let err = ExperimentConfig::from_json(r#"{"benchmark": "eicu"}"#).unwrap_err();
        assert!(err.to_string().contains("eicu"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_json(
            r#"{"benchmark": "mimic", "sampling": {"kind": "selective"}, "encoder": {"record_prob": 0.6}}"#,
        )
        .unwrap();
        let resolved = cfg.resolved().unwrap();
        assert_eq!(resolved.sweep.annotation_levels.as_ref().unwrap().len(), 8);
        assert!(resolved.sampling.strata.is_some());
        let again = ExperimentConfig::from_json(&resolved.to_json().unwrap()).unwrap();
        assert_eq!(again, resolved);
    }

    #[test]
    fn estimated_sampling_probabilities_are_rejected() {
        let cfg = ExperimentConfig::from_json(r#"{"sampling": {"probability_source": "estimated"}}"#).unwrap();
        assert!(matches!(cfg.sweep_config(), Err(Error::Config(_))));
    }
}
