//! PEHE evaluation and the annotation-level sweep.
//!
//! A sweep holds one dataset (and by default one train/test split) fixed and
//! repeats every (level, method) cell over `n_runs` runs. Each run draws a
//! fresh annotation and fresh model initializations from seeds derived from
//! `base_seed` and the run index, so cells are independent jobs and results
//! do not depend on scheduling.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{SamplingKind, SamplingPolicy, StratumTable};
use crate::dgp::{build_dataset_with, Benchmark, Dataset, EncoderConfig, Priors, Record, Split};
use crate::error::{Error, Result};
use crate::estimators::{
    fit_adjusted, fit_direct_regression, fit_info_extraction, fit_plug_in, EffectEstimator,
    EffectModel, EstimatorConfig, EstimatorKind,
};
use crate::seed;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// Root mean squared error between predicted and true effects.
pub fn pehe(predictions: &[f64], true_cates: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Evaluation("PEHE of an empty test set".into()));
    }
    if predictions.len() != true_cates.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions for {} true effects",
            predictions.len(),
            true_cates.len()
        )));
    }
    let sse: f64 = predictions
        .iter()
        .zip(true_cates)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// PEHE of an estimator on held-out records, reading `phi` only.
pub fn evaluate(estimator: &EffectEstimator, test: &[Record]) -> Result<f64> {
    let preds = test
        .iter()
        .map(|r| estimator.predict(&r.phi))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = test.iter().map(|r| r.true_cate).collect();
    pehe(&preds, &truth)
}

/// Mean predicted effect over test records whose ground-truth covariates
/// satisfy `predicate`, and how many matched.
pub fn subgroup_report<E, P>(
    estimator: &E,
    test: &[Record],
    covariates: &[Vec<f64>],
    predicate: P,
) -> Result<(f64, usize)>
where
    E: EffectModel + ?Sized,
    P: Fn(&[f64]) -> bool,
{
    if test.len() != covariates.len() {
        return Err(Error::Evaluation(format!(
            "{} test records but {} covariate rows",
            test.len(),
            covariates.len()
        )));
    }
    let (sum, count) = test
        .iter()
        .zip(covariates)
        .filter(|(_, x)| predicate(x))
        .fold((0.0, 0usize), |(s, n), (r, _)| (s + estimator.effect(&r.phi), n + 1));
    if count == 0 {
        return Err(Error::Evaluation("subgroup matches no test records".into()));
    }
    Ok((sum / count as f64, count))
}

/// Mean and 95% normal-approximation half-width (sample sd). The half-width
/// is `None` with fewer than two values.
pub fn mean_ci(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, Some(1.96 * var.sqrt() / n.sqrt())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub benchmark: Benchmark,
    pub sampling: SamplingKind,
    /// Stratum table for selective sampling; the benchmark default when absent.
    pub strata: Option<StratumTable>,
    /// Target annotation counts; the benchmark defaults when absent.
    pub annotation_levels: Option<Vec<usize>>,
    pub methods: Vec<EstimatorKind>,
    pub n_runs: usize,
    pub base_seed: u64,
    pub dataset_size: usize,
    /// Draw a new train/test split for every run instead of holding it fixed.
    pub resample_split: bool,
    pub encoder: EncoderConfig,
    pub priors: Priors,
    pub training: EstimatorConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::Synsum,
            sampling: SamplingKind::Random,
            strata: None,
            annotation_levels: None,
            methods: EstimatorKind::ALL.to_vec(),
            n_runs: 5,
            base_seed: 0,
            dataset_size: 10_000,
            resample_split: false,
            encoder: EncoderConfig::default(),
            priors: Priors::default(),
            training: EstimatorConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn train_size(&self) -> usize {
        self.dataset_size - self.dataset_size / 10
    }

    /// Seed of the dataset a sweep builds when none is supplied.
    pub fn dataset_seed(&self) -> u64 {
        seed::derive_str(self.base_seed, "dataset")
    }

    pub fn levels(&self) -> Vec<usize> {
        self.annotation_levels
            .clone()
            .unwrap_or_else(|| self.benchmark.default_levels(self.train_size()))
    }

    pub fn policy(&self, level: usize) -> SamplingPolicy {
        match self.sampling {
            SamplingKind::Random => SamplingPolicy::random(level),
            SamplingKind::Selective => SamplingPolicy::selective(
                level,
                self.strata
                    .clone()
                    .unwrap_or_else(|| StratumTable::for_benchmark(self.benchmark)),
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        let train = self.train_size();
        let levels = self.levels();
        if levels.is_empty() {
            return Err(Error::Config("annotation_levels must not be empty".into()));
        }
        if let Some(l) = levels.iter().find(|&&l| l == 0 || l > train) {
            return Err(Error::Config(format!(
                "annotation level {l} outside 1..={train} training records"
            )));
        }
        let mut sorted = levels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("annotation_levels contains duplicates".into()));
        }
        let mut methods = self.methods.clone();
        methods.sort_unstable();
        if methods.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("methods contains duplicates".into()));
        }
        if let Some(t) = &self.strata {
            t.validate()?;
        }
        self.encoder.validate(self.benchmark.text_covariate_count())?;
        self.training.validate()
    }
}

/// One (method, level, run) evaluation. `pehe` is absent exactly when
/// `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: EstimatorKind,
    pub level: usize,
    pub run: usize,
    pub run_seed: u64,
    /// Realized number of annotated records; absent for the plug-in
    /// estimator, which uses none.
    pub n_annotated: Option<usize>,
    pub pehe: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: EstimatorKind,
    pub level: usize,
    pub n_ok: usize,
    pub mean_pehe: Option<f64>,
    pub ci_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub benchmark: Benchmark,
    pub sampling: SamplingKind,
    /// Sorted by (method, level, run).
    pub cells: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepResult {
    pub fn failures(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    pub fn has_failures(&self) -> bool {
        self.failures().next().is_some()
    }

    pub fn aggregate(&self, method: EstimatorKind, level: usize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.level == level)
    }

    /// PEHE per run for one (method, level); `None` for failed runs.
    pub fn run_pehes(&self, method: EstimatorKind, level: usize) -> Vec<Option<f64>> {
        self.cells
            .iter()
            .filter(|c| c.method == method && c.level == level)
            .map(|c| c.pehe)
            .collect()
    }
}

fn aggregate(cells: &[Cell]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(EstimatorKind, usize), Vec<f64>> = BTreeMap::new();
    for c in cells {
        let g = groups.entry((c.method, c.level)).or_default();
        if let Some(p) = c.pehe {
            g.push(p);
        }
    }
    groups
        .into_iter()
        .map(|((method, level), vals)| {
            let stats = mean_ci(&vals);
            Aggregate {
                method,
                level,
                n_ok: vals.len(),
                mean_pehe: stats.map(|s| s.0),
                ci_half_width: stats.and_then(|s| s.1),
            }
        })
        .collect()
}

enum Job {
    PlugIn { run: usize },
    Annotated { run: usize, level: usize },
}

fn run_seed(cfg: &SweepConfig, run: usize) -> u64 {
    seed::derive(seed::derive_str(cfg.base_seed, "run"), run as u64)
}

fn split_for(cfg: &SweepConfig, dataset: &Dataset, run: usize) -> Split {
    if cfg.resample_split {
        Split::new(dataset.len(), seed::derive_str(run_seed(cfg, run), "split"))
    } else {
        dataset.split.clone()
    }
}

fn view(dataset: &Dataset, split: &Split) -> Dataset {
    if *split == dataset.split {
        return dataset.clone();
    }
    Dataset {
        split: split.clone(),
        ..dataset.clone()
    }
}

fn cell(method: EstimatorKind, level: usize, run: usize, run_seed: u64, n_annotated: Option<usize>, outcome: Result<f64>) -> Cell {
    let (pehe, error) = match outcome {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Cell {
        method,
        level,
        run,
        run_seed,
        n_annotated,
        pehe,
        error,
    }
}

fn run_annotated(cfg: &SweepConfig, dataset: &Dataset, run: usize, level: usize) -> Vec<Cell> {
    let rs = run_seed(cfg, run);
    let methods: Vec<EstimatorKind> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| *m != EstimatorKind::PlugIn)
        .collect();
    let ds = view(dataset, &split_for(cfg, dataset, run));
    let annotated = match ds.annotate(&cfg.policy(level), seed::derive(seed::derive_str(rs, "annotate"), level as u64)) {
        Ok(a) => a,
        Err(e) => {
            return methods
                .iter()
                .map(|&m| cell(m, level, run, rs, None, Err(Error::Policy(e.to_string()))))
                .collect();
        }
    };
    let n_annotated = Some(annotated.count());
    let test = ds.test_records();
    let est_cfg = cfg.training.with_seed(seed::derive(seed::derive_str(rs, "estimators"), level as u64));
    let layout = cfg.benchmark.layout();
    // The adjusted estimator builds on direct regression; fit it once.
    let needs_direct = methods
        .iter()
        .any(|m| matches!(m, EstimatorKind::DirectRegression | EstimatorKind::Adjusted));
    let direct = needs_direct
        .then(|| fit_direct_regression(&annotated.records, &est_cfg).map_err(|e| e.to_string()));
    methods
        .iter()
        .map(|&m| {
            let fitted = match m {
                EstimatorKind::InfoExtraction => fit_info_extraction(&annotated.records, &layout, &est_cfg),
                EstimatorKind::DirectRegression => match &direct {
                    Some(Ok(e)) => Ok(e.clone()),
                    Some(Err(e)) => Err(Error::InsufficientData(e.clone())),
                    None => unreachable!("direct regression requested"),
                },
                EstimatorKind::Adjusted => match &direct {
                    Some(Ok(base)) => fit_adjusted(&annotated.records, base.clone(), &annotated.p_s, &est_cfg),
                    Some(Err(e)) => Err(Error::InsufficientData(format!("adjusted base: {e}"))),
                    None => unreachable!("direct regression requested"),
                },
                EstimatorKind::PlugIn => unreachable!("plug-in runs once per run"),
            };
            let outcome = fitted.and_then(|e| evaluate(&e, &test));
            cell(m, level, run, rs, n_annotated, outcome)
        })
        .collect()
}

/// The plug-in estimator uses no annotations, so it is fit once per run and
/// reported at every level.
fn run_plug_in(cfg: &SweepConfig, dataset: &Dataset, run: usize, levels: &[usize]) -> Vec<Cell> {
    let rs = run_seed(cfg, run);
    let ds = view(dataset, &split_for(cfg, dataset, run));
    let est_cfg = cfg.training.with_seed(seed::derive_str(rs, "plug_in"));
    let outcome = fit_plug_in(&ds.train_records(), &est_cfg).and_then(|e| evaluate(&e, &ds.test_records()));
    levels
        .iter()
        .map(|&level| {
            let o = match &outcome {
                Ok(p) => Ok(*p),
                Err(e) => Err(Error::Evaluation(e.to_string())),
            };
            cell(EstimatorKind::PlugIn, level, run, rs, None, o)
        })
        .collect()
}

/// Builds the dataset from the config and runs the sweep.
pub fn run_sweep(cfg: &SweepConfig, jobs: Option<usize>) -> Result<SweepResult> {
    cfg.validate()?;
    let dataset = build_dataset_with(
        cfg.benchmark,
        cfg.dataset_size,
        &cfg.encoder,
        &cfg.priors,
        cfg.dataset_seed(),
    )?;
    run_sweep_on(cfg, &dataset, jobs)
}

/// Runs the sweep on an existing dataset. Cells run on a pool of `jobs`
/// threads (all cores when `None`); a failing cell is recorded and the sweep
/// continues.
pub fn run_sweep_on(cfg: &SweepConfig, dataset: &Dataset, jobs: Option<usize>) -> Result<SweepResult> {
    cfg.validate()?;
    if dataset.benchmark != cfg.benchmark {
        return Err(Error::Config(format!(
            "dataset is {} but the sweep expects {}",
            dataset.benchmark.as_str(),
            cfg.benchmark.as_str()
        )));
    }
    let train = dataset.split.train.len();
    let levels = cfg
        .annotation_levels
        .clone()
        .unwrap_or_else(|| cfg.benchmark.default_levels(train));
    if let Some(l) = levels.iter().find(|&&l| l > train) {
        return Err(Error::Config(format!("annotation level {l} exceeds {train} training records")));
    }
    let mut work = Vec::new();
    for run in 0..cfg.n_runs {
        if cfg.methods.contains(&EstimatorKind::PlugIn) {
            work.push(Job::PlugIn { run });
        }
        if cfg.methods.iter().any(|m| *m != EstimatorKind::PlugIn) {
            work.extend(levels.iter().map(|&level| Job::Annotated { run, level }));
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut cells: Vec<Cell> = pool.install(|| {
        work.par_iter()
            .flat_map_iter(|job| match *job {
                Job::PlugIn { run } => run_plug_in(cfg, dataset, run, &levels),
                Job::Annotated { run, level } => run_annotated(cfg, dataset, run, level),
            })
            .collect()
    });
    cells.sort_by_key(|c| (c.method, c.level, c.run));
    let aggregates = aggregate(&cells);
    Ok(SweepResult {
        benchmark: cfg.benchmark,
        sampling: cfg.sampling,
        cells,
        aggregates,
    })
}

// ---------------------------------------------------------------------------
// Output

pub const RESULTS_HEADER: [&str; 9] = [
    "benchmark",
    "sampling",
    "method",
    "level",
    "run",
    "run_seed",
    "n_annotated",
    "pehe",
    "error",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

/// One row per cell.
pub fn write_results_csv<W: Write>(result: &SweepResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for c in &result.cells {
        out.write_record([
            result.benchmark.as_str().to_string(),
            result.sampling.as_str().to_string(),
            c.method.as_str().to_string(),
            c.level.to_string(),
            c.run.to_string(),
            c.run_seed.to_string(),
            opt(&c.n_annotated),
            opt(&c.pehe),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub benchmark: Benchmark,
    pub sampling: SamplingKind,
    pub n_cells: usize,
    pub n_failed: usize,
    pub failures: Vec<Cell>,
    pub aggregates: Vec<Aggregate>,
}

impl Summary {
    pub fn of(result: &SweepResult) -> Self {
        let failures: Vec<Cell> = result.failures().cloned().collect();
        Self {
            schema_version: RESULTS_SCHEMA_VERSION,
            benchmark: result.benchmark,
            sampling: result.sampling,
            n_cells: result.cells.len(),
            n_failed: failures.len(),
            failures,
            aggregates: result.aggregates.clone(),
        }
    }
}

pub fn write_summary_json<W: Write>(result: &SweepResult, mut w: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, &Summary::of(result))?;
    writeln!(w)?;
    Ok(())
}
