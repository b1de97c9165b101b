//! Effect estimators that predict from representations alone.
//!
//! All four estimators end in a regressor (or a Monte Carlo average) that
//! maps `phi` to an effect. They differ in what they learn from:
//!
//! * [`EstimatorKind::PlugIn`]: doubly robust learner run entirely on `phi`;
//!   uses every training record, but is biased when `phi` misses confounders.
//! * [`EstimatorKind::InfoExtraction`]: doubly robust learner on the
//!   structured covariates of annotated records, averaged over covariate
//!   vectors sampled from per-covariate models of `x | phi`.
//! * [`EstimatorKind::DirectRegression`]: pseudo-outcomes built from the
//!   structured covariates, regressed directly on `phi`.
//! * [`EstimatorKind::Adjusted`]: a second regression on all training
//!   records of a target that reweights annotated residuals by the known
//!   annotation probability, correcting a base estimator for sampling bias.
//!
//! No cross-fitting: every model of an estimator sees the same records.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dgp::{CovariateKind, CovariateLayout, Record};
use crate::error::{Error, Result};
use crate::nn::{Head, Loss, MlpModel, Optimizer, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PlugIn,
    InfoExtraction,
    DirectRegression,
    Adjusted,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::PlugIn,
        EstimatorKind::InfoExtraction,
        EstimatorKind::DirectRegression,
        EstimatorKind::Adjusted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::PlugIn => "plug_in",
            EstimatorKind::InfoExtraction => "info_extraction",
            EstimatorKind::DirectRegression => "direct_regression",
            EstimatorKind::Adjusted => "adjusted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("methods: unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpace {
    Covariates,
    Representation,
}

impl InputSpace {
    fn as_str(self) -> &'static str {
        match self {
            InputSpace::Covariates => "covariates",
            InputSpace::Representation => "representation",
        }
    }
}

/// Hyperparameters shared by every model an estimator trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    pub optimizer: Optimizer,
    /// Propensity predictions are clipped to `[clip_eps, 1 - clip_eps]`.
    pub clip_eps: f64,
    /// Floor on `P(S = 1 | phi)` before it divides the adjusted target.
    pub p_s_floor: f64,
    /// Covariate draws per prediction for information extraction.
    pub mc_draws: usize,
    pub min_arm_size: usize,
    /// Below this many annotated records the adjusted regression switches
    /// to `unstable_optimizer` with `unstable_batch_size`.
    pub unstable_threshold: usize,
    pub unstable_optimizer: Optimizer,
    pub unstable_batch_size: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            epochs: 30,
            batch_size: 256,
            lr0: 5e-3,
            decay: 0.9,
            optimizer: Optimizer::Adam,
            clip_eps: 0.01,
            p_s_floor: 0.005,
            mc_draws: 128,
            min_arm_size: 10,
            unstable_threshold: 750,
            unstable_optimizer: Optimizer::Sgd,
            unstable_batch_size: 1024,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::Config(format!("clip_eps must lie in (0, 0.5), got {}", self.clip_eps)));
        }
        if !(self.p_s_floor > 0.0 && self.p_s_floor <= 1.0) {
            return Err(Error::Config(format!("p_s_floor must lie in (0, 1], got {}", self.p_s_floor)));
        }
        if self.mc_draws < 1 {
            return Err(Error::Config("mc_draws must be at least 1".into()));
        }
        if self.unstable_batch_size == 0 {
            return Err(Error::Config("unstable_batch_size must be positive".into()));
        }
        self.train_config(Loss::Mse, "validate").validate()
    }

    fn train_config(&self, loss: Loss, role: &str) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr0: self.lr0,
            decay: self.decay,
            optimizer: self.optimizer,
            loss,
            seed: seed::derive_str(self.seed, &format!("{role}/order")),
        }
    }

    fn fit_model<R: AsRef<[f64]>>(
        &self,
        role: &str,
        inputs: &[R],
        targets: &[f64],
        head: Head,
        train: TrainConfig,
    ) -> Result<MlpModel> {
        let dim = inputs
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InsufficientData(format!("no rows to train {role}")))?;
        if dim == 0 {
            return Err(Error::Contract(format!("{role}: zero-width input")));
        }
        let mut model = MlpModel::new(dim, self.hidden_dim, head, seed::derive_str(self.seed, role));
        model.train(inputs, targets, &train)?;
        Ok(model)
    }

    fn regress<R: AsRef<[f64]>>(&self, role: &str, inputs: &[R], targets: &[f64]) -> Result<MlpModel> {
        let train = self.train_config(Loss::Mse, role);
        self.fit_model(role, inputs, targets, Head::Identity, train)
    }

    fn classify<R: AsRef<[f64]>>(&self, role: &str, inputs: &[R], targets: &[f64]) -> Result<MlpModel> {
        let train = self.train_config(Loss::BinaryCrossEntropy, role);
        self.fit_model(role, inputs, targets, Head::Sigmoid, train)
    }
}

// ---------------------------------------------------------------------------
// Nuisances and pseudo-outcomes

/// First-stage models: propensity and arm-specific outcome means.
pub trait Nuisance {
    fn propensity(&self, input: &[f64]) -> f64;
    fn outcome(&self, input: &[f64], t: bool) -> f64;
}

/// Anything that maps a representation to an effect estimate.
pub trait EffectModel {
    fn effect(&self, phi: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64> EffectModel for F {
    fn effect(&self, phi: &[f64]) -> f64 {
        self(phi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceSet {
    pub propensity: MlpModel,
    pub mu0: MlpModel,
    pub mu1: MlpModel,
    pub input_space: InputSpace,
}

impl Nuisance for NuisanceSet {
    fn propensity(&self, input: &[f64]) -> f64 {
        self.propensity.predict(input)
    }

    fn outcome(&self, input: &[f64], t: bool) -> f64 {
        if t {
            self.mu1.predict(input)
        } else {
            self.mu0.predict(input)
        }
    }
}

fn t_value(t: bool) -> f64 {
    if t {
        1.0
    } else {
        0.0
    }
}

/// Fits propensity (cross-entropy on `t`) and the two outcome models (squared
/// error on `y`, each on its own arm).
pub fn fit_nuisances_on<R: AsRef<[f64]>>(
    inputs: &[R],
    t: &[bool],
    y: &[f64],
    input_space: InputSpace,
    cfg: &EstimatorConfig,
    role: &str,
) -> Result<NuisanceSet> {
    if inputs.len() != t.len() || t.len() != y.len() {
        return Err(Error::Contract("nuisance inputs, treatments and outcomes differ in length".into()));
    }
    let treated = t.iter().filter(|&&v| v).count();
    let control = t.len() - treated;
    if treated < cfg.min_arm_size || control < cfg.min_arm_size {
        return Err(Error::InsufficientData(format!(
            "{role}: need at least {} records per arm, got {treated} treated and {control} control",
            cfg.min_arm_size
        )));
    }
    let t_targets: Vec<f64> = t.iter().map(|&v| t_value(v)).collect();
    let propensity = cfg.classify(&format!("{role}/propensity"), inputs, &t_targets)?;
    let arm = |want: bool| -> (Vec<&[f64]>, Vec<f64>) {
        inputs
            .iter()
            .zip(t)
            .zip(y)
            .filter(|((_, &tt), _)| tt == want)
            .map(|((x, _), &yy)| (x.as_ref(), yy))
            .unzip()
    };
    let (x0, y0) = arm(false);
    let (x1, y1) = arm(true);
    let mu0 = cfg.regress(&format!("{role}/mu0"), &x0, &y0)?;
    let mu1 = cfg.regress(&format!("{role}/mu1"), &x1, &y1)?;
    Ok(NuisanceSet {
        propensity,
        mu0,
        mu1,
        input_space,
    })
}

/// Record-level entry point. On covariates every record must be annotated.
pub fn fit_nuisances(records: &[Record], input_space: InputSpace, cfg: &EstimatorConfig) -> Result<NuisanceSet> {
    let inputs: Vec<&[f64]> = match input_space {
        InputSpace::Representation => records.iter().map(|r| r.phi.as_slice()).collect(),
        InputSpace::Covariates => records
            .iter()
            .map(|r| {
                r.x.as_deref().filter(|_| r.s).ok_or_else(|| {
                    Error::Contract("covariate nuisances need annotated records only".into())
                })
            })
            .collect::<Result<_>>()?,
    };
    let t: Vec<bool> = records.iter().map(|r| r.t).collect();
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    fit_nuisances_on(&inputs, &t, &y, input_space, cfg, input_space.as_str())
}

/// Doubly robust pseudo-outcome for one unit. `pi_hat` must already be
/// clipped away from 0 and 1.
pub fn dr_pseudo_outcome(t: bool, y: f64, pi_hat: f64, mu1_hat: f64, mu0_hat: f64) -> f64 {
    let t = t_value(t);
    let w1 = t / pi_hat;
    let w0 = (1.0 - t) / (1.0 - pi_hat);
    (w1 - w0) * y + (1.0 - w1) * mu1_hat - (1.0 - w0) * mu0_hat
}

pub fn clip_propensity(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

pub fn dr_pseudo_outcomes<N: Nuisance + ?Sized, R: AsRef<[f64]>>(
    nuisance: &N,
    inputs: &[R],
    t: &[bool],
    y: &[f64],
    clip_eps: f64,
) -> Vec<f64> {
    inputs
        .iter()
        .zip(t)
        .zip(y)
        .map(|((x, &tt), &yy)| {
            let x = x.as_ref();
            let pi = clip_propensity(nuisance.propensity(x), clip_eps);
            dr_pseudo_outcome(tt, yy, pi, nuisance.outcome(x, true), nuisance.outcome(x, false))
        })
        .collect()
}

/// Sampling-bias adjusted target. `p_s` is floored at `p_floor` before it
/// divides; when `s` is false the residual term vanishes and `delta_x` is
/// ignored.
pub fn adjusted_pseudo_outcome(
    s: bool,
    delta_x: Option<f64>,
    tau_hat_phi: f64,
    p_s: f64,
    p_floor: f64,
) -> Result<f64> {
    if !s {
        return Ok(tau_hat_phi);
    }
    let dx = delta_x.ok_or_else(|| {
        Error::Contract("annotated record without a doubly robust pseudo-outcome".into())
    })?;
    let p = p_s.clamp(p_floor, 1.0);
    if p == 1.0 {
        // Algebraically identical, but avoids rounding in `(dx - tau) + tau`.
        return Ok(dx);
    }
    Ok((dx - tau_hat_phi) / p + tau_hat_phi)
}

/// Adjusted targets for every record. Pseudo-outcomes come from
/// covariate-space nuisances on the annotated records.
pub fn adjusted_targets<N, E>(
    records: &[Record],
    p_s: &[f64],
    tau_hat: &E,
    nuisance: &N,
    clip_eps: f64,
    p_floor: f64,
) -> Result<Vec<f64>>
where
    N: Nuisance + ?Sized,
    E: EffectModel + ?Sized,
{
    if records.len() != p_s.len() {
        return Err(Error::Contract(format!(
            "{} records but {} annotation probabilities",
            records.len(),
            p_s.len()
        )));
    }
    records
        .iter()
        .zip(p_s)
        .map(|(r, &p)| {
            let dx = match (r.s, &r.x) {
                (true, Some(x)) => {
                    let pi = clip_propensity(nuisance.propensity(x), clip_eps);
                    Some(dr_pseudo_outcome(
                        r.t,
                        r.y,
                        pi,
                        nuisance.outcome(x, true),
                        nuisance.outcome(x, false),
                    ))
                }
                _ => None,
            };
            adjusted_pseudo_outcome(r.s, dx, tau_hat.effect(&r.phi), p, p_floor)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Covariate sampling for information extraction

/// Per-covariate model of `x | phi`: Bernoulli probabilities for binary
/// covariates and point values for continuous ones. Covariates are
/// independent given `phi`, except that an exclusive pair is drawn as a
/// three-way categorical (neither, first, second) proportional to the
/// independent-product probabilities of those outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDistribution {
    pub kinds: Vec<CovariateKind>,
    /// Probability of 1 for binary covariates, value for continuous ones.
    pub values: Vec<f64>,
    pub exclusive_pairs: Vec<(usize, usize)>,
}

impl CovariateDistribution {
    fn pair_of(&self, j: usize) -> Option<(usize, usize)> {
        self.exclusive_pairs.iter().copied().find(|&(a, b)| a == j || b == j)
    }

    /// Probabilities of (neither, first, second) for an exclusive pair.
    pub fn pair_probabilities(&self, a: usize, b: usize) -> [f64; 3] {
        let (qa, qb) = (self.values[a], self.values[b]);
        let w = [(1.0 - qa) * (1.0 - qb), qa * (1.0 - qb), (1.0 - qa) * qb];
        let z: f64 = w.iter().sum();
        [w[0] / z, w[1] / z, w[2] / z]
    }

    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        for j in 0..self.values.len() {
            match self.kinds[j] {
                CovariateKind::Continuous => out[j] = self.values[j],
                CovariateKind::Binary => match self.pair_of(j) {
                    None => out[j] = if rng.random::<f64>() < self.values[j] { 1.0 } else { 0.0 },
                    Some((a, b)) if j == a => {
                        let [p0, pa, _] = self.pair_probabilities(a, b);
                        let u: f64 = rng.random();
                        out[a] = if u >= p0 && u < p0 + pa { 1.0 } else { 0.0 };
                        out[b] = if u >= p0 + pa { 1.0 } else { 0.0 };
                    }
                    Some(_) => {}
                },
            }
        }
    }
}

/// Average of `tau` over `draws` covariate vectors sampled from `dist`.
pub fn monte_carlo_effect<F: Fn(&[f64]) -> f64>(
    dist: &CovariateDistribution,
    tau: F,
    draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = seed::rng(seed);
    let mut x = vec![0.0; dist.values.len()];
    let mut total = 0.0;
    for _ in 0..draws {
        dist.sample_into(&mut rng, &mut x);
        total += tau(&x);
    }
    total / draws as f64
}

// ---------------------------------------------------------------------------
// Estimators

#[derive(Debug, Clone, PartialEq)]
pub struct PlugIn {
    pub nuisances: NuisanceSet,
    pub regressor: MlpModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectRegression {
    pub nuisances: NuisanceSet,
    pub regressor: MlpModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoExtraction {
    pub nuisances: NuisanceSet,
    /// Conventional covariate-space effect model.
    pub tau_x: MlpModel,
    /// One model per covariate: sigmoid head for binary, identity for
    /// continuous.
    pub covariate_models: Vec<MlpModel>,
    pub kinds: Vec<CovariateKind>,
    pub exclusive_pairs: Vec<(usize, usize)>,
    pub draws: usize,
    pub mc_seed: u64,
}

impl InfoExtraction {
    pub fn covariate_distribution(&self, phi: &[f64]) -> CovariateDistribution {
        CovariateDistribution {
            kinds: self.kinds.clone(),
            values: self.covariate_models.iter().map(|m| m.predict(phi)).collect(),
            exclusive_pairs: self.exclusive_pairs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adjusted {
    pub base: Box<EffectEstimator>,
    pub regressor: MlpModel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EffectEstimator {
    PlugIn(PlugIn),
    InfoExtraction(InfoExtraction),
    DirectRegression(DirectRegression),
    Adjusted(Adjusted),
}

impl EffectEstimator {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EffectEstimator::PlugIn(_) => EstimatorKind::PlugIn,
            EffectEstimator::InfoExtraction(_) => EstimatorKind::InfoExtraction,
            EffectEstimator::DirectRegression(_) => EstimatorKind::DirectRegression,
            EffectEstimator::Adjusted(_) => EstimatorKind::Adjusted,
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            EffectEstimator::PlugIn(e) => e.regressor.input_dim(),
            EffectEstimator::DirectRegression(e) => e.regressor.input_dim(),
            EffectEstimator::Adjusted(e) => e.regressor.input_dim(),
            EffectEstimator::InfoExtraction(e) => e.covariate_models[0].input_dim(),
        }
    }

    /// Effect estimate from a representation alone.
    pub fn predict(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: phi.len(),
            });
        }
        Ok(match self {
            EffectEstimator::PlugIn(e) => e.regressor.predict(phi),
            EffectEstimator::DirectRegression(e) => e.regressor.predict(phi),
            EffectEstimator::Adjusted(e) => e.regressor.predict(phi),
            EffectEstimator::InfoExtraction(e) => {
                let dist = e.covariate_distribution(phi);
                monte_carlo_effect(&dist, |x| e.tau_x.predict(x), e.draws, e.mc_seed)
            }
        })
    }

    pub fn predict_batch<R: AsRef<[f64]>>(&self, phis: &[R]) -> Result<Vec<f64>> {
        phis.iter().map(|p| self.predict(p.as_ref())).collect()
    }

    /// Covariate-space nuisances, for estimators that have them.
    pub fn covariate_nuisances(&self) -> Option<&NuisanceSet> {
        match self {
            EffectEstimator::InfoExtraction(e) => Some(&e.nuisances),
            EffectEstimator::DirectRegression(e) => Some(&e.nuisances),
            EffectEstimator::Adjusted(e) => e.base.covariate_nuisances(),
            EffectEstimator::PlugIn(_) => None,
        }
    }
}

impl EffectModel for EffectEstimator {
    fn effect(&self, phi: &[f64]) -> f64 {
        self.predict(phi).expect("representation width checked by caller")
    }
}

fn annotated(records: &[Record]) -> Result<Vec<(&Record, &[f64])>> {
    let rows: Vec<(&Record, &[f64])> = records
        .iter()
        .filter(|r| r.s)
        .map(|r| {
            r.x.as_deref()
                .map(|x| (r, x))
                .ok_or_else(|| Error::Contract("annotated record is missing covariates".into()))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("no annotated records".into()));
    }
    Ok(rows)
}

/// Nuisances and pseudo-outcomes in covariate space over the annotated
/// records.
fn covariate_stage<'a>(
    rows: &[(&'a Record, &'a [f64])],
    cfg: &EstimatorConfig,
) -> Result<(NuisanceSet, Vec<f64>)> {
    let xs: Vec<&[f64]> = rows.iter().map(|(_, x)| *x).collect();
    let t: Vec<bool> = rows.iter().map(|(r, _)| r.t).collect();
    let y: Vec<f64> = rows.iter().map(|(r, _)| r.y).collect();
    let nuisances = fit_nuisances_on(&xs, &t, &y, InputSpace::Covariates, cfg, "covariates")?;
    let delta = dr_pseudo_outcomes(&nuisances, &xs, &t, &y, cfg.clip_eps);
    Ok((nuisances, delta))
}

pub fn fit_plug_in(records: &[Record], cfg: &EstimatorConfig) -> Result<EffectEstimator> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InsufficientData("no training records".into()));
    }
    let phis: Vec<&[f64]> = records.iter().map(|r| r.phi.as_slice()).collect();
    let t: Vec<bool> = records.iter().map(|r| r.t).collect();
    let y: Vec<f64> = records.iter().map(|r| r.y).collect();
    let nuisances = fit_nuisances_on(&phis, &t, &y, InputSpace::Representation, cfg, "plug_in")?;
    let delta = dr_pseudo_outcomes(&nuisances, &phis, &t, &y, cfg.clip_eps);
    let regressor = cfg.regress("plug_in/regressor", &phis, &delta)?;
    Ok(EffectEstimator::PlugIn(PlugIn {
        nuisances,
        regressor,
    }))
}

pub fn fit_direct_regression(records: &[Record], cfg: &EstimatorConfig) -> Result<EffectEstimator> {
    cfg.validate()?;
    let rows = annotated(records)?;
    let (nuisances, delta) = covariate_stage(&rows, cfg)?;
    let phis: Vec<&[f64]> = rows.iter().map(|(r, _)| r.phi.as_slice()).collect();
    let regressor = cfg.regress("direct_regression/regressor", &phis, &delta)?;
    Ok(EffectEstimator::DirectRegression(DirectRegression {
        nuisances,
        regressor,
    }))
}

pub fn fit_info_extraction(
    records: &[Record],
    layout: &CovariateLayout,
    cfg: &EstimatorConfig,
) -> Result<EffectEstimator> {
    cfg.validate()?;
    let rows = annotated(records)?;
    if let Some((_, x)) = rows.iter().find(|(_, x)| x.len() != layout.len()) {
        return Err(Error::Shape {
            expected: layout.len(),
            got: x.len(),
        });
    }
    let (nuisances, delta) = covariate_stage(&rows, cfg)?;
    let xs: Vec<&[f64]> = rows.iter().map(|(_, x)| *x).collect();
    let tau_x = cfg.regress("info_extraction/tau_x", &xs, &delta)?;
    let phis: Vec<&[f64]> = rows.iter().map(|(r, _)| r.phi.as_slice()).collect();
    let covariate_models = layout
        .kinds
        .iter()
        .enumerate()
        .map(|(j, kind)| {
            let target: Vec<f64> = xs.iter().map(|x| x[j]).collect();
            let role = format!("info_extraction/covariate_{}", layout.names[j]);
            match kind {
                CovariateKind::Binary => cfg.classify(&role, &phis, &target),
                CovariateKind::Continuous => cfg.regress(&role, &phis, &target),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EffectEstimator::InfoExtraction(InfoExtraction {
        nuisances,
        tau_x,
        covariate_models,
        kinds: layout.kinds.clone(),
        exclusive_pairs: layout.exclusive_pairs.clone(),
        draws: cfg.mc_draws,
        mc_seed: seed::derive_str(cfg.seed, "info_extraction/draws"),
    }))
}

/// Regresses the adjusted target on `phi` over every training record.
/// `base` supplies both the initial effect estimate and the covariate
/// nuisances for the pseudo-outcomes.
pub fn fit_adjusted(
    records: &[Record],
    base: EffectEstimator,
    p_s: &[f64],
    cfg: &EstimatorConfig,
) -> Result<EffectEstimator> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InsufficientData("no training records".into()));
    }
    let nuisances = base.covariate_nuisances().ok_or_else(|| {
        Error::Config(format!(
            "adjusted estimator needs a base with covariate nuisances, got {}",
            base.kind().as_str()
        ))
    })?;
    let targets = adjusted_targets(records, p_s, &base, nuisances, cfg.clip_eps, cfg.p_s_floor)?;
    let phis: Vec<&[f64]> = records.iter().map(|r| r.phi.as_slice()).collect();
    let annotated = records.iter().filter(|r| r.s).count();
    let mut train = cfg.train_config(Loss::Mse, "adjusted/regressor");
    if annotated < cfg.unstable_threshold {
        train.optimizer = cfg.unstable_optimizer;
        train.batch_size = cfg.unstable_batch_size;
    }
    let regressor = cfg.fit_model("adjusted/regressor", &phis, &targets, Head::Identity, train)?;
    Ok(EffectEstimator::Adjusted(Adjusted {
        base: Box::new(base),
        regressor,
    }))
}

// ---------------------------------------------------------------------------
// Bundles: a directory of model files plus a `manifest.txt` of `key=value`
// lines.

fn kind_str(k: CovariateKind) -> &'static str {
    match k {
        CovariateKind::Binary => "binary",
        CovariateKind::Continuous => "continuous",
    }
}

fn save_nuisances(n: &NuisanceSet, dir: &Path, manifest: &mut String) -> Result<()> {
    n.propensity.save(&dir.join("propensity.mlp"))?;
    n.mu0.save(&dir.join("mu0.mlp"))?;
    n.mu1.save(&dir.join("mu1.mlp"))?;
    writeln!(manifest, "input_space={}", n.input_space.as_str()).expect("string write");
    Ok(())
}

fn load_nuisances(dir: &Path, manifest: &BTreeMap<String, String>) -> Result<NuisanceSet> {
    let input_space = match manifest_get(manifest, "input_space")? {
        "covariates" => InputSpace::Covariates,
        "representation" => InputSpace::Representation,
        other => return Err(Error::format("manifest", format!("bad input_space {other:?}"))),
    };
    Ok(NuisanceSet {
        propensity: MlpModel::load(&dir.join("propensity.mlp"))?,
        mu0: MlpModel::load(&dir.join("mu0.mlp"))?,
        mu1: MlpModel::load(&dir.join("mu1.mlp"))?,
        input_space,
    })
}

fn manifest_get<'a>(m: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    m.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::format("manifest", format!("missing key {key}")))
}

fn manifest_parse<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T> {
    manifest_get(m, key)?
        .parse()
        .map_err(|_| Error::format("manifest", format!("bad value for {key}")))
}

impl EffectEstimator {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = format!("kind={}\n", self.kind().as_str());
        match self {
            EffectEstimator::PlugIn(PlugIn {
                nuisances,
                regressor,
            })
            | EffectEstimator::DirectRegression(DirectRegression {
                nuisances,
                regressor,
            }) => {
                save_nuisances(nuisances, dir, &mut manifest)?;
                regressor.save(&dir.join("regressor.mlp"))?;
            }
            EffectEstimator::InfoExtraction(e) => {
                save_nuisances(&e.nuisances, dir, &mut manifest)?;
                e.tau_x.save(&dir.join("tau_x.mlp"))?;
                for (j, m) in e.covariate_models.iter().enumerate() {
                    m.save(&dir.join(format!("covariate_{j}.mlp")))?;
                }
                let kinds: Vec<&str> = e.kinds.iter().map(|k| kind_str(*k)).collect();
                let pairs: Vec<String> = e.exclusive_pairs.iter().map(|(a, b)| format!("{a}:{b}")).collect();
                writeln!(manifest, "covariate_kinds={}", kinds.join(",")).expect("string write");
                writeln!(manifest, "exclusive_pairs={}", pairs.join(",")).expect("string write");
                writeln!(manifest, "draws={}", e.draws).expect("string write");
                writeln!(manifest, "mc_seed={}", e.mc_seed).expect("string write");
            }
            EffectEstimator::Adjusted(e) => {
                e.base.save(&dir.join("base"))?;
                e.regressor.save(&dir.join("regressor.mlp"))?;
            }
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let mut manifest = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format("manifest", format!("bad line {line:?}")))?;
            manifest.insert(k.trim().to_string(), v.trim().to_string());
        }
        let kind = EstimatorKind::parse(manifest_get(&manifest, "kind")?)
            .map_err(|e| Error::format("manifest", e.to_string()))?;
        Ok(match kind {
            EstimatorKind::PlugIn => EffectEstimator::PlugIn(PlugIn {
                nuisances: load_nuisances(dir, &manifest)?,
                regressor: MlpModel::load(&dir.join("regressor.mlp"))?,
            }),
            EstimatorKind::DirectRegression => EffectEstimator::DirectRegression(DirectRegression {
                nuisances: load_nuisances(dir, &manifest)?,
                regressor: MlpModel::load(&dir.join("regressor.mlp"))?,
            }),
            EstimatorKind::InfoExtraction => {
                let kinds = manifest_get(&manifest, "covariate_kinds")?
                    .split(',')
                    .map(|k| match k {
                        "binary" => Ok(CovariateKind::Binary),
                        "continuous" => Ok(CovariateKind::Continuous),
                        other => Err(Error::format("manifest", format!("bad covariate kind {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let exclusive_pairs = manifest_get(&manifest, "exclusive_pairs")?
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|p| {
                        p.split_once(':')
                            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                            .ok_or_else(|| Error::format("manifest", format!("bad pair {p:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let covariate_models = (0..kinds.len())
                    .map(|j| MlpModel::load(&dir.join(format!("covariate_{j}.mlp"))))
                    .collect::<Result<Vec<_>>>()?;
                EffectEstimator::InfoExtraction(InfoExtraction {
                    nuisances: load_nuisances(dir, &manifest)?,
                    tau_x: MlpModel::load(&dir.join("tau_x.mlp"))?,
                    covariate_models,
                    kinds,
                    exclusive_pairs,
                    draws: manifest_parse(&manifest, "draws")?,
                    mc_seed: manifest_parse(&manifest, "mc_seed")?,
                })
            }
            EstimatorKind::Adjusted => EffectEstimator::Adjusted(Adjusted {
                base: Box::new(EffectEstimator::load(&dir.join("base"))?),
                regressor: MlpModel::load(&dir.join("regressor.mlp"))?,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dr_identities_at_even_odds() {
        let (mu1, mu0) = (1.7, -0.4);
        assert!((dr_pseudo_outcome(true, mu1, 0.5, mu1, mu0) - (mu1 - mu0)).abs() < 1e-12);
        assert!((dr_pseudo_outcome(false, mu0, 0.5, mu1, mu0) - (mu1 - mu0)).abs() < 1e-12);
    }

    #[test]
    fn dr_worked_example() {
        assert!((dr_pseudo_outcome(true, 2.0, 0.25, 1.0, 0.5) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn adjusted_target_cases() {
        assert_eq!(adjusted_pseudo_outcome(false, None, 0.7, 0.3, 0.005).unwrap(), 0.7);
        assert_eq!(adjusted_pseudo_outcome(false, Some(9.0), 0.7, 0.3, 0.005).unwrap(), 0.7);
        assert_eq!(adjusted_pseudo_outcome(true, Some(2.5), 0.7, 1.0, 0.005).unwrap(), 2.5);
        assert_eq!(adjusted_pseudo_outcome(true, Some(2.0), 1.0, 0.25, 0.005).unwrap(), 5.0);
        assert!(matches!(
            adjusted_pseudo_outcome(true, None, 1.0, 0.25, 0.005),
            Err(Error::Contract(_))
        ));
        // Floor: 1e-6 is treated as 0.005.
        let v = adjusted_pseudo_outcome(true, Some(1.0), 0.0, 1e-6, 0.005).unwrap();
        assert!((v - 200.0).abs() < 1e-9);
    }

    #[test]
    fn propensity_clipping() {
        assert_eq!(clip_propensity(0.0, 0.01), 0.01);
        assert_eq!(clip_propensity(1.0, 0.01), 0.99);
        assert_eq!(clip_propensity(0.3, 0.01), 0.3);
    }

    #[test]
    fn exclusive_pair_probabilities_sum_to_one() {
        let dist = CovariateDistribution {
            kinds: vec![CovariateKind::Binary; 2],
            values: vec![0.7, 0.6],
            exclusive_pairs: vec![(0, 1)],
        };
        let p = dist.pair_probabilities(0, 1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut rng = seed::rng(1);
        let mut x = [0.0; 2];
        for _ in 0..1000 {
            dist.sample_into(&mut rng, &mut x);
            assert!(x[0] + x[1] <= 1.0);
        }
    }

    #[test]
    fn estimator_kind_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(EstimatorKind::parse(k.as_str()).unwrap(), k);
        }
        assert!(EstimatorKind::parse("t_learner").is_err());
    }

    #[test]
    fn config_rejects_zero_draws() {
        let cfg = EstimatorConfig {
            mc_draws: 0,
            ..EstimatorConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
