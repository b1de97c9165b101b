//! Synthetic benchmark generators.
//!
//! Two data-generating processes with known ground-truth effects:
//!
//! * **SynSUM-like**: respiratory primary-care encounters. Symptoms confound
//!   an antibiotics prescription and a Poisson illness duration.
//! * **MIMIC-like**: critical-care admissions. Sex, age and four diagnoses
//!   confound a binary treatment and a Gaussian outcome, with a strongly
//!   negative effect for men without hypertension.
//!
//! The unstructured part of each record (clinical text in the original
//! benchmarks) is replaced by a seeded random encoder over the text-visible
//! covariates; see [`Encoder`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::seed;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Synsum,
    Mimic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    Binary,
    Continuous,
}

/// Shape of the structured covariate vector `x` of a benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateLayout {
    pub names: Vec<&'static str>,
    pub kinds: Vec<CovariateKind>,
    /// Pairs of binary indicators that are never both 1 (a three-level
    /// variable encoded as two indicators).
    pub exclusive_pairs: Vec<(usize, usize)>,
}

impl CovariateLayout {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| *n == name)
    }
}

pub const SYNSUM_COVARIATES: [&str; 8] = [
    "dysp",
    "cough",
    "pain",
    "nasal",
    "fever_low",
    "fever_high",
    "self_empl",
    "policy",
];
pub const SYNSUM_BACKGROUND: [&str; 6] =
    ["self_empl", "asthma", "smoking", "copd", "winter", "hay_fever"];
pub const SYNSUM_TEXT_COVARIATES: usize = 6;

pub const MIMIC_COVARIATES: [&str; 6] = ["sex", "age", "hyp", "cor", "art", "con"];
pub const MIMIC_BACKGROUND: [&str; 2] = ["age", "sex"];
pub const MIMIC_TEXT_COVARIATES: usize = 4;

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Synsum => "synsum",
            Benchmark::Mimic => "mimic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synsum" => Ok(Benchmark::Synsum),
            "mimic" => Ok(Benchmark::Mimic),
            other => Err(Error::Config(format!(
                "benchmark: unknown value {other:?} (expected synsum or mimic)"
            ))),
        }
    }

    pub fn layout(self) -> CovariateLayout {
        match self {
            Benchmark::Synsum => CovariateLayout {
                names: SYNSUM_COVARIATES.to_vec(),
                kinds: vec![CovariateKind::Binary; 8],
                exclusive_pairs: vec![(4, 5)],
            },
            Benchmark::Mimic => {
                let mut kinds = vec![CovariateKind::Binary; 6];
                kinds[1] = CovariateKind::Continuous;
                CovariateLayout {
                    names: MIMIC_COVARIATES.to_vec(),
                    kinds,
                    exclusive_pairs: Vec::new(),
                }
            }
        }
    }

    /// Tabular variables appended to the embedding in `phi`.
    pub fn background_names(self) -> &'static [&'static str] {
        match self {
            Benchmark::Synsum => &SYNSUM_BACKGROUND,
            Benchmark::Mimic => &MIMIC_BACKGROUND,
        }
    }

    /// Number of covariates that the unstructured representation encodes.
    pub fn text_covariate_count(self) -> usize {
        match self {
            Benchmark::Synsum => SYNSUM_TEXT_COVARIATES,
            Benchmark::Mimic => MIMIC_TEXT_COVARIATES,
        }
    }

    /// Default annotation targets for a training set of `train_size`
    /// records. The SynSUM levels are absolute for 9000 training records;
    /// the MIMIC levels are for roughly 32000 and are scaled proportionally.
    /// Levels that coincide after rounding appear once.
    pub fn default_levels(self, train_size: usize) -> Vec<usize> {
        let (levels, reference): (&[usize], f64) = match self {
            Benchmark::Synsum => (&[4400, 2200, 1100, 730, 550, 400, 315, 220], 9000.0),
            Benchmark::Mimic => (
                &[16000, 8000, 4000, 2650, 2000, 1450, 1150, 800],
                32000.0,
            ),
        };
        let scale = train_size as f64 / reference;
        let mut out: Vec<usize> = levels
            .iter()
            .map(|&l| ((l as f64 * scale).round() as usize).max(1))
            .collect();
        // Small training sets can round neighbouring levels together.
        out.dedup();
        out
    }

    pub fn true_propensity(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Synsum => SynsumCovariates::from_vector(x).propensity(),
            Benchmark::Mimic => MimicCovariates::from_vector(x).propensity(),
        }
    }

    pub fn true_outcome_mean(self, x: &[f64], t: bool) -> f64 {
        match self {
            Benchmark::Synsum => SynsumCovariates::from_vector(x).outcome_rate(t),
            Benchmark::Mimic => MimicCovariates::from_vector(x).outcome_mean(t),
        }
    }

    /// For MIMIC this is the closed form (-5 or 1.3), which can differ from
    /// the difference of outcome means by rounding.
    pub fn true_cate(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Synsum => SynsumCovariates::from_vector(x).cate(),
            Benchmark::Mimic => MimicCovariates::from_vector(x).cate(),
        }
    }
}

// ---------------------------------------------------------------------------
// SynSUM-like

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynsumCovariates {
    pub dysp: bool,
    pub cough: bool,
    pub pain: bool,
    pub nasal: bool,
    pub fever_low: bool,
    pub fever_high: bool,
    pub self_empl: bool,
    pub policy: bool,
    pub asthma: bool,
    pub smoking: bool,
    pub copd: bool,
    pub hay_fever: bool,
    pub winter: bool,
}

impl SynsumCovariates {
    /// Estimator-facing covariates, in [`SYNSUM_COVARIATES`] order.
    pub fn to_vector(&self) -> Vec<f64> {
        [
            self.dysp,
            self.cough,
            self.pain,
            self.nasal,
            self.fever_low,
            self.fever_high,
            self.self_empl,
            self.policy,
        ]
        .iter()
        .map(|b| ind(*b))
        .collect()
    }

    /// Reads the eight structured covariates; background conditions other
    /// than `self_empl` are left false.
    pub fn from_vector(x: &[f64]) -> Self {
        assert_eq!(x.len(), SYNSUM_COVARIATES.len(), "synsum covariate width");
        let b = |i: usize| x[i] > 0.5;
        Self {
            dysp: b(0),
            cough: b(1),
            pain: b(2),
            nasal: b(3),
            fever_low: b(4),
            fever_high: b(5),
            self_empl: b(6),
            policy: b(7),
            ..Self::default()
        }
    }

    pub fn text_features(&self) -> [f64; 6] {
        [
            ind(self.dysp),
            ind(self.cough),
            ind(self.pain),
            ind(self.nasal),
            ind(self.fever_low),
            ind(self.fever_high),
        ]
    }

    pub fn background(&self) -> [f64; 6] {
        [
            ind(self.self_empl),
            ind(self.asthma),
            ind(self.smoking),
            ind(self.copd),
            ind(self.winter),
            ind(self.hay_fever),
        ]
    }

    pub fn propensity(&self) -> f64 {
        sigmoid(
            -3.0 + 1.0 * ind(self.policy)
                + 0.8 * ind(self.dysp)
                + 0.665 * ind(self.cough)
                + 0.665 * ind(self.pain)
                + 0.9 * ind(self.fever_low)
                + 2.25 * ind(self.fever_high),
        )
    }

    /// Poisson rate of illness duration under treatment `t`.
    pub fn outcome_rate(&self, t: bool) -> f64 {
        let (dysp, cough, pain, nasal) = (
            ind(self.dysp),
            ind(self.cough),
            ind(self.pain),
            ind(self.nasal),
        );
        let (low, high, se) = (
            ind(self.fever_low),
            ind(self.fever_high),
            ind(self.self_empl),
        );
        if t {
            (0.16 + 0.51 * dysp + 0.42 * cough + 0.26 * pain + 0.0051 * nasal + 0.24 * low
                + 0.57 * high
                - 0.5 * se)
                .exp()
        } else {
            (0.010 + 0.64 * dysp + 0.35 * cough + 0.47 * pain + 0.011 * nasal + 0.81 * low
                + 1.23 * high
                - 0.5 * se)
                .exp()
        }
    }

    pub fn cate(&self) -> f64 {
        self.outcome_rate(true) - self.outcome_rate(false)
    }
}

/// Logistic dependence of a symptom on the background conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymptomLogit {
    pub intercept: f64,
    pub asthma: f64,
    pub smoking: f64,
    pub copd: f64,
    pub hay_fever: f64,
    pub winter: f64,
}

impl SymptomLogit {
    const fn new(intercept: f64, asthma: f64, smoking: f64, copd: f64, hay_fever: f64, winter: f64) -> Self {
        Self {
            intercept,
            asthma,
            smoking,
            copd,
            hay_fever,
            winter,
        }
    }

    fn prob(&self, c: &SynsumCovariates) -> f64 {
        sigmoid(
            self.intercept
                + self.asthma * ind(c.asthma)
                + self.smoking * ind(c.smoking)
                + self.copd * ind(c.copd)
                + self.hay_fever * ind(c.hay_fever)
                + self.winter * ind(c.winter),
        )
    }
}

/// Priors over the SynSUM-like background and symptom variables. Treatment
/// and outcome laws do not depend on these choices, only the covariate mix
/// does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynsumPriors {
    pub asthma: f64,
    pub smoking: f64,
    pub copd: f64,
    pub hay_fever: f64,
    pub winter: f64,
    pub policy: f64,
    pub self_empl: f64,
    pub dysp: SymptomLogit,
    pub cough: SymptomLogit,
    pub pain: SymptomLogit,
    pub nasal: SymptomLogit,
    /// Probabilities of (no fever, low fever, high fever).
    pub fever: [f64; 3],
}

impl Default for SynsumPriors {
    fn default() -> Self {
        Self {
            asthma: 0.1,
            smoking: 0.25,
            copd: 0.05,
            hay_fever: 0.1,
            winter: 0.5,
            policy: 0.5,
            self_empl: 0.2,
            dysp: SymptomLogit::new(-1.5, 1.2, 0.8, 1.5, 0.0, 0.3),
            cough: SymptomLogit::new(-0.5, 0.3, 0.6, 0.8, 0.0, 0.6),
            pain: SymptomLogit::new(-1.2, 0.2, 0.2, 0.4, 0.0, 0.3),
            nasal: SymptomLogit::new(-0.8, 0.0, 0.0, 0.0, 1.5, 0.5),
            fever: [0.6, 0.25, 0.15],
        }
    }
}

impl SynsumPriors {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.asthma,
            self.smoking,
            self.copd,
            self.hay_fever,
            self.winter,
            self.policy,
            self.self_empl,
        ];
        if probs.iter().chain(&self.fever).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("synsum priors: probabilities must lie in [0, 1]".into()));
        }
        if (self.fever.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("synsum priors: fever probabilities must sum to 1".into()));
        }
        Ok(())
    }

    pub fn sample_covariates<R: Rng>(&self, rng: &mut R) -> SynsumCovariates {
        let mut c = SynsumCovariates {
            asthma: rng.random_bool(self.asthma),
            smoking: rng.random_bool(self.smoking),
            copd: rng.random_bool(self.copd),
            hay_fever: rng.random_bool(self.hay_fever),
            winter: rng.random_bool(self.winter),
            policy: rng.random_bool(self.policy),
            self_empl: rng.random_bool(self.self_empl),
            ..SynsumCovariates::default()
        };
        c.dysp = rng.random_bool(self.dysp.prob(&c));
        c.cough = rng.random_bool(self.cough.prob(&c));
        c.pain = rng.random_bool(self.pain.prob(&c));
        c.nasal = rng.random_bool(self.nasal.prob(&c));
        let u: f64 = rng.random();
        if u >= self.fever[0] {
            if u < self.fever[0] + self.fever[1] {
                c.fever_low = true;
            } else {
                c.fever_high = true;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draw<C> {
    pub covariates: C,
    pub t: bool,
    pub y: f64,
    pub true_cate: f64,
}

fn synsum_draw(priors: &SynsumPriors, rng: &mut ChaCha8Rng) -> Draw<SynsumCovariates> {
    let c = priors.sample_covariates(rng);
    let t = rng.random_bool(c.propensity());
    let y = Poisson::new(c.outcome_rate(t))
        .expect("positive poisson rate")
        .sample(rng);
    Draw {
        true_cate: c.cate(),
        covariates: c,
        t,
        y,
    }
}

pub fn synsum_sample(n: usize, seed: u64) -> Vec<Draw<SynsumCovariates>> {
    synsum_sample_with(&SynsumPriors::default(), n, seed)
}

pub fn synsum_sample_with(priors: &SynsumPriors, n: usize, seed: u64) -> Vec<Draw<SynsumCovariates>> {
    (0..n)
        .map(|i| synsum_draw(priors, &mut seed::stream_rng(seed, i as u64)))
        .collect()
}

// ---------------------------------------------------------------------------
// MIMIC-like

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MimicCovariates {
    /// 1 = male.
    pub sex: bool,
    pub age_norm: f64,
    pub hyp: bool,
    pub cor: bool,
    pub art: bool,
    pub con: bool,
}

impl MimicCovariates {
    pub fn to_vector(&self) -> Vec<f64> {
        vec![
            ind(self.sex),
            self.age_norm,
            ind(self.hyp),
            ind(self.cor),
            ind(self.art),
            ind(self.con),
        ]
    }

    pub fn from_vector(x: &[f64]) -> Self {
        assert_eq!(x.len(), MIMIC_COVARIATES.len(), "mimic covariate width");
        Self {
            sex: x[0] > 0.5,
            age_norm: x[1],
            hyp: x[2] > 0.5,
            cor: x[3] > 0.5,
            art: x[4] > 0.5,
            con: x[5] > 0.5,
        }
    }

    pub fn text_features(&self) -> [f64; 4] {
        [ind(self.hyp), ind(self.cor), ind(self.art), ind(self.con)]
    }

    pub fn background(&self) -> [f64; 2] {
        [self.age_norm, ind(self.sex)]
    }

    fn baseline(&self) -> f64 {
        0.9 * ind(self.sex)
            + 0.9 * self.age_norm
            + ind(self.hyp)
            + ind(self.cor)
            + ind(self.art)
            + ind(self.con)
    }

    pub fn propensity(&self) -> f64 {
        sigmoid(self.baseline())
    }

    /// Noise-free outcome mean under treatment `t`.
    pub fn outcome_mean(&self, t: bool) -> f64 {
        let t = ind(t);
        self.baseline() + 1.3 * t - 6.3 * t * ind(self.sex) * (1.0 - ind(self.hyp))
    }

    pub fn cate(&self) -> f64 {
        1.3 - 6.3 * ind(self.sex) * (1.0 - ind(self.hyp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimicPriors {
    pub male: f64,
    pub hyp: f64,
    pub cor: f64,
    pub art: f64,
    pub con: f64,
    /// Loading of each diagnosis logit on a shared standard-normal severity.
    pub severity_loading: f64,
}

impl Default for MimicPriors {
    fn default() -> Self {
        Self {
            male: 0.5,
            hyp: 0.4,
            cor: 0.3,
            art: 0.25,
            con: 0.25,
            severity_loading: 0.5,
        }
    }
}

impl MimicPriors {
    pub fn validate(&self) -> Result<()> {
        let open = [self.hyp, self.cor, self.art, self.con];
        if !(0.0..=1.0).contains(&self.male) || open.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config(
                "mimic priors: diagnosis probabilities must lie in (0, 1)".into(),
            ));
        }
        if !self.severity_loading.is_finite() {
            return Err(Error::Config("mimic priors: severity_loading must be finite".into()));
        }
        Ok(())
    }

    pub fn sample_covariates<R: Rng>(&self, rng: &mut R) -> MimicCovariates {
        let sex = rng.random_bool(self.male);
        let age_norm: f64 = rng.random();
        let severity: f64 = StandardNormal.sample(rng);
        let mut diag = |p: f64| {
            let q = sigmoid(logit(p) + self.severity_loading * severity);
            rng.random_bool(q)
        };
        MimicCovariates {
            sex,
            age_norm,
            hyp: diag(self.hyp),
            cor: diag(self.cor),
            art: diag(self.art),
            con: diag(self.con),
        }
    }
}

fn mimic_draw(priors: &MimicPriors, rng: &mut ChaCha8Rng) -> Draw<MimicCovariates> {
    let c = priors.sample_covariates(rng);
    let t = rng.random_bool(c.propensity());
    let noise: f64 = StandardNormal.sample(rng);
    Draw {
        true_cate: c.cate(),
        y: c.outcome_mean(t) + noise,
        covariates: c,
        t,
    }
}

pub fn mimic_sample(n: usize, seed: u64) -> Vec<Draw<MimicCovariates>> {
    mimic_sample_with(&MimicPriors::default(), n, seed)
}

pub fn mimic_sample_with(priors: &MimicPriors, n: usize, seed: u64) -> Vec<Draw<MimicCovariates>> {
    (0..n)
        .map(|i| mimic_draw(priors, &mut seed::stream_rng(seed, i as u64)))
        .collect()
}

// ---------------------------------------------------------------------------
// Representation encoder

/// Per-covariate probability that a present covariate shows up in the
/// unstructured record. A single value applies to every covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordProb {
    Uniform(f64),
    PerCovariate(Vec<f64>),
}

impl RecordProb {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            RecordProb::Uniform(p) => *p,
            RecordProb::PerCovariate(v) => v[j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub noise_std: f64,
    pub record_prob: RecordProb,
    pub encoder_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            noise_std: 0.1,
            record_prob: RecordProb::Uniform(1.0),
            encoder_seed: 7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, covariates: usize) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("encoder.embed_dim must be positive".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("encoder.noise_std must be finite and >= 0".into()));
        }
        let probs: Vec<f64> = match &self.record_prob {
            RecordProb::Uniform(p) => vec![*p],
            RecordProb::PerCovariate(v) => {
                if v.len() != covariates {
                    return Err(Error::Config(format!(
                        "encoder.record_prob has {} entries, expected {covariates}",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("encoder.record_prob entries must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Stand-in for a pretrained text encoder: covariates are masked (a present
/// covariate goes unrecorded with probability `1 - record_prob`), projected
/// by a fixed seeded Gaussian matrix, squashed by `tanh`, and perturbed by
/// Gaussian noise. The background variables are appended unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    projection: Matrix,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, covariates: usize) -> Result<Self> {
        cfg.validate(covariates)?;
        let mut rng = seed::rng(seed::derive_str(cfg.encoder_seed, "projection"));
        let data = (0..cfg.embed_dim * covariates)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            projection: Matrix {
                rows: cfg.embed_dim,
                cols: covariates,
                data,
            },
        })
    }

    /// Rebuilds an encoder from a stored projection.
    pub fn from_parts(cfg: &EncoderConfig, projection: Matrix) -> Result<Self> {
        cfg.validate(projection.cols)?;
        if projection.rows != cfg.embed_dim || projection.data.len() != projection.rows * projection.cols {
            return Err(Error::Shape {
                expected: cfg.embed_dim,
                got: projection.rows,
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            projection,
        })
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Embedding of `x` concatenated with `background`. All randomness
    /// (masking, noise) comes from `record_seed`.
    pub fn encode(&self, x: &[f64], background: &[f64], record_seed: u64) -> Vec<f64> {
        assert_eq!(x.len(), self.projection.cols, "encoder input width");
        let mut rng = seed::rng(record_seed);
        let masked: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(j, v)| {
                // Always consume one draw so streams line up across configs.
                let u: f64 = rng.random();
                if u < self.cfg.record_prob.get(j) {
                    *v
                } else {
                    0.0
                }
            })
            .collect();
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut phi = Vec::with_capacity(self.cfg.embed_dim + background.len());
        for r in 0..self.cfg.embed_dim {
            let z: f64 = self
                .projection
                .row(r)
                .iter()
                .zip(&masked)
                .map(|(p, m)| p * m)
                .sum();
            let eps: f64 = noise.sample(&mut rng);
            phi.push(z.tanh() + self.cfg.noise_std * eps);
        }
        phi.extend_from_slice(background);
        phi
    }
}

/// One-shot encoding; builds the projection from `cfg` on every call.
pub fn encode(x: &[f64], background: &[f64], cfg: &EncoderConfig, record_seed: u64) -> Result<Vec<f64>> {
    Ok(Encoder::new(cfg, x.len())?.encode(x, background, record_seed))
}

// ---------------------------------------------------------------------------
// Datasets

/// One observational unit as estimators see it. `x` is present exactly when
/// `s` is set; `true_cate` is ground truth for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: bool,
    pub y: f64,
    pub phi: Vec<f64>,
    pub x: Option<Vec<f64>>,
    pub s: bool,
    pub true_cate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Random split with `floor(n / 10)` test records; both index lists are
    /// sorted.
    pub fn new(n: usize, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(seed));
        let n_test = n / 10;
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Split { train, test }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Priors {
    pub synsum: SynsumPriors,
    pub mimic: MimicPriors,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub benchmark: Benchmark,
    pub records: Vec<Record>,
    /// Ground-truth structured covariates for every record, revealed to
    /// estimators only through annotation.
    pub covariates: Vec<Vec<f64>>,
    pub split: Split,
    pub encoder: Encoder,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.cfg.embed_dim
    }

    /// Position of a background variable inside `phi`.
    pub fn phi_index(&self, background: &str) -> Option<usize> {
        self.benchmark
            .background_names()
            .iter()
            .position(|n| *n == background)
            .map(|i| self.embed_dim() + i)
    }

    pub fn train_records(&self) -> Vec<Record> {
        self.split.train.iter().map(|&i| self.records[i].clone()).collect()
    }

    pub fn test_records(&self) -> Vec<Record> {
        self.split.test.iter().map(|&i| self.records[i].clone()).collect()
    }
}

pub fn build_dataset(benchmark: Benchmark, n: usize, cfg: &EncoderConfig, seed: u64) -> Result<Dataset> {
    build_dataset_with(benchmark, n, cfg, &Priors::default(), seed)
}

pub fn build_dataset_with(
    benchmark: Benchmark,
    n: usize,
    cfg: &EncoderConfig,
    priors: &Priors,
    seed: u64,
) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Config(format!("dataset_size must be at least 10, got {n}")));
    }
    let encoder = Encoder::new(cfg, benchmark.text_covariate_count())?;
    let sample_seed = seed::derive_str(seed, "sample");
    // (covariates, text features, background, t, y, cate) per record
    type Row = (Vec<f64>, Vec<f64>, Vec<f64>, bool, f64, f64);
    let rows: Vec<Row> = match benchmark {
        Benchmark::Synsum => {
            priors.synsum.validate()?;
            synsum_sample_with(&priors.synsum, n, sample_seed)
                .into_iter()
                .map(|d| {
                    let c = &d.covariates;
                    let (text, bg) = (c.text_features().to_vec(), c.background().to_vec());
                    (c.to_vector(), text, bg, d.t, d.y, d.true_cate)
                })
                .collect()
        }
        Benchmark::Mimic => {
            priors.mimic.validate()?;
            mimic_sample_with(&priors.mimic, n, sample_seed)
                .into_iter()
                .map(|d| {
                    let c = &d.covariates;
                    let (text, bg) = (c.text_features().to_vec(), c.background().to_vec());
                    (c.to_vector(), text, bg, d.t, d.y, d.true_cate)
                })
                .collect()
        }
    };
    let encode_seed = seed::derive_str(seed, "encode");
    let mut covariates = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for (i, (x, text, bg, t, y, true_cate)) in rows.into_iter().enumerate() {
        records.push(Record {
            t,
            y,
            phi: encoder.encode(&text, &bg, seed::derive(encode_seed, i as u64)),
            x: None,
            s: false,
            true_cate,
        });
        covariates.push(x);
    }
    Ok(Dataset {
        benchmark,
        records,
        covariates,
        split: Split::new(n, seed::derive_str(seed, "split")),
        encoder,
    })
}
