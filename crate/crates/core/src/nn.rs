//! Single-hidden-layer feedforward networks.
//!
//! Every learned function in the crate (propensity models, outcome models,
//! covariate classifiers, effect regressors) is an [`MlpModel`]: a ReLU
//! hidden layer followed by a scalar output with an identity or sigmoid
//! head. Training is mini-batch Adam or SGD with an exponentially decaying
//! learning rate `lr0 * decay^epoch`.
//!
//! Parameters live in one flat buffer laid out as
//! `[w_in (hidden x input, row-major) | b_in | w_out | b_out]`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Sigmoid outputs are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the
/// cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    Sigmoid,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Identity => "identity",
            Head::Sigmoid => "sigmoid",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Head::Identity),
            "sigmoid" => Some(Head::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    BinaryCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay: f64,
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr0: 5e-3,
            decay: 0.9,
            optimizer: Optimizer::Adam,
            loss: Loss::Mse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_loss(mut self, loss: Loss) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Learning rate used throughout epoch `epoch` (zero-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config(format!(
                "lr0 must be finite and positive, got {}",
                self.lr0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub final_loss: f64,
    pub loss_per_epoch: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    input_dim: usize,
    hidden_dim: usize,
    head: Head,
    params: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden_dim: usize, head: Head, seed: u64) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0, "network dimensions must be positive");
        let mut model = Self::zeros(input_dim, hidden_dim, head);
        let mut rng = seed::rng(seed);
        let limit_in = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let limit_out = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let (w_in_end, w_out_start) = (model.w_in_len(), model.w_out_offset());
        for w in &mut model.params[..w_in_end] {
            *w = rng.random_range(-limit_in..limit_in);
        }
        for w in &mut model.params[w_out_start..w_out_start + hidden_dim] {
            *w = rng.random_range(-limit_out..limit_out);
        }
        model
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, head: Head) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0, "network dimensions must be positive");
        Self {
            input_dim,
            hidden_dim,
            head,
            params: vec![0.0; hidden_dim * input_dim + 2 * hidden_dim + 1],
        }
    }

    pub fn from_parts(
        input_dim: usize,
        hidden_dim: usize,
        head: Head,
        weights_in: &[f64],
        bias_in: &[f64],
        weights_out: &[f64],
        bias_out: f64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if weights_in.len() != hidden_dim * input_dim
            || bias_in.len() != hidden_dim
            || weights_out.len() != hidden_dim
        {
            return Err(Error::Config(
                "parameter lengths do not match network dimensions".into(),
            ));
        }
        let mut params = Vec::with_capacity(hidden_dim * input_dim + 2 * hidden_dim + 1);
        params.extend_from_slice(weights_in);
        params.extend_from_slice(bias_in);
        params.extend_from_slice(weights_out);
        params.push(bias_out);
        Ok(Self {
            input_dim,
            hidden_dim,
            head,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn head(&self) -> Head {
        self.head
    }

    fn w_in_len(&self) -> usize {
        self.hidden_dim * self.input_dim
    }

    fn w_out_offset(&self) -> usize {
        self.w_in_len() + self.hidden_dim
    }

    /// Row-major `hidden_dim x input_dim`.
    pub fn weights_in(&self) -> &[f64] {
        &self.params[..self.w_in_len()]
    }

    pub fn bias_in(&self) -> &[f64] {
        &self.params[self.w_in_len()..self.w_out_offset()]
    }

    pub fn weights_out(&self) -> &[f64] {
        &self.params[self.w_out_offset()..self.w_out_offset() + self.hidden_dim]
    }

    pub fn bias_out(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-head output. Fills `hidden` with the hidden pre-activations.
    fn logit_into(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        let d = self.input_dim;
        let w_in = self.weights_in();
        let b_in = self.bias_in();
        let w_out = self.weights_out();
        let mut out = self.bias_out();
        for h in 0..self.hidden_dim {
            let row = &w_in[h * d..(h + 1) * d];
            let z = b_in[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            hidden[h] = z;
            if z > 0.0 {
                out += w_out[h] * z;
            }
        }
        out
    }

    fn apply_head(&self, z: f64) -> f64 {
        match self.head {
            Head::Identity => z,
            Head::Sigmoid => sigmoid(z),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.predict(x))
    }

    /// [`forward`](Self::forward) without the shape check; panics on a
    /// length mismatch.
    pub fn predict(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.input_dim, "input dimension mismatch");
        let mut hidden = vec![0.0; self.hidden_dim];
        let z = self.logit_into(x, &mut hidden);
        self.apply_head(z)
    }

    pub fn predict_batch<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        let mut hidden = vec![0.0; self.hidden_dim];
        rows.iter()
            .map(|r| {
                let x = r.as_ref();
                self.check_input(x)?;
                let z = self.logit_into(x, &mut hidden);
                Ok(self.apply_head(z))
            })
            .collect()
    }

    /// Loss for one example; adds its parameter gradient into `grad`.
    fn accumulate(
        &self,
        x: &[f64],
        target: f64,
        loss: Loss,
        grad: &mut [f64],
        hidden: &mut [f64],
    ) -> f64 {
        let z = self.logit_into(x, hidden);
        let (value, dz) = match (self.head, loss) {
            (Head::Identity, Loss::Mse) => {
                let r = z - target;
                (r * r, 2.0 * r)
            }
            (Head::Sigmoid, Loss::Mse) => {
                let p = sigmoid(z);
                let r = p - target;
                (r * r, 2.0 * r * p * (1.0 - p))
            }
            (Head::Sigmoid, Loss::BinaryCrossEntropy) => {
                let raw = sigmoid(z);
                let p = raw.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                let value = -(target * p.ln() + (1.0 - target) * (1.0 - p).ln());
                // The clamp is flat outside its range.
                let dz = if raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP {
                    p - target
                } else {
                    0.0
                };
                (value, dz)
            }
            (Head::Identity, Loss::BinaryCrossEntropy) => {
                unreachable!("cross-entropy requires a sigmoid head")
            }
        };

        let d = self.input_dim;
        let hd = self.hidden_dim;
        let w_out_offset = self.w_out_offset();
        let (g_w_in, rest) = grad.split_at_mut(hd * d);
        let (g_b_in, rest) = rest.split_at_mut(hd);
        let (g_w_out, g_b_out) = rest.split_at_mut(hd);
        g_b_out[0] += dz;
        for h in 0..hd {
            let pre = hidden[h];
            if pre > 0.0 {
                g_w_out[h] += dz * pre;
                let dh = dz * self.params[w_out_offset + h];
                g_b_in[h] += dh;
                for (g, v) in g_w_in[h * d..(h + 1) * d].iter_mut().zip(x) {
                    *g += dh * v;
                }
            }
        }
        value
    }

    /// Loss of a single example and its gradient with respect to every
    /// parameter, in [`params`](Self::params) order.
    pub fn loss_and_gradient(&self, x: &[f64], target: f64, loss: Loss) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        check_head_loss(self.head, loss)?;
        let mut grad = vec![0.0; self.params.len()];
        let mut hidden = vec![0.0; self.hidden_dim];
        let value = self.accumulate(x, target, loss, &mut grad, &mut hidden);
        Ok((value, grad))
    }

    pub fn loss(&self, x: &[f64], target: f64, loss: Loss) -> Result<f64> {
        Ok(self.loss_and_gradient(x, target, loss)?.0)
    }

    pub fn train<R: AsRef<[f64]>>(
        &mut self,
        inputs: &[R],
        targets: &[f64],
        cfg: &TrainConfig,
    ) -> Result<TrainReport> {
        cfg.validate()?;
        check_head_loss(self.head, cfg.loss)?;
        if inputs.is_empty() {
            return Err(Error::InsufficientData("training set is empty".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Contract(format!(
                "{} input rows but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        for row in inputs {
            self.check_input(row.as_ref())?;
        }
        if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::Contract(format!("non-finite training target {bad}")));
        }
        if cfg.loss == Loss::BinaryCrossEntropy {
            if let Some(bad) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::Contract(format!(
                    "cross-entropy target {bad} outside [0, 1]"
                )));
            }
        }

        let n = inputs.len();
        let n_params = self.params.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seed::rng(cfg.seed);
        let mut grad = vec![0.0; n_params];
        let mut hidden = vec![0.0; self.hidden_dim];
        let mut m = vec![0.0; n_params];
        let mut v = vec![0.0; n_params];
        let mut step = 0i32;
        let mut report = TrainReport {
            final_loss: f64::NAN,
            loss_per_epoch: Vec::with_capacity(cfg.epochs),
            learning_rates: Vec::with_capacity(cfg.epochs),
        };

        for epoch in 0..cfg.epochs {
            let lr = cfg.learning_rate(epoch);
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    total += self.accumulate(
                        inputs[i].as_ref(),
                        targets[i],
                        cfg.loss,
                        &mut grad,
                        &mut hidden,
                    );
                }
                let scale = 1.0 / batch.len() as f64;
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        for (p, g) in self.params.iter_mut().zip(&grad) {
                            *p -= lr * g * scale;
                        }
                    }
                    Optimizer::Adam => {
                        step += 1;
                        let c1 = 1.0 - ADAM_BETA1.powi(step);
                        let c2 = 1.0 - ADAM_BETA2.powi(step);
                        for k in 0..n_params {
                            let g = grad[k] * scale;
                            m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g;
                            v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g;
                            let m_hat = m[k] / c1;
                            let v_hat = v[k] / c2;
                            self.params[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
            let mean = total / n as f64;
            if !mean.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: format!("loss is {mean}"),
                });
            }
            if !self.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    reason: "non-finite weights".into(),
                });
            }
            report.loss_per_epoch.push(mean);
            report.learning_rates.push(lr);
        }
        report.final_loss = report.loss_per_epoch.last().copied().unwrap_or(f64::NAN);
        Ok(report)
    }

    /// Text serialization: a header with the dimensions and head, followed
    /// by the four parameter blocks as row-major matrices.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mlp 1")?;
        writeln!(w, "input_dim {}", self.input_dim)?;
        writeln!(w, "hidden_dim {}", self.hidden_dim)?;
        writeln!(w, "head {}", self.head.as_str())?;
        write_matrix(&mut w, self.hidden_dim, self.input_dim, self.weights_in())?;
        write_matrix(&mut w, 1, self.hidden_dim, self.bias_in())?;
        write_matrix(&mut w, 1, self.hidden_dim, self.weights_out())?;
        write_matrix(&mut w, 1, 1, &[self.bias_out()])?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let magic = next_line(&mut lines, "model")?;
        if magic.trim() != "mlp 1" {
            return Err(Error::format("model", format!("unexpected header {magic:?}")));
        }
        let input_dim: usize = parse_keyed(&next_line(&mut lines, "model")?, "input_dim")?;
        let hidden_dim: usize = parse_keyed(&next_line(&mut lines, "model")?, "hidden_dim")?;
        let head_line = next_line(&mut lines, "model")?;
        let head = head_line
            .strip_prefix("head ")
            .and_then(|s| Head::parse(s.trim()))
            .ok_or_else(|| Error::format("model", format!("bad head line {head_line:?}")))?;
        let w_in = read_matrix_lines(&mut lines, Some((hidden_dim, input_dim)))?;
        let b_in = read_matrix_lines(&mut lines, Some((1, hidden_dim)))?;
        let w_out = read_matrix_lines(&mut lines, Some((1, hidden_dim)))?;
        let b_out = read_matrix_lines(&mut lines, Some((1, 1)))?;
        Self::from_parts(
            input_dim,
            hidden_dim,
            head,
            &w_in.data,
            &b_in.data,
            &w_out.data,
            b_out.data[0],
        )
        .map_err(|e| Error::format("model", e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn check_head_loss(head: Head, loss: Loss) -> Result<()> {
    if head == Head::Identity && loss == Loss::BinaryCrossEntropy {
        return Err(Error::Config(
            "binary_cross_entropy requires a sigmoid head".into(),
        ));
    }
    Ok(())
}

/// Compares the analytic gradient against central finite differences
/// (step 1e-5) for every parameter and returns the largest discrepancy,
/// measured as `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradient_check(model: &MlpModel, x: &[f64], target: f64, loss: Loss) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, analytic) = model.loss_and_gradient(x, target, loss)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let orig = probe.params[k];
        probe.params[k] = orig + STEP;
        let up = probe.loss(x, target, loss)?;
        probe.params[k] = orig - STEP;
        let down = probe.loss(x, target, loss)?;
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let scale = 1.0f64.max(a.abs()).max(numeric.abs());
        worst = worst.max((a - numeric).abs() / scale);
    }
    Ok(worst)
}

/// Dense row-major matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// `matrix <rows> <cols>` followed by one whitespace-separated line per row.
/// Values use the shortest representation that parses back to the same bits.
pub fn write_matrix<W: Write>(w: &mut W, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    assert_eq!(data.len(), rows * cols);
    writeln!(w, "matrix {rows} {cols}")?;
    let mut line = String::new();
    for r in 0..rows {
        line.clear();
        for (c, v) in data[r * cols..(r + 1) * cols].iter().enumerate() {
            if c > 0 {
                line.push(' ');
            }
            write!(line, "{v:?}").expect("write to String");
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(r: R) -> Result<Matrix> {
    read_matrix_lines(&mut r.lines(), None)
}

fn next_line<B: BufRead>(lines: &mut std::io::Lines<B>, what: &'static str) -> Result<String> {
    match lines.next() {
        Some(l) => Ok(l?),
        None => Err(Error::format(what, "unexpected end of file")),
    }
}

fn parse_keyed<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    line.strip_prefix(key)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::format("model", format!("expected `{key} <value>`, got {line:?}")))
}

fn read_matrix_lines<B: BufRead>(
    lines: &mut std::io::Lines<B>,
    expect: Option<(usize, usize)>,
) -> Result<Matrix> {
    let header = next_line(lines, "matrix")?;
    let dims: Vec<usize> = header
        .strip_prefix("matrix ")
        .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_default();
    let [rows, cols] = dims[..] else {
        return Err(Error::format("matrix", format!("bad header {header:?}")));
    };
    if let Some(e) = expect {
        if e != (rows, cols) {
            return Err(Error::format(
                "matrix",
                format!("expected {}x{}, found {rows}x{cols}", e.0, e.1),
            ));
        }
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = next_line(lines, "matrix")?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::format("matrix", format!("bad value {tok:?} in row {r}")))?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::format(
                "matrix",
                format!("row {r} has {} values, expected {cols}", data.len() - before),
            ));
        }
    }
    Ok(Matrix { rows, cols, data })
}
