//! Sample-weighted logistic regression over sparse features.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Clamp applied to predictions inside the log-loss.
pub const LOSS_EPSILON: f64 = 1e-12;

const MODEL_MAGIC: &str = "cascadeforge-logistic v1";

/// Anything that maps a feature vector to a score in [0, 1].
pub trait Scorer: Send + Sync {
    fn dim(&self) -> usize;
    fn score(&self, v: &FeatureVector) -> Result<f64>;
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn logit_unchecked(&self, v: &FeatureVector) -> f64 {
        self.bias + v.entries().iter().map(|&(i, x)| self.weights[i] * x).sum::<f64>()
    }

    fn check(&self, v: &FeatureVector) -> Result<()> {
        match v.max_index() {
            Some(i) if i >= self.dim() => Err(Error::IndexOutOfRange {
                index: i,
                dim: self.dim(),
            }),
            _ => Ok(()),
        }
    }

    pub fn predict_score(&self, v: &FeatureVector) -> Result<f64> {
        self.check(v)?;
        Ok(sigmoid(self.logit_unchecked(v)))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{MODEL_MAGIC}").map_err(io)?;
        writeln!(out, "dim {}", self.dim()).map_err(io)?;
        writeln!(out, "bias {:?}", self.bias).map_err(io)?;
        for w in &self.weights {
            writeln!(out, "{w:?}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(line) => line.map_err(|e| Error::io(path, e)),
                None => Err(Error::Format(format!("{}: missing {what}", path.display()))),
            }
        };
        let bad = |what: &str| Error::Format(format!("{}: bad {what}", path.display()));

        if next("header")? != MODEL_MAGIC {
            return Err(bad("magic header"));
        }
        let dim: usize = next("dim")?
            .strip_prefix("dim ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("dim line"))?;
        let bias: f64 = next("bias")?
            .strip_prefix("bias ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bias line"))?;
        let mut weights = Vec::with_capacity(dim);
        for _ in 0..dim {
            weights.push(next("weight")?.parse().map_err(|_| bad("weight"))?);
        }
        if next("end").is_ok_and(|l| !l.is_empty()) {
            return Err(bad("trailing data"));
        }
        Ok(Self { weights, bias })
    }
}

impl Scorer for LogisticModel {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn score(&self, v: &FeatureVector) -> Result<f64> {
        self.predict_score(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub batch_size: usize,
    pub class_balanced: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            l2: 1e-4,
            batch_size: 64,
            class_balanced: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Per-sample loss weights, finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(Vec<f64>);

impl SampleWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = values.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!(
                "sample weight {i} is {w}, must be finite and >= 0"
            )));
        }
        Ok(Self(values))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Vectorized samples with their labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledVectors {
    pub vectors: Vec<FeatureVector>,
    pub labels: Vec<u8>,
}

impl LabeledVectors {
    pub fn new(vectors: Vec<FeatureVector>, labels: Vec<u8>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: vectors.len(),
                actual: labels.len(),
            });
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        for v in &self.vectors {
            if let Some(i) = v.max_index().filter(|&i| i >= dim) {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
        }
        Ok(())
    }
}

/// `n / (2 n_c)` for each class, returned as `(positive, negative)`.
pub fn balanced_class_weights(labels: &[u8]) -> Result<(f64, f64)> {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * positives as f64), n / (2.0 * negatives as f64)))
}

fn cross_entropy(label: u8, score: f64) -> f64 {
    let p = score.clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn check_weights(data: &LabeledVectors, weights: &SampleWeights) -> Result<()> {
    if weights.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            actual: weights.len(),
        });
    }
    Ok(())
}

/// `(1/n) Σ w_i CE(y_i, ŷ_i) + (l2/2)‖weights‖²`; the bias is not regularized.
pub fn loss(model: &LogisticModel, data: &LabeledVectors, weights: &SampleWeights, l2: f64) -> Result<f64> {
    check_weights(data, weights)?;
    data.check_dim(model.dim())?;
    if data.is_empty() {
        return Err(Error::invalid("loss of an empty dataset"));
    }
    let ce: f64 = data
        .vectors
        .iter()
        .zip(&data.labels)
        .zip(weights.as_slice())
        .map(|((v, &y), &w)| w * cross_entropy(y, sigmoid(model.logit_unchecked(v))))
        .sum();
    let mut total = ce / data.len() as f64;
    if l2 > 0.0 {
        total += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    }
    Ok(total)
}

/// Analytic gradient of [`loss`] as `(d/dweights, d/dbias)`.
pub fn gradient(
    model: &LogisticModel,
    data: &LabeledVectors,
    weights: &SampleWeights,
    l2: f64,
) -> Result<(Vec<f64>, f64)> {
    check_weights(data, weights)?;
    data.check_dim(model.dim())?;
    if data.is_empty() {
        return Err(Error::invalid("gradient of an empty dataset"));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.dim()];
    let bias_grad = accumulate_gradient(model, data, weights.as_slice(), &all, &mut grad);
    let n = data.len() as f64;
    for (g, w) in grad.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    Ok((grad, bias_grad / n))
}

/// Adds `Σ w_i (ŷ_i - y_i) x_i` over `rows` into `grad`; returns the bias sum.
fn accumulate_gradient(
    model: &LogisticModel,
    data: &LabeledVectors,
    weights: &[f64],
    rows: &[usize],
    grad: &mut [f64],
) -> f64 {
    let mut bias = 0.0;
    for &r in rows {
        let v = &data.vectors[r];
        let residual = weights[r] * (sigmoid(model.logit_unchecked(v)) - f64::from(data.labels[r]));
        if residual == 0.0 {
            continue;
        }
        for &(i, x) in v.entries() {
            grad[i] += residual * x;
        }
        bias += residual;
    }
    bias
}

/// Mini-batch gradient descent from zero initialization.
///
/// With `class_balanced` set, each sample's weight is multiplied by its
/// balanced class weight. The sample order is reshuffled every epoch from
/// `config.seed`.
pub fn train(
    data: &LabeledVectors,
    dim: usize,
    weights: &SampleWeights,
    config: &TrainConfig,
) -> Result<LogisticModel> {
    config.validate()?;
    check_weights(data, weights)?;
    data.check_dim(dim)?;
    if data.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 training samples, got {}",
            data.len()
        )));
    }
    let (w_pos, w_neg) = balanced_class_weights(&data.labels)?;
    let effective: Vec<f64> = if config.class_balanced {
        weights
            .as_slice()
            .iter()
            .zip(&data.labels)
            .map(|(&w, &y)| w * if y == 1 { w_pos } else { w_neg })
            .collect()
    } else {
        weights.as_slice().to_vec()
    };
    let effective_weights = SampleWeights(effective);

    let mut model = LogisticModel::zeros(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; dim];
    let lr = config.learning_rate;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let bias_sum = accumulate_gradient(&model, data, effective_weights.as_slice(), batch, &mut grad);
            let m = batch.len() as f64;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= lr * (*g / m + config.l2 * *w);
            }
            model.bias -= lr * (bias_sum / m);
        }
        let epoch_loss = loss(&model, data, &effective_weights, config.l2)?;
        if !epoch_loss.is_finite() || model.bias.is_nan() {
            return Err(Error::NonFiniteLoss { epoch: epoch + 1 });
        }
    }
    Ok(model)
}
