//! Feedback sample weights: how much the Pre-classifier should care about a
//! training sample given the Main-classifier's score for it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_model::SampleWeights;

/// Smallest accepted temperature.
pub const MIN_TEMPERATURE: f64 = 1e-3;

/// Attention intensity for positive samples.
pub const DEFAULT_A_POS: f64 = 2.0;
/// Attention intensity for negative samples.
pub const DEFAULT_A_NEG: f64 = 1.0;

/// Scaled logistic curve `a / (1 + exp(-z / t))`.
///
/// Saturates to `0` or `a` for large `|z / t|` without overflowing. An
/// infinite temperature gives the flat curve `a / 2`.
pub fn sigma(z: f64, t: f64, a: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {t}")));
    }
    Ok(scaled_sigmoid(z / t, a))
}

fn scaled_sigmoid(x: f64, a: f64) -> f64 {
    if x >= 0.0 {
        a / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        a * e / (1.0 + e)
    }
}

/// Parameters of the weighting curves.
///
/// Temperatures may be `+inf` (a flat curve); in serialized form that is the
/// string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightParams {
    #[serde(with = "crate::serde_float")]
    pub t_pos: f64,
    #[serde(with = "crate::serde_float")]
    pub t_neg: f64,
    pub a_pos: f64,
    pub a_neg: f64,
    pub w_neg_min: f64,
    pub w_max: f64,
}

impl WeightParams {
    /// Parameters with the default attention intensities.
    pub fn new(t_pos: f64, t_neg: f64, w_neg_min: f64, w_max: f64) -> Result<Self> {
        let p = Self {
            t_pos,
            t_neg,
            a_pos: DEFAULT_A_POS,
            a_neg: DEFAULT_A_NEG,
            w_neg_min,
            w_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// Flat curves whose weights are exactly 1 for every sample.
    pub fn uniform() -> Self {
        Self {
            t_pos: f64::INFINITY,
            t_neg: f64::INFINITY,
            a_pos: DEFAULT_A_POS,
            a_neg: DEFAULT_A_NEG,
            w_neg_min: 1.0 - DEFAULT_A_NEG / 2.0,
            w_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("t_pos", self.t_pos), ("t_neg", self.t_neg)] {
            if !(t >= MIN_TEMPERATURE) {
                return Err(Error::invalid(format!("{name} must be >= {MIN_TEMPERATURE}, got {t}")));
            }
        }
        for (name, a) in [("a_pos", self.a_pos), ("a_neg", self.a_neg)] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {a}")));
            }
        }
        if !(self.w_neg_min >= 0.0 && self.w_neg_min.is_finite()) {
            return Err(Error::invalid(format!(
                "w_neg_min must be >= 0, got {}",
                self.w_neg_min
            )));
        }
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return Err(Error::invalid(format!("w_max must be > 0, got {}", self.w_max)));
        }
        if self.w_max < self.w_neg_min {
            return Err(Error::invalid(format!(
                "w_max ({}) must be >= w_neg_min ({})",
                self.w_max, self.w_neg_min
            )));
        }
        Ok(())
    }
}

/// A training sample's Main-classifier score and true label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub main_score: f64,
    pub label: u8,
}

/// Weight of one sample. Positives follow `min(σ(s-0.5, t_pos, a_pos), w_max)`;
/// negatives follow `min(w_neg_min + σ(s-0.5, t_neg, a_neg), w_max)`.
pub fn sample_weight(s: f64, label: u8, p: &WeightParams) -> f64 {
    debug_assert!((0.0..=1.0).contains(&s), "main score {s} outside [0, 1]");
    let z = s - 0.5;
    if label == 1 {
        scaled_sigmoid(z / p.t_pos, p.a_pos).min(p.w_max)
    } else {
        (p.w_neg_min + scaled_sigmoid(z / p.t_neg, p.a_neg)).min(p.w_max)
    }
}

pub fn compute_weights(scored: &[ScoredSample], p: &WeightParams) -> SampleWeights {
    let values = scored.iter().map(|s| sample_weight(s.main_score, s.label, p)).collect();
    SampleWeights::new(values).expect("weights of valid params are finite and non-negative")
}
