//! Two-stage inference: a cheap Pre-classifier gates calls to the Main-classifier.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::{vectorize, FeatureVector, TokenizerConfig, Vocabulary};
use crate::linear_model::{LogisticModel, Scorer};

/// Decision threshold of the Main-classifier.
pub const DEFAULT_MAIN_THRESHOLD: f64 = 0.5;

/// A scorer together with the featurizer it was trained against.
#[derive(Debug, Clone)]
pub struct Stage<S> {
    pub scorer: S,
    pub vocab: Vocabulary,
    pub tokenizer: TokenizerConfig,
}

impl<S: Scorer> Stage<S> {
    pub fn new(scorer: S, vocab: Vocabulary, tokenizer: TokenizerConfig) -> Result<Self> {
        if scorer.dim() != vocab.len() {
            return Err(Error::invalid(format!(
                "scorer dimension {} does not match vocabulary size {}",
                scorer.dim(),
                vocab.len()
            )));
        }
        Ok(Self {
            scorer,
            vocab,
            tokenizer,
        })
    }

    pub fn vectorize(&self, text: &str) -> FeatureVector {
        vectorize(text, &self.vocab, &self.tokenizer)
    }

    pub fn score_text(&self, text: &str) -> Result<f64> {
        self.scorer.score(&self.vectorize(text))
    }

    pub fn score_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        d.samples().iter().map(|s| self.score_text(&s.text)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelinePrediction {
    pub pre_score: f64,
    pub main_score: Option<f64>,
    pub passed_pre: bool,
    pub main_called: bool,
    pub final_label: u8,
}

#[derive(Debug, Clone)]
pub struct CascadePipeline<P = LogisticModel, M = LogisticModel> {
    pub pre: Stage<P>,
    pub main: Stage<M>,
    pub th_pre: f64,
    pub th_main: f64,
}

impl<P: Scorer, M: Scorer> CascadePipeline<P, M> {
    pub fn new(pre: Stage<P>, main: Stage<M>, th_pre: f64) -> Self {
        Self {
            pre,
            main,
            th_pre,
            th_main: DEFAULT_MAIN_THRESHOLD,
        }
    }

    /// Scores `text` with the Pre-classifier and, only if it strictly exceeds
    /// `th_pre`, with the Main-classifier.
    pub fn infer(&self, text: &str) -> Result<PipelinePrediction> {
        let pre_score = self.pre.score_text(text)?;
        if pre_score > self.th_pre {
            let main_score = self.main.score_text(text)?;
            Ok(PipelinePrediction {
                pre_score,
                main_score: Some(main_score),
                passed_pre: true,
                main_called: true,
                final_label: u8::from(main_score > self.th_main),
            })
        } else {
            Ok(PipelinePrediction {
                pre_score,
                main_score: None,
                passed_pre: false,
                main_called: false,
                final_label: 0,
            })
        }
    }
}

/// Fraction of `d` whose pre-score strictly exceeds `th_pre`.
pub fn measure_pass_rate<P: Scorer, M: Scorer>(p: &CascadePipeline<P, M>, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::Dataset("cannot measure pass rate on an empty dataset".into()));
    }
    let scores = p.pre.score_dataset(d)?;
    Ok(pass_rate_of(&scores, p.th_pre))
}

pub fn pass_rate_of(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s > threshold).count() as f64 / scores.len() as f64
}

/// Number of scores that must pass to reach `pass_rate`, i.e. `ceil(pass_rate * n)`.
pub fn pass_quota(n: usize, pass_rate: f64) -> usize {
    // The tolerance keeps e.g. 0.3 * 10 from rounding up to 4.
    ((pass_rate * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Largest threshold that lets at least `ceil(pass_rate * n)` scores through
/// under strict `>` gating.
///
/// The result is the highest score strictly below the quota-th largest score,
/// so tied scores at the cut pass together. When nothing lies below the cut
/// the threshold is `-inf` (everything passes). If every score is identical
/// and the rate is below 1, no threshold can approximate the target and an
/// error is returned.
pub fn calibrate_threshold(scores: &[f64], pass_rate: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot calibrate a threshold on no scores"));
    }
    if !(pass_rate > 0.0 && pass_rate <= 1.0) {
        return Err(Error::invalid(format!("pass_rate must be in (0, 1], got {pass_rate}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("cannot calibrate on NaN scores"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let quota = pass_quota(sorted.len(), pass_rate).max(1);
    if quota < sorted.len() && sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateThreshold(format!(
            "all {} scores equal {}; pass rate {pass_rate} is unreachable",
            sorted.len(),
            sorted[0]
        )));
    }
    let cut = sorted[quota - 1];
    Ok(sorted[quota..]
        .iter()
        .copied()
        .find(|&s| s < cut)
        .unwrap_or(f64::NEG_INFINITY))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    #[serde(with = "crate::serde_float")]
    th_pre: f64,
    th_main: f64,
    pre_tokenizer: TokenizerConfig,
    main_tokenizer: TokenizerConfig,
}

const MANIFEST_FORMAT: &str = "cascadeforge-pipeline v1";

impl CascadePipeline<LogisticModel, LogisticModel> {
    /// Writes `pre.model`, `main.model`, `pre.vocab.tsv`, `main.vocab.tsv` and
    /// `pipeline.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.pre.scorer.write(&dir.join("pre.model"))?;
        self.main.scorer.write(&dir.join("main.model"))?;
        self.pre.vocab.write(&dir.join("pre.vocab.tsv"))?;
        self.main.vocab.write(&dir.join("main.vocab.tsv"))?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            th_pre: self.th_pre,
            th_main: self.th_main,
            pre_tokenizer: self.pre.tokenizer.clone(),
            main_tokenizer: self.main.tokenizer.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        let path = dir.join("pipeline.toml");
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("pipeline.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Format(format!(
                "unsupported pipeline format {:?}",
                manifest.format
            )));
        }
        let pre = Stage::new(
            LogisticModel::read(&dir.join("pre.model"))?,
            Vocabulary::read(&dir.join("pre.vocab.tsv"))?,
            manifest.pre_tokenizer,
        )?;
        let main = Stage::new(
            LogisticModel::read(&dir.join("main.model"))?,
            Vocabulary::read(&dir.join("main.vocab.tsv"))?,
            manifest.main_tokenizer,
        )?;
        Ok(Self {
            pre,
            main,
            th_pre: manifest.th_pre,
            th_main: manifest.th_main,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Constant score, whatever the input.
    struct Fixed(f64);

    impl Scorer for Fixed {
        fn dim(&self) -> usize {
            1
        }
        fn score(&self, _v: &FeatureVector) -> Result<f64> {
            Ok(self.0)
        }
    }

    struct Counting<S> {
        inner: S,
        calls: AtomicUsize,
    }

    impl<S: Scorer> Scorer for Counting<S> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn score(&self, v: &FeatureVector) -> Result<f64> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.inner.score(v)
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_ranked(vec![("x".into(), 1.0)], 1).unwrap()
    }

    fn pipeline(pre: f64, main: f64, th_pre: f64) -> CascadePipeline<Fixed, Counting<Fixed>> {
        CascadePipeline::new(
            Stage::new(Fixed(pre), vocab(), TokenizerConfig::default()).unwrap(),
            Stage::new(
                Counting {
                    inner: Fixed(main),
                    calls: AtomicUsize::new(0),
                },
                vocab(),
                TokenizerConfig::default(),
            )
            .unwrap(),
            th_pre,
        )
    }

    #[test]
    fn gate_closed() {
        let p = pipeline(0.2, 0.9, 0.4);
        let out = p.infer("x").unwrap();
        assert_eq!((out.passed_pre, out.main_called, out.final_label), (false, false, 0));
        assert_eq!(out.main_score, None);
        assert_eq!(p.main.scorer.calls.load(Ordering::Relaxed), 0);
    }

    #[test]
    fn both_gates_open() {
        let out = pipeline(0.6, 0.7, 0.4).infer("x").unwrap();
        assert_eq!((out.passed_pre, out.main_called, out.final_label), (true, true, 1));
        assert_eq!(out.main_score, Some(0.7));
    }

    #[test]
    fn second_gate_closed() {
        let out = pipeline(0.6, 0.3, 0.4).infer("x").unwrap();
        assert_eq!((out.main_called, out.final_label), (true, 0));
        // equality rejects at both stages
        assert!(!pipeline(0.4, 0.9, 0.4).infer("x").unwrap().passed_pre);
        assert_eq!(pipeline(0.6, 0.5, 0.4).infer("x").unwrap().final_label, 0);
    }

    #[test]
    fn calibration_quantile() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let th = calibrate_threshold(&scores, 0.3).unwrap();
        assert_eq!(th, 0.7);
        assert_eq!(pass_rate_of(&scores, th), 0.3);
        let all = calibrate_threshold(&scores, 1.0).unwrap();
        assert_eq!(pass_rate_of(&scores, all), 1.0);
    }

    #[test]
    fn calibration_ties_pass_together() {
        let scores = [0.9, 0.5, 0.5, 0.5, 0.1];
        let th = calibrate_threshold(&scores, 0.4).unwrap();
        assert_eq!(th, 0.1);
        assert_eq!(pass_rate_of(&scores, th), 0.8);
    }

    #[test]
    fn calibration_degenerate_is_reported() {
        let scores = [0.3; 6];
        assert!(matches!(
            calibrate_threshold(&scores, 0.5),
            Err(Error::DegenerateThreshold(_))
        ));
        assert_eq!(pass_rate_of(&scores, calibrate_threshold(&scores, 1.0).unwrap()), 1.0);
        assert!(calibrate_threshold(&[], 0.5).is_err());
        assert!(calibrate_threshold(&[0.1, 0.2], 0.0).is_err());
    }

    #[test]
    fn quota_rounding() {
        assert_eq!(pass_quota(10, 0.3), 3);
        assert_eq!(pass_quota(10, 0.31), 4);
        assert_eq!(pass_quota(7, 1.0), 7);
    }
}
