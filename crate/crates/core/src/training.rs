//! Independent, Sequential and Feedback training of a two-stage cascade.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{calibrate_threshold, CascadePipeline, Stage, DEFAULT_MAIN_THRESHOLD};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::report_from_scores;
use crate::features::{build_vocabulary, vectorize_dataset, FeatureVector, TokenizerConfig, Vocabulary};
use crate::ga::{run_ga, Bound, GaConfig, GaOutcome};
use crate::linear_model::{train, LabeledVectors, LogisticModel, SampleWeights, TrainConfig};
use crate::weighting::{compute_weights, ScoredSample, WeightParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Independent,
    Sequential,
    Feedback,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Independent => "independent",
            Strategy::Sequential => "sequential",
            Strategy::Feedback => "feedback",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Strategy::Independent),
            "sequential" => Ok(Strategy::Sequential),
            "feedback" => Ok(Strategy::Feedback),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Vocabulary budgets and text views of the two stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSettings {
    pub k_pre: usize,
    pub k_main: usize,
    pub pre_tokenizer: TokenizerConfig,
    pub main_tokenizer: TokenizerConfig,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            k_pre: 2_000,
            k_main: 20_000,
            pre_tokenizer: TokenizerConfig::default(),
            main_tokenizer: TokenizerConfig::default(),
        }
    }
}

/// Genes searched for Feedback training, in chromosome order:
/// inverse temperatures `1/t_pos`, `1/t_neg`, then `w_neg_min` and `w_max`.
///
/// A zero inverse temperature is an infinite temperature, which makes the
/// uniform chromosome `[0, 0, 0.5, 1]` reproduce unweighted training exactly.
pub fn feedback_bounds() -> Vec<Bound> {
    vec![
        Bound::new(0.0, 100.0),
        Bound::new(0.0, 100.0),
        Bound::new(0.0, 1.0),
        Bound::new(1.0, 10.0),
    ]
}

pub fn uniform_chromosome() -> Vec<f64> {
    let u = WeightParams::uniform();
    vec![0.0, 0.0, u.w_neg_min, u.w_max]
}

pub fn params_from_genes(genes: &[f64]) -> Result<WeightParams> {
    let [beta_pos, beta_neg, w_neg_min, w_max] = genes else {
        return Err(Error::invalid(format!("expected 4 genes, got {}", genes.len())));
    };
    let temperature = |beta: f64| if beta == 0.0 { f64::INFINITY } else { 1.0 / beta };
    WeightParams::new(temperature(*beta_pos), temperature(*beta_neg), *w_neg_min, *w_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub pre: TrainConfig,
    pub main: TrainConfig,
    pub target_pass_rate: f64,
    pub ga: Option<GaConfig>,
    pub features: FeatureSettings,
    /// Folds used to score the training set out-of-sample for Feedback
    /// weighting; values below 2 mean in-sample scores.
    pub cross_fit_folds: usize,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, target_pass_rate: f64) -> Self {
        Self {
            strategy,
            pre: TrainConfig {
                class_balanced: true,
                ..TrainConfig::default()
            },
            main: TrainConfig::default(),
            target_pass_rate,
            ga: (strategy == Strategy::Feedback).then(GaConfig::default),
            features: FeatureSettings::default(),
            cross_fit_folds: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pre.validate()?;
        self.main.validate()?;
        if !(self.target_pass_rate > 0.0 && self.target_pass_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "target_pass_rate must be in (0, 1], got {}",
                self.target_pass_rate
            )));
        }
        if self.features.k_pre == 0 || self.features.k_main == 0 {
            return Err(Error::invalid("feature budgets must be >= 1"));
        }
        match (&self.ga, self.strategy) {
            (None, Strategy::Feedback) => Err(Error::invalid("feedback strategy requires a GA config")),
            (Some(ga), _) => ga.validate(),
            _ => Ok(()),
        }
    }
}

/// Training inputs; the stages may see different training sets (fewshot).
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub main_train: &'a Dataset,
    pub pre_train: &'a Dataset,
    pub val: &'a Dataset,
}

impl<'a> TrainingData<'a> {
    pub fn shared(train: &'a Dataset, val: &'a Dataset) -> Self {
        Self {
            main_train: train,
            pre_train: train,
            val,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedCascade {
    pub strategy: Strategy,
    pub pipeline: CascadePipeline,
    pub weight_params: Option<WeightParams>,
    pub ga: Option<GaOutcome>,
    pub pre_train_size: usize,
    pub main_train_size: usize,
}

/// A vocabulary fitted on a training set plus that set's vectors.
struct Featurized {
    vocab: Vocabulary,
    tokenizer: TokenizerConfig,
    train: LabeledVectors,
}

impl Featurized {
    fn fit(d: &Dataset, tokenizer: &TokenizerConfig, k: usize) -> Result<Self> {
        let vocab = build_vocabulary(d, tokenizer, k)?;
        let vectors = vectorize_dataset(d, &vocab, tokenizer);
        Ok(Self {
            train: LabeledVectors::new(vectors, d.labels())?,
            vocab,
            tokenizer: tokenizer.clone(),
        })
    }

    fn vectorize(&self, d: &Dataset) -> Vec<FeatureVector> {
        vectorize_dataset(d, &self.vocab, &self.tokenizer)
    }

    fn train(&self, weights: &SampleWeights, cfg: &TrainConfig) -> Result<LogisticModel> {
        train(&self.train, self.vocab.len(), weights, cfg)
    }

    fn stage(&self, model: LogisticModel) -> Result<Stage<LogisticModel>> {
        Stage::new(model, self.vocab.clone(), self.tokenizer.clone())
    }
}

fn scores(model: &LogisticModel, vectors: &[FeatureVector]) -> Result<Vec<f64>> {
    vectors.iter().map(|v| model.predict_score(v)).collect()
}

fn check_inputs(data: &TrainingData<'_>) -> Result<()> {
    for d in [data.main_train, data.pre_train, data.val] {
        if d.is_empty() {
            return Err(Error::Dataset(format!("{} is empty", d.name())));
        }
        d.require_both_labels()?;
    }
    Ok(())
}

/// Main-classifier trained with plain cross-entropy on its full training set.
fn fit_main(d: &Dataset, cfg: &StrategyConfig) -> Result<(Featurized, LogisticModel)> {
    let featurized = Featurized::fit(d, &cfg.features.main_tokenizer, cfg.features.k_main)?;
    let model = featurized.train(&SampleWeights::ones(d.len()), &cfg.main)?;
    Ok((featurized, model))
}

fn fit_pre(d: &Dataset, cfg: &StrategyConfig) -> Result<(Featurized, LogisticModel)> {
    let featurized = Featurized::fit(d, &cfg.features.pre_tokenizer, cfg.features.k_pre)?;
    let model = featurized.train(&SampleWeights::ones(d.len()), &cfg.pre)?;
    Ok((featurized, model))
}

pub fn train_independent(train: &Dataset, val: &Dataset, cfg: &StrategyConfig) -> Result<TrainedCascade> {
    fit_independent(&TrainingData::shared(train, val), cfg)
}

pub fn train_sequential(train: &Dataset, val: &Dataset, cfg: &StrategyConfig) -> Result<TrainedCascade> {
    fit_sequential(&TrainingData::shared(train, val), cfg)
}

pub fn train_feedback(train: &Dataset, val: &Dataset, cfg: &StrategyConfig) -> Result<TrainedCascade> {
    fit_feedback(&TrainingData::shared(train, val), cfg)
}

/// Trains `cfg.strategy` on possibly distinct stage training sets.
pub fn fit_strategy(data: &TrainingData<'_>, cfg: &StrategyConfig) -> Result<TrainedCascade> {
    match cfg.strategy {
        Strategy::Independent => fit_independent(data, cfg),
        Strategy::Sequential => fit_sequential(data, cfg),
        Strategy::Feedback => fit_feedback(data, cfg),
    }
}

fn fit_independent(data: &TrainingData<'_>, cfg: &StrategyConfig) -> Result<TrainedCascade> {
    cfg.validate()?;
    check_inputs(data)?;
    info!("independent: training pre on {} samples", data.pre_train.len());
    let (pre_feat, pre_model) = fit_pre(data.pre_train, cfg)?;
    let th_pre = calibrate_threshold(
        &scores(&pre_model, &pre_feat.vectorize(data.val))?,
        cfg.target_pass_rate,
    )?;
    info!("independent: training main on {} samples", data.main_train.len());
    let (main_feat, main_model) = fit_main(data.main_train, cfg)?;
    Ok(TrainedCascade {
        strategy: Strategy::Independent,
        pipeline: CascadePipeline::new(pre_feat.stage(pre_model)?, main_feat.stage(main_model)?, th_pre),
        weight_params: None,
        ga: None,
        pre_train_size: data.pre_train.len(),
        main_train_size: data.main_train.len(),
    })
}

fn fit_sequential(data: &TrainingData<'_>, cfg: &StrategyConfig) -> Result<TrainedCascade> {
    cfg.validate()?;
    check_inputs(data)?;
    let (pre_feat, pre_model) = fit_pre(data.pre_train, cfg)?;
    let th_pre = calibrate_threshold(
        &scores(&pre_model, &pre_feat.vectorize(data.val))?,
        cfg.target_pass_rate,
    )?;

    let gate_scores = scores(&pre_model, &pre_feat.vectorize(data.main_train))?;
    let survivors: Vec<usize> = (0..gate_scores.len()).filter(|&i| gate_scores[i] > th_pre).collect();
    let survivor_set = data
        .main_train
        .select(format!("{}/survivors", data.main_train.name()), &survivors);
    info!(
        "sequential: {} of {} training samples pass the pre gate",
        survivor_set.len(),
        data.main_train.len()
    );
    if survivor_set.positives() == 0 || survivor_set.negatives() == 0 || survivor_set.len() < 2 {
        return Err(Error::Survivors {
            survivors: survivor_set.len(),
            positives: survivor_set.positives(),
            negatives: survivor_set.negatives(),
        });
    }
    let (main_feat, main_model) = fit_main(&survivor_set, cfg)?;
    Ok(TrainedCascade {
        strategy: Strategy::Sequential,
        pipeline: CascadePipeline::new(pre_feat.stage(pre_model)?, main_feat.stage(main_model)?, th_pre),
        weight_params: None,
        ga: None,
        pre_train_size: data.pre_train.len(),
        main_train_size: survivor_set.len(),
    })
}

/// Main-classifier scores of `target`, either from `main_model` directly or
/// from models that never saw the scored fold.
fn guidance_scores(
    target: &Dataset,
    main_feat: &Featurized,
    main_model: &LogisticModel,
    cfg: &StrategyConfig,
) -> Result<Vec<f64>> {
    if cfg.cross_fit_folds < 2 {
        return scores(main_model, &main_feat.vectorize(target));
    }
    let k = cfg.cross_fit_folds;
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.main.seed ^ 0x5eed_f01d));
    let mut out = vec![0.0; target.len()];
    for fold in 0..k {
        let held: Vec<usize> = order.iter().copied().skip(fold).step_by(k).collect();
        let mut rest: Vec<usize> = order.iter().copied().filter(|i| !held.contains(i)).collect();
        rest.sort_unstable();
        let fit_set = target.select(format!("{}/fold{fold}", target.name()), &rest);
        let held_set = target.select(format!("{}/held{fold}", target.name()), &held);
        let (feat, model) = fit_main(&fit_set, cfg)?;
        for (&i, s) in held.iter().zip(scores(&model, &feat.vectorize(&held_set))?) {
            out[i] = s;
        }
    }
    Ok(out)
}

fn fit_feedback(data: &TrainingData<'_>, cfg: &StrategyConfig) -> Result<TrainedCascade> {
    cfg.validate()?;
    check_inputs(data)?;
    let ga_cfg = cfg
        .ga
        .as_ref()
        .ok_or_else(|| Error::invalid("feedback strategy requires a GA config"))?;

    info!("feedback: training main on {} samples", data.main_train.len());
    let (main_feat, main_model) = fit_main(data.main_train, cfg)?;
    let guidance = guidance_scores(data.pre_train, &main_feat, &main_model, cfg)?;
    let scored: Vec<ScoredSample> = guidance
        .iter()
        .zip(data.pre_train.samples())
        .map(|(&main_score, s)| ScoredSample {
            main_score,
            label: s.label,
        })
        .collect();

    let val_labels = data.val.labels();
    let val_main_scores = scores(&main_model, &main_feat.vectorize(data.val))?;
    let pre_feat = Featurized::fit(data.pre_train, &cfg.features.pre_tokenizer, cfg.features.k_pre)?;
    let pre_val_vectors = pre_feat.vectorize(data.val);

    let fit_pre_with = |params: &WeightParams| -> Result<(LogisticModel, f64, f64)> {
        let weights = compute_weights(&scored, params);
        let model = pre_feat.train(&weights, &cfg.pre)?;
        let pre_scores = scores(&model, &pre_val_vectors)?;
        let th_pre = calibrate_threshold(&pre_scores, cfg.target_pass_rate)?;
        let report = report_from_scores(
            &val_labels,
            &pre_scores,
            |i| Ok(val_main_scores[i]),
            th_pre,
            DEFAULT_MAIN_THRESHOLD,
        )?;
        Ok((model, th_pre, report.f1_e2e))
    };
    let fitness = |genes: &[f64]| -> f64 {
        match params_from_genes(genes).and_then(|p| fit_pre_with(&p)) {
            Ok((_, _, f1)) => f1,
            Err(e) => {
                debug!("fitness of {genes:?} failed: {e}");
                f64::NEG_INFINITY
            }
        }
    };

    let mut ga_cfg = ga_cfg.clone();
    let uniform = uniform_chromosome();
    if !ga_cfg.seeded_chromosomes.contains(&uniform) {
        ga_cfg.seeded_chromosomes.insert(0, uniform);
    }
    info!(
        "feedback: searching weights with population {} for {} generations",
        ga_cfg.population_size, ga_cfg.generations
    );
    let outcome = run_ga(&fitness, &feedback_bounds(), &ga_cfg)?;
    for h in &outcome.history {
        debug!(
            "generation {}: best {:.6} mean {:.6}",
            h.generation, h.best_fitness, h.mean_fitness
        );
    }
    if !outcome.best_fitness.is_finite() {
        return Err(Error::invalid("no feedback weight setting produced a usable pipeline"));
    }
    let params = params_from_genes(&outcome.best)?;
    let (pre_model, th_pre, f1) = fit_pre_with(&params)?;
    info!("feedback: best validation F1_e2e {f1:.4} with {params:?}");

    Ok(TrainedCascade {
        strategy: Strategy::Feedback,
        pipeline: CascadePipeline::new(pre_feat.stage(pre_model)?, main_feat.stage(main_model)?, th_pre),
        weight_params: Some(params),
        ga: Some(outcome),
        pre_train_size: data.pre_train.len(),
        main_train_size: data.main_train.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighting::sample_weight;

    #[test]
    fn strategy_names_round_trip() {
        for s in [Strategy::Independent, Strategy::Sequential, Strategy::Feedback] {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("joint".parse::<Strategy>().is_err());
    }

    #[test]
    fn uniform_genes_give_unit_weights() {
        let p = params_from_genes(&uniform_chromosome()).unwrap();
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(sample_weight(s, 0, &p), 1.0);
            assert_eq!(sample_weight(s, 1, &p), 1.0);
        }
        let bounds = feedback_bounds();
        assert!(uniform_chromosome()
            .iter()
            .zip(&bounds)
            .all(|(g, b)| b.lo <= *g && *g <= b.hi));
    }

    #[test]
    fn gene_mapping() {
        let p = params_from_genes(&[10.0, 4.0, 0.2, 3.0]).unwrap();
        assert!((p.t_pos - 0.1).abs() < 1e-15);
        assert_eq!(p.t_neg, 0.25);
        assert_eq!((p.a_pos, p.a_neg), (2.0, 1.0));
        assert!(params_from_genes(&[1.0, 1.0, 0.2]).is_err());
    }

    #[test]
    fn feedback_requires_ga() {
        let mut cfg = StrategyConfig::new(Strategy::Feedback, 0.3);
        cfg.ga = None;
        assert!(cfg.validate().is_err());
        assert!(StrategyConfig::new(Strategy::Independent, 1.5).validate().is_err());
    }
}
