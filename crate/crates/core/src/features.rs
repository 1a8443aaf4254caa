//! Text featurization: tokenization, unigram + bigram extraction, chi-squared
//! feature selection and sparse vectorization.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// How a stage turns raw text into features.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Clip per-document term counts to presence (1.0).
    pub binary: bool,
    /// Only the first `max_tokens` tokens of a document are read.
    pub max_tokens: Option<usize>,
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Unigrams plus adjacent bigrams joined with `_`, with term counts.
pub fn extract_features<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for token in tokens {
        *counts.entry(token.as_ref().to_string()).or_insert(0) += 1;
    }
    for pair in tokens.windows(2) {
        let bigram = format!("{}_{}", pair[0].as_ref(), pair[1].as_ref());
        *counts.entry(bigram).or_insert(0) += 1;
    }
    counts
}

/// Feature counts of one document under `cfg` (truncation and binary clipping applied).
pub fn document_features(text: &str, cfg: &TokenizerConfig) -> BTreeMap<String, usize> {
    let mut tokens = tokenize(text);
    if let Some(max) = cfg.max_tokens {
        tokens.truncate(max);
    }
    let mut counts = extract_features(&tokens);
    if cfg.binary {
        counts.values_mut().for_each(|c| *c = 1);
    }
    counts
}

/// Chi-squared score of every feature against the binary label.
///
/// Observed counts are summed term counts per class; the expected count of a
/// class is the feature's total count scaled by the class's document share.
pub fn chi2_scores(d: &Dataset, cfg: &TokenizerConfig) -> Result<BTreeMap<String, f64>> {
    let (positives, negatives) = (d.positives(), d.negatives());
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let n = d.len() as f64;
    let share = [negatives as f64 / n, positives as f64 / n];

    let mut observed: HashMap<String, [f64; 2]> = HashMap::new();
    for sample in d.samples() {
        for (feature, count) in document_features(&sample.text, cfg) {
            observed.entry(feature).or_insert([0.0; 2])[sample.label as usize] += count as f64;
        }
    }

    Ok(observed
        .into_iter()
        .filter(|(_, o)| o[0] + o[1] > 0.0)
        .map(|(feature, o)| {
            let total = o[0] + o[1];
            let score = (0..2)
                .map(|c| {
                    let expected = total * share[c];
                    (o[c] - expected).powi(2) / expected
                })
                .sum();
            (feature, score)
        })
        .collect())
}

/// An immutable feature → column index map.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    features: Vec<String>,
    scores: Vec<f64>,
    capacity: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from features already in index order.
    pub fn from_ranked(ranked: Vec<(String, f64)>, capacity: usize) -> Result<Self> {
        if ranked.len() > capacity {
            return Err(Error::invalid(format!(
                "{} features exceed vocabulary capacity {capacity}",
                ranked.len()
            )));
        }
        let mut index = HashMap::with_capacity(ranked.len());
        let mut features = Vec::with_capacity(ranked.len());
        let mut scores = Vec::with_capacity(ranked.len());
        for (i, (feature, score)) in ranked.into_iter().enumerate() {
            if index.insert(feature.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate feature {feature:?}")));
            }
            features.push(feature);
            scores.push(score);
        }
        Ok(Self {
            index,
            features,
            scores,
            capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Writes `feature<TAB>index<TAB>score`, one line per feature.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (i, (feature, score)) in self.features.iter().zip(&self.scores).enumerate() {
            writeln!(out, "{feature}\t{i}\t{score:?}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ranked = Vec::new();
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("{}:{}: {what}", path.display(), line_no + 1));
            let mut parts = line.split('\t');
            let (Some(feature), Some(index), Some(score), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected three tab-separated fields"));
            };
            let index: usize = index.parse().map_err(|_| bad("bad index"))?;
            if index != ranked.len() {
                return Err(bad("indices must be contiguous from 0"));
            }
            let score: f64 = score.parse().map_err(|_| bad("bad score"))?;
            ranked.push((feature.to_string(), score));
        }
        let capacity = ranked.len();
        Self::from_ranked(ranked, capacity)
    }
}

/// The `k` best-scoring features; ties go to the lexicographically smaller name.
pub fn select_top_k(scores: &BTreeMap<String, f64>, k: usize) -> Result<Vocabulary> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut ranked: Vec<(String, f64)> = scores.iter().map(|(f, s)| (f.clone(), *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Vocabulary::from_ranked(ranked, k)
}

/// Chi-squared selection of a `k`-feature vocabulary from `d`.
pub fn build_vocabulary(d: &Dataset, cfg: &TokenizerConfig, k: usize) -> Result<Vocabulary> {
    select_top_k(&chi2_scores(d, cfg)?, k)
}

/// Sparse feature values, indices strictly increasing, no stored zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Result<Self> {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate index in feature vector"));
        }
        if entries.iter().any(|&(_, v)| !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("feature values must be finite and non-negative"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(i, _)| i)
    }
}

/// Term counts of in-vocabulary features; everything else is dropped.
pub fn vectorize(text: &str, vocab: &Vocabulary, cfg: &TokenizerConfig) -> FeatureVector {
    let mut entries: Vec<(usize, f64)> = document_features(text, cfg)
        .into_iter()
        .filter_map(|(feature, count)| vocab.get(&feature).map(|i| (i, count as f64)))
        .collect();
    entries.sort_by_key(|&(i, _)| i);
    FeatureVector { entries }
}

pub fn vectorize_dataset(d: &Dataset, vocab: &Vocabulary, cfg: &TokenizerConfig) -> Vec<FeatureVector> {
    d.samples().iter().map(|s| vectorize(&s.text, vocab, cfg)).collect()
}
