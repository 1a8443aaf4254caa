//! Labeled text samples: CSV ingestion, stratified splitting, fewshot
//! subsampling and a synthetic corpus generator.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::tokenize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: u64,
    pub text: String,
    pub label: u8,
}

impl Sample {
    pub fn new(id: u64, text: impl Into<String>, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Dataset(format!("sample {id}: label {label} is not 0 or 1")));
        }
        Ok(Self {
            id,
            text: text.into(),
            label,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    samples: Vec<Sample>,
    positives: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.label > 1 {
                return Err(Error::Dataset(format!(
                    "sample {}: label {} is not 0 or 1",
                    s.id, s.label
                )));
            }
            if !seen.insert(s.id) {
                return Err(Error::Dataset(format!("duplicate sample id {}", s.id)));
            }
        }
        let positives = samples.iter().filter(|s| s.label == 1).count();
        Ok(Self {
            name: name.into(),
            samples,
            positives,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.samples.len() - self.positives
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn require_both_labels(&self) -> Result<()> {
        if self.positives() == 0 || self.negatives() == 0 {
            return Err(Error::SingleClass {
                positives: self.positives(),
                negatives: self.negatives(),
            });
        }
        Ok(())
    }

    /// Samples at `indices`, in the given order.
    pub fn select(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        let samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let positives = samples.iter().filter(|s| s.label == 1).count();
        Dataset {
            name: name.into(),
            samples,
            positives,
        }
    }

    fn class_indices(&self) -> [Vec<usize>; 2] {
        let mut by_class = [Vec::new(), Vec::new()];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.label as usize].push(i);
        }
        by_class
    }
}

/// Column names used when reading a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSchema {
    pub label_column: String,
    pub text_column: String,
    /// Rows with fewer tokens are dropped (0 keeps everything).
    pub min_tokens: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
            text_column: "text".into(),
            min_tokens: 0,
        }
    }
}

/// Reads a headered, comma-separated UTF-8 file. Ids are assigned in file order.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Csv {
            path: path.to_path_buf(),
            message: format!(
                "missing column {name:?} (header: {:?})",
                headers.iter().collect::<Vec<_>>()
            ),
        })
    };
    let label_col = column(&schema.label_column)?;
    let text_col = column(&schema.text_column)?;

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::BadRow {
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize, name: &str| {
            record.get(col).ok_or_else(|| Error::BadRow {
                row,
                message: format!("missing field {name:?}"),
            })
        };
        let raw_label = field(label_col, &schema.label_column)?.trim();
        let label = match raw_label {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::BadRow {
                    row,
                    message: format!("label {other:?} is not 0 or 1"),
                })
            }
        };
        let text = field(text_col, &schema.text_column)?;
        if schema.min_tokens > 0 && tokenize(text).len() < schema.min_tokens {
            continue;
        }
        samples.push(Sample {
            id: samples.len() as u64,
            text: text.to_string(),
            label,
        });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, samples)
}

/// Writes `id,label,text` rows with a header.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    writer.write_record(["id", "label", "text"]).map_err(csv_err)?;
    for s in d.samples() {
        writer
            .write_record([s.id.to_string(), s.label.to_string(), s.text.clone()])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Splits `total` into integer parts proportional to `weights` (largest remainder).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut leftover = total - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        parts[i] += 1;
        leftover -= 1;
    }
    parts
}

/// Stratified train/validation/test partition.
///
/// Each class is shuffled and its members are given evenly spaced positions in
/// [0, 1); the merged order is then cut at the overall split sizes, so every
/// split holds each class within one sample of its share.
pub fn split(d: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("split ratios must be positive, got {r:?}")));
    }
    if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios must sum to 1, got {r:?}")));
    }
    if d.len() < 3 {
        return Err(Error::Dataset(format!("cannot split {} samples three ways", d.len())));
    }
    let sizes = apportion(d.len(), &r);
    if sizes.contains(&0) {
        return Err(Error::Dataset(format!(
            "split of {} samples by {r:?} leaves an empty part ({sizes:?})",
            d.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, u8, usize)> = Vec::with_capacity(d.len());
    for (class, mut members) in d.class_indices().into_iter().enumerate() {
        members.shuffle(&mut rng);
        let n_c = members.len() as f64;
        for (rank, idx) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n_c, class as u8, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let order: Vec<usize> = keyed.into_iter().map(|(_, _, i)| i).collect();
    let (train, rest) = order.split_at(sizes[0]);
    let (val, test) = rest.split_at(sizes[1]);
    let sorted = |part: &[usize]| {
        let mut p = part.to_vec();
        p.sort_unstable();
        p
    };
    Ok((
        d.select(format!("{}/train", d.name()), &sorted(train)),
        d.select(format!("{}/val", d.name()), &sorted(val)),
        d.select(format!("{}/test", d.name()), &sorted(test)),
    ))
}

/// Stratified random subset of `round(fraction * n)` samples, kept in original order.
pub fn subsample(d: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(d.clone());
    }
    let target = (fraction * d.len() as f64).round() as usize;
    if target < 2 {
        return Err(Error::Dataset(format!(
            "fraction {fraction} of {} samples keeps {target}, need at least 2",
            d.len()
        )));
    }
    let by_class = d.class_indices();
    let quotas = apportion(target, &[by_class[0].len() as f64, by_class[1].len() as f64]);
    if quotas.contains(&0) {
        return Err(Error::Dataset(format!(
            "fraction {fraction} leaves an empty class (negatives {}, positives {})",
            quotas[0], quotas[1]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(target);
    for (mut members, quota) in by_class.into_iter().zip(quotas) {
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..quota]);
    }
    keep.sort_unstable();
    Ok(d.select(format!("{}@{fraction}", d.name()), &keep))
}

/// Parameters of the synthetic two-view corpus.
///
/// Shared coordinates are visible to both stages; main-only coordinates follow
/// them in the text and are meant to be read only by the Main-classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub dim_shared: usize,
    pub dim_main_only: usize,
    pub positive_fraction: f64,
    pub hard_negative_fraction: f64,
    pub cluster_separation: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            dim_shared: 6,
            dim_main_only: 6,
            positive_fraction: 0.25,
            hard_negative_fraction: 0.2,
            cluster_separation: 3.0,
            noise_sigma: 0.5,
        }
    }
}

/// Number of discretization buckets per coordinate.
pub const SYNTHETIC_BUCKETS: usize = 16;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.n_samples < 10 {
            return fail(format!("n_samples must be >= 10, got {}", self.n_samples));
        }
        if self.dim_shared < 1 {
            return fail("dim_shared must be >= 1".into());
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return fail(format!(
                "positive_fraction must be in (0, 1), got {}",
                self.positive_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.hard_negative_fraction) {
            return fail(format!(
                "hard_negative_fraction must be in [0, 1), got {}",
                self.hard_negative_fraction
            ));
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return fail(format!(
                "cluster_separation must be > 0, got {}",
                self.cluster_separation
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// Tokens a stage must read to see exactly the shared coordinates
    /// (each coordinate token `f<i>_b<j>` tokenizes to two tokens).
    pub fn shared_token_count(&self) -> usize {
        2 * self.dim_shared
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let positives = (self.n_samples as f64 * self.positive_fraction).round() as usize;
        let negatives = self.n_samples - positives;
        let hard = (negatives as f64 * self.hard_negative_fraction).round() as usize;
        (positives, hard, negatives - hard)
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Positive,
    HardNegative,
    EasyNegative,
}

/// Generates the synthetic corpus.
///
/// Positives and hard negatives share one cluster in the shared subspace
/// (`+sep/(2k)` on each of the `k` class coordinates) while easy negatives
/// sit at `-sep/(2k)`, so the two groups overlap for the Pre-classifier.
/// Positives and hard negatives carry a difficulty `u ~ U(0,1)`: the last
/// shared coordinate encodes `u`, and in the main-only subspace they sit at
/// `±(1-u)·sep/2`, so the Main-classifier separates them well when `u` is
/// small and not at all when `u` approaches 1. Every coordinate has unit
/// spread plus `noise_sigma` of extra Gaussian noise and is written as the
/// token `f<i>_b<bucket>`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_pos, n_hard, n_easy) = spec.counts();
    let mut kinds: Vec<Kind> = std::iter::repeat_n(Kind::Positive, n_pos)
        .chain(std::iter::repeat_n(Kind::HardNegative, n_hard))
        .chain(std::iter::repeat_n(Kind::EasyNegative, n_easy))
        .collect();
    kinds.shuffle(&mut rng);

    let sep = spec.cluster_separation;
    let spread = (1.0 + spec.noise_sigma * spec.noise_sigma).sqrt();
    let unit = Normal::new(0.0, spread).map_err(|e| Error::invalid(e.to_string()))?;
    let half_range = sep / 2.0 + 3.0 * spread;
    let bucket = |x: f64| -> usize {
        let pos = (x + half_range) / (2.0 * half_range) * SYNTHETIC_BUCKETS as f64;
        pos.floor().clamp(0.0, (SYNTHETIC_BUCKETS - 1) as f64) as usize
    };
    let has_difficulty_axis = spec.dim_shared >= 2;
    let class_dims = if has_difficulty_axis { spec.dim_shared - 1 } else { 1 };
    // L1 distance `sep` between the two shared clusters.
    let shared_offset = sep / (2.0 * class_dims as f64);

    let mut samples = Vec::with_capacity(spec.n_samples);
    for (id, kind) in kinds.into_iter().enumerate() {
        let u: f64 = rng.gen();
        let mut coords = Vec::with_capacity(spec.dim_shared + spec.dim_main_only);
        let shared_center = match kind {
            Kind::EasyNegative => -shared_offset,
            _ => shared_offset,
        };
        for _ in 0..class_dims {
            coords.push(shared_center + unit.sample(&mut rng));
        }
        if has_difficulty_axis {
            coords.push(sep * (u - 0.5) + spec.noise_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
        let main_center = match kind {
            Kind::Positive => (1.0 - u) * sep / 2.0,
            Kind::HardNegative => -(1.0 - u) * sep / 2.0,
            Kind::EasyNegative => -sep / 2.0,
        };
        for _ in 0..spec.dim_main_only {
            coords.push(main_center + unit.sample(&mut rng));
        }
        let text = coords
            .iter()
            .enumerate()
            .map(|(i, &x)| format!("f{i}_b{}", bucket(x)))
            .collect::<Vec<_>>()
            .join(" ");
        let label = u8::from(matches!(kind, Kind::Positive));
        samples.push(Sample {
            id: id as u64,
            text,
            label,
        });
    }
    Dataset::new(format!("synthetic-{seed}"), samples)
}
