//! Stage-level and end-to-end precision, recall and F1.

use serde::{Deserialize, Serialize};

use crate::cascade::CascadePipeline;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linear_model::Scorer;

/// Version of the flat JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl StageMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

pub fn precision_recall_f1(predictions: &[u8], labels: &[u8]) -> Result<StageMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("metrics of an empty prediction set"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Ok(StageMetrics::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndToEnd {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pipeline precision is the Main-classifier's precision; pipeline recall is
/// the product of the stage recalls.
pub fn compose_e2e(r_pre: f64, p_main: f64, r_main: f64) -> EndToEnd {
    let recall = r_pre * r_main;
    EndToEnd {
        precision: p_main,
        recall,
        f1: f1_score(p_main, recall),
    }
}

/// `(treatment - baseline) / baseline`.
pub fn relative_improvement(baseline_f1: f64, treatment_f1: f64) -> Result<f64> {
    if !(baseline_f1 > 0.0) {
        return Err(Error::invalid(format!("baseline F1 must be > 0, got {baseline_f1}")));
    }
    Ok((treatment_f1 - baseline_f1) / baseline_f1)
}

/// Stage and end-to-end metrics of one pipeline on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub strategy: String,
    pub split: String,
    pub n_samples: usize,
    pub positives: usize,
    pub p_pre: f64,
    pub r_pre: f64,
    pub p_main: f64,
    pub r_main: f64,
    pub p_e2e: f64,
    pub r_e2e: f64,
    pub f1_e2e: f64,
    pub pass_rate: f64,
    pub main_calls: usize,
    #[serde(with = "crate::serde_float")]
    pub th_pre: f64,
    pub th_main: f64,
}

impl PipelineReport {
    pub fn with_tags(mut self, strategy: &str, split: &str) -> Self {
        self.strategy = strategy.to_string();
        self.split = split.to_string();
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every numeric field finite (the threshold may be `-inf`).
    pub fn is_finite(&self) -> bool {
        [
            self.p_pre,
            self.r_pre,
            self.p_main,
            self.r_main,
            self.p_e2e,
            self.r_e2e,
            self.f1_e2e,
            self.pass_rate,
            self.th_main,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Builds a report from precomputed scores.
///
/// `main_score(i)` is only consulted for samples whose pre-score passes, and
/// `main_calls` counts exactly those calls.
pub fn report_from_scores(
    labels: &[u8],
    pre_scores: &[f64],
    mut main_score: impl FnMut(usize) -> Result<f64>,
    th_pre: f64,
    th_main: f64,
) -> Result<PipelineReport> {
    if labels.len() != pre_scores.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: pre_scores.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::Dataset("evaluation set has no positive labels".into()));
    }

    let mut gate = Vec::with_capacity(labels.len());
    let mut passed_labels = Vec::new();
    let mut passed_predictions = Vec::new();
    let mut final_labels = Vec::with_capacity(labels.len());
    for (i, (&y, &pre)) in labels.iter().zip(pre_scores).enumerate() {
        let passed = pre > th_pre;
        gate.push(u8::from(passed));
        if passed {
            let predicted = u8::from(main_score(i)? > th_main);
            passed_labels.push(y);
            passed_predictions.push(predicted);
            final_labels.push(predicted);
        } else {
            final_labels.push(0);
        }
    }

    let pre = precision_recall_f1(&gate, labels)?;
    let main = if passed_labels.is_empty() {
        StageMetrics::from_counts(0, 0, 0, 0)
    } else {
        precision_recall_f1(&passed_predictions, &passed_labels)?
    };
    let e2e = precision_recall_f1(&final_labels, labels)?;

    Ok(PipelineReport {
        schema_version: REPORT_SCHEMA_VERSION,
        strategy: String::new(),
        split: String::new(),
        n_samples: labels.len(),
        positives,
        p_pre: pre.precision,
        r_pre: pre.recall,
        p_main: main.precision,
        r_main: main.recall,
        p_e2e: e2e.precision,
        r_e2e: e2e.recall,
        f1_e2e: e2e.f1,
        pass_rate: passed_labels.len() as f64 / labels.len() as f64,
        main_calls: passed_labels.len(),
        th_pre,
        th_main,
    })
}

/// Runs the pipeline over `d`; end-to-end figures are counted directly from
/// the final decisions.
pub fn evaluate_pipeline<P: Scorer, M: Scorer>(p: &CascadePipeline<P, M>, d: &Dataset) -> Result<PipelineReport> {
    let pre_scores = p.pre.score_dataset(d)?;
    let samples = d.samples();
    report_from_scores(
        &d.labels(),
        &pre_scores,
        |i| p.main.score_text(&samples[i].text),
        p.th_pre,
        p.th_main,
    )
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

/// A titled table that renders as aligned text or CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].len())
                    .chain(std::iter::once(self.header[c].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&self.header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let escape = |c: &String| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        };
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            out.push_str(&r.iter().map(escape).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Table row in the column order of the strategy comparison.
pub fn comparison_row(label: &str, val: &PipelineReport, test: &PipelineReport) -> Vec<String> {
    vec![
        label.to_string(),
        fmt4(test.r_pre),
        fmt4(test.p_main),
        fmt4(test.r_main),
        fmt4(test.r_e2e),
        fmt4(test.f1_e2e),
        fmt4(val.f1_e2e),
        fmt4(val.pass_rate),
        fmt4(test.pass_rate),
        test.main_calls.to_string(),
    ]
}

pub const COMPARISON_HEADER: [&str; 10] = [
    "strategy",
    "R_pre",
    "P_main",
    "R_main",
    "R_e2e",
    "F1_e2e",
    "F1_e2e_val",
    "pass_rate_val",
    "pass_rate_test",
    "main_calls_test",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_degenerate() {
        let m = precision_recall_f1(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = precision_recall_f1(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(precision_recall_f1(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn counted_example() {
        let m = StageMetrics::from_counts(3, 1, 2, 0);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn compose_identity() {
        let e = compose_e2e(1.0, 1.0, 1.0);
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn improvement() {
        assert_eq!(relative_improvement(0.4, 0.4).unwrap(), 0.0);
        assert!(relative_improvement(0.0, 0.4).is_err());
    }

    #[test]
    fn closed_and_open_gates() {
        let labels = [1, 0, 1, 0];
        let pre = [0.2, 0.4, 0.6, 0.8];
        let main = [0.9, 0.1, 0.3, 0.7];
        let mut calls = 0;
        let closed = report_from_scores(
            &labels,
            &pre,
            |i| {
                calls += 1;
                Ok(main[i])
            },
            1.0,
            0.5,
        )
        .unwrap();
        assert_eq!((closed.main_calls, closed.f1_e2e), (0, 0.0));
        assert_eq!(calls, 0);

        let open = report_from_scores(&labels, &pre, |i| Ok(main[i]), f64::NEG_INFINITY, 0.5).unwrap();
        let standalone = precision_recall_f1(&[1, 0, 0, 1], &labels).unwrap();
        assert_eq!(open.r_pre, 1.0);
        assert_eq!(open.f1_e2e, standalone.f1);
        assert_eq!(open.p_e2e, standalone.precision);
        assert_eq!(open.main_calls, 4);
    }

    #[test]
    fn requires_positives() {
        assert!(report_from_scores(&[0, 0], &[0.1, 0.2], |_| Ok(0.5), 0.0, 0.5).is_err());
    }

    #[test]
    fn table_rendering() {
        let mut t = Table::new(&["a", "bb"]);
        t.push(vec!["x,y".into(), "1".into()]);
        assert_eq!(t.to_csv(), "a,bb\n\"x,y\",1\n");
        let text = t.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("a    bb"));
    }

    #[test]
    fn report_json_is_flat() {
        let r = report_from_scores(&[1, 0], &[0.9, 0.1], |_| Ok(0.9), f64::NEG_INFINITY, 0.5)
            .unwrap()
            .with_tags("independent", "val");
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        let obj = v.as_object().unwrap();
        assert!(obj.values().all(|x| !x.is_object() && !x.is_array()));
        assert_eq!(obj["th_pre"], "-inf");
        assert!(r.is_finite());
    }
}
