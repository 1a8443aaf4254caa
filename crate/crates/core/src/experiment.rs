//! Config-driven experiments: strategy comparison at a matched PassRate,
//! PassRate sweeps and fewshot sweeps, with their on-disk outputs.
//!
//! Every random stream of a run is seeded from the run seed: the synthetic
//! corpus, the split, fewshot subsampling, the Pre-classifier and the GA use
//! `seed` itself and the Main-classifier uses `seed + 1`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Deserializer, Serialize};

use crate::dataset::{generate_synthetic, load_csv, split, subsample, CsvSchema, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::{
    comparison_row, evaluate_pipeline, relative_improvement, PipelineReport, Table, COMPARISON_HEADER,
    REPORT_SCHEMA_VERSION,
};
use crate::features::TokenizerConfig;
use crate::ga::GaConfig;
use crate::linear_model::TrainConfig;
use crate::training::{fit_strategy, FeatureSettings, Strategy, StrategyConfig, TrainedCascade, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: SourceKind,
    /// CSV file; relative paths are taken from the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitKeyword {
    /// Shared coordinates only for synthetic data, the whole text otherwise.
    Auto,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenLimit {
    Count(usize),
    Keyword(LimitKeyword),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub k_pre: usize,
    pub k_main: usize,
    pub binary: bool,
    /// How many leading tokens of a document the Pre-classifier reads.
    pub pre_max_tokens: TokenLimit,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        let f = FeatureSettings::default();
        Self {
            k_pre: f.k_pre,
            k_main: f.k_main,
            binary: false,
            pre_max_tokens: TokenLimit::Keyword(LimitKeyword::Auto),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FewshotMode {
    #[serde(rename = "pre-only")]
    PreOnly,
    #[serde(rename = "both")]
    Both,
}

impl FewshotMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FewshotMode::PreOnly => "pre-only",
            FewshotMode::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub strategies: Vec<Strategy>,
    pub target_pass_rate: f64,
    pub pass_rates: Vec<f64>,
    pub fewshot_fractions: Vec<f64>,
    pub fewshot_mode: FewshotMode,
    pub cross_fit_folds: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            strategies: vec![Strategy::Independent, Strategy::Sequential, Strategy::Feedback],
            target_pass_rate: 0.3,
            pass_rates: vec![0.2, 0.3, 0.4, 0.5],
            fewshot_fractions: vec![0.01, 0.02, 0.05, 0.1],
            fewshot_mode: FewshotMode::PreOnly,
            cross_fit_folds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default = "default_pre", deserialize_with = "pre_config")]
    pub pre: TrainConfig,
    #[serde(default)]
    pub main: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub ga: GaConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_pre() -> TrainConfig {
    TrainConfig {
        class_balanced: true,
        ..TrainConfig::default()
    }
}

/// A partial `[pre]` table is laid over the Pre defaults, which train with
/// balanced class weights.
fn pre_config<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    use serde::de::Error as _;
    let given = toml::Table::deserialize(d)?;
    let mut merged = toml::Table::try_from(default_pre()).map_err(D::Error::custom)?;
    merged.extend(given);
    toml::Value::Table(merged).try_into().map_err(D::Error::custom)
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in (0, 1], got {r}")))
    }
}

impl ExperimentConfig {
    /// A synthetic-data config with every other setting at its default.
    pub fn synthetic(spec: SyntheticSpec, seed: u64) -> Self {
        Self {
            seed,
            output_dir: default_output_dir(),
            data: DataConfig {
                source: SourceKind::Synthetic,
                path: None,
                schema: CsvSchema::default(),
                synthetic: spec,
            },
            split: SplitConfig::default(),
            features: FeaturesConfig::default(),
            pre: default_pre(),
            main: TrainConfig::default(),
            experiment: ExperimentSection::default(),
            ga: GaConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(p) = cfg.data.path.as_mut() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces `auto` settings by the values they stand for.
    pub fn resolve(&mut self) {
        if self.features.pre_max_tokens == TokenLimit::Keyword(LimitKeyword::Auto) {
            self.features.pre_max_tokens = match self.data.source {
                SourceKind::Synthetic => TokenLimit::Count(self.data.synthetic.shared_token_count()),
                SourceKind::Csv => TokenLimit::Keyword(LimitKeyword::All),
            };
        }
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| Error::Config(e.to_string());
        match self.data.source {
            SourceKind::Csv if self.data.path.is_none() => {
                return Err(Error::Config("data.path is required when data.source = \"csv\"".into()))
            }
            SourceKind::Synthetic => self.data.synthetic.validate().map_err(config)?,
            SourceKind::Csv => {}
        }
        let [a, b, c] = self.split.ratios;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split.ratios must be positive and sum to 1, got {:?}",
                self.split.ratios
            )));
        }
        if self.features.k_pre == 0 || self.features.k_main == 0 {
            return Err(Error::Config("features.k_pre and features.k_main must be >= 1".into()));
        }
        if self.features.pre_max_tokens == TokenLimit::Count(0) {
            return Err(Error::Config("features.pre_max_tokens must be >= 1".into()));
        }
        self.pre.validate().map_err(config)?;
        self.main.validate().map_err(config)?;
        self.ga.validate().map_err(config)?;

        let e = &self.experiment;
        if e.strategies.is_empty() {
            return Err(Error::Config(
                "experiment.strategies must list at least one strategy".into(),
            ));
        }
        for (i, s) in e.strategies.iter().enumerate() {
            if e.strategies[..i].contains(s) {
                return Err(Error::Config(format!("strategy {s} is listed twice")));
            }
        }
        check_rate("experiment.target_pass_rate", e.target_pass_rate)?;
        for &r in &e.pass_rates {
            check_rate("every experiment.pass_rates entry", r)?;
        }
        for &f in &e.fewshot_fractions {
            check_rate("every experiment.fewshot_fractions entry", f)?;
        }
        Ok(())
    }

    /// The config as TOML, `auto` settings resolved and the output directory left out.
    pub fn snapshot(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.resolve();
        toml::to_string(&resolved).map_err(|e| Error::Format(e.to_string()))
    }

    fn pre_tokenizer(&self) -> TokenizerConfig {
        let max_tokens = match self.features.pre_max_tokens {
            TokenLimit::Count(n) => Some(n),
            TokenLimit::Keyword(LimitKeyword::All) => None,
            TokenLimit::Keyword(LimitKeyword::Auto) => match self.data.source {
                SourceKind::Synthetic => Some(self.data.synthetic.shared_token_count()),
                SourceKind::Csv => None,
            },
        };
        TokenizerConfig {
            binary: self.features.binary,
            max_tokens,
        }
    }

    /// Training settings of one strategy at one PassRate.
    pub fn strategy_config(&self, strategy: Strategy, pass_rate: f64) -> StrategyConfig {
        let mut pre = self.pre.clone();
        pre.seed = self.seed;
        let mut main = self.main.clone();
        main.seed = self.seed.wrapping_add(1);
        let ga = (strategy == Strategy::Feedback).then(|| GaConfig {
            seed: self.seed,
            ..self.ga.clone()
        });
        StrategyConfig {
            strategy,
            pre,
            main,
            target_pass_rate: pass_rate,
            ga,
            features: FeatureSettings {
                k_pre: self.features.k_pre,
                k_main: self.features.k_main,
                pre_tokenizer: self.pre_tokenizer(),
                main_tokenizer: TokenizerConfig {
                    binary: self.features.binary,
                    max_tokens: None,
                },
            },
            cross_fit_folds: self.experiment.cross_fit_folds,
        }
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match cfg.data.source {
        SourceKind::Synthetic => generate_synthetic(&cfg.data.synthetic, cfg.seed),
        SourceKind::Csv => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.path is required when data.source = \"csv\"".into()))?;
            load_csv(path, &cfg.data.schema)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn new(cfg: &ExperimentConfig, d: &Dataset) -> Result<Self> {
        let [a, b, c] = cfg.split.ratios;
        let (train, val, test) = split(d, (a, b, c), cfg.seed)?;
        info!(
            "split {}: train {}, val {}, test {}",
            d.name(),
            train.len(),
            val.len(),
            test.len()
        );
        Ok(Self { train, val, test })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Self::new(cfg, &load_dataset(cfg)?)
    }
}

/// One trained strategy with its validation and test reports.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub trained: TrainedCascade,
    pub val: PipelineReport,
    pub test: PipelineReport,
}

impl StrategyRun {
    pub fn strategy(&self) -> Strategy {
        self.trained.strategy
    }
}

pub fn run_strategy(
    cfg: &ExperimentConfig,
    splits: &Splits,
    pre_train: &Dataset,
    main_train: &Dataset,
    strategy: Strategy,
    pass_rate: f64,
) -> Result<StrategyRun> {
    let data = TrainingData {
        main_train,
        pre_train,
        val: &splits.val,
    };
    let trained = fit_strategy(&data, &cfg.strategy_config(strategy, pass_rate))?;
    let name = strategy.as_str();
    let val = evaluate_pipeline(&trained.pipeline, &splits.val)?.with_tags(name, "val");
    let test = evaluate_pipeline(&trained.pipeline, &splits.test)?.with_tags(name, "test");
    info!(
        "{name}: val F1_e2e {:.4} (pass rate {:.4}), test F1_e2e {:.4}",
        val.f1_e2e, val.pass_rate, test.f1_e2e
    );
    Ok(StrategyRun { trained, val, test })
}

/// Every configured strategy at one PassRate on the same splits.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub pass_rate: f64,
    pub runs: Vec<StrategyRun>,
}

impl Comparison {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&COMPARISON_HEADER);
        for r in &self.runs {
            t.push(comparison_row(r.strategy().as_str(), &r.val, &r.test));
        }
        t
    }

    /// Largest gap between the measured validation PassRates.
    pub fn pass_rate_spread(&self) -> f64 {
        let rates = self.runs.iter().map(|r| r.val.pass_rate);
        let hi = rates.clone().fold(f64::NEG_INFINITY, f64::max);
        let lo = rates.fold(f64::INFINITY, f64::min);
        if self.runs.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

pub fn compare(cfg: &ExperimentConfig, splits: &Splits, pass_rate: f64) -> Result<Comparison> {
    let runs = cfg
        .experiment
        .strategies
        .iter()
        .map(|&s| {
            run_strategy(cfg, splits, &splits.train, &splits.train, s, pass_rate)
                .map_err(|e| Error::InvalidArgument(format!("strategy {s} at pass rate {pass_rate}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { pass_rate, runs })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the pipeline, both reports and any GA history of a run under `dir`.
pub fn write_run(dir: &Path, run: &StrategyRun) -> Result<()> {
    let name = run.strategy().as_str();
    run.trained.pipeline.save(&dir.join("pipelines").join(name))?;
    write_text(
        &dir.join("reports").join(format!("{name}.val.json")),
        &run.val.to_json()?,
    )?;
    write_text(
        &dir.join("reports").join(format!("{name}.test.json")),
        &run.test.to_json()?,
    )?;
    if let Some(ga) = &run.trained.ga {
        write_text(&dir.join("ga_history.csv"), &ga.history_csv())?;
    }
    Ok(())
}

pub fn write_comparison(dir: &Path, c: &Comparison) -> Result<()> {
    for run in &c.runs {
        write_run(dir, run)?;
    }
    let table = c.table();
    write_text(&dir.join("comparison.txt"), &table.to_text())?;
    write_text(&dir.join("comparison.csv"), &table.to_csv())
}

fn write_snapshot(cfg: &ExperimentConfig) -> Result<()> {
    let snapshot = cfg.snapshot()?;
    info!("resolved config:\n{snapshot}");
    write_text(&cfg.output_dir.join("config.toml"), &snapshot)
}

/// Trains every strategy at `target_pass_rate` and writes the comparison.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<Comparison> {
    write_snapshot(cfg)?;
    let splits = Splits::load(cfg)?;
    let c = compare(cfg, &splits, cfg.experiment.target_pass_rate)?;
    write_comparison(&cfg.output_dir, &c)?;
    Ok(c)
}

fn rate_label(r: f64) -> String {
    format!("{r:.4}")
}

/// The comparison repeated for every rate in `pass_rates`, one section each.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<Comparison>> {
    if cfg.experiment.pass_rates.is_empty() {
        return Err(Error::Config(
            "experiment.pass_rates must not be empty for a sweep".into(),
        ));
    }
    write_snapshot(cfg)?;
    let splits = Splits::load(cfg)?;
    let mut sections = Vec::new();
    let mut text = String::new();
    let mut header = vec!["pass_rate"];
    header.extend(COMPARISON_HEADER);
    let mut combined = Table::new(&header);
    for &rate in &cfg.experiment.pass_rates {
        info!("sweep: pass rate {rate}");
        let c = compare(cfg, &splits, rate)?;
        write_comparison(&cfg.output_dir.join(format!("rate-{}", rate_label(rate))), &c)?;
        let table = c.table();
        text.push_str(&format!("== pass rate {} ==\n", rate_label(rate)));
        text.push_str(&table.to_text());
        text.push('\n');
        for row in table.rows {
            let mut r = vec![rate_label(rate)];
            r.extend(row);
            combined.push(r);
        }
        sections.push(c);
    }
    write_text(&cfg.output_dir.join("sweep.txt"), &text)?;
    write_text(&cfg.output_dir.join("sweep.csv"), &combined.to_csv())?;
    Ok(sections)
}

/// Independent and Feedback trained on one fewshot fraction.
#[derive(Debug, Clone)]
pub struct FewshotPair {
    pub fraction: f64,
    pub independent: StrategyRun,
    pub feedback: StrategyRun,
}

impl FewshotPair {
    /// Relative F1_e2e improvement of Feedback over Independent on validation.
    pub fn val_improvement(&self) -> Result<f64> {
        relative_improvement(self.independent.val.f1_e2e, self.feedback.val.f1_e2e)
    }

    pub fn test_improvement(&self) -> Result<f64> {
        relative_improvement(self.independent.test.f1_e2e, self.feedback.test.f1_e2e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewshotFailure {
    pub fraction: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct FewshotOutcome {
    pub mode: FewshotMode,
    pub pairs: Vec<FewshotPair>,
    pub failures: Vec<FewshotFailure>,
}

pub const FEWSHOT_HEADER: [&str; 12] = [
    "fraction",
    "strategy",
    "P_pre",
    "R_pre",
    "P_main",
    "R_main",
    "R_e2e",
    "F1_e2e",
    "improvement",
    "F1_e2e_val",
    "improvement_val",
    "pre_train_size",
];

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn percent(x: Result<f64>) -> String {
    x.map(|v| format!("{:+.2}%", 100.0 * v))
        .unwrap_or_else(|_| "n/a".into())
}

impl FewshotOutcome {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&FEWSHOT_HEADER);
        for p in &self.pairs {
            for run in [&p.independent, &p.feedback] {
                let feedback = run.strategy() == Strategy::Feedback;
                let (imp, imp_val) = if feedback {
                    (percent(p.test_improvement()), percent(p.val_improvement()))
                } else {
                    ("-".into(), "-".into())
                };
                t.push(vec![
                    rate_label(p.fraction),
                    run.strategy().as_str().into(),
                    fmt4(run.test.p_pre),
                    fmt4(run.test.r_pre),
                    fmt4(run.test.p_main),
                    fmt4(run.test.r_main),
                    fmt4(run.test.r_e2e),
                    fmt4(run.test.f1_e2e),
                    imp,
                    fmt4(run.val.f1_e2e),
                    imp_val,
                    run.trained.pre_train_size.to_string(),
                ]);
            }
        }
        t
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            fraction: f64,
            independent_val: &'a PipelineReport,
            independent_test: &'a PipelineReport,
            feedback_val: &'a PipelineReport,
            feedback_test: &'a PipelineReport,
            improvement_val: Option<f64>,
            improvement_test: Option<f64>,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            schema_version: u32,
            mode: &'a str,
            rows: Vec<Row<'a>>,
            failures: &'a [FewshotFailure],
        }
        let rows = self
            .pairs
            .iter()
            .map(|p| Row {
                fraction: p.fraction,
                independent_val: &p.independent.val,
                independent_test: &p.independent.test,
                feedback_val: &p.feedback.val,
                feedback_test: &p.feedback.test,
                improvement_val: p.val_improvement().ok(),
                improvement_test: p.test_improvement().ok(),
            })
            .collect();
        let summary = Summary {
            schema_version: REPORT_SCHEMA_VERSION,
            mode: self.mode.as_str(),
            rows,
            failures: &self.failures,
        };
        Ok(serde_json::to_string_pretty(&summary)?)
    }
}

/// Independent and Feedback with the stage training data cut to `fraction`.
pub fn fewshot_pair(cfg: &ExperimentConfig, splits: &Splits, fraction: f64) -> Result<FewshotPair> {
    let pre_train = subsample(&splits.train, fraction, cfg.seed)?;
    let main_train = match cfg.experiment.fewshot_mode {
        FewshotMode::PreOnly => splits.train.clone(),
        FewshotMode::Both => pre_train.clone(),
    };
    let rate = cfg.experiment.target_pass_rate;
    let independent = run_strategy(cfg, splits, &pre_train, &main_train, Strategy::Independent, rate)?;
    let feedback = run_strategy(cfg, splits, &pre_train, &main_train, Strategy::Feedback, rate)?;
    Ok(FewshotPair {
        fraction,
        independent,
        feedback,
    })
}

/// Runs every fraction; a fraction that fails is recorded and the sweep goes on.
pub fn run_fewshot(cfg: &ExperimentConfig) -> Result<FewshotOutcome> {
    if cfg.experiment.fewshot_fractions.is_empty() {
        return Err(Error::Config("experiment.fewshot_fractions must not be empty".into()));
    }
    write_snapshot(cfg)?;
    let splits = Splits::load(cfg)?;
    let mut outcome = FewshotOutcome {
        mode: cfg.experiment.fewshot_mode,
        pairs: Vec::new(),
        failures: Vec::new(),
    };
    for &fraction in &cfg.experiment.fewshot_fractions {
        info!(
            "fewshot: fraction {fraction} ({})",
            cfg.experiment.fewshot_mode.as_str()
        );
        match fewshot_pair(cfg, &splits, fraction) {
            Ok(pair) => {
                let dir = cfg.output_dir.join(format!("fraction-{}", rate_label(fraction)));
                write_run(&dir, &pair.independent)?;
                write_run(&dir, &pair.feedback)?;
                outcome.pairs.push(pair);
            }
            Err(e) => {
                log::warn!("fewshot fraction {fraction} failed: {e}");
                outcome.failures.push(FewshotFailure {
                    fraction,
                    message: e.to_string(),
                });
            }
        }
    }
    let mut text = outcome.table().to_text();
    for f in &outcome.failures {
        text.push_str(&format!(
            "error at fraction {}: {}\n",
            rate_label(f.fraction),
            f.message
        ));
    }
    write_text(&cfg.output_dir.join("fewshot.txt"), &text)?;
    write_text(&cfg.output_dir.join("fewshot.csv"), &outcome.table().to_csv())?;
    write_text(&cfg.output_dir.join("fewshot.json"), &outcome.summary_json()?)?;
    Ok(outcome)
}

/// Trains one strategy at `target_pass_rate` and writes its pipeline and reports.
pub fn run_train(cfg: &ExperimentConfig, strategy: Strategy) -> Result<StrategyRun> {
    write_snapshot(cfg)?;
    let splits = Splits::load(cfg)?;
    let run = run_strategy(
        cfg,
        &splits,
        &splits.train,
        &splits.train,
        strategy,
        cfg.experiment.target_pass_rate,
    )?;
    write_run(&cfg.output_dir, &run)?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nsource = \"synthetic\"\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.resolve();
        cfg.validate().unwrap();
        assert!(cfg.pre.class_balanced);
        assert!(!cfg.main.class_balanced);
        assert_eq!(cfg.features.pre_max_tokens, TokenLimit::Count(12));
        assert_eq!(cfg.experiment.strategies.len(), 3);
    }

    #[test]
    fn partial_pre_table_keeps_balanced_weights() {
        let cfg = ExperimentConfig::from_toml(&format!("{MINIMAL}[pre]\nepochs = 3\n")).unwrap();
        assert_eq!(cfg.pre.epochs, 3);
        assert!(cfg.pre.class_balanced);
        let off = ExperimentConfig::from_toml(&format!("{MINIMAL}[pre]\nclass_balanced = false\n")).unwrap();
        assert!(!off.pre.class_balanced);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            format!("{MINIMAL}colour = 1\n"),
            format!("{MINIMAL}[pre]\nepoch = 3\n"),
            format!("{MINIMAL}[ga]\npopulation = 8\n"),
            format!("{MINIMAL}[experiment]\nstrategy = [\"feedback\"]\n"),
        ] {
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{text}");
        }
    }

    #[test]
    fn validation_failures() {
        let bad = [
            "[experiment]\nstrategies = []\n",
            "[experiment]\ntarget_pass_rate = 0.0\n",
            "[experiment]\npass_rates = [0.2, 1.5]\n",
            "[experiment]\nstrategies = [\"feedback\", \"feedback\"]\n",
            "[split]\nratios = [0.5, 0.2, 0.2]\n",
            "[data.synthetic]\ndim_shared = 0\n",
        ];
        for extra in bad {
            let cfg = ExperimentConfig::from_toml(&format!("{MINIMAL}{extra}")).unwrap();
            assert!(cfg.validate().is_err(), "{extra}");
        }
        let csv = ExperimentConfig::from_toml("[data]\nsource = \"csv\"\n").unwrap();
        assert!(csv.validate().is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = ExperimentConfig::from_toml(&format!("seed = 9\n{MINIMAL}[ga]\ngenerations = 4\n")).unwrap();
        cfg.resolve();
        let again = ExperimentConfig::from_toml(&cfg.snapshot().unwrap()).unwrap();
        assert_eq!(again.seed, 9);
        assert_eq!(again.ga.generations, 4);
        assert_eq!(again.features, cfg.features);
        assert_eq!(again.pre, cfg.pre);
    }

    #[test]
    fn seeds_follow_the_run_seed() {
        let cfg = ExperimentConfig::synthetic(SyntheticSpec::default(), 41);
        let s = cfg.strategy_config(Strategy::Feedback, 0.3);
        assert_eq!((s.pre.seed, s.main.seed, s.ga.unwrap().seed), (41, 42, 41));
        assert!(cfg.strategy_config(Strategy::Independent, 0.3).ga.is_none());
    }
}
