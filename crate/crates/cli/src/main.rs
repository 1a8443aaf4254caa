use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use cascadeforge::cascade::CascadePipeline;
use cascadeforge::dataset::{generate_synthetic, load_csv, write_csv, CsvSchema, SyntheticSpec};
use cascadeforge::evaluation::evaluate_pipeline;
use cascadeforge::experiment::{run_compare, run_fewshot, run_sweep, run_train, ExperimentConfig, SourceKind};
use cascadeforge::training::Strategy;

#[derive(Parser)]
#[command(
    name = "cascadeforge",
    version,
    about = "Train and evaluate two-stage classifier cascades"
)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for GA fitness evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as CSV.
    GenData(GenDataArgs),
    /// Train one strategy and save its pipeline and reports.
    Train {
        #[arg(long, default_value = "feedback")]
        strategy: Strategy,
    },
    /// Score a labeled CSV file with a saved pipeline.
    Evaluate {
        /// Directory written by `train` (or `compare`) for one strategy.
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long, default_value = "text")]
        text_column: String,
    },
    /// Train every configured strategy at the target PassRate.
    Compare,
    /// Repeat the comparison for each configured PassRate.
    SweepPassrate,
    /// Independent vs Feedback over the configured fewshot fractions.
    Fewshot,
}

#[derive(Args)]
struct GenDataArgs {
    /// CSV file to write.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    dim_shared: Option<usize>,
    #[arg(long)]
    dim_main_only: Option<usize>,
    #[arg(long)]
    positive_fraction: Option<f64>,
    #[arg(long)]
    hard_negative_fraction: Option<f64>,
    #[arg(long)]
    cluster_separation: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

impl GenDataArgs {
    fn apply(&self, spec: &mut SyntheticSpec) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { spec.$f = v; })* };
        }
        set!(
            n_samples,
            dim_shared,
            dim_main_only,
            positive_fraction,
            hard_negative_fraction,
            cluster_separation,
            noise_sigma
        );
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("this command needs --config <FILE>")?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let (mut spec, mut seed) = match &cli.config {
        Some(_) => {
            let cfg = load_config(cli)?;
            if cfg.data.source != SourceKind::Synthetic {
                bail!("gen-data needs a config whose data.source is \"synthetic\"");
            }
            (cfg.data.synthetic, cfg.seed)
        }
        None => (SyntheticSpec::default(), 0),
    };
    args.apply(&mut spec);
    if let Some(s) = cli.seed {
        seed = s;
    }
    let d = generate_synthetic(&spec, seed)?;
    if let Some(dir) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_csv(&d, &args.output)?;
    info!(
        "wrote {} samples ({} positive) to {}",
        d.len(),
        d.positives(),
        args.output.display()
    );
    Ok(())
}

fn evaluate(cli: &Cli, pipeline: &Path, data: &Path, schema: CsvSchema) -> Result<()> {
    let p = CascadePipeline::load(pipeline).with_context(|| format!("loading pipeline {}", pipeline.display()))?;
    let d = load_csv(data, &schema)?;
    let split = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = evaluate_pipeline(&p, &d)?.with_tags("pipeline", &split);
    let json = report.to_json()?;
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("report.json");
            fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
            info!(
                "F1_e2e {:.4}, pass rate {:.4}; report in {}",
                report.f1_e2e,
                report.pass_rate,
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::GenData(args) => gen_data(cli, args)?,
        Command::Train { strategy } => {
            let cfg = load_config(cli)?;
            let r = run_train(&cfg, *strategy)?;
            println!(
                "{strategy}: val F1_e2e {:.4}, test F1_e2e {:.4}, outputs in {}",
                r.val.f1_e2e,
                r.test.f1_e2e,
                cfg.output_dir.display()
            );
        }
        Command::Evaluate {
            pipeline,
            data,
            label_column,
            text_column,
        } => {
            let schema = CsvSchema {
                label_column: label_column.clone(),
                text_column: text_column.clone(),
                min_tokens: 0,
            };
            evaluate(cli, pipeline, data, schema)?;
        }
        Command::Compare => {
            let cfg = load_config(cli)?;
            let c = run_compare(&cfg)?;
            print!("{}", c.table().to_text());
        }
        Command::SweepPassrate => {
            let cfg = load_config(cli)?;
            for c in run_sweep(&cfg)? {
                println!("pass rate {}", c.pass_rate);
                print!("{}", c.table().to_text());
            }
        }
        Command::Fewshot => {
            let cfg = load_config(cli)?;
            let outcome = run_fewshot(&cfg)?;
            print!("{}", outcome.table().to_text());
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("error: fraction {}: {}", f.fraction, f.message);
                }
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CASCADEFORGE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
