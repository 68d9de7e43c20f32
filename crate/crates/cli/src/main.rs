use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hashreid::eval::{exit_report_csv, stagewise_csv};
use hashreid::hamming::{read_codes, timing_csv};
use hashreid::pipeline::*;
use hashreid::policy::PolicyKind;

/// Multi-exit hashing re-identification: training, exit policies and
/// budgeted Hamming retrieval on a run directory.
#[derive(Parser, Debug)]
#[command(name = "hashreid", version)]
struct Cli {
    /// Run configuration (TOML). Defaults to `<out>/config.toml`, then the reference setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Overrides the stage-1 code length.
    #[arg(long, global = true)]
    code_len: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset (or ingest embeddings) into the run directory.
    GenData,
    /// Train the encoder, saving checkpoints and flip histories.
    Train,
    /// Rebuild the flip table from saved checkpoints.
    CollectFlips,
    /// Train the ETS classifier and calibrate QS/GS thresholds.
    TrainPolicy,
    /// Write binary codes and stage-1 features of the test splits.
    EncodeGallery,
    /// Stage-wise retrieval metrics from the encoded test splits.
    Eval,
    /// Budget curves and exit statistics per policy.
    Budget {
        /// Comma-separated mean-cost budgets.
        #[arg(long, value_delimiter = ',')]
        budget: Vec<f64>,
        /// Comma-separated policies (random, qs, gs, ets, ets+gs, full); all available when omitted.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<PolicyKind>,
    },
    /// Packed-Hamming versus dense Euclidean scan timings.
    BenchHamming,
    /// Top-k neighbours of every code in a query file.
    Search {
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// gen-data, train, train-policy, encode-gallery and budget in sequence.
    RunAll,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let stored = cli.out.join("config.toml");
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None if stored.exists() => RunConfig::load(&stored)?,
        None => RunConfig::reference(cli.seed.unwrap_or(0)),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(c) = cli.code_len {
        cfg.encoder.code_len = Some(c);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_budget(out: &BudgetOutcome) {
    let rows: Vec<_> = out.runs.iter().map(|r| (r.policy.name().to_string(), r.exits)).collect();
    print!("{}", stagewise_csv(&out.stage_metrics));
    print!("{}", exit_report_csv(&rows));
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::Search { gallery, queries, k } = &cli.command {
        let g = read_codes(gallery)?;
        let q = read_codes(queries)?;
        let hits = search(&g, &q, *k)?;
        print!("{}", search_tsv(&q, &hits));
        return Ok(());
    }
    let cfg = resolve_config(&cli)?;
    let run = RunDir::new(&cli.out).with_context(|| format!("opening run directory {}", cli.out.display()))?;
    match &cli.command {
        Command::GenData => {
            let ds = gen_data_cmd(&cfg, &run)?;
            for name in ["train", "val_query", "val_gallery", "query", "gallery"] {
                println!("{name}\t{}", ds.split(name).map_or(0, |s| s.len()));
            }
        }
        Command::Train => {
            let out = train_cmd(&cfg, &run)?;
            if let (Some(first), Some(last)) = (out.log.first(), out.log.last()) {
                println!("loss {:.4} -> {:.4} over {} epochs", first.loss, last.loss, out.log.len());
            }
            let [easy, hard, skip] = out.flips.label_counts();
            println!("flip labels: easy {easy}, hard {hard}, skip {skip}");
        }
        Command::CollectFlips => {
            let table = collect_flips_cmd(&cfg, &run)?;
            let [easy, hard, skip] = table.label_counts();
            println!("flip labels: easy {easy}, hard {hard}, skip {skip}");
        }
        Command::TrainPolicy => {
            let out = train_policy_cmd(&cfg, &run)?;
            println!("ets train accuracy {:.4}", out.ets.train_accuracy);
            print!("{}", calibration_csv(&out.calibration));
        }
        Command::EncodeGallery => {
            encode_gallery_cmd(&cfg, &run)?;
            println!("codes written to {}", run.root().join("codes").display());
        }
        Command::Eval => print!("{}", stagewise_csv(&eval_cmd(&cfg, &run)?)),
        Command::Budget { budget, policy } => {
            if budget.iter().any(|b| !b.is_finite() || *b <= 0.0) {
                bail!("budgets must be positive");
            }
            let budgets = (!budget.is_empty()).then_some(budget.as_slice());
            print_budget(&budget_cmd(&cfg, &run, policy, budgets)?);
        }
        Command::BenchHamming => {
            let rows = bench_cmd(&cfg, &run)?;
            print!("{}", timing_csv(&rows));
        }
        Command::RunAll => print_budget(&run_all(&cfg, &run)?),
        Command::Search { .. } => unreachable!("handled above"),
    }
    Ok(())
}
