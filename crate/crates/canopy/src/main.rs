use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use canopy::cli::{self, MetricSummary};
use canopy::config::ExperimentConfig;
use canopy::error::Result;

#[derive(Parser)]
#[command(name = "canopy", version, about = "Hierarchical-interest news recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse or generate the corpus and cache it under the output directory.
    Prepare(Common),
    /// Train one model per seed, checkpointing the best validation epoch.
    Train(Common),
    /// Rank the test split with the trained checkpoints.
    Evaluate(Common),
    /// Recall and diversity curves for candidate generation.
    Recall(Common),
    /// Score with interest levels disabled one at a time.
    Ablate(Common),
    /// Grid over the level-mixing coefficients.
    Sweep(Common),
    /// Compare analytic gradients against finite differences.
    Gradcheck(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Prepare(c)
            | Command::Train(c)
            | Command::Evaluate(c)
            | Command::Recall(c)
            | Command::Ablate(c)
            | Command::Sweep(c)
            | Command::Gradcheck(c) => c,
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
        config.gradcheck.fixture_seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn ms(m: &MetricSummary) -> String {
    format!("{:.2} +/- {:.2}", m.mean, m.std)
}

fn run(command: &Command) -> Result<ExitCode> {
    let config = load_config(command.common())?;
    match command {
        Command::Prepare(_) => {
            let outcome = cli::cmd_prepare(&config)?;
            if outcome.reused {
                println!("reusing prepared artifacts under {}", config.out_dir.display());
            }
            let s = &outcome.stats;
            println!(
                "catalog: {} articles, {} topics, {} subtopics, {} words, {} entities ({} rows skipped)",
                s.n_news, s.n_topics, s.n_subtopics, s.n_words, s.n_entities, s.skipped_news_rows
            );
            for split in &s.splits {
                println!(
                    "{}: {} impressions, {} candidates, {} clicks, mean history {:.1}",
                    split.split,
                    split.n_impressions,
                    split.n_candidates,
                    split.n_clicks,
                    split.mean_history_len
                );
            }
        }
        Command::Train(_) => {
            let summary = cli::cmd_train(&config)?;
            for s in &summary.per_seed {
                println!(
                    "seed {}: best epoch {} of {}, validation AUC {:.2}",
                    s.seed, s.best_epoch, s.epochs, s.best_val_auc
                );
            }
            println!(
                "best validation AUC {} over {} seed(s)",
                ms(&summary.best_val_auc),
                summary.seeds.len()
            );
        }
        Command::Evaluate(_) => {
            let summary = cli::cmd_evaluate(&config)?;
            println!(
                "AUC {}  MRR {}  nDCG@5 {}  nDCG@10 {}",
                ms(&summary.metrics.auc),
                ms(&summary.metrics.mrr),
                ms(&summary.metrics.ndcg5),
                ms(&summary.metrics.ndcg10)
            );
            println!(
                "{} impressions scored, {} skipped",
                summary.n_impressions, summary.n_skipped
            );
        }
        Command::Recall(_) => {
            let summary = cli::cmd_recall(&config)?;
            println!(
                "pool {} articles, {:.1} channels per impression",
                summary.pool_size, summary.mean_channels
            );
            for p in &summary.points {
                println!(
                    "k={}: multi recall {} ilad {}  single recall {} ilad {}",
                    p.k,
                    ms(&p.multi_recall),
                    ms(&p.multi_ilad),
                    ms(&p.single_recall),
                    ms(&p.single_ilad)
                );
            }
        }
        Command::Ablate(_) => {
            let summary = cli::cmd_ablate(&config)?;
            for row in &summary.rows {
                let p = row
                    .t_vs_full
                    .as_ref()
                    .map(|t| format!(", p={:.4}", t.p_value))
                    .unwrap_or_default();
                println!(
                    "{}: AUC {} (delta {:+.2}{})",
                    row.name,
                    ms(&row.metrics.auc),
                    row.auc_delta_vs_full,
                    p
                );
            }
        }
        Command::Sweep(_) => {
            let summary = cli::cmd_sweep(&config)?;
            println!(
                "{} cells; best AUC at lambda_s={}, lambda_t={}",
                summary.cells.len(),
                summary.best_lambda_s,
                summary.best_lambda_t
            );
            println!("full grid in {}", config.out_dir.join("sweep.csv").display());
        }
        Command::Gradcheck(_) => {
            let summary = cli::cmd_gradcheck(&config)?;
            println!(
                "max relative error {:.3e} at {} over {} entries: {}",
                summary.max_rel_error,
                summary.worst,
                summary.checked_entries,
                if summary.pass { "PASS" } else { "FAIL" }
            );
            if !summary.pass {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
