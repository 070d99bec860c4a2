use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recexplain::config::RunConfig;
use recexplain::pipeline::{self, Workspace};
use recexplain::{Error, ErrorKind, Result};

/// Explainable recommendation: graph tokenizer, adapters and a small
/// injected language model.
///
/// Every stage reads and writes artifacts under the work directory and
/// records the resolved configuration next to its outputs.
#[derive(Parser, Debug)]
#[command(name = "recexplain", version)]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Globals {
    /// TOML run configuration; command line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Work directory holding stage artifacts.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,
    /// Dataset file (line-delimited records). Defaults to the synthetic one.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Leave user and item profiles out of the prompt.
    #[arg(long, global = true)]
    no_profiles: bool,
    /// Disable the per-layer injection; slot replacement remains.
    #[arg(long, global = true)]
    no_injection: bool,
    /// Serve users unseen in training through the propagation rule.
    #[arg(long, global = true)]
    zero_shot: bool,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the planted synthetic dataset.
    Synth,
    /// Split interactions into train, validation, test and zero-shot sets.
    Split,
    /// Train the graph tokenizer.
    TrainGnn,
    /// Build profiles and explanations, then pretrain and freeze the LM.
    PretrainLm,
    /// Train the adapters against the frozen LM and graph embeddings.
    TrainAdapter,
    /// Generate explanations for test and zero-shot pairs.
    Generate {
        /// Line-delimited {user_id, item_id} pairs instead of the defaults.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Score generated explanations per sparsity split.
    Evaluate {
        #[arg(long)]
        explanations: Option<PathBuf>,
        #[arg(long)]
        references: Option<PathBuf>,
    },
    /// Every stage in order, from the synthetic dataset (unless a dataset
    /// is given) to the report.
    Run,
}

fn resolve(g: &Globals) -> Result<RunConfig> {
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(d) = &g.dataset {
        config.dataset = Some(d.clone());
    }
    if g.no_profiles {
        config.ablation.profiles = false;
    }
    if g.no_injection {
        config.ablation.injection = false;
    }
    if g.zero_shot {
        config.zero_shot = true;
    }
    Ok(config.resolved())
}

fn execute(cli: &Cli) -> Result<()> {
    let config = resolve(&cli.globals)?;
    let ws = Workspace::new(&cli.globals.work);
    match &cli.command {
        Command::Synth => synth(&ws, &config),
        Command::Split => split(&ws, &config),
        Command::TrainGnn => train_gnn(&ws, &config),
        Command::PretrainLm => pretrain_lm(&ws, &config),
        Command::TrainAdapter => train_adapter(&ws, &config),
        Command::Generate { pairs } => generate(&ws, &config, pairs.as_deref()),
        Command::Evaluate {
            explanations,
            references,
        } => evaluate(&ws, &config, explanations.as_deref(), references.as_deref()),
        Command::Run => {
            if config.dataset.is_none() {
                synth(&ws, &config)?;
            }
            split(&ws, &config)?;
            train_gnn(&ws, &config)?;
            pretrain_lm(&ws, &config)?;
            train_adapter(&ws, &config)?;
            generate(&ws, &config, None)?;
            evaluate(&ws, &config, None, None)
        }
    }
}

fn synth(ws: &Workspace, config: &RunConfig) -> Result<()> {
    let path = pipeline::run_synth(ws, config)?;
    println!("synth: wrote {}", path.display());
    Ok(())
}

fn split(ws: &Workspace, config: &RunConfig) -> Result<()> {
    let m = pipeline::run_split(ws, config)?;
    println!(
        "split: {} users in graph, {} zero-shot, {} bins ({} merged), {} items repaired",
        m.graph_index.users.len(),
        m.zero_shot_users.len(),
        m.bins.len(),
        m.merged_bins,
        m.repaired_items
    );
    Ok(())
}

fn train_gnn(ws: &Workspace, config: &RunConfig) -> Result<()> {
    let (_, log) = pipeline::run_train_gnn(ws, config)?;
    println!(
        "train-gnn: {} epochs, best validation recall@{} {:.4} at epoch {}",
        log.epochs.len(),
        config.gnn.eval_k,
        log.best_recall,
        log.best_epoch
    );
    Ok(())
}

fn pretrain_lm(ws: &Workspace, config: &RunConfig) -> Result<()> {
    let (_, log) = pipeline::run_pretrain_lm(ws, config)?;
    println!(
        "pretrain-lm: held-out NLL {:.4} -> {:.4}",
        log.heldout_before, log.heldout_after
    );
    Ok(())
}

fn train_adapter(ws: &Workspace, config: &RunConfig) -> Result<()> {
    let (_, log) = pipeline::run_train_adapter(ws, config)?;
    println!(
        "train-adapter ({}): held-out NLL {:.4} -> {:.4}, injection {}",
        config.ablation.label(),
        log.heldout_before,
        log.heldout_after,
        if log.injection { "on" } else { "off" }
    );
    Ok(())
}

fn generate(ws: &Workspace, config: &RunConfig, pairs: Option<&std::path::Path>) -> Result<()> {
    let records = pipeline::run_generate(ws, config, pairs)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    println!("generate: {} explanations, {failed} failed", records.len() - failed);
    Ok(())
}

fn evaluate(
    ws: &Workspace,
    config: &RunConfig,
    explanations: Option<&std::path::Path>,
    references: Option<&std::path::Path>,
) -> Result<()> {
    let report = pipeline::run_evaluate(ws, config, explanations, references)?;
    print!("{}", report.render());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(ErrorKind::Usage.exit_code() as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.globals.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.kind().exit_code() as u8
}
