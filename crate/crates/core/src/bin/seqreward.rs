use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use seqreward::pipeline::{ExperimentConfig, Pipeline, Stage, StageOutcome};

/// Multi-level sequential reward estimation and reward-shaped dialog agents.
#[derive(Parser)]
#[command(name = "seqreward", version)]
struct Cli {
    /// Experiment config (TOML). Without it the built-in desk defaults apply.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rerun stages even when their artifacts are current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and write the corpus.
    GenCorpus,
    /// Train the disentangled autoencoder on the corpus.
    TrainDae,
    /// Staged adversarial training of the level discriminators.
    TrainGan,
    /// Train every configured agent on vanilla and shaped rewards.
    TrainAgent,
    /// Classification analysis of the reward model.
    Eval,
    /// Run every stage and write report.md.
    Reproduce,
    /// Print the effective config as TOML.
    ShowConfig,
}

fn print_outcome(o: &StageOutcome, secs: f64) {
    let status = if o.skipped { "skipped" } else { "done" };
    println!("[{}] {status} in {secs:.1}s", o.stage.name());
    if !o.skipped {
        for n in &o.notes {
            println!("  {n}");
        }
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = cli.out {
        config.out_dir = o;
    }
    if let Command::ShowConfig = cli.command {
        print!("{}", config.to_toml_string());
        return Ok(());
    }
    let pipeline = Pipeline::new(config)?.force(cli.force);
    let stage = match cli.command {
        Command::GenCorpus => Stage::Corpus,
        Command::TrainDae => Stage::Dae,
        Command::TrainGan => Stage::Gan,
        Command::TrainAgent => Stage::Agents,
        Command::Eval => Stage::Eval,
        Command::Reproduce => {
            let t = Instant::now();
            for stage in Stage::ALL {
                let ts = Instant::now();
                let o = pipeline
                    .run_stage(stage)
                    .with_context(|| format!("stage `{}` failed", stage.name()))?;
                print_outcome(&o, ts.elapsed().as_secs_f64());
            }
            let report = pipeline.write_report()?;
            println!(
                "report: {} ({:.1}s)",
                report.display(),
                t.elapsed().as_secs_f64()
            );
            return Ok(());
        }
        Command::ShowConfig => unreachable!(),
    };
    let t = Instant::now();
    let o = pipeline
        .run_stage(stage)
        .with_context(|| format!("stage `{}` failed", stage.name()))?;
    print_outcome(&o, t.elapsed().as_secs_f64());
    Ok(())
}
