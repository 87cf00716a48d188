//! DQN with and without the learned reward shaping, same seed, same budget.
//!
//! cargo run --release --example dqn_shaped -- [config.toml] [seed] [frames]

use std::path::PathBuf;
use std::time::Instant;

use seqreward::agents::{dqn_train, DqnConfig};
use seqreward::dialogenv::DialogEnv;
use seqreward::pipeline::{ExperimentConfig, Pipeline, Stage};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml"));
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let p = Pipeline::new(ExperimentConfig::load(&path)?)?;
    let frames: usize = args
        .next()
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(p.config().agents.dqn.total_frames);
    for s in [Stage::Corpus, Stage::Dae, Stage::Gan] {
        p.run_stage(s)?;
    }
    let est = p.load_estimator()?;
    let env = DialogEnv::new(p.ontology().clone(), p.config().corpus.env.clone())?;
    let config = DqnConfig {
        total_frames: frames,
        ..p.config().agents.dqn.clone()
    };

    for (name, shaping) in [
        ("vanilla", None),
        (est.config().combination.name(), Some(&est)),
    ] {
        let t = Instant::now();
        let run = dqn_train(&env, shaping, &config, seed)?;
        let last = run.curve.last().expect("curve has a frame-0 point");
        let reached = run
            .curve
            .frames_to(0.9)
            .map_or("never".to_string(), |f| f.to_string());
        println!(
            "{name:<8} final success {:.3}  reward {:>7.2}  turns {:>5.2}  0.90 at {reached}  ({:.0}s)",
            last.success_rate,
            last.reward_score,
            last.avg_turn,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
