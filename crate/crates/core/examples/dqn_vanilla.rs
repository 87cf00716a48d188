//! Cold-start DQN on the environment reward alone, with evaluation
//! checkpoints along the way.
//!
//! cargo run --release --example dqn_vanilla -- [seed] [frames]

use std::sync::Arc;
use std::time::Instant;

use seqreward::agents::{dqn_train, DqnConfig};
use seqreward::dialogenv::{DialogEnv, EnvConfig};
use seqreward::ontology::Ontology;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let frames: usize = args
        .next()
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(100_000);
    let env = DialogEnv::new(Arc::new(Ontology::desk_default()), EnvConfig::default())?;
    let config = DqnConfig {
        total_frames: frames,
        ..DqnConfig::default()
    };
    let t = Instant::now();
    let run = dqn_train(&env, None, &config, seed)?;
    for p in run.curve.points.iter().filter(|p| p.frames % 5_000 == 0) {
        println!(
            "{:>7} frames  success {:.3}  reward {:>7.2}  turns {:.2}",
            p.frames, p.success_rate, p.reward_score, p.avg_turn
        );
    }
    match run.curve.frames_to(0.9) {
        Some(f) => println!("reached 0.90 success after {f} frames"),
        None => println!("never reached 0.90 success"),
    }
    println!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
