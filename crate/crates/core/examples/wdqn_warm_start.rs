//! Warm-started DQN: the replay buffer is seeded with expert transitions and
//! the Q-network pre-trained on them before any interaction.
//!
//! cargo run --release --example wdqn_warm_start -- [seed] [frames]

use std::sync::Arc;

use seqreward::agents::{dqn_train, wdqn_train, DqnConfig, WarmStartConfig};
use seqreward::dialogenv::{generate_expert_corpus, DialogEnv, EnvConfig};
use seqreward::ontology::Ontology;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let frames: usize = args
        .next()
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(20_000);
    let ontology = Arc::new(Ontology::desk_default());
    let corpus = generate_expert_corpus(&ontology, &EnvConfig::default(), 660, seed)?;
    let env = DialogEnv::new(ontology, EnvConfig::default())?;
    let config = DqnConfig {
        total_frames: frames,
        ..DqnConfig::default()
    };

    let warm = wdqn_train(
        &env,
        None,
        &corpus,
        &config,
        &WarmStartConfig::default(),
        seed,
    )?;
    let cold = dqn_train(&env, None, &config, seed)?;
    println!(
        "replay starts with {} expert transitions",
        warm.initial_buffer_len
    );
    println!("frames    warm   cold");
    for (w, c) in warm.curve.points.iter().zip(&cold.curve.points) {
        println!(
            "{:>6}  {:.3}  {:.3}",
            w.frames, w.success_rate, c.success_rate
        );
    }
    Ok(())
}
