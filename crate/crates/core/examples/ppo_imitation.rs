//! PPO initialized by behavior cloning on expert dialogs. Frame 0 of the
//! curve is the imitation policy before any on-policy update.
//!
//! cargo run --release --example ppo_imitation -- [seed] [frames]

use std::sync::Arc;

use seqreward::agents::{evaluate_policy, ppo_train, PpoConfig, RandomAgent};
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
    let env = DialogEnv::new(ontology.clone(), EnvConfig::default())?;
    let config = PpoConfig {
        total_frames: frames,
        ..PpoConfig::default()
    };

    let run = ppo_train(&env, None, &corpus, &config, seed)?;
    let acc: Vec<String> = run
        .bc
        .held_out_accuracy
        .iter()
        .map(|a| format!("{a:.2}"))
        .collect();
    println!(
        "cloning held-out accuracy by epoch [{}], kept epoch {}",
        acc.join(" "),
        run.bc.best_epoch
    );
    let random = RandomAgent {
        action_dim: ontology.action_dim(),
    };
    let r = evaluate_policy(&random, &env, config.eval_dialogs, config.eval_seed)?;
    println!("random policy success {:.3}", r.success_rate);
    for p in &run.curve.points {
        println!(
            "{:>6} frames  success {:.3}  turns {:.2}",
            p.frames, p.success_rate, p.avg_turn
        );
    }
    Ok(())
}
