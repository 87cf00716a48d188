//! Plays a few dialogs between the rule-based expert and the agenda user,
//! writing the turn-level trace as JSON lines to stdout.
//!
//! cargo run --example expert_dialog -- [n_dialogs] [seed]

use std::sync::Arc;

use seqreward::dialogenv::{DialogEnv, EnvConfig, ExpertPolicy, TraceWriter, Transition};
use seqreward::ontology::{build_assignment_matrix, Ontology};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(3);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let ontology = Arc::new(Ontology::desk_default());
    let m = build_assignment_matrix(&ontology);
    let expert = ExpertPolicy::new(&ontology)?;
    let mut env = DialogEnv::new(ontology.clone(), EnvConfig::default())?;
    let mut trace = TraceWriter::new(std::io::stdout().lock());

    for episode in 0..n {
        let mut state = env.reset(seed.wrapping_add(episode as u64));
        let goal = env
            .user()
            .map(|u| u.goal.active_domains())
            .unwrap_or_default();
        eprintln!("dialog {episode}: goal domains {goal:?}");
        let mut turn = 0;
        loop {
            let action = expert.act(&state);
            let step = env.step(action)?;
            let t = Transition {
                state,
                action,
                r_ori: step.reward,
                r_shaped: step.reward,
                next_state: step.state.clone(),
                done: step.done,
                success: step.success,
            };
            trace.write(&ontology, &m, episode, turn, &t)?;
            state = step.state;
            turn += 1;
            if step.done {
                eprintln!("  {turn} turns, success {:?}", step.success);
                break;
            }
        }
    }
    Ok(())
}
