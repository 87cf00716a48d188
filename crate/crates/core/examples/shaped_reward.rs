//! Scores expert and random turns with a trained reward model and compares
//! the shaping bonus each receives. Trains the corpus, DAE and adversarial
//! stages first unless the run directory already holds them.
//!
//! cargo run --release --example shaped_reward -- [config.toml] [n_dialogs]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqreward::dialogenv::{DialogEnv, ExpertPolicy};
use seqreward::evalharness::mean_std;
use seqreward::ontology::DialogAction;
use seqreward::pipeline::{ExperimentConfig, Pipeline, Stage};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml"));
    let n: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(200);
    let p = Pipeline::new(ExperimentConfig::load(&path)?)?;
    for s in [Stage::Corpus, Stage::Dae, Stage::Gan] {
        let o = p.run_stage(s)?;
        eprintln!(
            "{}: {}",
            s.name(),
            if o.skipped { "up to date" } else { "trained" }
        );
    }
    let est = p.load_estimator()?;
    let ontology = p.ontology().clone();
    let expert = ExpertPolicy::new(&ontology)?;
    let mut env = DialogEnv::new(ontology.clone(), p.config().corpus.env.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed("example/shaped_reward"));

    // bonus for the expert's choice and for a uniformly random one, same states
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for i in 0..n {
        let mut state = env.reset(rng.gen());
        if i % 50 == 0 {
            eprintln!("dialog {i}/{n}");
        }
        loop {
            let a = expert.act(&state);
            let r = DialogAction(rng.gen_range(0..ontology.action_dim()));
            on.push(est.bonus_from_scores(est.score_levels(&state, a)?));
            off.push(est.bonus_from_scores(est.score_levels(&state, r)?));
            let step = env.step(a)?;
            state = step.state;
            if step.done {
                break;
            }
        }
    }
    let (em, es) = mean_std(&on);
    let (rm, rs) = mean_std(&off);
    let c = est.config();
    println!(
        "{} turns, alpha {} tau {} b {} {}",
        on.len(),
        c.alpha,
        c.tau,
        c.b,
        c.combination.name()
    );
    println!("expert action bonus  {em:>7.3} +- {es:.3}");
    println!("random action bonus  {rm:>7.3} +- {rs:.3}");
    Ok(())
}
