//! End-to-end pipeline on the one-domain micro ontology: corpus, DAE,
//! adversarial reward model, evaluation, agents and the report, in about a
//! second. Stages whose manifests are current are skipped on rerun.
//!
//! cargo run --example micro_pipeline -- [out_dir]

use std::path::PathBuf;

use seqreward::pipeline::{ExperimentConfig, Pipeline};

fn main() -> anyhow::Result<()> {
    let mut config = ExperimentConfig::load(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/micro.toml"),
    )?;
    if let Some(out) = std::env::args().nth(1) {
        config.out_dir = out.into();
    }
    let p = Pipeline::new(config)?;
    for o in p.reproduce()? {
        let state = if o.skipped { "up to date" } else { "ran" };
        println!(
            "{:<7} {state}, {} outputs",
            o.stage.name(),
            o.manifest.outputs.len()
        );
    }
    for s in p.read_agent_summaries()? {
        println!(
            "{:<5} {:<8} success {:.3} +- {:.3}",
            s.algorithm, s.variant, s.success_mean, s.success_std
        );
    }
    println!("report at {}", p.write_report()?.display());
    Ok(())
}
