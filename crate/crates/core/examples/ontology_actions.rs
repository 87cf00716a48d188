//! Lists the action space of an ontology: every valid triple with its
//! one-hot sub-actions, and checks that decomposition round trips.
//!
//! cargo run --example ontology_actions -- [ontology.toml]

use seqreward::ontology::{
    build_assignment_matrix, compose_action, decompose_action, DialogAction, Level, Ontology,
};

fn main() -> anyhow::Result<()> {
    let ontology = match std::env::args().nth(1) {
        Some(path) => Ontology::load(path)?,
        None => Ontology::desk_default(),
    };
    let m = build_assignment_matrix(&ontology);
    println!(
        "{} domains x {} acts x {} slots, {} valid actions, hash {}",
        ontology.level_size(Level::Domain),
        ontology.level_size(Level::Act),
        ontology.level_size(Level::Slot),
        m.action_dim(),
        &ontology.hash()[..12]
    );
    for i in 0..m.action_dim() {
        let a = DialogAction(i);
        let sub = decompose_action(a, &m)?;
        anyhow::ensure!(
            compose_action(&sub, &m)? == a,
            "action {i} does not round trip"
        );
        println!(
            "{i:>3}  {:<32} d={} a={} s={}",
            ontology.triple_name(&sub.triple()),
            sub.domain.index,
            sub.act.index,
            sub.slot.index
        );
    }
    Ok(())
}
