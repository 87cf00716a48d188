//! Trains the disentangled auto-encoder on an expert corpus and reports
//! reconstruction, classifier and linear-probe quality on the held-out split.
//!
//! cargo run --release --example train_dae -- [n_dialogs] [seed]

use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqreward::dae::{linear_probe_accuracy, train_dae, DaeBatch, DaeConfig};
use seqreward::dialogenv::{generate_expert_corpus, EnvConfig};
use seqreward::ontology::{Level, Ontology};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_dialogs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(660);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);

    let ontology = Arc::new(Ontology::desk_default());
    let corpus = generate_expert_corpus(&ontology, &EnvConfig::default(), n_dialogs, seed)?;
    println!("corpus: {} pairs from {n_dialogs} dialogs", corpus.len());

    let start = Instant::now();
    let run = train_dae(&corpus, &ontology, &DaeConfig::default(), seed)?;
    println!(
        "trained {} epochs (best {}) in {:.1}s",
        run.epochs.len(),
        run.best_epoch,
        start.elapsed().as_secs_f64()
    );
    let last = run.epochs.last().unwrap();
    println!(
        "final train loss {:.4} (recon {:.4}, cls {:.4} {:.4} {:.4}), validation {:.4}",
        last.train.total,
        last.train.recon,
        last.train.cls[0],
        last.train.cls[1],
        last.train.cls[2],
        last.validation
    );

    let model = &run.model;
    let train = DaeBatch::from_corpus(&corpus, &ontology, &run.train_indices)?;
    let held = DaeBatch::from_corpus(&corpus, &ontology, &run.validation_indices)?;
    println!(
        "held-out reconstruction accuracy {:.4}",
        model.reconstruction_accuracy(held.states.view())?
    );
    for level in Level::ALL {
        println!(
            "held-out {:?} classifier accuracy {:.4}",
            level,
            model.classifier_accuracy(&held, level)?
        );
    }

    // probes on the domain block against a random projection of the state
    let zt = model.encode_mean(train.states.view())?;
    let zh = model.encode_mean(held.states.view())?;
    let width = model.latent_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let proj =
        Array2::from_shape_simple_fn((train.states.ncols(), width), || rng.gen_range(-1.0..1.0));
    let (rt, rh) = (train.states.dot(&proj), held.states.dot(&proj));
    for level in Level::ALL {
        let k = ontology.level_size(level);
        let i = level.index();
        let on_block = linear_probe_accuracy(
            zt.level(Level::Domain),
            &train.labels[i],
            zh.level(Level::Domain),
            &held.labels[i],
            k,
            30,
            seed,
        )?;
        let on_random =
            linear_probe_accuracy(&rt, &train.labels[i], &rh, &held.labels[i], k, 30, seed)?;
        println!("probe s_d -> {level:?}: {on_block:.3} (random projection {on_random:.3})");
    }
    Ok(())
}
