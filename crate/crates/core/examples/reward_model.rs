//! Full reward-model pipeline: expert corpus, DAE, staged adversarial
//! training, then the wrong-domain classification analysis for every score
//! variant.
//!
//! cargo run --release --example reward_model -- [seed]

use std::sync::Arc;
use std::time::Instant;

use seqreward::advreward::{train_adversarial, AdvConfig, AdversarialModel, PairSchedule};
use seqreward::dae::{train_dae, DaeConfig};
use seqreward::dialogenv::{generate_expert_corpus, EnvConfig};
use seqreward::evalharness::{build_testset, evaluate_variants, ScoreVariant};
use seqreward::ontology::{build_assignment_matrix, Ontology};
use seqreward::shaping::{RewardEstimator, ShapingConfig};

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(0);
    let ontology = Arc::new(Ontology::desk_default());
    let corpus = generate_expert_corpus(&ontology, &EnvConfig::default(), 660, seed)?;

    let t = Instant::now();
    let dae = train_dae(&corpus, &ontology, &DaeConfig::default(), seed)?;
    println!(
        "dae: {} epochs, {:.1}s",
        dae.epochs.len(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let adv = train_adversarial(
        &dae.model,
        &corpus,
        &ontology,
        &PairSchedule::default(),
        &AdvConfig::default(),
        seed,
    )?;
    for (k, s) in adv.stages.iter().enumerate() {
        let tail: Vec<String> = s
            .probe
            .iter()
            .rev()
            .take(5)
            .rev()
            .map(|p| format!("{p:.2}"))
            .collect();
        println!(
            "stage {}: {} gen / {} disc steps, stabilized {}, last probes [{}]",
            k + 1,
            s.gen_steps,
            s.disc_steps,
            s.stabilized,
            tail.join(" ")
        );
    }
    println!("adversarial training {:.1}s", t.elapsed().as_secs_f64());

    let model = AdversarialModel::new(&adv, &ontology, &dae.model, false);
    let est = RewardEstimator::new(
        &ontology,
        Arc::new(dae.model.clone()),
        &model,
        ShapingConfig::default(),
    )?;
    let ts = build_testset(
        &corpus,
        &dae.validation_indices,
        &build_assignment_matrix(&ontology),
        seed,
    )?;
    println!("test set: {} positives / {} negatives", ts.len(), ts.len());
    println!("variant  acc    prec   rec    f1     bias   jsd    top10  bottom10");
    for r in evaluate_variants(&est, &ts, &ScoreVariant::ALL, 0.5, 100)? {
        let m = r.metrics;
        println!(
            "{:<8} {:.3}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}  {:.3}",
            r.variant,
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.bias_ratio,
            r.jsd,
            r.real_top_decile,
            r.fake_bottom_decile
        );
    }
    Ok(())
}
