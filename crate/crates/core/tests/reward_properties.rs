use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqreward::advreward::{AdversarialModel, DiscriminatorSet};
use seqreward::dae::{DaeConfig, DaeModel};
use seqreward::dialogenv::{generate_expert_corpus, EnvConfig};
use seqreward::evalharness::{build_testset, jsd_from_probs, metrics_from_scores, ScoreHistogram};
use seqreward::nn::sigmoid;
use seqreward::ontology::{build_assignment_matrix, Ontology};
use seqreward::shaping::{combine, gated_rewards, Combination, RewardEstimator, ShapingConfig};

fn untrained_estimator(alpha: f64) -> (Arc<Ontology>, RewardEstimator) {
    let o = Arc::new(Ontology::desk_default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = DaeConfig {
        hidden: 16,
        latent: 8,
        decoder_hidden: 16,
        ..DaeConfig::default()
    };
    let dae = DaeModel::new(&o, &cfg, &mut rng);
    let adv = AdversarialModel {
        discriminators: DiscriminatorSet::new(&o, 8, 8, &mut rng),
        generators: None,
        ontology_hash: o.hash(),
        dae_hash: dae.content_hash(),
    };
    let shaping = ShapingConfig {
        alpha,
        ..ShapingConfig::default()
    };
    let est = RewardEstimator::new(&o, Arc::new(dae), &adv, shaping).unwrap();
    (o, est)
}

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

proptest! {
    #[test]
    fn gated_rewards_stay_below_their_scores(y in prop::array::uniform3(unit()), tau in 0.1..50.0f64, b in -1.0..0.0f64) {
        let r = gated_rewards(y, tau, b);
        prop_assert_eq!(r[0], y[0]);
        prop_assert!(r[1] <= y[1] && r[1] >= 0.0);
        prop_assert!(r[2] <= y[2] && r[2] >= 0.0);
        let avg = combine(Combination::SeqAvg, r);
        prop_assert!((0.0..=1.0).contains(&avg));
        prop_assert_eq!(combine(Combination::SeqPrd, r), r[2]);
    }

    #[test]
    fn gating_is_monotone_in_upstream_scores(y in prop::array::uniform3(unit()), bump in 0.0..0.5f64) {
        let (tau, b) = (10.0, -0.5);
        let base = gated_rewards(y, tau, b);
        let up_d = gated_rewards([(y[0] + bump).min(1.0), y[1], y[2]], tau, b);
        prop_assert!(up_d[1] >= base[1] && up_d[2] >= base[2]);
        let up_a = gated_rewards([y[0], (y[1] + bump).min(1.0), y[2]], tau, b);
        prop_assert!(up_a[2] >= base[2]);
    }

    #[test]
    fn gate_slope_at_the_threshold_is_tau_over_four(tau in 0.5..40.0f64, ya in 0.1..=1.0f64) {
        let b = -0.5;
        let h = 1e-6;
        let at = |rd: f64| gated_rewards([rd, ya, 0.0], tau, b)[1];
        let slope = (at(0.5 + h) - at(0.5 - h)) / (2.0 * h);
        prop_assert!((slope - ya * tau / 4.0).abs() < 1e-4 * (1.0 + tau));
        prop_assert!((at(0.5) - ya * sigmoid(0.0)).abs() < 1e-15);
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(p in prop::collection::vec(0.0..1.0f64, 10), q in prop::collection::vec(0.0..1.0f64, 10)) {
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum::<f64>().max(1e-12);
            v.iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let (p, q) = (norm(&p), norm(&q));
        let a = jsd_from_probs(&p, &q);
        let b = jsd_from_probs(&q, &p);
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&a));
        prop_assert!(jsd_from_probs(&p, &p) < 1e-12);
    }

    #[test]
    fn confusion_counts_are_consistent(pos in prop::collection::vec(unit(), 1..60), neg in prop::collection::vec(unit(), 1..60), t in 0.05..0.95f64) {
        let m = metrics_from_scores(&pos, &neg, t);
        let c = m.confusion;
        prop_assert_eq!(c.tp + c.fn_, pos.len());
        prop_assert_eq!(c.tn + c.fp, neg.len());
        prop_assert!((m.accuracy - (c.tp + c.tn) as f64 / (pos.len() + neg.len()) as f64).abs() < 1e-12);
        if c.tp > 0 {
            prop_assert!((m.bias_ratio - c.tn as f64 / c.tp as f64).abs() < 1e-12);
        }
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn histograms_keep_every_score(scores in prop::collection::vec(unit(), 0..200), bins in 2usize..120) {
        let h = ScoreHistogram::new(&scores, bins).unwrap();
        prop_assert_eq!(h.total(), scores.len());
        prop_assert_eq!(h.edges.len(), bins + 1);
        if !scores.is_empty() {
            prop_assert!((h.mass_between(0.0, 1.0) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_alpha_shaping_is_the_identity() {
    let (o, est) = untrained_estimator(0.0);
    let corpus = generate_expert_corpus(&o, &EnvConfig::default(), 5, 0).unwrap();
    for (state, action) in &corpus.pairs {
        for r in [-1.0, 0.0, 40.0, 1e-9] {
            assert_eq!(est.shape(r, state, *action).unwrap(), r);
        }
    }
    let (_, est) = untrained_estimator(5.0);
    let (state, action) = &corpus.pairs[0];
    let bonus = 5.0 * est.combined(state, *action).unwrap();
    assert!((est.shape(-1.0, state, *action).unwrap() - (-1.0 + bonus)).abs() < 1e-12);
    assert!((0.0..=5.0).contains(&bonus));
}

#[test]
fn estimator_rejects_a_foreign_ontology() {
    let (_, est) = untrained_estimator(1.0);
    assert!(est.check_ontology(&Ontology::micro()).is_err());
    assert!(est.check_ontology(&Ontology::desk_default()).is_ok());
}

#[test]
fn wrong_domain_negatives_are_uniform() {
    let o = Arc::new(Ontology::desk_default());
    let m = build_assignment_matrix(&o);
    let corpus = generate_expert_corpus(&o, &EnvConfig::default(), 2, 0).unwrap();
    let n = 20_000;
    let ts = build_testset(&corpus, &vec![0; n], &m, 7).unwrap();
    let domain = m.triple(corpus.pairs[0].1).unwrap().domain;
    let others: Vec<usize> = (0..m.action_dim())
        .filter(|&a| m.rows()[a].domain != domain)
        .collect();
    let mut counts = vec![0usize; m.action_dim()];
    for a in &ts.negatives {
        assert_ne!(m.triple(*a).unwrap().domain, domain);
        counts[a.0] += 1;
    }
    let expected = n as f64 / others.len() as f64;
    let chi2: f64 = others
        .iter()
        .map(|&a| (counts[a] as f64 - expected).powi(2) / expected)
        .sum();
    // 99.9th percentile of chi-square with 31 degrees of freedom
    assert_eq!(others.len(), 32);
    assert!(chi2 < 61.1, "chi-square {chi2}");
}

#[test]
fn single_domain_ontologies_have_no_wrong_domain_test() {
    let o = Arc::new(Ontology::micro());
    let corpus = generate_expert_corpus(&o, &EnvConfig::default(), 2, 0).unwrap();
    assert!(build_testset(&corpus, &[0], &build_assignment_matrix(&o), 0).is_err());
}
