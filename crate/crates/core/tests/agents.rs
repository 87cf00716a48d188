use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqreward::agents::{
    dqn_train, evaluate_policy, ppo_train, wdqn_train, DqnConfig, EpsilonSchedule, ExpertAgent,
    PpoAgent, PpoConfig, QAgent, RandomAgent, ReplayBuffer, WarmStartConfig,
};
use seqreward::dialogenv::{
    episode_reward, generate_expert_corpus, DialogEnv, DialogState, EnvConfig, ExpertPolicy,
    Transition,
};
use seqreward::ontology::{DialogAction, Ontology};

fn desk_env() -> DialogEnv {
    DialogEnv::new(Arc::new(Ontology::desk_default()), EnvConfig::default()).unwrap()
}

fn quick_dqn() -> DqnConfig {
    DqnConfig {
        total_frames: 2_000,
        train_every: 200,
        batches_per_train: 20,
        eval_every: 1_000,
        eval_dialogs: 100,
        buffer_capacity: 5_000,
        ..DqnConfig::default()
    }
}

fn transition(tag: u8) -> Transition {
    let s = DialogState::from_bits(vec![tag & 1, (tag >> 1) & 1]).unwrap();
    Transition {
        state: s.clone(),
        action: DialogAction(tag as usize),
        r_ori: -1.0,
        r_shaped: -1.0,
        next_state: s,
        done: false,
        success: None,
    }
}

#[test]
fn epsilon_schedule_is_linear_then_flat() {
    let e = DqnConfig::default().epsilon;
    assert_eq!(e.at(0), 0.1);
    assert!((e.at(25_000) - 0.055).abs() < 1e-12);
    assert_eq!(e.at(50_000), 0.01);
    assert_eq!(e.at(90_000), 0.01);
    for f in (0..50_000).step_by(997) {
        let want = 0.1 + (0.01 - 0.1) * f as f64 / 50_000.0;
        assert!((e.at(f) - want).abs() < 1e-12);
    }
    let flat = EpsilonSchedule {
        start: 0.3,
        end: 0.2,
        decay_frames: 0,
    };
    assert_eq!(flat.at(0), 0.2);
}

#[test]
fn replay_is_fifo_and_bounded() {
    let mut b = ReplayBuffer::new(3);
    for i in 0..5 {
        b.push(transition(i));
        assert!(b.len() <= 3);
    }
    let kept: Vec<usize> = b.iter().map(|t| t.action.0).collect();
    assert_eq!(kept, vec![2, 3, 4]);
}

#[test]
fn replay_sampling_is_uniform() {
    let n = 50;
    let mut b = ReplayBuffer::new(n);
    for i in 0..n {
        b.push(transition(i as u8));
    }
    let draws = 50_000;
    let mut counts = vec![0usize; n];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in b.sample_indices(draws, &mut rng) {
        counts[i] += 1;
    }
    let expected = draws as f64 / n as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 99th percentile of chi-square with 49 degrees of freedom
    assert!(chi2 < 74.92, "chi2 {chi2}");
}

#[test]
fn expert_and_random_bounds() {
    let env = desk_env();
    let expert = ExpertAgent(ExpertPolicy::new(env.ontology()).unwrap());
    let r = evaluate_policy(&expert, &env, 1_000, 3).unwrap();
    assert!(r.success_rate >= 0.95, "expert {}", r.success_rate);
    let random = RandomAgent {
        action_dim: env.ontology().action_dim(),
    };
    let r = evaluate_policy(&random, &env, 1_000, 3).unwrap();
    assert!(r.success_rate <= 0.05, "random {}", r.success_rate);
}

#[test]
fn evaluation_reward_is_the_unshaped_closed_form() {
    let env = desk_env();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let agent = QAgent::new(env.ontology(), env.layout().state_dim(), 100, &mut rng);
    for policy in [
        &agent as &dyn seqreward::agents::Policy,
        &ExpertAgent(ExpertPolicy::new(env.ontology()).unwrap()),
    ] {
        let r = evaluate_policy(policy, &env, 300, 8).unwrap();
        let n = r.episodes.len() as f64;
        let mut from_traces = 0.0;
        for ep in &r.episodes {
            assert_eq!(ep.env_return, episode_reward(ep.turns, ep.success));
            from_traces += ep.env_return;
        }
        assert!((r.reward_score - from_traces / n).abs() < 1e-9);
    }
}

#[test]
fn evaluation_is_deterministic() {
    let env = desk_env();
    let random = RandomAgent {
        action_dim: env.ontology().action_dim(),
    };
    let a = evaluate_policy(&random, &env, 200, 5).unwrap();
    let b = evaluate_policy(&random, &env, 200, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dqn_curves_are_reproducible() {
    let env = desk_env();
    let a = dqn_train(&env, None, &quick_dqn(), 7).unwrap();
    let b = dqn_train(&env, None, &quick_dqn(), 7).unwrap();
    assert_eq!(a.curve.to_csv(), b.curve.to_csv());
    assert_eq!(a.agent.content_hash(), b.agent.content_hash());
    assert_eq!(a.curve.points.first().unwrap().frames, 0);
    assert_eq!(a.curve.points.last().unwrap().frames, 2_000);
    assert_eq!(a.initial_buffer_len, 0);
    assert_eq!(a.buffer.len(), 2_000);
}

#[test]
fn warm_start_beats_a_cold_start() {
    let o = Arc::new(Ontology::desk_default());
    let env = DialogEnv::new(o.clone(), EnvConfig::default()).unwrap();
    let corpus = generate_expert_corpus(&o, &EnvConfig::default(), 200, 1).unwrap();
    let config = DqnConfig {
        total_frames: 0,
        ..quick_dqn()
    };
    let warm = WarmStartConfig {
        steps: 2_000,
        ..WarmStartConfig::default()
    };
    let w = wdqn_train(&env, None, &corpus, &config, &warm, 3).unwrap();
    let c = dqn_train(&env, None, &config, 3).unwrap();
    assert!(w.initial_buffer_len >= corpus.len().min(config.buffer_capacity));
    let (ws, cs) = (
        w.curve.points[0].success_rate,
        c.curve.points[0].success_rate,
    );
    assert!(ws > cs, "warm {ws} vs cold {cs}");
}

#[test]
fn imitation_beats_random() {
    let o = Arc::new(Ontology::desk_default());
    let env = DialogEnv::new(o.clone(), EnvConfig::default()).unwrap();
    let corpus = generate_expert_corpus(&o, &EnvConfig::default(), 200, 1).unwrap();
    let config = PpoConfig {
        total_frames: 0,
        eval_dialogs: 500,
        ..PpoConfig::default()
    };
    let run = ppo_train(&env, None, &corpus, &config, 5).unwrap();
    let imitation = run.curve.points[0].success_rate;
    let random = RandomAgent {
        action_dim: o.action_dim(),
    };
    let r = evaluate_policy(&random, &env, 500, config.eval_seed).unwrap();
    assert!(
        imitation > r.success_rate,
        "imitation {imitation} vs random {}",
        r.success_rate
    );
    assert!(run.bc.best_epoch < run.bc.held_out_accuracy.len());
}

#[test]
fn agent_checkpoints_round_trip() {
    let o = Ontology::desk_default();
    let env = desk_env();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let q = QAgent::new(&o, env.layout().state_dim(), 100, &mut rng);
    q.save(dir.path().join("q.ckpt")).unwrap();
    let back = QAgent::load(dir.path().join("q.ckpt"), &o).unwrap();
    assert_eq!(back.content_hash(), q.content_hash());
    assert_eq!(back.q, q.q);

    let p = PpoAgent::new(&o, env.layout().state_dim(), 100, 0.001, &mut rng);
    p.save(dir.path().join("p.ckpt")).unwrap();
    let back = PpoAgent::load(dir.path().join("p.ckpt"), &o).unwrap();
    assert_eq!(back, p);

    assert!(QAgent::load(dir.path().join("q.ckpt"), &Ontology::micro()).is_err());
    assert!(QAgent::load(dir.path().join("p.ckpt"), &o).is_err());
}
