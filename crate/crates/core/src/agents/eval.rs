use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Policy;
use crate::dialogenv::{episode_reward, DialogEnv};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    pub turns: usize,
    pub success: bool,
    /// Sum of the per-turn environment rewards.
    pub env_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub success_rate: f64,
    /// Mean closed-form episode reward (`-T + 80` or `-T - 40`).
    pub reward_score: f64,
    pub avg_turn: f64,
    pub episodes: Vec<EpisodeOutcome>,
}

/// Goal seed of the `i`-th evaluation dialog. Evaluation goals are a fixed
/// function of `(seed, i)` so every checkpoint sees the same dialogs.
pub fn eval_goal_seed(seed: u64, i: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(i as u64)
        .wrapping_add(0x5851_f42d_4c95_7f2d);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `n_dialogs` seeded dialogs in lockstep with `policy` acting on all
/// live dialogs at once. Only environment rewards are used.
pub fn evaluate_policy(
    policy: &dyn Policy,
    env: &DialogEnv,
    n_dialogs: usize,
    seed: u64,
) -> Result<EvalResult> {
    ensure!(
        n_dialogs > 0,
        ContractViolation,
        "evaluation needs at least one dialog"
    );
    let mut envs: Vec<DialogEnv> = Vec::with_capacity(n_dialogs);
    let mut states = Vec::with_capacity(n_dialogs);
    for i in 0..n_dialogs {
        let mut e = env.clone();
        states.push(e.reset(eval_goal_seed(seed, i)));
        envs.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
    let mut returns = vec![0.0; n_dialogs];
    let mut live: Vec<usize> = (0..n_dialogs).collect();
    while !live.is_empty() {
        let batch: Vec<_> = live.iter().map(|&i| states[i].clone()).collect();
        let actions = policy.act_batch(&batch, &mut rng)?;
        let mut still = Vec::with_capacity(live.len());
        for (&i, a) in live.iter().zip(actions) {
            let r = envs[i].step(a)?;
            returns[i] += r.reward;
            states[i] = r.state;
            if !r.done {
                still.push(i);
            }
        }
        live = still;
    }
    let episodes: Vec<EpisodeOutcome> = envs
        .iter()
        .zip(&returns)
        .map(|(e, &ret)| EpisodeOutcome {
            turns: e.turns(),
            success: e.success() == Some(true),
            env_return: ret,
        })
        .collect();
    let n = n_dialogs as f64;
    Ok(EvalResult {
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        reward_score: episodes
            .iter()
            .map(|e| episode_reward(e.turns, e.success))
            .sum::<f64>()
            / n,
        avg_turn: episodes.iter().map(|e| e.turns as f64).sum::<f64>() / n,
        episodes,
    })
}
