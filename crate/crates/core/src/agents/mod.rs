//! Dialog policies trained on vanilla or shaped rewards: value-based agents
//! (cold-start and expert warm-started) and a clipped policy-gradient agent
//! with an imitation warm-up. Evaluation always reports the unshaped
//! environment reward.

mod dqn;
mod eval;
mod ppo;
mod replay;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use dqn::{
    dqn_train, wdqn_train, DqnConfig, DqnRun, QAgent, WarmStartConfig, DQN_CHECKPOINT_KIND,
};
pub use eval::{eval_goal_seed, evaluate_policy, EpisodeOutcome, EvalResult};
pub use ppo::{
    behavior_clone, ppo_train, BcConfig, BcReport, PpoAgent, PpoConfig, PpoRun, PPO_CHECKPOINT_KIND,
};
pub use replay::{EpsilonSchedule, ReplayBuffer};

use crate::dialogenv::{DialogState, ExpertPolicy};
use crate::error::Result;
use crate::nn::gradcheck::GradCheck;
use crate::ontology::DialogAction;

/// Gradient checks for the value-based and policy-gradient losses.
pub fn gradient_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = dqn::gradient_checks(seed)?;
    out.push(ppo::gradient_check(seed)?);
    Ok(out)
}

/// Anything that picks one action per state. `rng` is only consumed by
/// stochastic policies.
pub trait Policy {
    fn act_batch(&self, states: &[DialogState], rng: &mut ChaCha8Rng) -> Result<Vec<DialogAction>>;
}

/// The scripted expert as a policy.
#[derive(Clone, Debug)]
pub struct ExpertAgent(pub ExpertPolicy);

impl Policy for ExpertAgent {
    fn act_batch(
        &self,
        states: &[DialogState],
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<DialogAction>> {
        Ok(states.iter().map(|s| self.0.act(s)).collect())
    }
}

/// Uniform over all valid actions.
#[derive(Clone, Copy, Debug)]
pub struct RandomAgent {
    pub action_dim: usize,
}

impl Policy for RandomAgent {
    fn act_batch(&self, states: &[DialogState], rng: &mut ChaCha8Rng) -> Result<Vec<DialogAction>> {
        Ok(states
            .iter()
            .map(|_| DialogAction(rng.gen_range(0..self.action_dim)))
            .collect())
    }
}

/// Index of the first maximum.
pub(crate) fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
