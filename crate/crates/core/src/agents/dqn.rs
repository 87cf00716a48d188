use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::replay::{EpsilonSchedule, ReplayBuffer};
use super::{argmax_row, evaluate_policy, Policy};
use crate::dialogenv::{states_to_matrix, DialogEnv, DialogState, ExpertCorpus, Transition};
use crate::error::{ensure, Error, Result};
use crate::evalharness::{CurvePoint, LearningCurve};
use crate::nn::gradcheck::{check, offset_biases, GradCheck};
use crate::nn::{Activation, Adam, AdamConfig, Checkpoint, DenseNet};
use crate::ontology::{DialogAction, Ontology};
use crate::shaping::RewardEstimator;

pub const DQN_CHECKPOINT_KIND: &str = "dqn_agent";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Frames between training rounds.
    pub train_every: usize,
    /// Minibatch updates per training round.
    pub batches_per_train: usize,
    pub epsilon: EpsilonSchedule,
    pub target_sync: usize,
    pub gamma: f64,
    pub total_frames: usize,
    pub eval_every: usize,
    pub eval_dialogs: usize,
    /// Seed of the fixed evaluation goal set.
    pub eval_seed: u64,
    pub optimizer: AdamConfig,
    /// TD errors beyond this switch from squared to absolute loss.
    pub huber_delta: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            buffer_capacity: 50_000,
            batch_size: 16,
            train_every: 200,
            batches_per_train: 500,
            epsilon: EpsilonSchedule {
                start: 0.1,
                end: 0.01,
                decay_frames: 50_000,
            },
            target_sync: 1_000,
            gamma: 0.99,
            total_frames: 100_000,
            eval_every: 1_000,
            eval_dialogs: 1_000,
            eval_seed: 20_200,
            optimizer: AdamConfig::default(),
            huber_delta: 1.0,
        }
    }
}

impl DqnConfig {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.hidden > 0 && self.batch_size > 0 && self.train_every > 0 && self.target_sync > 0,
            Configuration,
            "hidden, batch_size, train_every and target_sync must be positive"
        );
        ensure!(
            self.buffer_capacity > 0,
            Configuration,
            "buffer_capacity must be positive"
        );
        ensure!(
            self.eval_every > 0 && self.eval_dialogs > 0,
            Configuration,
            "eval_every and eval_dialogs must be positive"
        );
        ensure!(
            (0.0..=1.0).contains(&self.gamma),
            Configuration,
            "gamma must lie in [0, 1]"
        );
        ensure!(
            self.huber_delta > 0.0,
            Configuration,
            "huber_delta must be positive"
        );
        Ok(())
    }
}

/// Expert warm start: the buffer is filled with corpus transitions, then the
/// Q-net regresses the expert action's discounted return while every other
/// action is pushed at least `margin` below it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmStartConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub margin: f64,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            steps: 5_000,
            batch_size: 16,
            margin: 5.0,
        }
    }
}

/// Q-network with its target copy.
#[derive(Clone, Debug, PartialEq)]
pub struct QAgent {
    pub q: DenseNet,
    pub target: DenseNet,
    pub ontology_hash: String,
}

impl QAgent {
    pub fn new<R: Rng + ?Sized>(
        ontology: &Ontology,
        state_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let q = DenseNet::new(
            &[state_dim, hidden, ontology.action_dim()],
            &[Activation::Relu, Activation::Identity],
            rng,
        );
        Self {
            target: q.clone(),
            q,
            ontology_hash: ontology.hash(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.q.input_dim()
    }

    pub fn q_values(&self, states: &[DialogState]) -> Result<Array2<f64>> {
        self.q
            .predict_binary(states_to_matrix(states, self.state_dim()).view())
    }

    pub fn greedy(&self, state: &DialogState) -> Result<DialogAction> {
        let q = self.q_values(std::slice::from_ref(state))?;
        Ok(DialogAction(argmax_row(q.row(0))))
    }

    pub fn sync_target(&mut self) {
        self.target = self.q.clone();
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(DQN_CHECKPOINT_KIND);
        ck.set_meta("ontology_hash", &self.ontology_hash);
        ck.push_net("q", &self.q);
        ck.push_net("target", &self.target);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, ontology: &Ontology) -> Result<Self> {
        ensure!(
            ck.meta("kind")? == DQN_CHECKPOINT_KIND,
            Configuration,
            "checkpoint kind `{}` is not a Q agent",
            ck.meta("kind")?
        );
        let hash = ck.meta("ontology_hash")?;
        ensure!(
            hash == ontology.hash(),
            Configuration,
            "agent was trained on ontology {hash}, active ontology is {}",
            ontology.hash()
        );
        let q = ck.get_net("q")?;
        ensure!(
            q.output_dim() == ontology.action_dim(),
            Configuration,
            "Q-net has {} outputs for {} actions",
            q.output_dim(),
            ontology.action_dim()
        );
        Ok(Self {
            target: ck.get_net("target")?,
            q,
            ontology_hash: hash.to_string(),
        })
    }

    pub fn content_hash(&self) -> String {
        self.to_checkpoint().content_hash()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>, ontology: &Ontology) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, ontology)
    }
}

impl Policy for QAgent {
    fn act_batch(
        &self,
        states: &[DialogState],
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<DialogAction>> {
        let q = self.q_values(states)?;
        Ok(q.rows()
            .into_iter()
            .map(|r| DialogAction(argmax_row(r)))
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct DqnRun {
    pub agent: QAgent,
    pub curve: LearningCurve,
    /// Replay size right before the first environment frame.
    pub initial_buffer_len: usize,
    pub buffer: ReplayBuffer,
}

struct Learner {
    agent: QAgent,
    opt: Adam,
    names: Vec<String>,
}

impl Learner {
    fn new(agent: QAgent, config: &AdamConfig) -> Self {
        let opt = Adam::for_net(*config, &agent.q);
        let names = agent.q.param_names("q");
        Self { agent, opt, names }
    }

    fn apply(&mut self, cache: &crate::nn::ForwardCache, grad: &Array2<f64>) -> Result<()> {
        let grads = self.agent.q.param_gradients(cache, grad);
        self.opt
            .step(self.agent.q.params_mut(), &grads.0, &self.names)
    }

    /// One Huber TD step against the target network.
    fn td_step(&mut self, batch: &[&Transition], gamma: f64, delta: f64) -> Result<f64> {
        let dim = self.agent.state_dim();
        let x = states_to_matrix(batch.iter().map(|t| &t.state), dim);
        let xn = states_to_matrix(batch.iter().map(|t| &t.next_state), dim);
        let q_next = self.agent.target.predict_binary(xn.view())?;
        let cache = self.agent.q.forward_binary(x.view())?;
        let (loss, grad) = huber_td(cache.output(), &q_next, batch, gamma, delta);
        if !loss.is_finite() {
            return Err(Error::Training(format!("TD loss is {loss}")));
        }
        self.apply(&cache, &grad)?;
        Ok(loss)
    }

    /// Expert action regressed to `returns`, others held `margin` below.
    fn warm_step(&mut self, batch: &[&Transition], returns: &[f64], margin: f64) -> Result<f64> {
        let x = states_to_matrix(batch.iter().map(|t| &t.state), self.agent.state_dim());
        let cache = self.agent.q.forward_binary(x.view())?;
        let (loss, grad) = warm_margin(cache.output(), batch, returns, margin);
        if !loss.is_finite() {
            return Err(Error::Training(format!("warm-start loss is {loss}")));
        }
        self.apply(&cache, &grad)?;
        Ok(loss)
    }
}

/// Mean Huber TD error on the taken actions, and its gradient w.r.t. every
/// Q output (zero off the taken action).
fn huber_td(
    q: &Array2<f64>,
    q_next: &Array2<f64>,
    batch: &[&Transition],
    gamma: f64,
    delta: f64,
) -> (f64, Array2<f64>) {
    let n = batch.len() as f64;
    let mut grad = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for (r, t) in batch.iter().enumerate() {
        let bootstrap = if t.done {
            0.0
        } else {
            q_next
                .row(r)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let y = t.r_shaped + gamma * bootstrap;
        let err = q[[r, t.action.0]] - y;
        loss += if err.abs() <= delta {
            0.5 * err * err
        } else {
            delta * (err.abs() - 0.5 * delta)
        };
        grad[[r, t.action.0]] = err.clamp(-delta, delta) / n;
    }
    (loss / n, grad)
}

/// Expert action regressed to its return, every other action pushed at
/// least `margin` below it.
fn warm_margin(
    q: &Array2<f64>,
    batch: &[&Transition],
    returns: &[f64],
    margin: f64,
) -> (f64, Array2<f64>) {
    let n = batch.len() as f64;
    let mut grad = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for (r, (t, &g)) in batch.iter().zip(returns).enumerate() {
        for a in 0..q.ncols() {
            let err = if a == t.action.0 {
                q[[r, a]] - g
            } else {
                (q[[r, a]] - (g - margin)).max(0.0)
            };
            loss += 0.5 * err * err;
            grad[[r, a]] = err / n;
        }
    }
    (loss / n, grad)
}

fn shaped(
    est: Option<&RewardEstimator>,
    r_ori: f64,
    state: &DialogState,
    action: DialogAction,
) -> Result<f64> {
    match est {
        Some(e) => e.shape(r_ori, state, action),
        None => Ok(r_ori),
    }
}

fn check_inputs(env: &DialogEnv, est: Option<&RewardEstimator>) -> Result<()> {
    if let Some(e) = est {
        e.check_ontology(env.ontology())?;
    }
    Ok(())
}

fn checkpoint_eval(
    agent: &QAgent,
    env: &DialogEnv,
    config: &DqnConfig,
    frames: usize,
) -> Result<CurvePoint> {
    let r = evaluate_policy(agent, env, config.eval_dialogs, config.eval_seed)?;
    Ok(CurvePoint {
        frames,
        success_rate: r.success_rate,
        reward_score: r.reward_score,
        avg_turn: r.avg_turn,
    })
}

/// Interaction loop shared by the cold and warm variants.
fn run(
    mut learner: Learner,
    mut buffer: ReplayBuffer,
    env: &DialogEnv,
    est: Option<&RewardEstimator>,
    config: &DqnConfig,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<DqnRun> {
    let initial_buffer_len = buffer.len();
    let action_dim = env.ontology().action_dim();
    let mut curve = LearningCurve {
        seed,
        points: vec![checkpoint_eval(&learner.agent, env, config, 0)?],
    };
    let mut env = env.clone();
    let template = env.clone();
    let mut state = env.reset(rng.gen());
    for frame in 1..=config.total_frames {
        let action = if rng.gen::<f64>() < config.epsilon.at(frame - 1) {
            DialogAction(rng.gen_range(0..action_dim))
        } else {
            learner.agent.greedy(&state)?
        };
        let step = env.step(action)?;
        let r_shaped = shaped(est, step.reward, &state, action)?;
        let next = if step.done {
            env.reset(rng.gen())
        } else {
            step.state.clone()
        };
        buffer.push(Transition {
            state: std::mem::replace(&mut state, next),
            action,
            r_ori: step.reward,
            r_shaped,
            next_state: step.state,
            done: step.done,
            success: step.success,
        });

        if frame % config.train_every == 0 && buffer.len() >= config.batch_size {
            for _ in 0..config.batches_per_train {
                let batch = buffer.sample(config.batch_size, rng);
                learner.td_step(&batch, config.gamma, config.huber_delta)?;
            }
        }
        if frame % config.target_sync == 0 {
            learner.agent.sync_target();
        }
        if frame % config.eval_every == 0 {
            curve
                .points
                .push(checkpoint_eval(&learner.agent, &template, config, frame)?);
        }
    }
    Ok(DqnRun {
        agent: learner.agent,
        curve,
        initial_buffer_len,
        buffer,
    })
}

/// Cold-start DQN. Without an estimator the agent learns from the
/// environment reward alone.
pub fn dqn_train(
    env: &DialogEnv,
    est: Option<&RewardEstimator>,
    config: &DqnConfig,
    seed: u64,
) -> Result<DqnRun> {
    config.validate()?;
    check_inputs(env, est)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = QAgent::new(
        env.ontology(),
        env.layout().state_dim(),
        config.hidden,
        &mut rng,
    );
    let learner = Learner::new(agent, &config.optimizer);
    run(
        learner,
        ReplayBuffer::new(config.buffer_capacity),
        env,
        est,
        config,
        seed,
        &mut rng,
    )
}

/// Discounted return of every transition within its episode.
fn episode_returns(transitions: &[Transition], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; transitions.len()];
    let mut g = 0.0;
    for (i, t) in transitions.iter().enumerate().rev() {
        if t.done {
            g = 0.0;
        }
        g = t.r_shaped + gamma * g;
        out[i] = g;
    }
    out
}

/// DQN warm-started from the expert corpus before any environment frame.
pub fn wdqn_train(
    env: &DialogEnv,
    est: Option<&RewardEstimator>,
    corpus: &ExpertCorpus,
    config: &DqnConfig,
    warm: &WarmStartConfig,
    seed: u64,
) -> Result<DqnRun> {
    config.validate()?;
    check_inputs(env, est)?;
    corpus.check_ontology(env.ontology())?;
    ensure!(
        !corpus.is_empty(),
        RejectedInput,
        "warm start needs a non-empty corpus"
    );
    ensure!(
        warm.batch_size > 0,
        Configuration,
        "warm-start batch_size must be positive"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = QAgent::new(
        env.ontology(),
        env.layout().state_dim(),
        config.hidden,
        &mut rng,
    );
    let mut learner = Learner::new(agent, &config.optimizer);

    let mut transitions = corpus.transitions();
    for t in &mut transitions {
        t.r_shaped = shaped(est, t.r_ori, &t.state, t.action)?;
    }
    let returns = episode_returns(&transitions, config.gamma);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    for t in &transitions {
        buffer.push(t.clone());
    }
    for _ in 0..warm.steps {
        let idx: Vec<usize> = (0..warm.batch_size)
            .map(|_| rng.gen_range(0..transitions.len()))
            .collect();
        let batch: Vec<&Transition> = idx.iter().map(|&i| &transitions[i]).collect();
        let g: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
        learner.warm_step(&batch, &g, warm.margin)?;
    }
    learner.agent.sync_target();
    run(learner, buffer, env, est, config, seed, &mut rng)
}

/// Huber TD and warm-start margin losses through a small Q-network on
/// binary states, with the target network held fixed.
pub(crate) fn gradient_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim, k) = (8, 20, 6);
    let mut net = DenseNet::new(
        &[dim, 10, k],
        &[Activation::Relu, Activation::Identity],
        &mut rng,
    );
    offset_biases(net.params_mut(), &mut rng);
    let bits = |rng: &mut ChaCha8Rng| {
        DialogState::from_bits((0..dim).map(|_| u8::from(rng.gen_bool(0.3))).collect())
    };
    let mut batch = Vec::with_capacity(n);
    for i in 0..n {
        let r = rng.gen_range(-3.0..3.0);
        batch.push(Transition {
            state: bits(&mut rng)?,
            action: DialogAction(rng.gen_range(0..k)),
            r_ori: r,
            r_shaped: r,
            next_state: bits(&mut rng)?,
            done: i % 3 == 0,
            success: None,
        });
    }
    let refs: Vec<&Transition> = batch.iter().collect();
    let x = states_to_matrix(batch.iter().map(|t| &t.state), dim);
    let q_next = Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0));
    let returns: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let cache = net.forward_binary(x.view())?;
    let mut out = Vec::new();

    // delta 1 puts errors on both sides of the Huber knee
    let (_, g) = huber_td(cache.output(), &q_next, &refs, 0.9, 1.0);
    let analytic = net.param_gradients(&cache, &g).0;
    let loss = |net: &DenseNet| {
        net.predict(x.view())
            .map_or(f64::NAN, |q| huber_td(&q, &q_next, &refs, 0.9, 1.0).0)
    };
    out.push(check(
        "dqn/huber-td",
        &mut net,
        |n| n.params_mut(),
        loss,
        &analytic,
        6,
        &mut rng,
    ));

    let (_, g) = warm_margin(cache.output(), &refs, &returns, 0.5);
    let analytic = net.param_gradients(&cache, &g).0;
    let loss = |net: &DenseNet| {
        net.predict(x.view())
            .map_or(f64::NAN, |q| warm_margin(&q, &refs, &returns, 0.5).0)
    };
    out.push(check(
        "dqn/warm-margin",
        &mut net,
        |n| n.params_mut(),
        loss,
        &analytic,
        6,
        &mut rng,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_match_finite_differences() {
        for c in gradient_checks(3).unwrap() {
            assert!(c.passes(1e-4), "{c:?}");
        }
        let c = super::super::ppo::gradient_check(3).unwrap();
        assert!(c.passes(1e-4), "{c:?}");
    }

    fn t(r: f64, done: bool) -> Transition {
        Transition {
            state: DialogState::zeros(2),
            action: DialogAction(0),
            r_ori: r,
            r_shaped: r,
            next_state: DialogState::zeros(2),
            done,
            success: None,
        }
    }

    #[test]
    fn returns_restart_at_episode_boundaries() {
        let ts = [
            t(-1.0, false),
            t(79.0, true),
            t(-1.0, false),
            t(-41.0, true),
        ];
        let g = episode_returns(&ts, 0.5);
        assert_eq!(g, vec![-1.0 + 0.5 * 79.0, 79.0, -1.0 + 0.5 * -41.0, -41.0]);
    }
}
