use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_row, evaluate_policy, Policy};
use crate::dialogenv::{states_to_matrix, DialogEnv, DialogState, ExpertCorpus};
use crate::error::{ensure, Error, Result};
use crate::evalharness::{CurvePoint, LearningCurve};
use crate::nn::gradcheck::{check, offset_biases, GradCheck};
use crate::nn::{Activation, Adam, AdamConfig, Checkpoint, DenseNet};
use crate::ontology::{DialogAction, Ontology};
use crate::shaping::RewardEstimator;

pub const PPO_CHECKPOINT_KIND: &str = "ppo_agent";

/// Imitation warm-up: cross-entropy on expert actions until held-out
/// accuracy stops improving.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub batch_size: usize,
    pub held_out_frac: f64,
    pub optimizer: AdamConfig,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            patience: 3,
            min_delta: 1e-3,
            batch_size: 64,
            held_out_frac: 0.1,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden: usize,
    pub policy_optimizer: AdamConfig,
    pub value_optimizer: AdamConfig,
    /// Frames collected per update.
    pub update_every: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coef: f64,
    /// Weight of the uniform distribution mixed into the behaviour policy.
    pub explore_eps: f64,
    pub total_frames: usize,
    pub eval_every: usize,
    pub eval_dialogs: usize,
    pub eval_seed: u64,
    pub bc: BcConfig,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            policy_optimizer: AdamConfig::with_lr(1e-4),
            value_optimizer: AdamConfig::with_lr(1e-3),
            update_every: 500,
            epochs: 4,
            minibatch: 100,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_coef: 1.0,
            explore_eps: 0.001,
            total_frames: 100_000,
            eval_every: 1_000,
            eval_dialogs: 1_000,
            eval_seed: 20_200,
            bc: BcConfig::default(),
        }
    }
}

impl PpoConfig {
    fn validate(&self) -> Result<()> {
        ensure!(
            self.hidden > 0 && self.update_every > 0 && self.minibatch > 0 && self.epochs > 0,
            Configuration,
            "hidden, update_every, minibatch and epochs must be positive"
        );
        ensure!(
            self.clip >= 0.0 && self.clip < 1.0,
            Configuration,
            "clip must lie in [0, 1)"
        );
        ensure!(
            (0.0..=1.0).contains(&self.explore_eps),
            Configuration,
            "explore_eps must lie in [0, 1]"
        );
        ensure!(
            (0.0..=1.0).contains(&self.gamma) && (0.0..=1.0).contains(&self.gae_lambda),
            Configuration,
            "gamma and gae_lambda must lie in [0, 1]"
        );
        ensure!(
            self.eval_every > 0 && self.eval_dialogs > 0,
            Configuration,
            "eval_every and eval_dialogs must be positive"
        );
        ensure!(
            self.bc.batch_size > 0 && self.bc.held_out_frac > 0.0 && self.bc.held_out_frac < 1.0,
            Configuration,
            "imitation batch_size must be positive and held_out_frac in (0, 1)"
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PpoAgent {
    pub policy: DenseNet,
    pub value: DenseNet,
    pub explore_eps: f64,
    pub ontology_hash: String,
}

impl PpoAgent {
    pub fn new<R: Rng + ?Sized>(
        ontology: &Ontology,
        state_dim: usize,
        hidden: usize,
        explore_eps: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            policy: DenseNet::new(
                &[state_dim, hidden, ontology.action_dim()],
                &[Activation::Relu, Activation::Softmax],
                rng,
            ),
            value: DenseNet::new(
                &[state_dim, hidden, 1],
                &[Activation::Relu, Activation::Identity],
                rng,
            ),
            explore_eps,
            ontology_hash: ontology.hash(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.output_dim()
    }

    /// `π(· | s)` per row.
    pub fn probs(&self, states: &[DialogState]) -> Result<Array2<f64>> {
        self.policy
            .predict_binary(states_to_matrix(states, self.state_dim()).view())
    }

    pub fn values(&self, states: &[DialogState]) -> Result<Vec<f64>> {
        let v = self
            .value
            .predict_binary(states_to_matrix(states, self.state_dim()).view())?;
        Ok(v.column(0).to_vec())
    }

    /// Behaviour probability of `a` under the ε-mixed policy.
    fn mixed(&self, pi_a: f64) -> f64 {
        (1.0 - self.explore_eps) * pi_a + self.explore_eps / self.action_dim() as f64
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(PPO_CHECKPOINT_KIND);
        ck.set_meta("ontology_hash", &self.ontology_hash);
        ck.set_meta("explore_eps", self.explore_eps);
        ck.push_net("policy", &self.policy);
        ck.push_net("value", &self.value);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, ontology: &Ontology) -> Result<Self> {
        ensure!(
            ck.meta("kind")? == PPO_CHECKPOINT_KIND,
            Configuration,
            "checkpoint kind `{}` is not a PPO agent",
            ck.meta("kind")?
        );
        let hash = ck.meta("ontology_hash")?;
        ensure!(
            hash == ontology.hash(),
            Configuration,
            "agent was trained on ontology {hash}, active ontology is {}",
            ontology.hash()
        );
        let policy = ck.get_net("policy")?;
        ensure!(
            policy.output_dim() == ontology.action_dim(),
            Configuration,
            "policy has {} outputs for {} actions",
            policy.output_dim(),
            ontology.action_dim()
        );
        Ok(Self {
            policy,
            value: ck.get_net("value")?,
            explore_eps: ck
                .meta("explore_eps")?
                .parse()
                .map_err(|_| Error::Configuration("bad explore_eps in checkpoint".into()))?,
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

/// Greedy: the most probable action, no exploration.
impl Policy for PpoAgent {
    fn act_batch(
        &self,
        states: &[DialogState],
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<DialogAction>> {
        let p = self.probs(states)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| DialogAction(argmax_row(r)))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BcReport {
    /// Held-out action accuracy after every epoch.
    pub held_out_accuracy: Vec<f64>,
    pub best_epoch: usize,
}

fn accuracy(policy: &DenseNet, x: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let p = policy.predict_binary(x.view())?;
    let hits = p
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &l)| argmax_row(r.view()) == l)
        .count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Fits the policy head to the corpus actions and keeps the epoch with the
/// best held-out accuracy.
pub fn behavior_clone(
    agent: &mut PpoAgent,
    corpus: &ExpertCorpus,
    config: &BcConfig,
    seed: u64,
) -> Result<BcReport> {
    ensure!(
        corpus.len() >= 2,
        RejectedInput,
        "imitation needs at least two expert pairs"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut held) = corpus.split_indices(config.held_out_frac, seed);
    if held.is_empty() {
        held = vec![train.pop().expect("two pairs")];
    }
    let dim = agent.state_dim();
    let xh = states_to_matrix(held.iter().map(|&i| &corpus.pairs[i].0), dim);
    let yh: Vec<usize> = held.iter().map(|&i| corpus.pairs[i].1 .0).collect();
    let mut opt = Adam::for_net(config.optimizer, &agent.policy);
    let names = agent.policy.param_names("policy");
    let mut report = BcReport {
        held_out_accuracy: Vec::new(),
        best_epoch: 0,
    };
    let mut best = (accuracy(&agent.policy, &xh, &yh)?, agent.policy.clone());
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(config.batch_size) {
            let x = states_to_matrix(chunk.iter().map(|&i| &corpus.pairs[i].0), dim);
            let cache = agent.policy.forward_binary(x.view())?;
            let mut grad = cache.output().clone();
            for (r, &i) in chunk.iter().enumerate() {
                grad[[r, corpus.pairs[i].1 .0]] -= 1.0;
            }
            grad /= chunk.len() as f64;
            let g = agent.policy.param_gradients_from_logits(&cache, &grad);
            opt.step(agent.policy.params_mut(), &g.0, &names)?;
        }
        let acc = accuracy(&agent.policy, &xh, &yh)?;
        report.held_out_accuracy.push(acc);
        if acc > best.0 + config.min_delta {
            best = (acc, agent.policy.clone());
            report.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    agent.policy = best.1;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct PpoRun {
    pub agent: PpoAgent,
    /// Frame 0 is the imitation-only policy.
    pub curve: LearningCurve,
    pub bc: BcReport,
}

struct Rollout {
    states: Vec<DialogState>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

impl Rollout {
    fn new() -> Self {
        Self {
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.states.len()
    }
}

/// Generalized advantage estimates and value targets. `last_value` is
/// `V(s)` of the state following the final step (ignored if it was
/// terminal).
pub(crate) fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_v = if dones[t] {
            0.0
        } else if t + 1 < n {
            values[t + 1]
        } else {
            last_value
        };
        let carry = if dones[t] { 0.0 } else { next_adv };
        let delta = rewards[t] + gamma * next_v - values[t];
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

struct PpoLearner {
    policy_opt: Adam,
    value_opt: Adam,
    policy_names: Vec<String>,
    value_names: Vec<String>,
}

impl PpoLearner {
    fn update(
        &mut self,
        agent: &mut PpoAgent,
        ro: &Rollout,
        last_value: f64,
        config: &PpoConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let dim = agent.state_dim();
        let x_all = states_to_matrix(&ro.states, dim);
        let old_pi = agent.policy.predict_binary(x_all.view())?;
        check_not_degenerate(&old_pi)?;
        let old_p: Vec<f64> = ro
            .actions
            .iter()
            .enumerate()
            .map(|(r, &a)| agent.mixed(old_pi[[r, a]]))
            .collect();
        let values = agent.value.predict_binary(x_all.view())?.column(0).to_vec();
        let (mut adv, targets) = gae(
            &ro.rewards,
            &values,
            &ro.dones,
            last_value,
            config.gamma,
            config.gae_lambda,
        );
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        for a in &mut adv {
            *a = (*a - mean) / (std + 1e-8);
        }

        let eps = agent.explore_eps;
        let mut order: Vec<usize> = (0..ro.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(config.minibatch) {
                let x = x_all.select(Axis(0), chunk);
                let m = chunk.len() as f64;

                let pc = agent.policy.forward_binary(x.view())?;
                let pi = pc.output();
                let actions: Vec<usize> = chunk.iter().map(|&i| ro.actions[i]).collect();
                let old: Vec<f64> = chunk.iter().map(|&i| old_p[i]).collect();
                let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
                let (_, g_logits) = clipped_surrogate(pi, &actions, &old, &a, config.clip, eps)?;
                let g = agent.policy.param_gradients_from_logits(&pc, &g_logits);
                self.policy_opt
                    .step(agent.policy.params_mut(), &g.0, &self.policy_names)?;

                let vc = agent.value.forward_binary(x.view())?;
                let mut g_v = Array2::zeros((chunk.len(), 1));
                let mut v_loss = 0.0;
                for (r, &i) in chunk.iter().enumerate() {
                    let err = vc.output()[[r, 0]] - targets[i];
                    v_loss += err * err / m;
                    g_v[[r, 0]] = config.value_coef * 2.0 * err / m;
                }
                if !v_loss.is_finite() {
                    return Err(Error::Training(format!("value loss is {v_loss}")));
                }
                let g = agent.value.param_gradients(&vc, &g_v);
                self.value_opt
                    .step(agent.value.params_mut(), &g.0, &self.value_names)?;
            }
        }
        Ok(())
    }
}

/// Negated clipped surrogate `-mean min(ρA, clip(ρ)A)` over rows, with
/// `ρ` the ratio of ε-mixed action probabilities, and its gradient w.r.t.
/// the policy logits (`pi` is the softmax output).
fn clipped_surrogate(
    pi: &Array2<f64>,
    actions: &[usize],
    old_p: &[f64],
    adv: &[f64],
    clip: f64,
    eps: f64,
) -> Result<(f64, Array2<f64>)> {
    let m = actions.len().max(1) as f64;
    let k = pi.ncols() as f64;
    let mut g_logits = Array2::zeros(pi.dim());
    let mut loss = 0.0;
    for (r, &a) in actions.iter().enumerate() {
        let p_new = (1.0 - eps) * pi[[r, a]] + eps / k;
        let ratio = p_new / old_p[r];
        if !ratio.is_finite() {
            return Err(Error::Training(format!("policy ratio is {ratio}")));
        }
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        loss -= (ratio * adv[r]).min(clipped * adv[r]) / m;
        // clip 0 clamps the ratio to 1: no surrogate gradient at all
        let active = clip > 0.0
            && if adv[r] >= 0.0 {
                ratio < 1.0 + clip
            } else {
                ratio > 1.0 - clip
            };
        if !active {
            continue;
        }
        // d(-ratio·A)/dz_j = -A·ratio·(1-ε)π_a(δ_aj - π_j)/p_new
        let scale = -adv[r] * ratio * (1.0 - eps) * pi[[r, a]] / p_new / m;
        for j in 0..pi.ncols() {
            let delta = if j == a { 1.0 } else { 0.0 };
            g_logits[[r, j]] = scale * (delta - pi[[r, j]]);
        }
    }
    Ok((loss, g_logits))
}

/// Clipped surrogate through a small policy network. Old probabilities are
/// set so that some ratios sit inside the clip range and some outside.
pub(crate) fn gradient_check(seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim, k, eps, clip) = (8, 20, 6, 0.05, 0.2);
    let mut net = DenseNet::new(
        &[dim, 10, k],
        &[Activation::Relu, Activation::Softmax],
        &mut rng,
    );
    offset_biases(net.params_mut(), &mut rng);
    let x = Array2::from_shape_fn((n, dim), |_| f64::from(rng.gen_bool(0.3)));
    let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let adv: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * rng.gen_range(0.2..1.5))
        .collect();
    let pi = net.predict(x.view())?;
    let old_p: Vec<f64> = actions
        .iter()
        .enumerate()
        .map(|(r, &a)| ((1.0 - eps) * pi[[r, a]] + eps / k as f64) / [0.9, 1.05, 1.4, 0.7][r % 4])
        .collect();
    let cache = net.forward_binary(x.view())?;
    let (_, g) = clipped_surrogate(cache.output(), &actions, &old_p, &adv, clip, eps)?;
    let analytic = net.param_gradients_from_logits(&cache, &g).0;
    let loss = |net: &DenseNet| {
        net.predict(x.view())
            .and_then(|pi| clipped_surrogate(&pi, &actions, &old_p, &adv, clip, eps))
            .map_or(f64::NAN, |(l, _)| l)
    };
    Ok(check(
        "ppo/clipped-surrogate",
        &mut net,
        |n| n.params_mut(),
        loss,
        &analytic,
        6,
        &mut rng,
    ))
}

/// A policy that puts all its mass on one action regardless of the state.
fn check_not_degenerate(pi: &Array2<f64>) -> Result<()> {
    if pi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Training(
            "policy produced non-finite probabilities".into(),
        ));
    }
    if pi.nrows() < 2 {
        return Ok(());
    }
    let first = argmax_row(pi.row(0));
    let collapsed = pi
        .rows()
        .into_iter()
        .all(|r| argmax_row(r) == first && r[first] > 1.0 - 1e-9);
    if collapsed {
        return Err(Error::Training(format!(
            "policy entropy collapsed onto action {first} in every state"
        )));
    }
    Ok(())
}

fn checkpoint_eval(
    agent: &PpoAgent,
    env: &DialogEnv,
    config: &PpoConfig,
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

/// Imitation warm-up on the corpus, then clipped policy-gradient updates on
/// shaped (or, without an estimator, environment) rewards.
pub fn ppo_train(
    env: &DialogEnv,
    est: Option<&RewardEstimator>,
    corpus: &ExpertCorpus,
    config: &PpoConfig,
    seed: u64,
) -> Result<PpoRun> {
    config.validate()?;
    if let Some(e) = est {
        e.check_ontology(env.ontology())?;
    }
    corpus.check_ontology(env.ontology())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = PpoAgent::new(
        env.ontology(),
        env.layout().state_dim(),
        config.hidden,
        config.explore_eps,
        &mut rng,
    );
    let bc = behavior_clone(&mut agent, corpus, &config.bc, seed ^ 0xbc)?;
    let mut learner = PpoLearner {
        policy_opt: Adam::for_net(config.policy_optimizer, &agent.policy),
        value_opt: Adam::for_net(config.value_optimizer, &agent.value),
        policy_names: agent.policy.param_names("policy"),
        value_names: agent.value.param_names("value"),
    };
    let mut curve = LearningCurve {
        seed,
        points: vec![checkpoint_eval(&agent, env, config, 0)?],
    };
    let template = env.clone();
    let mut env = env.clone();
    let mut state = env.reset(rng.gen());
    let mut ro = Rollout::new();
    let a_dim = agent.action_dim();
    for frame in 1..=config.total_frames {
        let pi = agent.probs(std::slice::from_ref(&state))?;
        let u: f64 = rng.gen();
        let action = if u < agent.explore_eps {
            rng.gen_range(0..a_dim)
        } else {
            sample_row(pi.row(0), rng.gen())
        };
        let step = env.step(DialogAction(action))?;
        let reward = match est {
            Some(e) => e.shape(step.reward, &state, DialogAction(action))?,
            None => step.reward,
        };
        let next = if step.done {
            env.reset(rng.gen())
        } else {
            step.state
        };
        ro.states.push(std::mem::replace(&mut state, next));
        ro.actions.push(action);
        ro.rewards.push(reward);
        ro.dones.push(step.done);

        if ro.len() == config.update_every {
            let last_value = agent.values(std::slice::from_ref(&state))?[0];
            learner.update(&mut agent, &ro, last_value, config, &mut rng)?;
            ro = Rollout::new();
        }
        if frame % config.eval_every == 0 {
            curve
                .points
                .push(checkpoint_eval(&agent, &template, config, frame)?);
        }
    }
    Ok(PpoRun { agent, curve, bc })
}

/// Inverse-CDF draw from one probability row.
fn sample_row(p: ndarray::ArrayView1<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_with_lambda_one_is_the_discounted_return() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, -0.2, 0.1];
        let (adv, tgt) = gae(&r, &v, &[false, false, true], 9.0, 0.9, 1.0);
        let g2 = 3.0;
        let g1 = 2.0 + 0.9 * g2;
        let g0 = 1.0 + 0.9 * g1;
        for (t, g) in tgt.iter().zip([g0, g1, g2]) {
            assert!((t - g).abs() < 1e-12);
        }
        assert!((adv[0] - (g0 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gae_bootstraps_an_unfinished_rollout_and_cuts_at_terminals() {
        let (adv, _) = gae(&[0.0, 0.0], &[0.0, 0.0], &[true, false], 10.0, 0.5, 0.0);
        assert_eq!(adv, vec![0.0, 5.0]);
    }

    #[test]
    fn inverse_cdf_sampling() {
        let p = ndarray::arr1(&[0.2, 0.0, 0.8]);
        assert_eq!(sample_row(p.view(), 0.1), 0);
        assert_eq!(sample_row(p.view(), 0.2), 2);
        assert_eq!(sample_row(p.view(), 0.999_999_9), 2);
    }

    #[test]
    fn degenerate_policy_is_a_training_error() {
        let mut pi = Array2::zeros((3, 4));
        pi.column_mut(2).fill(1.0);
        assert!(matches!(check_not_degenerate(&pi), Err(Error::Training(_))));
        pi[[1, 2]] = 0.5;
        pi[[1, 0]] = 0.5;
        assert!(check_not_degenerate(&pi).is_ok());
    }

    fn micro_rollout(agent: &PpoAgent, env: &DialogEnv, n: usize, rng: &mut ChaCha8Rng) -> Rollout {
        let mut env = env.clone();
        let mut state = env.reset(rng.gen());
        let mut ro = Rollout::new();
        for _ in 0..n {
            let a = rng.gen_range(0..agent.action_dim());
            let step = env.step(DialogAction(a)).unwrap();
            let next = if step.done {
                env.reset(rng.gen())
            } else {
                step.state
            };
            ro.states.push(std::mem::replace(&mut state, next));
            ro.actions.push(a);
            ro.rewards.push(step.reward);
            ro.dones.push(step.done);
        }
        ro
    }

    fn learner(agent: &PpoAgent, config: &PpoConfig) -> PpoLearner {
        PpoLearner {
            policy_opt: Adam::for_net(config.policy_optimizer, &agent.policy),
            value_opt: Adam::for_net(config.value_optimizer, &agent.value),
            policy_names: agent.policy.param_names("policy"),
            value_names: agent.value.param_names("value"),
        }
    }

    #[test]
    fn zero_clip_leaves_the_policy_alone() {
        let o = std::sync::Arc::new(crate::ontology::Ontology::micro());
        let env = DialogEnv::new(o.clone(), crate::dialogenv::EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut agent = PpoAgent::new(&o, env.layout().state_dim(), 8, 0.001, &mut rng);
        let ro = micro_rollout(&agent, &env, 64, &mut rng);
        let config = PpoConfig {
            clip: 0.0,
            minibatch: 16,
            ..PpoConfig::default()
        };
        let before = agent.clone();
        learner(&agent, &config)
            .update(&mut agent, &ro, 0.0, &config, &mut rng)
            .unwrap();
        assert_eq!(agent.policy, before.policy);
        assert_ne!(agent.value, before.value);

        let config = PpoConfig {
            clip: 0.2,
            ..config
        };
        learner(&agent, &config)
            .update(&mut agent, &ro, 0.0, &config, &mut rng)
            .unwrap();
        assert_ne!(agent.policy, before.policy);
    }

    #[test]
    fn policy_rows_are_distributions() {
        let o = crate::ontology::Ontology::desk_default();
        let env = DialogEnv::new(
            std::sync::Arc::new(o.clone()),
            crate::dialogenv::EnvConfig::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let agent = PpoAgent::new(&o, env.layout().state_dim(), 100, 0.001, &mut rng);
        let ro = micro_rollout(&agent, &env, 200, &mut rng);
        let pi = agent.probs(&ro.states).unwrap();
        for row in pi.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}
