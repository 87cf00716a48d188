use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dialogenv::goal::{sample_goal, UserGoal};
use crate::dialogenv::layout::{StateLayout, TURN_BUCKETS};
use crate::dialogenv::user::AgendaUser;
use crate::error::{ensure, Error, Result};
use crate::ontology::{build_assignment_matrix, AssignmentMatrix, DialogAction, Ontology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub max_turns: usize,
    /// Consecutive unhelpful system turns the user tolerates.
    pub patience: usize,
    pub two_domain_prob: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_turns: 20,
            patience: 3,
            two_domain_prob: 0.5,
        }
    }
}

pub const TURN_PENALTY: f64 = -1.0;
pub const SUCCESS_BONUS: f64 = 80.0;
pub const FAILURE_BONUS: f64 = -40.0;

/// Episode-level reward score: `-T + 80` on success, `-T - 40` on failure.
pub fn episode_reward(turns: usize, success: bool) -> f64 {
    debug_assert!(turns >= 1);
    -(turns as f64)
        + if success {
            SUCCESS_BONUS
        } else {
            FAILURE_BONUS
        }
}

/// Binary dialog state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogState {
    bits: Vec<u8>,
}

impl DialogState {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        ensure!(
            bits.iter().all(|&b| b <= 1),
            RejectedInput,
            "dialog state bits must be 0 or 1"
        );
        Ok(Self { bits })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { bits: vec![0; dim] }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i] == 1
    }

    fn set(&mut self, i: usize) {
        self.bits[i] = 1;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::RejectedInput(format!("bad state bit `{other}`"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self { bits })
    }
}

/// Stack rows of states into a network input batch.
pub fn states_to_matrix<'a>(
    states: impl IntoIterator<Item = &'a DialogState>,
    dim: usize,
) -> ndarray::Array2<f64> {
    let mut data = Vec::new();
    let mut rows = 0;
    for s in states {
        debug_assert_eq!(s.len(), dim);
        data.extend(s.bits.iter().map(|&b| b as f64));
        rows += 1;
    }
    ndarray::Array2::from_shape_vec((rows, dim), data).expect("consistent state widths")
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: DialogState,
    pub reward: f64,
    pub done: bool,
    /// Set once the episode is over.
    pub success: Option<bool>,
    pub helpful: bool,
}

/// One RL interaction record.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: DialogState,
    pub action: DialogAction,
    pub r_ori: f64,
    pub r_shaped: f64,
    pub next_state: DialogState,
    pub done: bool,
    pub success: Option<bool>,
}

/// Synthetic multi-domain task-oriented dialog environment.
#[derive(Clone, Debug)]
pub struct DialogEnv {
    ontology: Arc<Ontology>,
    matrix: Arc<AssignmentMatrix>,
    layout: StateLayout,
    config: EnvConfig,
    user: Option<AgendaUser>,
    turn: usize,
    last_system_act: Option<usize>,
    done: bool,
    success: Option<bool>,
}

impl DialogEnv {
    pub fn new(ontology: Arc<Ontology>, config: EnvConfig) -> Result<Self> {
        let layout = StateLayout::new(&ontology)?;
        ensure!(
            config.max_turns >= 1,
            Configuration,
            "max_turns must be >= 1"
        );
        ensure!(config.patience >= 1, Configuration, "patience must be >= 1");
        let matrix = Arc::new(build_assignment_matrix(&ontology));
        Ok(Self {
            ontology,
            matrix,
            layout,
            config,
            user: None,
            turn: 0,
            last_system_act: None,
            done: true,
            success: None,
        })
    }

    pub fn ontology(&self) -> &Arc<Ontology> {
        &self.ontology
    }

    pub fn matrix(&self) -> &Arc<AssignmentMatrix> {
        &self.matrix
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn user(&self) -> Option<&AgendaUser> {
        self.user.as_ref()
    }

    pub fn turns(&self) -> usize {
        self.turn
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn success(&self) -> Option<bool> {
        self.success
    }

    /// Starts a new dialog with the goal drawn from `goal_seed`.
    pub fn reset(&mut self, goal_seed: u64) -> DialogState {
        let goal = sample_goal(goal_seed, &self.ontology, self.config.two_domain_prob);
        self.reset_with_goal(goal)
    }

    pub fn reset_with_goal(&mut self, goal: UserGoal) -> DialogState {
        self.user = Some(AgendaUser::new(
            goal,
            self.ontology.role_index(),
            self.ontology.domains.len(),
            self.config.patience,
        ));
        self.turn = 0;
        self.last_system_act = None;
        self.done = false;
        self.success = None;
        self.state()
    }

    pub fn state(&self) -> DialogState {
        let mut s = DialogState::zeros(self.layout.state_dim());
        let l = &self.layout;
        let Some(user) = &self.user else {
            return s;
        };
        let focus = user.focus();
        for (d, st) in user.status.iter().enumerate() {
            if focus == Some(d) {
                s.set(l.focus(d));
            }
            if st.complete {
                s.set(l.complete(d));
            }
            for &slot in &st.informed {
                s.set(l.constraint_informed(d, slot));
            }
            for &slot in &st.missing {
                s.set(l.constraint_missing(d, slot));
            }
            if let Some(slot) = st.pending {
                s.set(l.request_pending(d, slot));
            }
            for &slot in &st.satisfied {
                s.set(l.request_satisfied(d, slot));
            }
            if st.recommended {
                s.set(l.recommended(d));
            }
            if st.booked {
                s.set(l.booked(d));
            }
        }
        s.set(l.last_user_act(user.last_act));
        s.set(l.last_system_act(self.last_system_act));
        for (i, &threshold) in TURN_BUCKETS.iter().enumerate() {
            if self.turn >= threshold {
                s.set(l.turn_bucket(i));
            }
        }
        s
    }

    /// Advances the dialog by one system turn. Reward is `-1` per turn plus
    /// `+80` / `-40` on the terminal turn.
    pub fn step(&mut self, action: DialogAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::ContractViolation(
                "step called on a finished episode".into(),
            ));
        }
        let triple = self.matrix.triple(action)?;
        let roles = self.ontology.role_index();
        let user = self.user.as_mut().expect("reset before step");
        let helpful = user.respond(roles, triple.domain, triple.act, triple.slot);
        self.turn += 1;
        self.last_system_act = Some(triple.act);

        let mut reward = TURN_PENALTY;
        if user.is_satisfied() {
            self.done = true;
            self.success = Some(true);
            reward += SUCCESS_BONUS;
        } else if user.patience == 0 || self.turn >= self.config.max_turns {
            self.done = true;
            self.success = Some(false);
            reward += FAILURE_BONUS;
        }
        Ok(StepResult {
            state: self.state(),
            reward,
            done: self.done,
            success: self.success,
            helpful,
        })
    }
}
