//! Synthetic multi-domain task-oriented dialog environment.
//!
//! A goal names one or two domains, each with constraints the system must
//! collect and requests it must answer. An agenda-based user drives the
//! dialog; the system acts with `(domain, act, slot)` triples at the dialog
//! act level. Rewards are `-1` per turn with `+80` on success and `-40` on
//! failure (patience exhausted or turn cap reached).

mod corpus;
mod env;
mod expert;
mod goal;
mod layout;
mod trace;
mod user;

pub use corpus::{generate_expert_corpus, EpisodeMeta, ExpertCorpus, CORPUS_HEADER};
pub use env::{
    episode_reward, states_to_matrix, DialogEnv, DialogState, EnvConfig, StepResult, Transition,
    FAILURE_BONUS, SUCCESS_BONUS, TURN_PENALTY,
};
pub use expert::{expert_policy, ExpertPolicy};
pub use goal::{sample_goal, DomainGoal, UserGoal};
pub use layout::{StateLayout, UserActKind, TURN_BUCKETS};
pub use trace::{TraceLine, TraceWriter};
pub use user::{AgendaItem, AgendaUser, DomainStatus};
