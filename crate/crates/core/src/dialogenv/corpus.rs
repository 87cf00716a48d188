//! Expert corpus generation and the corpus file format.
//!
//! File layout (UTF-8 text):
//!
//! ```text
//! seqreward-corpus v1
//! {"ontology_hash": "...", "seed": 7, "state_dim": 98, "episodes": [{"len": 6, "success": true}, ...]}
//! 0100110...0001 17
//! ...
//! ```
//!
//! After the two header lines, each line is one `(state bits, action index)`
//! pair; episodes are contiguous and listed in header order.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dialogenv::env::{
    DialogEnv, DialogState, EnvConfig, Transition, FAILURE_BONUS, SUCCESS_BONUS, TURN_PENALTY,
};
use crate::dialogenv::expert::ExpertPolicy;
use crate::error::{ensure, Error, Result};
use crate::ontology::{DialogAction, Ontology};

pub const CORPUS_HEADER: &str = "seqreward-corpus v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub len: usize,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CorpusHeader {
    ontology_hash: String,
    seed: u64,
    state_dim: usize,
    episodes: Vec<EpisodeMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertCorpus {
    pub pairs: Vec<(DialogState, DialogAction)>,
    pub episodes: Vec<EpisodeMeta>,
    pub seed: u64,
    pub ontology_hash: String,
}

/// Runs the scripted expert for `n_dialogs` seeded goals and records every
/// turn's `(state, action)`.
pub fn generate_expert_corpus(
    ontology: &Arc<Ontology>,
    env_config: &EnvConfig,
    n_dialogs: usize,
    seed: u64,
) -> Result<ExpertCorpus> {
    ensure!(n_dialogs >= 1, RejectedInput, "n_dialogs must be >= 1");
    let mut env = DialogEnv::new(ontology.clone(), env_config.clone())?;
    let expert = ExpertPolicy::new(ontology)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut episodes = Vec::with_capacity(n_dialogs);
    for _ in 0..n_dialogs {
        let mut state = env.reset(rng.gen());
        let mut len = 0;
        loop {
            let action = expert.act(&state);
            let step = env.step(action)?;
            pairs.push((state, action));
            len += 1;
            state = step.state;
            if step.done {
                episodes.push(EpisodeMeta {
                    len,
                    success: step.success == Some(true),
                });
                break;
            }
        }
    }
    Ok(ExpertCorpus {
        pairs,
        episodes,
        seed,
        ontology_hash: ontology.hash(),
    })
}

impl ExpertCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.pairs.first().map(|(s, _)| s.len()).unwrap_or(0)
    }

    pub fn check_ontology(&self, ontology: &Ontology) -> Result<()> {
        let expected = ontology.hash();
        ensure!(
            self.ontology_hash == expected,
            Configuration,
            "corpus was built for ontology {} but the active ontology is {}",
            self.ontology_hash,
            expected
        );
        Ok(())
    }

    /// Rebuilds RL transitions from the recorded episodes. Rewards follow the
    /// environment (`-1` per turn, `+80` / `-40` on the last turn); the
    /// terminal transition's `next_state` repeats its state since it is never
    /// bootstrapped from.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut out = Vec::with_capacity(self.pairs.len());
        let mut start = 0;
        for ep in &self.episodes {
            for t in 0..ep.len {
                let (state, action) = &self.pairs[start + t];
                let last = t + 1 == ep.len;
                let r_ori = TURN_PENALTY
                    + match (last, ep.success) {
                        (true, true) => SUCCESS_BONUS,
                        (true, false) => FAILURE_BONUS,
                        _ => 0.0,
                    };
                let next_state = if last {
                    state.clone()
                } else {
                    self.pairs[start + t + 1].0.clone()
                };
                out.push(Transition {
                    state: state.clone(),
                    action: *action,
                    r_ori,
                    r_shaped: r_ori,
                    next_state,
                    done: last,
                    success: last.then_some(ep.success),
                });
            }
            start += ep.len;
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = CorpusHeader {
            ontology_hash: self.ontology_hash.clone(),
            seed: self.seed,
            state_dim: self.state_dim(),
            episodes: self.episodes.clone(),
        };
        let mut out = String::new();
        out.push_str(CORPUS_HEADER);
        out.push('\n');
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for (s, a) in &self.pairs {
            let _ = writeln!(out, "{} {}", s.to_bit_string(), a.0);
        }
        out
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(CORPUS_HEADER) {
            return Err("missing corpus header".into());
        }
        let header: CorpusHeader = serde_json::from_str(lines.next().ok_or("missing metadata")?)
            .map_err(|e| e.to_string())?;
        let mut pairs = Vec::new();
        for (i, line) in lines.enumerate() {
            let (bits, action) = line
                .split_once(' ')
                .ok_or_else(|| format!("line {}: expected `<bits> <action>`", i + 3))?;
            let state = DialogState::from_bit_string(bits).map_err(|e| e.to_string())?;
            if state.len() != header.state_dim {
                return Err(format!("line {}: state width {}", i + 3, state.len()));
            }
            let action = action
                .trim()
                .parse::<usize>()
                .map_err(|e| format!("line {}: {e}", i + 3))?;
            pairs.push((state, DialogAction(action)));
        }
        let total: usize = header.episodes.iter().map(|e| e.len).sum();
        if total != pairs.len() {
            return Err(format!(
                "episode lengths sum to {total} but file has {} pairs",
                pairs.len()
            ));
        }
        Ok(Self {
            pairs,
            episodes: header.episodes,
            seed: header.seed,
            ontology_hash: header.ontology_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|m| Error::format(path, m))
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Deterministic split into `(train, held_out)`; the last
    /// `held_out_frac` of pairs (after a seeded shuffle) are held out.
    pub fn split_indices(&self, held_out_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..self.pairs.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_held = ((self.pairs.len() as f64) * held_out_frac).round() as usize;
        let n_held = n_held.min(self.pairs.len().saturating_sub(1));
        let held = idx.split_off(self.pairs.len() - n_held);
        (idx, held)
    }
}
