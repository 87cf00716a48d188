//! Reward estimation from frozen discriminators: per-level scores, Markov
//! gating across levels, the two combinations, and shaping of the
//! environment reward.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::advreward::{AdversarialModel, DiscriminatorSet, LevelMaps};
use crate::dae::DaeModel;
use crate::dialogenv::{states_to_matrix, DialogState};
use crate::error::{ensure, Error, Result};
use crate::nn::sigmoid;
use crate::ontology::{DialogAction, Level, Ontology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Combination {
    /// Final gated slot-level reward.
    #[serde(rename = "seqprd")]
    SeqPrd,
    /// Mean of the three gated rewards.
    #[serde(rename = "seqavg")]
    SeqAvg,
}

impl Combination {
    pub fn name(self) -> &'static str {
        match self {
            Combination::SeqPrd => "seqprd",
            Combination::SeqAvg => "seqavg",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "seqprd" => Some(Combination::SeqPrd),
            "seqavg" => Some(Combination::SeqAvg),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    pub tau: f64,
    pub b: f64,
    pub alpha: f64,
    pub combination: Combination,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            tau: 10.0,
            b: -0.5,
            alpha: 5.0,
            combination: Combination::SeqPrd,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tau > 0.0 && self.tau.is_finite(),
            Configuration,
            "tau must be positive, got {}",
            self.tau
        );
        ensure!(self.b.is_finite(), Configuration, "b must be finite");
        ensure!(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            Configuration,
            "alpha must be non-negative, got {}",
            self.alpha
        );
        Ok(())
    }
}

/// `R_d = y_d`, `R_a = y_a σ(τ(R_d + b))`, `R_s = y_s σ(τ(R_a + b))`.
pub fn gated_rewards(y: [f64; 3], tau: f64, b: f64) -> [f64; 3] {
    let r_d = y[0];
    let r_a = y[1] * sigmoid(tau * (r_d + b));
    let r_s = y[2] * sigmoid(tau * (r_a + b));
    [r_d, r_a, r_s]
}

pub fn combine(combination: Combination, r: [f64; 3]) -> f64 {
    match combination {
        Combination::SeqPrd => r[2],
        Combination::SeqAvg => (r[0] + r[1] + r[2]) / 3.0,
    }
}

/// Immutable reward model; cheap to clone and safe to share across threads.
#[derive(Clone, Debug)]
pub struct RewardEstimator {
    dae: Arc<DaeModel>,
    disc: Arc<DiscriminatorSet>,
    maps: Arc<LevelMaps>,
    config: ShapingConfig,
    ontology_hash: String,
}

impl RewardEstimator {
    /// Verifies that the DAE and discriminators belong together and to
    /// `ontology`.
    pub fn new(
        ontology: &Ontology,
        dae: Arc<DaeModel>,
        adversarial: &AdversarialModel,
        config: ShapingConfig,
    ) -> Result<Self> {
        config.validate()?;
        let hash = ontology.hash();
        ensure!(
            dae.ontology_hash == hash && adversarial.ontology_hash == hash,
            Configuration,
            "reward model components were trained on a different ontology (active {hash})"
        );
        let dae_hash = dae.content_hash();
        ensure!(
            adversarial.dae_hash == dae_hash,
            Configuration,
            "discriminators expect DAE {}, got {dae_hash}",
            adversarial.dae_hash
        );
        Ok(Self {
            dae,
            disc: Arc::new(adversarial.discriminators.clone()),
            maps: Arc::new(LevelMaps::new(ontology)),
            config,
            ontology_hash: hash,
        })
    }

    pub fn config(&self) -> &ShapingConfig {
        &self.config
    }

    pub fn ontology_hash(&self) -> &str {
        &self.ontology_hash
    }

    /// Same models, different shaping parameters.
    pub fn with_config(&self, config: ShapingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            ..self.clone()
        })
    }

    pub fn with_combination(&self, combination: Combination) -> Self {
        Self {
            config: ShapingConfig {
                combination,
                ..self.config
            },
            ..self.clone()
        }
    }

    pub fn check_ontology(&self, ontology: &Ontology) -> Result<()> {
        ensure!(
            ontology.hash() == self.ontology_hash,
            Configuration,
            "reward estimator belongs to ontology {}, got {}",
            self.ontology_hash,
            ontology.hash()
        );
        Ok(())
    }

    /// Discriminator outputs `(y_d, y_a, y_s)` per row, using mean latents.
    pub fn score_levels_batch(
        &self,
        states: &Array2<f64>,
        actions: &[DialogAction],
    ) -> Result<Vec<[f64; 3]>> {
        ensure!(
            states.nrows() == actions.len(),
            ContractViolation,
            "{} states paired with {} actions",
            states.nrows(),
            actions.len()
        );
        let latents = self.dae.encode_mean(states.view())?;
        let mut one_hot: [Array2<f64>; 3] =
            Level::ALL.map(|l| Array2::zeros((actions.len(), self.maps.m.level_size(l))));
        for (r, &a) in actions.iter().enumerate() {
            let t = self.maps.m.triple(a)?;
            for l in Level::ALL {
                one_hot[l.index()][[r, t.get(l)]] = 1.0;
            }
        }
        let mut cols = Vec::with_capacity(3);
        for l in Level::ALL {
            cols.push(self.disc.score(l, latents.level(l), &one_hot[l.index()])?);
        }
        Ok((0..actions.len())
            .map(|r| [cols[0][r], cols[1][r], cols[2][r]])
            .collect())
    }

    pub fn score_levels(&self, state: &DialogState, action: DialogAction) -> Result<[f64; 3]> {
        let x = states_to_matrix(std::iter::once(state), state.len());
        Ok(self.score_levels_batch(&x, &[action])?[0])
    }

    pub fn gated(&self, y: [f64; 3]) -> [f64; 3] {
        gated_rewards(y, self.config.tau, self.config.b)
    }

    pub fn combined_from_scores(&self, y: [f64; 3]) -> f64 {
        combine(self.config.combination, self.gated(y))
    }

    pub fn combined(&self, state: &DialogState, action: DialogAction) -> Result<f64> {
        Ok(self.combined_from_scores(self.score_levels(state, action)?))
    }

    /// `r_ori + α · combined`.
    pub fn shape(&self, r_ori: f64, state: &DialogState, action: DialogAction) -> Result<f64> {
        if self.config.alpha == 0.0 {
            return Ok(r_ori);
        }
        Ok(r_ori + self.config.alpha * self.combined(state, action)?)
    }

    /// Shaping bonus from precomputed level scores.
    pub fn bonus_from_scores(&self, y: [f64; 3]) -> f64 {
        self.config.alpha * self.combined_from_scores(y)
    }
}

/// Points at the DAE and discriminator checkpoints plus the shaping knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorManifest {
    pub ontology_hash: String,
    pub dae_checkpoint: PathBuf,
    pub dae_hash: String,
    pub adversarial_checkpoint: PathBuf,
    pub adversarial_hash: String,
    pub shaping: ShapingConfig,
}

impl EstimatorManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Loads both checkpoints (paths relative to `base`) and checks every
    /// recorded hash.
    pub fn build(&self, base: &Path, ontology: &Ontology) -> Result<RewardEstimator> {
        ensure!(
            self.ontology_hash == ontology.hash(),
            Configuration,
            "estimator manifest names ontology {}, active ontology is {}",
            self.ontology_hash,
            ontology.hash()
        );
        let dae = DaeModel::load(base.join(&self.dae_checkpoint), ontology)?;
        ensure!(
            dae.content_hash() == self.dae_hash,
            Configuration,
            "DAE checkpoint hash {} does not match manifest {}",
            dae.content_hash(),
            self.dae_hash
        );
        let adv = AdversarialModel::load(base.join(&self.adversarial_checkpoint), ontology, &dae)?;
        ensure!(
            adv.content_hash() == self.adversarial_hash,
            Configuration,
            "discriminator checkpoint hash {} does not match manifest {}",
            adv.content_hash(),
            self.adversarial_hash
        );
        RewardEstimator::new(ontology, Arc::new(dae), &adv, self.shaping)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_reference_values() {
        let r = gated_rewards([1.0, 1.0, 1.0], 10.0, -0.5);
        assert_eq!(r[0], 1.0);
        assert!((r[1] - 0.993_307_149_075_715).abs() < 1e-12);
        assert!((r[2] - 0.992_847_190_087_039).abs() < 1e-12, "{}", r[2]);

        let r = gated_rewards([0.0, 1.0, 1.0], 10.0, -0.5);
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 0.006_692_850_924_284).abs() < 1e-12);
        assert!((r[2] - 0.007_152_809_912_961).abs() < 1e-12, "{}", r[2]);

        for tau in [0.1, 1.0, 10.0, 100.0] {
            let r = gated_rewards([0.5, 1.0, 0.0], tau, -0.5);
            assert_eq!(r[1], 0.5);
        }
    }

    #[test]
    fn combinations() {
        assert_eq!(combine(Combination::SeqAvg, [1.0, 1.0, 1.0]), 1.0);
        assert_eq!(combine(Combination::SeqPrd, [1.0, 1.0, 1.0]), 1.0);
        assert!((combine(Combination::SeqAvg, [1.0, 0.0, 0.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(combine(Combination::SeqPrd, [1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(ShapingConfig {
            tau: 0.0,
            ..ShapingConfig::default()
        }
        .validate()
        .is_err());
        assert!(ShapingConfig {
            alpha: -1.0,
            ..ShapingConfig::default()
        }
        .validate()
        .is_err());
        let cfg: ShapingConfig = toml::from_str("combination = \"seqavg\"\nalpha = 2.0").unwrap();
        assert_eq!(cfg.combination, Combination::SeqAvg);
        assert_eq!(cfg.tau, 10.0);
    }
}
