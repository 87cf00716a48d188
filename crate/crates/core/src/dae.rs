//! Disentangled auto-encoder: three parallel encoders split a dialog state
//! into domain, act and slot latent blocks. Each block feeds a linear
//! classifier for its level of the expert action, a shared noise net perturbs
//! the latents during training, and a decoder reconstructs the state.

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogenv::{
    generate_expert_corpus, states_to_matrix, DialogState, EnvConfig, ExpertCorpus,
};
use crate::error::{ensure, Error, Result};
use crate::nn::gradcheck::{check, offset_biases, GradCheck};
use crate::nn::sample::standard_normal;
use crate::nn::{
    bce_loss, reparameterize_with_noise, softmax_ce_batch, Activation, Adam, AdamConfig,
    Checkpoint, DenseNet, Gradients,
};
use crate::ontology::{build_assignment_matrix, decompose_action, Level, Ontology};

pub const CHECKPOINT_KIND: &str = "dae";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaeConfig {
    pub hidden: usize,
    /// Width of each of the three latent blocks.
    pub latent: usize,
    pub decoder_hidden: usize,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement of at least `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    pub validation_frac: f64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            latent: 64,
            decoder_hidden: 64,
            optimizer: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            min_delta: 1e-4,
            validation_frac: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaeModel {
    /// `E_d`, `E_a`, `E_s` in level order.
    pub encoders: [DenseNet; 3],
    /// Emits log σ² for the full concatenated latent.
    pub noise: DenseNet,
    pub decoder: DenseNet,
    /// `W_d`, `W_a`, `W_s`: latent × level size.
    pub classifiers: [Array2<f64>; 3],
    pub ontology_hash: String,
}

/// Latent blocks for a batch, one row per state.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub blocks: [Array2<f64>; 3],
}

impl Latents {
    pub fn level(&self, level: Level) -> &Array2<f64> {
        &self.blocks[level.index()]
    }

    pub fn concat(&self) -> Array2<f64> {
        concatenate(
            Axis(1),
            &[
                self.blocks[0].view(),
                self.blocks[1].view(),
                self.blocks[2].view(),
            ],
        )
        .expect("latent blocks share a row count")
    }

    pub fn split(joined: &Array2<f64>, width: usize) -> Self {
        let block = |i: usize| joined.slice(s![.., i * width..(i + 1) * width]).to_owned();
        Self {
            blocks: [block(0), block(1), block(2)],
        }
    }
}

/// States with the per-level labels of their paired expert actions.
#[derive(Clone, Debug)]
pub struct DaeBatch {
    pub states: Array2<f64>,
    pub labels: [Vec<usize>; 3],
}

impl DaeBatch {
    pub fn from_corpus(
        corpus: &ExpertCorpus,
        ontology: &Ontology,
        indices: &[usize],
    ) -> Result<Self> {
        let m = build_assignment_matrix(ontology);
        let mut labels: [Vec<usize>; 3] = Default::default();
        for &i in indices {
            let sub = decompose_action(corpus.pairs[i].1, &m)?;
            for level in Level::ALL {
                labels[level.index()].push(sub.get(level).index);
            }
        }
        let states = states_to_matrix(
            indices.iter().map(|&i| &corpus.pairs[i].0),
            corpus.state_dim(),
        );
        Ok(Self { states, labels })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            states: self.states.select(Axis(0), rows),
            labels: std::array::from_fn(|l| rows.iter().map(|&r| self.labels[l][r]).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DaeLoss {
    pub total: f64,
    pub recon: f64,
    pub cls: [f64; 3],
}

impl DaeLoss {
    fn from_parts(recon: f64, cls: [f64; 3]) -> Self {
        Self {
            total: recon + cls[0] + cls[1] + cls[2],
            recon,
            cls,
        }
    }
}

/// Gradients for every parameter of a [`DaeModel`], in
/// [`DaeModel::params_mut`] order.
#[derive(Clone, Debug)]
pub struct DaeGrads(pub Vec<Array2<f64>>);

impl DaeModel {
    pub fn new<R: Rng + ?Sized>(ontology: &Ontology, config: &DaeConfig, rng: &mut R) -> Self {
        let d = ontology.state_dim;
        let (h, l) = (config.hidden, config.latent);
        let encoders = std::array::from_fn(|_| {
            DenseNet::new(&[d, h, l], &[Activation::Relu, Activation::Identity], rng)
        });
        let noise = DenseNet::new(
            &[d, h, 3 * l],
            &[Activation::Relu, Activation::Identity],
            rng,
        );
        let decoder = DenseNet::new(
            &[3 * l, config.decoder_hidden, d],
            &[Activation::Relu, Activation::Sigmoid],
            rng,
        );
        let classifiers = std::array::from_fn(|i| {
            let k = ontology.level_size(Level::ALL[i]);
            let limit = (6.0 / (l + k) as f64).sqrt();
            Array2::from_shape_simple_fn((l, k), || rng.gen_range(-limit..=limit))
        });
        Self {
            encoders,
            noise,
            decoder,
            classifiers,
            ontology_hash: ontology.hash(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn latent_width(&self) -> usize {
        self.encoders[0].output_dim()
    }

    pub fn level_sizes(&self) -> [usize; 3] {
        std::array::from_fn(|i| self.classifiers[i].ncols())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            out.extend(e.params_mut());
        }
        out.extend(self.noise.params_mut());
        out.extend(self.decoder.params_mut());
        out.extend(self.classifiers.iter_mut());
        out
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for e in &self.encoders {
            out.extend(e.params());
        }
        out.extend(self.noise.params());
        out.extend(self.decoder.params());
        out.extend(self.classifiers.iter());
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (e, level) in self.encoders.iter().zip(Level::ALL) {
            out.extend(e.param_names(&format!("enc_{}", level.short())));
        }
        out.extend(self.noise.param_names("noise"));
        out.extend(self.decoder.param_names("dec"));
        out.extend(Level::ALL.iter().map(|l| format!("cls_{}", l.short())));
        out
    }

    fn check_states(&self, x: &ArrayView2<f64>) -> Result<()> {
        ensure!(
            x.ncols() == self.state_dim(),
            ContractViolation,
            "state width {} does not match the model's {}",
            x.ncols(),
            self.state_dim()
        );
        Ok(())
    }

    /// Deterministic latents (the encoder means).
    pub fn encode_mean(&self, x: ArrayView2<f64>) -> Result<Latents> {
        self.check_states(&x)?;
        let blocks = [
            self.encoders[0].predict(x)?,
            self.encoders[1].predict(x)?,
            self.encoders[2].predict(x)?,
        ];
        Ok(Latents { blocks })
    }

    /// Per-dimension σ predicted by the noise net, concatenated over blocks.
    pub fn noise_std(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_states(&x)?;
        let lv = self.noise.predict(x)?;
        Ok(lv.mapv(|v| {
            (0.5 * v.clamp(
                crate::nn::sample::LOG_VAR_MIN,
                crate::nn::sample::LOG_VAR_MAX,
            ))
            .exp()
        }))
    }

    pub fn encode<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        rng: &mut R,
        sample: bool,
    ) -> Result<Latents> {
        let mean = self.encode_mean(x)?;
        if !sample {
            return Ok(mean);
        }
        let h = mean.concat();
        let lv = self.noise.predict(x)?;
        let eps = standard_normal(h.dim(), rng);
        let r = reparameterize_with_noise(&h, &lv, eps)?;
        Ok(Latents::split(&r.output, self.latent_width()))
    }

    pub fn reconstruct(&self, latents: &Latents) -> Result<Array2<f64>> {
        for b in &latents.blocks {
            ensure!(
                b.ncols() == self.latent_width(),
                ContractViolation,
                "latent block width {} does not match {}",
                b.ncols(),
                self.latent_width()
            );
        }
        self.decoder.predict(latents.concat().view())
    }

    /// Classifier logits `s_i · W_i` for one level.
    pub fn classify(&self, latents: &Latents, level: Level) -> Array2<f64> {
        latents.level(level).dot(&self.classifiers[level.index()])
    }

    /// Loss and gradients for a batch. `eps` fixes the reparameterization
    /// noise; `None` uses the encoder means without noise.
    pub fn loss_and_grads(
        &self,
        batch: &DaeBatch,
        eps: Option<Array2<f64>>,
    ) -> Result<(DaeLoss, DaeGrads)> {
        let x = batch.states.view();
        self.check_states(&x)?;
        let n = batch.len().max(1) as f64;
        let w = self.latent_width();
        let enc_caches = [
            self.encoders[0].forward(x)?,
            self.encoders[1].forward(x)?,
            self.encoders[2].forward(x)?,
        ];
        let h = concatenate(
            Axis(1),
            &[
                enc_caches[0].output().view(),
                enc_caches[1].output().view(),
                enc_caches[2].output().view(),
            ],
        )
        .expect("equal row counts");
        let (latent, noise_part) = match eps {
            Some(eps) => {
                let noise_cache = self.noise.forward(x)?;
                let r = reparameterize_with_noise(&h, noise_cache.output(), eps)?;
                (r.output.clone(), Some((noise_cache, r)))
            }
            None => (h, None),
        };

        let dec_cache = self.decoder.forward(latent.view())?;
        let recon_p = dec_cache.output();
        let d = self.state_dim() as f64;
        // summed over bits, averaged over the batch
        let recon = bce_loss(recon_p.view(), x) * d;
        let mut grad_logits = recon_p - &batch.states;
        grad_logits /= n;
        let (dec_grads, mut grad_latent) =
            self.decoder.backward_from_logits(&dec_cache, &grad_logits);

        let mut cls = [0.0; 3];
        let mut cls_grads: [Array2<f64>; 3] = Default::default();
        for level in Level::ALL {
            let i = level.index();
            let s_i = latent.slice(s![.., i * w..(i + 1) * w]);
            let logits = s_i.dot(&self.classifiers[i]);
            let (loss, g) = softmax_ce_batch(&logits, &batch.labels[i])?;
            cls[i] = loss;
            cls_grads[i] = s_i.t().dot(&g);
            let mut gs = grad_latent.slice_mut(s![.., i * w..(i + 1) * w]);
            gs += &g.dot(&self.classifiers[i].t());
        }

        let mut grads = Vec::new();
        let noise_grads = match &noise_part {
            Some((noise_cache, r)) => {
                let (gh, glv) = r.backward(&grad_latent);
                grad_latent = gh;
                self.noise.backward(noise_cache, &glv).0
            }
            None => self.noise.zero_gradients(),
        };
        for (i, (enc, cache)) in self.encoders.iter().zip(&enc_caches).enumerate() {
            let g = grad_latent.slice(s![.., i * w..(i + 1) * w]).to_owned();
            grads.extend(enc.backward(cache, &g).0 .0);
        }
        grads.extend(noise_grads.0);
        grads.extend(dec_grads.0);
        grads.extend(cls_grads);
        Ok((DaeLoss::from_parts(recon, cls), DaeGrads(grads)))
    }

    /// Loss with fresh reparameterization noise (or the means when `sample`
    /// is false).
    pub fn loss<R: Rng + ?Sized>(
        &self,
        batch: &DaeBatch,
        rng: &mut R,
        sample: bool,
    ) -> Result<DaeLoss> {
        let eps = sample.then(|| standard_normal((batch.len(), 3 * self.latent_width()), rng));
        self.loss_only(batch, eps)
    }

    fn loss_only(&self, batch: &DaeBatch, eps: Option<Array2<f64>>) -> Result<DaeLoss> {
        let x = batch.states.view();
        self.check_states(&x)?;
        let mean = self.encode_mean(x)?;
        let latents = match eps {
            Some(eps) => {
                let lv = self.noise.predict(x)?;
                let r = reparameterize_with_noise(&mean.concat(), &lv, eps)?;
                Latents::split(&r.output, self.latent_width())
            }
            None => mean,
        };
        let recon_p = self.reconstruct(&latents)?;
        let recon = bce_loss(recon_p.view(), x) * self.state_dim() as f64;
        let mut cls = [0.0; 3];
        for level in Level::ALL {
            cls[level.index()] = softmax_ce_batch(
                &self.classify(&latents, level),
                &batch.labels[level.index()],
            )?
            .0;
        }
        Ok(DaeLoss::from_parts(recon, cls))
    }

    /// Fraction of state bits recovered after thresholding at 0.5.
    pub fn reconstruction_accuracy(&self, states: ArrayView2<f64>) -> Result<f64> {
        let p = self.reconstruct(&self.encode_mean(states)?)?;
        let hits = p
            .iter()
            .zip(states.iter())
            .filter(|(p, t)| (**p >= 0.5) == (**t >= 0.5))
            .count();
        Ok(hits as f64 / states.len().max(1) as f64)
    }

    /// Argmax accuracy of the level classifier on mean latents.
    pub fn classifier_accuracy(&self, batch: &DaeBatch, level: Level) -> Result<f64> {
        let logits = self.classify(&self.encode_mean(batch.states.view())?, level);
        Ok(argmax_accuracy(&logits, &batch.labels[level.index()]))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND);
        ck.set_meta("ontology_hash", &self.ontology_hash);
        ck.set_meta("latent_width", self.latent_width());
        ck.set_meta("state_dim", self.state_dim());
        for (e, level) in self.encoders.iter().zip(Level::ALL) {
            ck.push_net(&format!("enc_{}", level.short()), e);
        }
        ck.push_net("noise", &self.noise);
        ck.push_net("dec", &self.decoder);
        for (w, level) in self.classifiers.iter().zip(Level::ALL) {
            ck.push_array2(format!("cls_{}", level.short()), w);
        }
        ck
    }

    /// Rebuilds a model, refusing checkpoints trained on another ontology.
    pub fn from_checkpoint(ck: &Checkpoint, ontology: &Ontology) -> Result<Self> {
        ensure!(
            ck.meta("kind")? == CHECKPOINT_KIND,
            Configuration,
            "checkpoint kind `{}` is not a DAE",
            ck.meta("kind")?
        );
        let hash = ck.meta("ontology_hash")?;
        ensure!(
            hash == ontology.hash(),
            Configuration,
            "DAE was trained on ontology {hash}, active ontology is {}",
            ontology.hash()
        );
        let net = |level: Level| ck.get_net(&format!("enc_{}", level.short()));
        let cls = |level: Level| ck.get_array2(&format!("cls_{}", level.short()));
        let model = Self {
            encoders: [net(Level::Domain)?, net(Level::Act)?, net(Level::Slot)?],
            noise: ck.get_net("noise")?,
            decoder: ck.get_net("dec")?,
            classifiers: [cls(Level::Domain)?, cls(Level::Act)?, cls(Level::Slot)?],
            ontology_hash: hash.to_string(),
        };
        ensure!(
            model.state_dim() == ontology.state_dim
                && model.level_sizes() == Level::ALL.map(|l| ontology.level_size(l)),
            Configuration,
            "DAE shapes do not match the ontology"
        );
        Ok(model)
    }

    /// Hash of the serialized checkpoint; downstream artifacts record it.
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

pub fn argmax_accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row.iter().copied()) == label)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Latent blocks of a single state.
pub fn dae_encode<R: Rng + ?Sized>(
    model: &DaeModel,
    state: &DialogState,
    rng: &mut R,
    sample: bool,
) -> Result<Latents> {
    let x =
        Array2::from_shape_vec((1, state.len()), state.to_f64()).expect("one row of state bits");
    model.encode(x.view(), rng, sample)
}

pub fn dae_reconstruct(model: &DaeModel, latents: &Latents) -> Result<Array2<f64>> {
    model.reconstruct(latents)
}

pub fn dae_loss<R: Rng + ?Sized>(
    model: &DaeModel,
    batch: &DaeBatch,
    rng: &mut R,
) -> Result<DaeLoss> {
    model.loss(batch, rng, true)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub train: DaeLoss,
    pub validation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaeTraining {
    pub model: DaeModel,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Mini-batch training with early stopping on validation loss (computed on
/// mean latents); returns the best-validation model.
pub fn train_dae(
    corpus: &ExpertCorpus,
    ontology: &Ontology,
    config: &DaeConfig,
    seed: u64,
) -> Result<DaeTraining> {
    ensure!(
        !corpus.is_empty(),
        RejectedInput,
        "cannot train a DAE on an empty corpus"
    );
    ensure!(
        config.batch_size > 0,
        Configuration,
        "dae batch_size must be positive"
    );
    corpus.check_ontology(ontology)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, val_idx) = corpus.split_indices(config.validation_frac, seed);
    let train = DaeBatch::from_corpus(corpus, ontology, &train_idx)?;
    let val = DaeBatch::from_corpus(corpus, ontology, &val_idx)?;
    let val = if val.is_empty() { train.clone() } else { val };

    let mut model = DaeModel::new(ontology, config, &mut rng);
    let mut opt = Adam::new(config.optimizer, model.params().iter().map(|p| p.dim()));
    let names = model.param_names();
    let width = 3 * model.latent_width();

    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut stale = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = DaeLoss::from_parts(0.0, [0.0; 3]);
        let mut batches = 0.0;
        for rows in order.chunks(config.batch_size) {
            let batch = train.select(rows);
            let eps = standard_normal((rows.len(), width), &mut rng);
            let (loss, grads) = model.loss_and_grads(&batch, Some(eps))?;
            if !loss.total.is_finite() {
                return Err(Error::Training(format!(
                    "DAE loss diverged at epoch {epoch}"
                )));
            }
            opt.step(model.params_mut(), &grads.0, &names)?;
            sum.recon += loss.recon;
            for i in 0..3 {
                sum.cls[i] += loss.cls[i];
            }
            batches += 1.0;
        }
        let train_mean = DaeLoss::from_parts(sum.recon / batches, sum.cls.map(|c| c / batches));
        let v = model.loss_only(&val, None)?.total;
        if !v.is_finite() {
            return Err(Error::Training(format!(
                "DAE validation loss diverged at epoch {epoch}"
            )));
        }
        epochs.push(EpochLog {
            epoch,
            train: train_mean,
            validation: v,
        });
        if v < best.0 - config.min_delta {
            best = (v, model.clone(), epoch);
            stale = 0;
        } else {
            if v < best.0 {
                best = (v, model.clone(), epoch);
            }
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(DaeTraining {
        model: best.1,
        epochs,
        best_epoch: best.2,
        train_indices: train_idx,
        validation_indices: val_idx,
    })
}

/// Multinomial logistic regression probe: trains on `(x_train, y_train)`
/// and reports argmax accuracy on `(x_test, y_test)`.
pub fn linear_probe_accuracy(
    x_train: &Array2<f64>,
    y_train: &[usize],
    x_test: &Array2<f64>,
    y_test: &[usize],
    classes: usize,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    ensure!(
        x_train.nrows() == y_train.len() && x_test.nrows() == y_test.len(),
        ContractViolation,
        "probe features and labels differ in length"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DenseNet::new(
        &[x_train.ncols(), classes],
        &[Activation::Identity],
        &mut rng,
    );
    let mut opt = Adam::for_net(AdamConfig::with_lr(1e-2), &net);
    let mut order: Vec<usize> = (0..x_train.nrows()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(128) {
            let xb = x_train.select(Axis(0), rows);
            let yb: Vec<usize> = rows.iter().map(|&r| y_train[r]).collect();
            let cache = net.forward(xb.view())?;
            let (_, g) = softmax_ce_batch(cache.output(), &yb)?;
            let (grads, _): (Gradients, _) = net.backward(&cache, &g);
            opt.step_net(&mut net, &grads, "probe")?;
        }
    }
    Ok(argmax_accuracy(&net.predict(x_test.view())?, y_test))
}

/// Full DAE loss against central differences on a small model, with the
/// reparameterization noise held fixed.
pub fn gradient_check(seed: u64) -> Result<GradCheck> {
    let o = std::sync::Arc::new(Ontology::desk_default());
    let corpus = generate_expert_corpus(&o, &EnvConfig::default(), 10, seed)?;
    let cfg = DaeConfig {
        hidden: 6,
        latent: 4,
        decoder_hidden: 5,
        ..DaeConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DaeModel::new(&o, &cfg, &mut rng);
    offset_biases(m.params_mut(), &mut rng);
    let idx: Vec<usize> = (0..7.min(corpus.len())).collect();
    let b = DaeBatch::from_corpus(&corpus, &o, &idx)?;
    let eps = standard_normal((idx.len(), 3 * cfg.latent), &mut rng);
    let (_, grads) = m.loss_and_grads(&b, Some(eps.clone()))?;
    let loss = |m: &DaeModel| {
        m.loss_only(&b, Some(eps.clone()))
            .map_or(f64::NAN, |l| l.total)
    };
    Ok(check(
        "dae/loss",
        &mut m,
        |m| m.params_mut(),
        loss,
        &grads.0,
        3,
        &mut rng,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::dialogenv::{generate_expert_corpus, EnvConfig};

    fn small() -> (Ontology, ExpertCorpus) {
        let o = Arc::new(Ontology::desk_default());
        let c = generate_expert_corpus(&o, &EnvConfig::default(), 40, 1).unwrap();
        (Ontology::clone(&o), c)
    }

    fn batch(o: &Ontology, c: &ExpertCorpus, n: usize) -> DaeBatch {
        let idx: Vec<usize> = (0..n.min(c.len())).collect();
        DaeBatch::from_corpus(c, o, &idx).unwrap()
    }

    #[test]
    fn mean_encoding_is_deterministic_and_sampling_is_seeded() {
        let (o, c) = small();
        let m = DaeModel::new(&o, &DaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let s = &c.pairs[3].0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = dae_encode(&m, s, &mut rng, false).unwrap();
        let b = dae_encode(&m, s, &mut rng, false).unwrap();
        assert_eq!(a, b);
        let x = dae_encode(&m, s, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap();
        let y = dae_encode(&m, s, &mut ChaCha8Rng::seed_from_u64(9), true).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, a);
    }

    #[test]
    fn zero_latent_decodes_to_sigmoid_of_biases() {
        let (o, _) = small();
        let m = DaeModel::new(&o, &DaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let z = Latents {
            blocks: std::array::from_fn(|_| Array2::zeros((1, 64))),
        };
        let p = dae_reconstruct(&m, &z).unwrap();
        // hidden layer sees only its bias through the ReLU
        let h = m.decoder.layers()[0].bias.mapv(|v| v.max(0.0));
        let last = &m.decoder.layers()[1];
        let expect = (h.dot(&last.weight) + &last.bias).mapv(crate::nn::sigmoid);
        assert_eq!(p, expect);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_width_is_contract_violation() {
        let (o, _) = small();
        let m = DaeModel::new(&o, &DaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let err = m.encode_mean(Array2::zeros((1, 5)).view()).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn loss_components_add_up() {
        let (o, c) = small();
        let m = DaeModel::new(&o, &DaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let b = batch(&o, &c, 50);
        let l = dae_loss(&m, &b, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let sum = l.recon + l.cls.iter().sum::<f64>();
        assert!((l.total - sum).abs() <= 1e-9);
        assert!(l.total >= l.recon && l.cls.iter().all(|&c| l.total >= c));
    }

    #[test]
    fn init_domain_loss_is_near_uniform() {
        let o = Arc::new(Ontology::desk_default());
        let c = generate_expert_corpus(&o, &EnvConfig::default(), 200, 4).unwrap();
        let b = batch(&o, &c, 1000);
        // a small classifier init keeps logits near zero
        let mut m = DaeModel::new(&o, &DaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        for w in &mut m.classifiers {
            w.mapv_inplace(|v| v * 0.01);
        }
        let l = m
            .loss(&b, &mut ChaCha8Rng::seed_from_u64(0), false)
            .unwrap();
        assert!((l.cls[0] - 3f64.ln()).abs() < 0.02, "cls_d {}", l.cls[0]);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let c = gradient_check(5).unwrap();
        assert!(c.passes(1e-4), "{c:?}");
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let (o, _) = small();
        let m = DaeModel::new(&o, &DaeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let ck = m.to_checkpoint();
        let back = DaeModel::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), &o)
            .unwrap();
        assert_eq!(back, m);
        let err = DaeModel::from_checkpoint(&ck, &Ontology::micro()).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }

    #[test]
    fn short_training_lowers_loss_and_is_reproducible() {
        let (o, c) = small();
        let cfg = DaeConfig {
            max_epochs: 4,
            ..DaeConfig::default()
        };
        let a = train_dae(&c, &o, &cfg, 3).unwrap();
        let b = train_dae(&c, &o, &cfg, 3).unwrap();
        assert_eq!(a.model, b.model);
        let first = a.epochs.first().unwrap().train.total;
        let last = a.epochs.last().unwrap().train.total;
        assert!(last < first, "loss {first} -> {last}");
    }
}
