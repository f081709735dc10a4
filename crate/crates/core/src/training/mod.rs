//! Training loops for the Noise-PU and RegCon schemes, validation-driven
//! model selection, prediction and input-gradient saliency.
//!
//! All randomness is drawn from streams keyed by the run seed and the
//! (epoch, step, slot) position, so a run resumed from a checkpoint replays
//! exactly the draws of an uninterrupted one.

mod checkpoint;

pub use checkpoint::{checkpoint_from_str, checkpoint_load, checkpoint_save, checkpoint_to_string, CKPT_FORMAT};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nnet::{
    init_params, noisepu_objective, regcon_objective, sgd_step, softmax2, Branches, Head, LossParts, LrSchedule,
    ModelConfig, ModelParams, OptState, RegconWeights,
};
use crate::rng::{self, tag};
use crate::sequences::{
    adversarial_perturb, augment, make_noise_dataset, selective_shuffle_one, AugmentConfig, SequenceObservation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// PU head on healthy vs unlabeled plus noise head on original vs scrambled.
    Noisepu,
    /// Supervised CCE plus smoothed CCE on shuffled twins plus NT-Xent.
    Regcon,
    /// Supervised CCE on originals only.
    Plain,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Noisepu => "noisepu",
            Scheme::Regcon => "regcon",
            Scheme::Plain => "plain",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisepu" => Ok(Scheme::Noisepu),
            "regcon" => Ok(Scheme::Regcon),
            "plain" => Ok(Scheme::Plain),
            other => Err(Error::config("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scheme: Scheme,
    /// Noise-PU heads that contribute to the loss and the score.
    pub branches: Branches,
    pub alpha: f64,
    pub beta: f64,
    /// Label smoothing of the twin cross-entropy.
    pub smoothing: f64,
    /// Selective-shuffle probability for positive windows.
    pub shuffle_prob: f64,
    pub temperature: f64,
    /// Scrambled copies per original in the noise dataset.
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub scheduler: LrSchedule,
    /// Train / validation / test subject fractions.
    pub split: [f64; 3],
    /// Drives initialization, batch order, scrambling and augmentation.
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Signed-gradient step on the twins, um. 0 disables it.
    pub adversarial_eps: f64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn noisepu() -> Self {
        TrainConfig {
            scheme: Scheme::Noisepu,
            branches: Branches::BOTH,
            alpha: 1.0,
            beta: 0.0,
            smoothing: 0.0,
            shuffle_prob: 0.5,
            temperature: 0.5,
            k: 2,
            epochs: 30,
            batch_size: 16,
            optimizer: OptimizerConfig { lr: 8.9e-4, momentum: 0.9, weight_decay: 0.0 },
            scheduler: LrSchedule::Step { step_size: 5, gamma: 0.5 },
            split: [0.70, 0.15, 0.15],
            seed: 0,
            augment: AugmentConfig::default(),
            adversarial_eps: 0.0,
            model: ModelConfig { heads: vec![Head::Pu, Head::Noise], ..ModelConfig::default() },
        }
    }

    pub fn regcon() -> Self {
        TrainConfig {
            scheme: Scheme::Regcon,
            branches: Branches::BOTH,
            alpha: 1.0,
            beta: 1.0,
            smoothing: 0.1,
            shuffle_prob: 0.5,
            temperature: 0.5,
            k: 2,
            epochs: 120,
            batch_size: 48,
            optimizer: OptimizerConfig { lr: 0.002, momentum: 0.9, weight_decay: 0.1 },
            scheduler: LrSchedule::CosineWarmRestarts { t0: 10, t_mult: 2, lr_min: 1e-5 },
            split: [0.70, 0.10, 0.20],
            seed: 0,
            augment: AugmentConfig::default(),
            adversarial_eps: 1.0,
            model: ModelConfig { heads: vec![Head::Main], ..ModelConfig::default() },
        }
    }

    pub fn plain() -> Self {
        TrainConfig { scheme: Scheme::Plain, alpha: 0.0, beta: 0.0, ..TrainConfig::regcon() }
    }

    pub fn for_scheme(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Noisepu => TrainConfig::noisepu(),
            Scheme::Regcon => TrainConfig::regcon(),
            Scheme::Plain => TrainConfig::plain(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config("smoothing", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.shuffle_prob) {
            return Err(Error::config("shuffle_prob", "must lie in [0, 1]"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be > 0"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::config("optimizer.lr", "must be > 0"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::config("optimizer.momentum", "must lie in [0, 1)"));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::config("optimizer.weight_decay", "must be >= 0"));
        }
        self.scheduler.validate()?;
        if self.split.iter().any(|&r| !(r > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split", "ratios must be positive and sum to 1"));
        }
        self.augment.validate()?;
        if !(self.adversarial_eps >= 0.0 && self.adversarial_eps.is_finite()) {
            return Err(Error::config("adversarial_eps", "must be finite and >= 0"));
        }
        self.model.validate()?;
        match self.scheme {
            Scheme::Noisepu => {
                if !self.branches.pu && !self.branches.noise {
                    return Err(Error::config("branches", "at least one branch must be enabled"));
                }
                for h in [Head::Pu, Head::Noise] {
                    if !self.model.has_head(h) {
                        return Err(Error::config("model.heads", format!("noisepu needs the `{}` head", h.as_str())));
                    }
                }
            }
            Scheme::Regcon | Scheme::Plain => {
                if !self.model.has_head(Head::Main) {
                    return Err(Error::config("model.heads", "regcon and plain need the `main` head"));
                }
            }
        }
        Ok(())
    }

    fn weights(&self) -> RegconWeights {
        RegconWeights { alpha: self.alpha, beta: self.beta, smoothing: self.smoothing, temperature: self.temperature }
    }

    /// Heads whose class-1 probabilities are multiplied into the score.
    pub fn score_heads(&self) -> Vec<Head> {
        match self.scheme {
            Scheme::Noisepu => {
                let mut h = Vec::new();
                if self.branches.pu {
                    h.push(Head::Pu);
                }
                if self.branches.noise {
                    h.push(Head::Noise);
                }
                h
            }
            Scheme::Regcon | Scheme::Plain => vec![Head::Main],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_components: [f64; 3],
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_sensitivity: f64,
    pub val_specificity: f64,
    /// Validation loss improved the running minimum.
    pub retained: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub selected: Option<usize>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,lr,train_loss,train_c0,train_c1,train_c2,val_loss,val_accuracy,val_sensitivity,val_specificity,retained,selected\n",
        );
        for r in &self.epochs {
            let c = r.train_components;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.lr,
                r.train_loss,
                c[0],
                c[1],
                c[2],
                r.val_loss,
                r.val_accuracy,
                r.val_sensitivity,
                r.val_specificity,
                u8::from(r.retained),
                u8::from(self.selected == Some(r.epoch)),
            );
        }
        out
    }

    fn running_min(&self) -> f64 {
        self.epochs.iter().filter(|r| r.retained).map(|r| r.val_loss).fold(f64::INFINITY, f64::min)
    }

    fn selected_score(&self) -> Option<f64> {
        let e = self.selected?;
        self.epochs.iter().find(|r| r.epoch == e).map(|r| r.val_sensitivity + r.val_specificity)
    }
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub opt: OptState,
    pub history: TrainHistory,
    /// Parameters of the selected epoch.
    pub best: Option<ModelParams>,
    pub next_epoch: usize,
    /// Fingerprint of the training and validation inputs.
    pub data_digest: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
}

fn data_digest(train: &[SequenceObservation], val: &[SequenceObservation]) -> String {
    let mut h = Sha256::new();
    for (tagname, set) in [("train", train), ("val", val)] {
        h.update(tagname.as_bytes());
        for o in set {
            h.update(o.key().as_bytes());
            h.update([o.pu_label, o.noise_label, o.external_label.map_or(2, |y| y)]);
            for v in &o.inputs {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

fn check_disjoint(train: &[SequenceObservation], val: &[SequenceObservation]) -> Result<()> {
    let a: BTreeSet<u32> = train.iter().map(|o| o.subject_id).collect();
    if let Some(o) = val.iter().find(|o| a.contains(&o.subject_id)) {
        return Err(Error::Input(format!("subject {} appears in both training and validation", o.subject_id)));
    }
    Ok(())
}

/// Drives one training run epoch by epoch.
pub struct Trainer<'a> {
    train: &'a [SequenceObservation],
    val: &'a [SequenceObservation],
    noise_train: Vec<SequenceObservation>,
    noise_val: Vec<SequenceObservation>,
    state: TrainerState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, train: &'a [SequenceObservation], val: &'a [SequenceObservation]) -> Result<Self> {
        cfg.validate()?;
        let mut model = cfg.model.clone();
        model.init_seed = cfg.seed;
        let mut params = init_params(&model)?;
        Self::check_inputs(cfg, train, val)?;
        params.fit_standardization(train);
        let opt = OptState::new(params.param_count());
        let state = TrainerState {
            config: cfg.clone(),
            params,
            opt,
            history: TrainHistory::default(),
            best: None,
            next_epoch: 0,
            data_digest: data_digest(train, val),
        };
        Self::with_state(state, train, val)
    }

    /// Continue from a saved state. The inputs must be the ones the state was
    /// created with.
    pub fn resume(state: TrainerState, train: &'a [SequenceObservation], val: &'a [SequenceObservation]) -> Result<Self> {
        state.config.validate()?;
        Self::check_inputs(&state.config, train, val)?;
        if data_digest(train, val) != state.data_digest {
            return Err(Error::Input("checkpoint was created from different training or validation data".into()));
        }
        Self::with_state(state, train, val)
    }

    fn check_inputs(cfg: &TrainConfig, train: &[SequenceObservation], val: &[SequenceObservation]) -> Result<()> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::Input("training and validation partitions must be non-empty".into()));
        }
        check_disjoint(train, val)?;
        let m = &cfg.model;
        if let Some(o) = train.iter().chain(val).find(|o| o.tau != m.tau || o.profile_len != m.profile_len) {
            return Err(Error::Shape {
                expected: format!("{}x{}", m.tau, m.profile_len),
                found: format!("{}x{} in {}", o.tau, o.profile_len, o.key()),
            });
        }
        match cfg.scheme {
            Scheme::Noisepu => {
                if !train.iter().any(|o| o.pu_label == 1) || !val.iter().any(|o| o.pu_label == 1) {
                    return Err(Error::Input("no unlabeled (glaucoma) windows to build the noise dataset from".into()));
                }
            }
            Scheme::Regcon | Scheme::Plain => {
                if let Some(o) = train.iter().chain(val).find(|o| o.external_label.is_none()) {
                    return Err(Error::Input(format!("observation {} has no external label", o.key())));
                }
            }
        }
        Ok(())
    }

    fn with_state(state: TrainerState, train: &'a [SequenceObservation], val: &'a [SequenceObservation]) -> Result<Self> {
        let cfg = &state.config;
        let (noise_train, noise_val) = if cfg.scheme == Scheme::Noisepu {
            let originals = |set: &[SequenceObservation]| -> Vec<SequenceObservation> {
                set.iter().filter(|o| o.pu_label == 1).cloned().collect()
            };
            let mut r = rng::stream(cfg.seed, &[tag::SCRAMBLE]);
            let nt = make_noise_dataset(&originals(train), cfg.k, &mut r)?;
            let mut r = rng::stream(cfg.seed, &[tag::VALIDATION]);
            let nv = make_noise_dataset(&originals(val), cfg.k, &mut r)?;
            (nt, nv)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Trainer { train, val, noise_train, noise_val, state })
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.next_epoch >= self.state.config.epochs
    }

    /// Number of optimizer steps per epoch.
    pub fn steps_per_epoch(&self) -> usize {
        let bs = self.state.config.batch_size;
        let n = self.train.len().div_ceil(bs);
        match self.state.config.scheme {
            Scheme::Noisepu => n.max(self.noise_train.len().div_ceil(bs)),
            Scheme::Regcon | Scheme::Plain => n,
        }
    }

    /// Run one epoch, validate, and update the selection.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.state.next_epoch;
        let cfg = self.state.config.clone();
        let lr = cfg.scheduler.lr(cfg.optimizer.lr, epoch);
        let steps = self.steps_per_epoch();
        let bs = cfg.batch_size;
        let order = |n: usize, slot: u64| -> Vec<usize> {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::stream(cfg.seed, &[tag::BATCH_ORDER, epoch as u64, slot]));
            idx
        };
        let pu_order = order(self.train.len(), 0);
        let noise_order = order(self.noise_train.len(), 1);

        let mut sum = LossParts::default();
        for step in 0..steps {
            let (parts, grad) = match cfg.scheme {
                Scheme::Noisepu => {
                    let pu = self.augmented_batch(&cfg, &pu_order, self.train, steps, step, epoch, 0);
                    let noise = self.augmented_batch(&cfg, &noise_order, &self.noise_train, steps, step, epoch, 1);
                    let pu_refs: Vec<&SequenceObservation> = pu.iter().collect();
                    let noise_refs: Vec<&SequenceObservation> = noise.iter().collect();
                    noisepu_objective(&self.state.params, &pu_refs, &noise_refs, cfg.alpha, cfg.branches, true)
                }
                Scheme::Regcon | Scheme::Plain => {
                    let idx = batch_indices(&pu_order, steps, step, bs);
                    let originals: Vec<&SequenceObservation> = idx.iter().map(|&i| &self.train[i]).collect();
                    let twins = if cfg.scheme == Scheme::Regcon {
                        self.twins(&cfg, &originals, epoch, step).map_err(diverged(epoch))?
                    } else {
                        Vec::new()
                    };
                    let twin_refs: Vec<&SequenceObservation> = twins.iter().collect();
                    regcon_objective(&self.state.params, &originals, &twin_refs, cfg.weights(), true)
                }
            }
            .map_err(diverged(epoch))?;
            if !parts.total.is_finite() {
                return Err(Error::Divergence { epoch, loss: parts.total });
            }
            let o = &cfg.optimizer;
            sgd_step(&mut self.state.params.values, &grad, &mut self.state.opt, lr, o.momentum, o.weight_decay)?;
            if !self.state.params.is_finite() {
                return Err(Error::Divergence { epoch, loss: parts.total });
            }
            sum.total += parts.total;
            for (s, c) in sum.components.iter_mut().zip(parts.components) {
                *s += c;
            }
        }
        let n = steps.max(1) as f64;

        let (val_loss, metrics) = self.validate_epoch(&cfg).map_err(diverged(epoch))?;
        let retained = val_loss < self.state.history.running_min();
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: sum.total / n,
            train_components: sum.components.map(|c| c / n),
            val_loss,
            val_accuracy: metrics.0,
            val_sensitivity: metrics.1,
            val_specificity: metrics.2,
            retained,
        };
        if retained {
            let score = record.val_sensitivity + record.val_specificity;
            if self.state.history.selected_score().is_none_or(|best| score > best) {
                self.state.history.selected = Some(epoch);
                self.state.best = Some(self.state.params.clone());
            }
        }
        self.state.history.epochs.push(record);
        self.state.next_epoch += 1;
        Ok(self.state.history.epochs.last().expect("just pushed"))
    }

    #[allow(clippy::too_many_arguments)]
    fn augmented_batch(
        &self,
        cfg: &TrainConfig,
        order: &[usize],
        data: &[SequenceObservation],
        steps: usize,
        step: usize,
        epoch: usize,
        slot: u64,
    ) -> Vec<SequenceObservation> {
        let idx = batch_indices(order, steps, step, cfg.batch_size);
        idx.par_iter()
            .enumerate()
            .map(|(j, &i)| {
                let mut r = rng::stream(cfg.seed, &[tag::AUGMENT, epoch as u64, step as u64, slot, j as u64]);
                augment(&data[i], &cfg.augment, &mut r)
            })
            .collect()
    }

    fn twins(
        &self,
        cfg: &TrainConfig,
        originals: &[&SequenceObservation],
        epoch: usize,
        step: usize,
    ) -> Result<Vec<SequenceObservation>> {
        let params = &self.state.params;
        originals
            .par_iter()
            .enumerate()
            .map(|(j, o)| {
                let mut r = rng::stream(cfg.seed, &[tag::SELECTIVE, epoch as u64, step as u64, j as u64]);
                let shuffled = selective_shuffle_one(o, cfg.shuffle_prob, &mut r)?;
                let mut r = rng::stream(cfg.seed, &[tag::AUGMENT, epoch as u64, step as u64, 2, j as u64]);
                let aug = augment(&shuffled, &cfg.augment, &mut r);
                adversarial_perturb(params, &aug, Head::Main, cfg.adversarial_eps)
            })
            .collect()
    }

    /// Validation loss and (accuracy, sensitivity, specificity) at 0.5.
    /// Noise-PU pools the counts of each enabled head on its own labels.
    fn validate_epoch(&self, cfg: &TrainConfig) -> Result<(f64, (f64, f64, f64))> {
        let params = &self.state.params;
        let val: Vec<&SequenceObservation> = self.val.iter().collect();
        match cfg.scheme {
            Scheme::Noisepu => {
                let noise: Vec<&SequenceObservation> = self.noise_val.iter().collect();
                let (p, _) = noisepu_objective(params, &val, &noise, cfg.alpha, cfg.branches, false)?;
                let mut counts = Counts::default();
                if cfg.branches.pu {
                    let labels: Vec<u8> = self.val.iter().map(|o| o.pu_label).collect();
                    counts.add(&predict(params, self.val, Head::Pu)?, &labels);
                }
                if cfg.branches.noise {
                    let labels: Vec<u8> = self.noise_val.iter().map(|o| o.noise_label).collect();
                    counts.add(&predict(params, &self.noise_val, Head::Noise)?, &labels);
                }
                Ok((p.total, counts.rates()))
            }
            Scheme::Regcon | Scheme::Plain => {
                let (p, _) = regcon_objective(params, &val, &[], cfg.weights(), false)?;
                let labels: Vec<u8> = self.val.iter().map(|o| o.external_label.unwrap_or(0)).collect();
                let mut counts = Counts::default();
                counts.add(&predict(params, self.val, Head::Main)?, &labels);
                Ok((p.total, counts.rates()))
            }
        }
    }

    /// Train until `epochs` (exclusive) or the configured total, calling
    /// `after_epoch` with the state after each epoch.
    pub fn run_until(&mut self, epochs: usize, mut after_epoch: impl FnMut(&TrainerState) -> Result<()>) -> Result<()> {
        let end = epochs.min(self.state.config.epochs);
        while self.state.next_epoch < end {
            self.run_epoch()?;
            after_epoch(&self.state)?;
        }
        Ok(())
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    /// Selected parameters (the initial ones if no epoch ran) and history.
    pub fn finish(self) -> TrainOutcome {
        let TrainerState { params, history, best, .. } = self.state;
        TrainOutcome { params: best.unwrap_or(params), history }
    }
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence { epoch, loss: f64::NAN },
        other => other,
    }
}

/// Positions `step * bs ..` of `order`. A stream with fewer steps than the
/// epoch wraps around; the longest stream's last batch is truncated.
fn batch_indices(order: &[usize], steps: usize, step: usize, bs: usize) -> Vec<usize> {
    let n = order.len();
    let own_steps = n.div_ceil(bs);
    let start = step * bs;
    if own_steps == steps {
        order[start.min(n)..(start + bs).min(n)].to_vec()
    } else {
        (start..start + bs).map(|i| order[i % n]).collect()
    }
}

#[derive(Default)]
struct Counts {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

impl Counts {
    fn add(&mut self, scores: &[f64], labels: &[u8]) {
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= 0.5, y == 1) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, false) => self.tn += 1,
                (false, true) => self.fn_ += 1,
            }
        }
    }

    /// (accuracy, sensitivity, specificity); an empty class counts as 0.
    fn rates(&self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let n = self.tp + self.fp + self.tn + self.fn_;
        (ratio(self.tp + self.tn, n), ratio(self.tp, self.tp + self.fn_), ratio(self.tn, self.tn + self.fp))
    }
}

/// Noise-PU on PU-labelled partitions. The noise dataset is built from the
/// unlabeled training windows.
pub fn train_noisepu(
    pu_train: &[SequenceObservation],
    pu_val: &[SequenceObservation],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.scheme != Scheme::Noisepu {
        return Err(Error::config("scheme", "train_noisepu needs scheme = noisepu"));
    }
    run(cfg, pu_train, pu_val)
}

/// RegCon (or plain, depending on `cfg.scheme`) on externally labelled
/// partitions.
pub fn train_regcon(
    labeled_train: &[SequenceObservation],
    labeled_val: &[SequenceObservation],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.scheme == Scheme::Noisepu {
        return Err(Error::config("scheme", "train_regcon needs scheme = regcon or plain"));
    }
    run(cfg, labeled_train, labeled_val)
}

fn run(cfg: &TrainConfig, train: &[SequenceObservation], val: &[SequenceObservation]) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg, train, val)?;
    t.run_until(cfg.epochs, |_| Ok(()))?;
    Ok(t.finish())
}

/// Class-1 probability of `head` for each observation.
pub fn predict(params: &ModelParams, observations: &[SequenceObservation], head: Head) -> Result<Vec<f64>> {
    if !params.config.has_head(head) {
        return Err(Error::config("model.heads", format!("head `{}` is not enabled", head.as_str())));
    }
    observations
        .par_iter()
        .map(|o| {
            let tr = params.encode(o)?;
            Ok(softmax2(params.head_logits(head, &tr.latent)?)[1])
        })
        .collect()
}

/// Progression score of a trained scheme: the product of the class-1
/// probabilities of its score heads.
pub fn scheme_scores(params: &ModelParams, observations: &[SequenceObservation], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut scores = vec![1.0; observations.len()];
    for head in cfg.score_heads() {
        for (s, p) in scores.iter_mut().zip(predict(params, observations, head)?) {
            *s *= p;
        }
    }
    Ok(scores)
}

/// `|d score / d input|` over the `tau x profile_len` window, scaled to a
/// maximum of 1. All zeros when the gradient vanishes.
pub fn saliency(params: &ModelParams, obs: &SequenceObservation, head: Head) -> Result<Vec<f64>> {
    let g = params.score_input_gradient(obs, head)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("saliency gradient".into()));
    }
    let mut map: Vec<f64> = g.into_iter().map(f64::abs).collect();
    let max = map.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        map.iter_mut().for_each(|v| *v /= max);
    }
    Ok(map)
}

#[cfg(test)]
mod tests;
