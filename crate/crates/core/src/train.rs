//! Noisy-only training: corrupt, forward, likelihood, backward, Adam.
//!
//! Every step draws its randomness from a generator keyed by
//! `(seed, step)`, so the step counter is the whole RNG state and a resumed
//! run replays the uninterrupted trajectory exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::{extract_patches_with, Augment, Dataset};
use crate::error::{Error, Result};
use crate::kv::{KvDoc, KvReader};
use crate::network::{build_network, Network, NetworkConfig};
use crate::noise::{corrupt_with, GaussianNll, NoiseModel};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub rotate: bool,
    /// Save a checkpoint every this many steps; 0 disables.
    pub checkpoint_interval: u64,
    /// Fraction of the run over which the learning rate ramps down to 0.
    pub ramp_down: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            steps: 10_000,
            batch_size: 4,
            patch_size: 64,
            noise: NoiseModel::GaussianKnown { sigma: 25.0 },
            seed: 0,
            flip_h: true,
            flip_v: true,
            rotate: false,
            checkpoint_interval: 0,
            ramp_down: 0.3,
        }
    }
}

impl TrainConfig {
    pub fn augment(&self) -> Augment {
        Augment {
            flip_h: self.flip_h,
            flip_v: self.flip_v,
            rotate: self.rotate,
        }
    }

    /// Learning rate at `step`: constant, then a cosine ramp to zero over
    /// the final `ramp_down` fraction of the run.
    pub fn lr_at(&self, step: u64) -> f64 {
        let total = self.steps as f64;
        let start = total * (1.0 - self.ramp_down);
        let s = step as f64;
        if self.ramp_down <= 0.0 || s < start {
            return self.lr;
        }
        let phase = ((s - start) / (total - start)).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::config("lr", "must be non-negative"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ramp_down) {
            return Err(Error::config("ramp_down", "must lie in [0, 1]"));
        }
        let max_dilation = *net.receptive_field().dilations.last().unwrap_or(&1);
        let min_patch = 2 * max_dilation + 1;
        if self.patch_size < min_patch {
            return Err(Error::config(
                "patch_size",
                format!("must be at least {min_patch} (2 * max dilation + 1)"),
            ));
        }
        self.noise
            .validate()
            .map_err(|e| Error::config("noise", e.to_string()))
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.push("lr", self.lr);
        d.push("steps", self.steps);
        d.push("batch_size", self.batch_size);
        d.push("patch_size", self.patch_size);
        d.push("noise", self.noise);
        d.push("seed", self.seed);
        d.push("flip_h", self.flip_h);
        d.push("flip_v", self.flip_v);
        d.push("rotate", self.rotate);
        d.push("checkpoint_interval", self.checkpoint_interval);
        d.push("ramp_down", self.ramp_down);
        d
    }

    pub fn read_kv(r: &mut KvReader<'_>) -> Result<Self> {
        let def = TrainConfig::default();
        let noise = match r.opt::<String>("noise")? {
            Some(s) => s
                .parse()
                .map_err(|e: Error| Error::config("noise", e.to_string()))?,
            None => def.noise,
        };
        Ok(TrainConfig {
            lr: r.or("lr", def.lr)?,
            steps: r.or("steps", def.steps)?,
            batch_size: r.or("batch_size", def.batch_size)?,
            patch_size: r.or("patch_size", def.patch_size)?,
            noise,
            seed: r.or("seed", def.seed)?,
            flip_h: r.or("flip_h", def.flip_h)?,
            flip_v: r.or("flip_v", def.flip_v)?,
            rotate: r.or("rotate", def.rotate)?,
            checkpoint_interval: r.or("checkpoint_interval", def.checkpoint_interval)?,
            ramp_down: r.or("ramp_down", def.ramp_down)?,
        })
    }
}

/// Parses a combined network + training config file; unknown keys fail.
pub fn parse_run_config(text: &str) -> Result<(NetworkConfig, TrainConfig)> {
    let doc = KvDoc::parse(text)?;
    let mut r = KvReader::new(&doc);
    let net = NetworkConfig::read_kv(&mut r)?;
    let train = TrainConfig::read_kv(&mut r)?;
    r.finish()?;
    train.validate(&net)?;
    Ok((net, train))
}

pub struct Trainer {
    pub net: Network,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub adam_config: AdamConfig,
    /// Number of completed steps.
    pub step: u64,
}

impl Trainer {
    pub fn new(net: Network, config: TrainConfig) -> Result<Self> {
        config.validate(net.config())?;
        let adam = AdamState::new(&net.params());
        Ok(Trainer {
            net,
            config,
            adam,
            adam_config: AdamConfig::default(),
            step: 0,
        })
    }

    /// Fresh network built from `config.seed`.
    pub fn from_configs(net: &NetworkConfig, config: TrainConfig) -> Result<Self> {
        let network = build_network(net, config.seed)?;
        Self::new(network, config)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut trainer = Trainer::new(ckpt.restore_network()?, ckpt.train.clone())?;
        if ckpt.adam_m.len() != trainer.adam.m.len() || ckpt.adam_v.len() != trainer.adam.v.len() {
            return Err(Error::Dimension("optimizer state does not match parameters".into()));
        }
        for (slot, t) in trainer.adam.m.iter_mut().zip(&ckpt.adam_m) {
            slot.ensure_same_shape(t, "adam first moment")?;
            *slot = t.clone();
        }
        for (slot, t) in trainer.adam.v.iter_mut().zip(&ckpt.adam_v) {
            slot.ensure_same_shape(t, "adam second moment")?;
            *slot = t.clone();
        }
        trainer.adam.t = ckpt.step;
        trainer.step = ckpt.step;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.net.config().clone(),
            train: self.config.clone(),
            params: self
                .net
                .param_names()
                .into_iter()
                .zip(self.net.params().into_iter().cloned())
                .collect(),
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
            step: self.step,
        }
    }

    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step);
        rng
    }

    /// Loss and parameter gradients for one noisy batch.
    pub fn loss_and_grads(&self, noisy: &Tensor, noise_std: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let x = tape.constant(noisy.clone());
        let (out, params) = self.net.record(&mut tape, x, true)?;
        let loss = tape.objective(out, &GaussianNll { noisy, noise_std })?;
        let value = tape.scalar(loss)?;
        let mut grads = tape.backward(loss)?;
        let grads = params
            .vars
            .iter()
            .map(|&v| grads.take(v).expect("parameters are tracked"))
            .collect();
        Ok((value, grads))
    }

    /// One optimizer step on a fixed noisy batch; returns the pre-update loss.
    pub fn step_on_batch(&mut self, noisy: &Tensor, noise_std: &Tensor) -> Result<f64> {
        let (loss, grads) = match self.loss_and_grads(noisy, noise_std) {
            // NaN covariance parameters fail the factorization before a loss exists
            Err(Error::Numerical(_)) => {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    loss: f64::NAN,
                })
            }
            r => r?,
        };
        if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                loss,
            });
        }
        let lr = self.config.lr_at(self.step);
        adam_step(
            &mut self.net.params_mut(),
            &grads,
            &mut self.adam,
            lr,
            &self.adam_config,
        )?;
        self.step += 1;
        Ok(loss)
    }

    /// One step with a freshly drawn and freshly corrupted batch.
    pub fn step(&mut self, dataset: &Dataset) -> Result<f64> {
        let mut rng = self.step_rng();
        let clean = extract_patches_with(
            dataset,
            self.config.patch_size,
            self.config.batch_size,
            self.config.augment(),
            &mut rng,
        )?;
        let batch = corrupt_with(&clean, &self.config.noise, &mut rng)?;
        self.step_on_batch(&batch.noisy, &batch.noise_std)
    }

    /// Runs until `config.steps`, calling `on_step(step, loss)` after each
    /// step and saving to `ckpt_path` every `checkpoint_interval` steps.
    pub fn run(
        &mut self,
        dataset: &Dataset,
        ckpt_path: Option<&Path>,
        mut on_step: impl FnMut(u64, f64),
    ) -> Result<Vec<f64>> {
        if dataset.is_empty() {
            return Err(Error::Input("training dataset is empty".into()));
        }
        if dataset.channels() != Some(self.net.config().image_channels) {
            return Err(Error::Dimension(format!(
                "dataset has {} channels, network expects {}",
                dataset.channels().unwrap_or(0),
                self.net.config().image_channels
            )));
        }
        let mut losses = Vec::new();
        while self.step < self.config.steps {
            let loss = self.step(dataset)?;
            losses.push(loss);
            on_step(self.step, loss);
            let every = self.config.checkpoint_interval;
            if let Some(path) = ckpt_path {
                if every > 0 && self.step.is_multiple_of(every) {
                    save_checkpoint(path, &self.checkpoint())?;
                }
            }
        }
        Ok(losses)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<f64>,
}

/// Builds a network from `config.seed` and trains it on `dataset`.
pub fn train(
    net: &NetworkConfig,
    config: &TrainConfig,
    dataset: &Dataset,
    ckpt_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::from_configs(net, config.clone())?;
    let losses = trainer.run(dataset, ckpt_path, |_, _| {})?;
    let checkpoint = trainer.checkpoint();
    if let Some(path) = ckpt_path {
        save_checkpoint(path, &checkpoint)?;
    }
    Ok(TrainOutcome { checkpoint, losses })
}
