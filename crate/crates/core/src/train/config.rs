use crate::error::{Error, Result};
use crate::model::{parse_value, VesrNetConfig};

/// Optimization and data settings of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub base_lr: f32,
    /// Multiplicative learning-rate factor applied every `decay_epochs`.
    pub lr_decay: f64,
    pub decay_epochs: usize,
    /// Seed of the synthetic data and of batch sampling.
    pub seed: u64,
    /// Seed of parameter initialization.
    pub model_seed: u64,
    /// Steps between checkpoints.
    pub checkpoint_every: usize,
    /// Side of the square LR training crop.
    pub patch: usize,
    pub n_clips: usize,
    pub clip_frames: usize,
    /// Side of the square HR synthetic frames.
    pub hr_size: usize,
    pub noise_sigma: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            total_epochs: 1,
            steps_per_epoch: 100,
            base_lr: 1e-4,
            lr_decay: 0.8,
            decay_epochs: 20,
            seed: 0,
            model_seed: 0,
            checkpoint_every: 100,
            patch: 16,
            n_clips: 8,
            clip_frames: 7,
            hr_size: 64,
            noise_sigma: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("total_epochs", self.total_epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("decay_epochs", self.decay_epochs),
            ("checkpoint_every", self.checkpoint_every),
            ("patch", self.patch),
            ("n_clips", self.n_clips),
            ("clip_frames", self.clip_frames),
            ("hr_size", self.hr_size),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if self.hr_size % 4 != 0 || self.patch * 4 > self.hr_size {
            return Err(Error::Config(format!(
                "hr_size {} must be a multiple of 4 holding a {} LR patch",
                self.hr_size, self.patch
            )));
        }
        if !(0.0..0.5).contains(&self.noise_sigma) {
            return Err(Error::Config(format!("noise_sigma {} outside [0, 0.5)", self.noise_sigma)));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    /// Applies one `key = value` setting; returns `false` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value;
        match key {
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "total_epochs" => self.total_epochs = parse_value(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = parse_value(key, v)?,
            "base_lr" => self.base_lr = parse_value(key, v)?,
            "lr_decay" => self.lr_decay = parse_value(key, v)?,
            "decay_epochs" => self.decay_epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "model_seed" => self.model_seed = parse_value(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, v)?,
            "patch" => self.patch = parse_value(key, v)?,
            "n_clips" => self.n_clips = parse_value(key, v)?,
            "clip_frames" => self.clip_frames = parse_value(key, v)?,
            "hr_size" => self.hr_size = parse_value(key, v)?,
            "noise_sigma" => self.noise_sigma = parse_value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Learning rate for `epoch`: `base_lr * lr_decay^floor(epoch / decay_epochs)`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f32 {
    let k = (epoch / cfg.decay_epochs.max(1)) as i32;
    (cfg.base_lr as f64 * cfg.lr_decay.powi(k)) as f32
}

/// Parses UTF-8 `key = value` lines on top of the given defaults. Keys are
/// field names of [`TrainConfig`] or [`VesrNetConfig`]; `#` starts a comment.
pub fn parse_config(
    text: &str,
    mut train: TrainConfig,
    mut model: VesrNetConfig,
) -> Result<(TrainConfig, VesrNetConfig)> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        if !train.set(key, value)? && !model.set(key, value)? {
            return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
        }
    }
    train.validate()?;
    model.validate()?;
    Ok((train, model))
}
