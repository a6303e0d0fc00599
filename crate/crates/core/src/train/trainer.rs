use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::config::{lr_at, TrainConfig};
use super::metrics::l1_loss;
use crate::autograd::{Tape, Var};
use crate::data::{degrade_clip, generate_synthetic_clip, sample_patch_pair, Clip, DegradationSpec, PatchPair};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::{decode_tensors, encode_tensors, VesrNet};
use crate::tensor::Tensor;

/// Supplies training pairs. A batch depends only on the step index, so an
/// interrupted run resumes on exactly the batches it would have seen.
pub trait DataSource {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<PatchPair>>;
}

/// splitmix64 finalizer over two words.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// In-memory HR clips with their degraded LR counterparts.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub hr: Vec<Clip>,
    pub lr: Vec<Clip>,
    /// Frames per network input window.
    pub window: usize,
    pub patch: usize,
    pub seed: u64,
}

impl SyntheticDataset {
    /// Renders `cfg.n_clips` scenes and degrades them.
    pub fn generate(cfg: &TrainConfig, window: usize) -> Result<Self> {
        cfg.validate()?;
        let spec = DegradationSpec {
            noise_sigma: cfg.noise_sigma,
            ..Default::default()
        };
        let mut hr = Vec::with_capacity(cfg.n_clips);
        let mut lr = Vec::with_capacity(cfg.n_clips);
        for i in 0..cfg.n_clips as u64 {
            let clip = generate_synthetic_clip(mix(cfg.seed, 2 * i), cfg.clip_frames, cfg.hr_size, cfg.hr_size)?;
            lr.push(degrade_clip(&clip, &spec, mix(cfg.seed, 2 * i + 1))?);
            hr.push(clip);
        }
        Self::from_clips(hr, lr, window, cfg.patch, cfg.seed)
    }

    pub fn from_clips(hr: Vec<Clip>, lr: Vec<Clip>, window: usize, patch: usize, seed: u64) -> Result<Self> {
        if hr.is_empty() || hr.len() != lr.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} HR clips against {} LR clips", hr.len(), lr.len()),
            ));
        }
        if window == 0 || window % 2 == 0 {
            return Err(Error::invalid("dataset", format!("window length {window} must be odd")));
        }
        Ok(Self {
            hr,
            lr,
            window,
            patch,
            seed,
        })
    }

    /// `(hr, lr)` pairs, as consumed by [`evaluate`](super::evaluate).
    pub fn pairs(&self) -> Vec<(Clip, Clip)> {
        self.hr.iter().cloned().zip(self.lr.iter().cloned()).collect()
    }
}

impl DataSource for SyntheticDataset {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<PatchPair>> {
        (0..size as u64)
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.seed, step), b));
                let k = rng.random_range(0..self.hr.len());
                let center = rng.random_range(0..self.hr[k].n_frames());
                let hr = Clip::new(self.hr[k].window(center, self.window))?;
                let lr = Clip::new(self.lr[k].window(center, self.window))?;
                sample_patch_pair(&hr, &lr, self.patch, rng.random())
            })
            .collect()
    }
}

/// One line of the loss history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    /// 1-based index of the update this loss was measured before.
    pub step: u64,
    pub epoch: usize,
    pub lr: f32,
    pub loss: f32,
}

pub fn write_history_csv(path: impl AsRef<Path>, rows: &[HistoryRow]) -> Result<()> {
    let mut s = String::from("step,epoch,lr,loss\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.step, r.epoch, r.lr, r.loss).expect("writing to a String");
    }
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn read_history_csv(path: impl AsRef<Path>) -> Result<Vec<HistoryRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("step,epoch,lr,loss") {
        return Err(Error::Format("history CSV lacks its header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("malformed history row {line:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(HistoryRow {
                step: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                lr: f[2].parse().map_err(|_| bad())?,
                loss: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Model, optimizer state and loss history of a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: VesrNet<f32>,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub history: Vec<HistoryRow>,
}

const STEP_TENSOR: &str = "adam.step";

impl Trainer {
    pub fn new(net: VesrNet<f32>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(&net.params, cfg.base_lr);
        Ok(Self {
            net,
            adam,
            cfg,
            history: Vec::new(),
        })
    }

    /// Updates applied so far.
    pub fn steps_done(&self) -> u64 {
        self.adam.t
    }

    pub fn epoch(&self) -> usize {
        (self.adam.t / self.cfg.steps_per_epoch as u64) as usize
    }

    /// Mean L1 loss and mean gradient over one batch, without updating.
    pub fn loss_and_grads(&self, batch: &[PatchPair]) -> Result<(f32, Vec<Tensor<f32>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("train_step", "empty batch"));
        }
        let mut grads: Vec<Tensor<f32>> = self.net.params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        let mut total = 0.0f64;
        for pair in batch {
            let tape = Tape::new();
            let (params, out) = self.net.forward_tracked(&tape, &pair.lr)?;
            let loss = l1_loss(&out, &Var::constant(pair.hr.clone()))?;
            total += loss.value().item()? as f64;
            let mut g = tape.backward(&loss)?;
            for (acc, v) in grads.iter_mut().zip(params.vars()) {
                acc.add_assign(&g.take(v))?;
            }
        }
        let inv = 1.0 / batch.len() as f32;
        for g in &mut grads {
            g.scale_in_place(inv);
        }
        Ok(((total / batch.len() as f64) as f32, grads))
    }

    /// Runs one update and returns the loss measured before it. A
    /// non-finite loss leaves the model and optimizer untouched.
    pub fn train_step(&mut self, data: &dyn DataSource) -> Result<f32> {
        let epoch = self.epoch();
        let lr = lr_at(&self.cfg, epoch);
        let batch = data.batch(self.adam.t, self.cfg.batch_size)?;
        let (loss, grads) = self.loss_and_grads(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", self.adam.t + 1)));
        }
        self.adam.lr = lr;
        self.adam.step(&mut self.net.params, &grads)?;
        self.history.push(HistoryRow {
            step: self.adam.t,
            epoch,
            lr,
            loss,
        });
        Ok(loss)
    }

    /// Network parameters followed by `adam.m.*`, `adam.v.*` and `adam.step`.
    pub fn checkpoint_tensors(&self) -> Result<Vec<(String, Tensor<f32>)>> {
        if self.adam.t >= 1 << 24 {
            return Err(Error::Format(format!("step {} exceeds the checkpoint counter range", self.adam.t)));
        }
        let mut out: Vec<(String, Tensor<f32>)> = self.net.params.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect();
        let names = self.net.params.names();
        out.extend(names.iter().zip(&self.adam.m).map(|(n, m)| (format!("adam.m.{n}"), m.clone())));
        out.extend(names.iter().zip(&self.adam.v).map(|(n, v)| (format!("adam.v.{n}"), v.clone())));
        out.push((STEP_TENSOR.to_owned(), Tensor::from_vec(&[1], vec![self.adam.t as f32])?));
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors = self.checkpoint_tensors()?;
        let bytes = encode_tensors(tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        write_atomic(path.as_ref(), &bytes)
    }

    /// Restores model and optimizer from checkpoint tensors. A checkpoint
    /// without optimizer state starts a fresh optimizer.
    pub fn from_tensors(tensors: &[(String, Tensor<f32>)], cfg: TrainConfig) -> Result<Self> {
        let net = VesrNet::from_tensors(tensors)?;
        let mut trainer = Self::new(net, cfg)?;
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let Some(step) = find(STEP_TENSOR) else {
            return Ok(trainer);
        };
        trainer.adam.t = step.item()? as u64;
        for (i, name) in trainer.net.params.names().iter().enumerate() {
            for (prefix, slot) in [("adam.m.", &mut trainer.adam.m[i]), ("adam.v.", &mut trainer.adam.v[i])] {
                let t = find(&format!("{prefix}{name}"))
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks {prefix}{name}")))?;
                slot.expect_same_shape(t, "resume")?;
                *slot = t.clone();
            }
        }
        Ok(trainer)
    }

    pub fn resume(path: impl AsRef<Path>, cfg: TrainConfig) -> Result<Self> {
        Self::from_tensors(&decode_tensors(&fs::read(path)?)?, cfg)
    }

    /// Runs `steps` updates, checkpointing every `checkpoint_every` steps
    /// and after the last one. On error the last written checkpoint stays.
    pub fn run(&mut self, data: &dyn DataSource, steps: usize, checkpoint: Option<&Path>) -> Result<()> {
        for _ in 0..steps {
            self.train_step(data)?;
            if let Some(path) = checkpoint {
                if self.adam.t % self.cfg.checkpoint_every as u64 == 0 {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            if self.adam.t % self.cfg.checkpoint_every as u64 != 0 {
                self.save(path)?;
            }
        }
        Ok(())
    }
}

/// Result of [`train_loop`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: VesrNet<f32>,
    pub history: Vec<HistoryRow>,
}

/// Trains `net` for `cfg.total_steps()` updates.
pub fn train_loop(
    net: VesrNet<f32>,
    data: &dyn DataSource,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(net, cfg.clone())?;
    trainer.run(data, cfg.total_steps(), checkpoint)?;
    Ok(TrainOutcome {
        net: trainer.net,
        history: trainer.history,
    })
}
