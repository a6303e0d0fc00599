//! Synthetic clips, degradation and patch sampling.

mod bicubic;
mod io;
mod synth;

pub use bicubic::{bicubic_resize, cubic, resample_taps};
pub use io::{decode_clip, encode_clip, encode_ppm, quantize_u8, read_clip, write_clip, write_ppm_frames};
pub(crate) use io::write_atomic;
pub use synth::SyntheticScene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Super-resolution factor between HR and LR clips.
pub const SCALE: usize = 4;

/// `T x C x H x W` frames with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: Tensor<f32>,
}

impl Clip {
    pub fn new(frames: Tensor<f32>) -> Result<Self> {
        if frames.rank() != 4 || frames.numel() == 0 {
            return Err(Error::invalid("clip", format!("expected non-empty T x C x H x W, got {:?}", frames.shape())));
        }
        if let Some(v) = frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("clip", format!("sample {v} outside [0, 1]")));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Tensor<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor<f32> {
        self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Frame `t` as `C x H x W`. Panics when out of range.
    pub fn frame(&self, t: usize) -> Tensor<f32> {
        self.frames.select(t).expect("frame index in range")
    }

    /// `len` frames centred on `center`, reflecting indices at both ends.
    pub fn window(&self, center: usize, len: usize) -> Tensor<f32> {
        let half = len as isize / 2;
        let frames: Vec<_> = (-half..=half)
            .map(|d| self.frame(reflect_index(center as isize + d, self.n_frames())))
            .collect();
        Tensor::stack(&frames).expect("frames share a shape")
    }
}

/// Mirrors `i` into `0..n` without repeating the edge sample.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Renders `t` frames of a seeded synthetic scene.
pub fn generate_synthetic_clip(seed: u64, t: usize, h: usize, w: usize) -> Result<Clip> {
    if t == 0 {
        return Err(Error::invalid("synthetic_clip", "a clip needs at least one frame"));
    }
    let scene = SyntheticScene::new(seed, h, w)?;
    let frames: Vec<_> = (0..t).map(|i| scene.render(i)).collect();
    Clip::new(Tensor::stack(&frames)?)
}

/// Low-resolution degradation applied to HR clips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationSpec {
    pub scale: usize,
    pub noise_sigma: f32,
    pub quantize_8bit: bool,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            scale: SCALE,
            noise_sigma: 0.0,
            quantize_8bit: false,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scale != SCALE {
            return Err(Error::Config(format!("degradation scale must be {SCALE}, got {}", self.scale)));
        }
        if !(0.0..0.5).contains(&self.noise_sigma) {
            return Err(Error::Config(format!("noise sigma {} outside [0, 0.5)", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Bicubic downscaling, additive Gaussian noise and optional 8-bit
/// quantization, per frame, clamped to `[0, 1]`.
pub fn degrade_clip(hr: &Clip, spec: &DegradationSpec, seed: u64) -> Result<Clip> {
    spec.validate()?;
    let (h, w) = (hr.height(), hr.width());
    if h % spec.scale != 0 || w % spec.scale != 0 {
        return Err(Error::invalid(
            "degrade_clip",
            format!("{h} x {w} is not divisible by {}", spec.scale),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Vec::with_capacity(hr.n_frames());
    for t in 0..hr.n_frames() {
        let mut lr = bicubic_resize(&hr.frame(t), h / spec.scale, w / spec.scale)?;
        for v in lr.data_mut() {
            if spec.noise_sigma > 0.0 {
                *v += noise.sample(&mut rng);
            }
            *v = v.clamp(0.0, 1.0);
            if spec.quantize_8bit {
                *v = f32::from(quantize_u8(*v)) / 255.0;
            }
        }
        frames.push(lr);
    }
    Clip::new(Tensor::stack(&frames)?)
}

/// Crop of `size x size` at `(y, x)` from every leading slice of `[.., C, H, W]`.
pub fn crop(t: &Tensor<f32>, y: usize, x: usize, size: usize) -> Result<Tensor<f32>> {
    let r = t.rank();
    if r < 2 {
        return Err(Error::invalid("crop", format!("rank {r} has no spatial axes")));
    }
    let (h, w) = (t.shape()[r - 2], t.shape()[r - 1]);
    if y + size > h || x + size > w || size == 0 {
        return Err(Error::invalid("crop", format!("{size} crop at ({y}, {x}) exceeds {h} x {w}")));
    }
    let planes = t.numel() / (h * w);
    let mut out = Vec::with_capacity(planes * size * size);
    for p in 0..planes {
        for row in y..y + size {
            let base = (p * h + row) * w + x;
            out.extend_from_slice(&t.data()[base..base + size]);
        }
    }
    let mut shape = t.shape().to_vec();
    shape[r - 2] = size;
    shape[r - 1] = size;
    Tensor::from_vec(&shape, out)
}

/// An aligned LR window and HR central-frame target.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    /// `T x 3 x p x p`.
    pub lr: Tensor<f32>,
    /// `3 x 4p x 4p`, from the central frame.
    pub hr: Tensor<f32>,
    /// Top-left corner of the LR crop.
    pub origin: (usize, usize),
}

/// Random aligned crop: LR at `(y, x)` pairs with HR at `(4y, 4x)`.
pub fn sample_patch_pair(hr: &Clip, lr: &Clip, patch: usize, seed: u64) -> Result<PatchPair> {
    let aligned = hr.n_frames() == lr.n_frames()
        && hr.height() == SCALE * lr.height()
        && hr.width() == SCALE * lr.width();
    if !aligned {
        return Err(Error::invalid(
            "sample_patch_pair",
            format!("HR {:?} is not {SCALE}x LR {:?}", hr.frames().shape(), lr.frames().shape()),
        ));
    }
    if patch == 0 || lr.height() < patch || lr.width() < patch {
        return Err(Error::invalid(
            "sample_patch_pair",
            format!("{} x {} clip is smaller than a {patch} patch", lr.height(), lr.width()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = rng.random_range(0..=lr.height() - patch);
    let x = rng.random_range(0..=lr.width() - patch);
    let center = hr.frame(hr.n_frames() / 2);
    Ok(PatchPair {
        lr: crop(lr.frames(), y, x, patch)?,
        hr: crop(&center, SCALE * y, SCALE * x, SCALE * patch)?,
        origin: (y, x),
    })
}
