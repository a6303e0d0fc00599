use super::metrics::psnr;
use crate::data::{bicubic_resize, Clip};
use crate::error::{Error, Result};
use crate::model::VesrNet;
use crate::tensor::Tensor;

/// Anything that maps a window of LR frames to the restored centre frame.
pub trait Restorer {
    fn window_len(&self) -> usize;
    /// `T x C x h x w -> C x H x W`.
    fn restore(&self, window: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Restorer for VesrNet<f32> {
    fn window_len(&self) -> usize {
        self.config.n_frames
    }

    fn restore(&self, window: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.infer(window)
    }
}

/// Restores every frame of `lr` from its reflected window, clamped to `[0, 1]`.
pub fn restore_clip(model: &dyn Restorer, lr: &Clip) -> Result<Clip> {
    let frames = (0..lr.n_frames())
        .map(|t| Ok(model.restore(&lr.window(t, model.window_len()))?.map(|v| v.clamp(0.0, 1.0))))
        .collect::<Result<Vec<_>>>()?;
    Clip::new(Tensor::stack(&frames)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipEval {
    pub clip: usize,
    pub frames: usize,
    pub psnr: f64,
    pub bicubic_psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub clips: Vec<ClipEval>,
    pub mean_psnr: f64,
    pub mean_bicubic_psnr: f64,
}

impl EvalReport {
    pub fn gain(&self) -> f64 {
        self.mean_psnr - self.mean_bicubic_psnr
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:>5} {:>7} {:>10} {:>10}\n", "clip", "frames", "psnr_db", "bicubic_db");
        for c in &self.clips {
            s += &format!("{:>5} {:>7} {:>10.3} {:>10.3}\n", c.clip, c.frames, c.psnr, c.bicubic_psnr);
        }
        s += &format!("{:>5} {:>7} {:>10.3} {:>10.3}\n", "mean", "", self.mean_psnr, self.mean_bicubic_psnr);
        s
    }
}

/// Restores every `stride`-th frame of each `(hr, lr)` clip from its
/// reflected window and scores it against the HR frame, next to a bicubic
/// upscale of the same LR frame. Per-clip values average frame PSNRs.
pub fn evaluate(model: &dyn Restorer, clips: &[(Clip, Clip)], stride: usize) -> Result<EvalReport> {
    let len = model.window_len();
    if clips.is_empty() || stride == 0 {
        return Err(Error::invalid("evaluate", "need at least one clip and a positive stride"));
    }
    let mut rows = Vec::with_capacity(clips.len());
    for (i, (hr, lr)) in clips.iter().enumerate() {
        if lr.n_frames() < len || hr.n_frames() != lr.n_frames() {
            return Err(Error::invalid(
                "evaluate",
                format!("clip {i} has {} LR / {} HR frames, need {len}", lr.n_frames(), hr.n_frames()),
            ));
        }
        let (mut net, mut base, mut n) = (0.0, 0.0, 0);
        for t in (0..lr.n_frames()).step_by(stride) {
            let target = hr.frame(t);
            let restored = model.restore(&lr.window(t, len))?;
            let up = bicubic_resize(&lr.frame(t), hr.height(), hr.width())?;
            net += psnr(&restored, &target, 1.0)?;
            base += psnr(&up, &target, 1.0)?;
            n += 1;
        }
        rows.push(ClipEval {
            clip: i,
            frames: n,
            psnr: net / n as f64,
            bicubic_psnr: base / n as f64,
        });
    }
    let k = rows.len() as f64;
    Ok(EvalReport {
        mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / k,
        mean_bicubic_psnr: rows.iter().map(|r| r.bicubic_psnr).sum::<f64>() / k,
        clips: rows,
    })
}
