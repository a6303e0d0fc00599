use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::VesrNetConfig;
use crate::attention::{stack, unstack, SeparateNonLocalBlock};
use crate::autograd::{Tape, Var};
use crate::blocks::{shrink, AlignmentModule, Carb, PlainResBlock, ResBlock};
use crate::data::bicubic_resize;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2dLayer, ParamStore, TRUNK_SLOPE};
use crate::tensor::{Element, Tensor};

/// Weight scale of the output convolution at initialization. A near-zero
/// start keeps the prediction at the bicubic base, so early training does
/// not spend itself suppressing a random residual.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;
/// Instantiated network: layer geometry plus its parameters.
///
/// Every frame goes through the same encoder. Neighbours are aligned to the
/// centre frame, the aligned stack is fused by separate non-local attention
/// and a `T*C -> C` convolution, and the result is reconstructed at 4x
/// resolution. The output is added to a bicubic upscale of the centre frame.
#[derive(Clone, Debug)]
pub struct VesrNet<T: Element = f32> {
    pub config: VesrNetConfig,
    pub params: ParamStore<T>,
    pub conv1: Conv2dLayer,
    pub encoder: Vec<ResBlock>,
    pub align: Option<AlignmentModule>,
    pub snl: Option<SeparateNonLocalBlock>,
    pub conv9: Conv2dLayer,
    pub recon: Vec<ResBlock>,
    pub conv31: Conv2dLayer,
    pub conv33: Conv2dLayer,
    pub conv35: Conv2dLayer,
    pub conv36: Conv2dLayer,
}

/// Builds a model with deterministic, seed-derived initialization.
pub fn build_model(cfg: &VesrNetConfig, seed: u64) -> Result<VesrNet<f32>> {
    VesrNet::new(cfg, seed)
}

fn res_block<T: Element>(
    store: &mut ParamStore<T>,
    prefix: &str,
    i: usize,
    cfg: &VesrNetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ResBlock> {
    Ok(if cfg.use_carb {
        ResBlock::Carb(Carb::new(store, &format!("{prefix}.carb{i}"), cfg.channels, cfg.reduction, rng)?)
    } else {
        ResBlock::Plain(PlainResBlock::new(store, &format!("{prefix}.res{i}"), cfg.channels, rng))
    })
}

impl<T: Element> VesrNet<T> {
    pub fn new(cfg: &VesrNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = cfg.channels;
        let conv1 = Conv2dLayer::new(&mut p, "encoder.conv1", 3, c, 3, 1, &mut rng);
        let encoder = (0..cfg.n_encoder_carbs)
            .map(|i| res_block(&mut p, "encoder", i, cfg, &mut rng))
            .collect::<Result<_>>()?;
        let align = cfg
            .use_alignment
            .then(|| AlignmentModule::new(&mut p, "align", c, cfg.align_groups, &mut rng))
            .transpose()?;
        let snl = cfg
            .use_separate_nl
            .then(|| SeparateNonLocalBlock::new(&mut p, "fusion.snl", c, &mut rng));
        let conv9 = Conv2dLayer::new(&mut p, "fusion.conv9", cfg.n_frames * c, c, 3, 1, &mut rng);
        let recon = (0..cfg.n_recon_blocks)
            .map(|i| res_block(&mut p, "recon", i, cfg, &mut rng))
            .collect::<Result<_>>()?;
        let conv31 = Conv2dLayer::new(&mut p, "recon.conv31", c, 4 * c, 3, 1, &mut rng);
        let conv33 = Conv2dLayer::new(&mut p, "recon.conv33", c, 2 * c, 3, 1, &mut rng);
        let conv35 = Conv2dLayer::new(&mut p, "recon.conv35", c / 2, c / 2, 3, 1, &mut rng);
        let conv36 = Conv2dLayer::new(&mut p, "recon.conv36", c / 2, 3, 3, 1, &mut rng);
        shrink(&mut p, &conv36, OUTPUT_INIT_SCALE);
        Ok(Self {
            config: cfg.clone(),
            params: p,
            conv1,
            encoder,
            align,
            snl,
            conv9,
            recon,
            conv31,
            conv33,
            conv35,
            conv36,
        })
    }

    /// Same architecture with parameters converted to another element type.
    pub fn cast<U: Element>(&self) -> VesrNet<U> {
        VesrNet {
            config: self.config.clone(),
            params: self.params.cast(),
            conv1: self.conv1.clone(),
            encoder: self.encoder.clone(),
            align: self.align.clone(),
            snl: self.snl.clone(),
            conv9: self.conv9.clone(),
            recon: self.recon.clone(),
            conv31: self.conv31.clone(),
            conv33: self.conv33.clone(),
            conv35: self.conv35.clone(),
            conv36: self.conv36.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Checks a `T x 3 x H x W` input against the configuration.
    pub fn check_input(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let cfg = &self.config;
        let (t, c, h, w) = match *shape {
            [t, c, h, w] => (t, c, h, w),
            _ => return Err(Error::invalid("forward", format!("expected T x 3 x H x W, got {shape:?}"))),
        };
        if t != cfg.n_frames {
            return Err(Error::invalid("forward", format!("expected {} frames, got {t}", cfg.n_frames)));
        }
        if c != 3 {
            return Err(Error::invalid("forward", format!("expected 3 colour channels, got {c}")));
        }
        if h == 0 || w == 0 || (cfg.use_alignment && (h % 4 != 0 || w % 4 != 0)) {
            return Err(Error::invalid(
                "forward",
                format!("{h} x {w} frames are unsupported; alignment needs multiples of 4"),
            ));
        }
        Ok((h, w))
    }

    /// Feature encoder applied to one `3 x H x W` frame.
    pub fn encode_frame(&self, params: &Bound<T>, frame: &Var<T>) -> Result<Var<T>> {
        let mut x = self.conv1.forward(params, frame)?.leaky_relu(TRUNK_SLOPE);
        for block in &self.encoder {
            x = block.forward(params, &x)?;
        }
        Ok(x)
    }

    /// Aligned, attention-fused and channel-merged features of the clip.
    pub fn fuse(&self, params: &Bound<T>, features: &[Var<T>]) -> Result<Var<T>> {
        let center = features.len() / 2;
        let aligned = match &self.align {
            Some(align) => {
                let pyramids = features
                    .iter()
                    .map(|f| align.pyramid(params, f))
                    .collect::<Result<Vec<_>>>()?;
                pyramids
                    .iter()
                    .enumerate()
                    .map(|(t, pyr)| {
                        if t == center {
                            Ok(features[t].clone())
                        } else {
                            align.align(params, &pyramids[center], pyr)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            None => features.to_vec(),
        };
        let mut stacked = stack(&aligned)?;
        if let Some(snl) = &self.snl {
            stacked = snl.forward(params, &stacked)?;
        }
        let s = stacked.shape().to_vec();
        let merged = stacked.reshape(&[s[0] * s[1], s[2], s[3]])?;
        Ok(self.conv9.forward(params, &merged)?.leaky_relu(TRUNK_SLOPE))
    }

    /// Reconstruction trunk and 4x upsampler, `C x H x W -> 3 x 4H x 4W`.
    pub fn reconstruct(&self, params: &Bound<T>, fused: &Var<T>) -> Result<Var<T>> {
        let mut x = fused.clone();
        for block in &self.recon {
            x = block.forward(params, &x)?;
        }
        let x = self.conv31.forward(params, &x)?.pixel_shuffle(2)?.leaky_relu(TRUNK_SLOPE);
        let x = self.conv33.forward(params, &x)?.pixel_shuffle(2)?.leaky_relu(TRUNK_SLOPE);
        let x = self.conv35.forward(params, &x)?.leaky_relu(TRUNK_SLOPE);
        self.conv36.forward(params, &x)
    }

    /// Bicubic 4x upscale of the centre frame, added to the network output.
    pub fn base(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        let center = frames.select(frames.shape()[0] / 2)?;
        bicubic_resize(&center, 4 * frames.shape()[2], 4 * frames.shape()[3])
    }

    /// `T x 3 x H x W -> 3 x 4H x 4W` for the centre frame.
    pub fn forward(&self, params: &Bound<T>, frames: &Var<T>) -> Result<Var<T>> {
        self.check_input(frames.shape())?;
        let features = unstack(frames)?
            .iter()
            .map(|f| self.encode_frame(params, f))
            .collect::<Result<Vec<_>>>()?;
        let fused = self.fuse(params, &features)?;
        let residual = self.reconstruct(params, &fused)?;
        residual.add(&Var::constant(self.base(frames.value())?))
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.forward(&self.params.bind_constants(), &Var::constant(frames.clone()))?;
        Ok(out.value().clone())
    }

    /// Runs a forward pass on a fresh tape with every parameter tracked.
    pub fn forward_tracked(&self, tape: &Tape<T>, frames: &Tensor<T>) -> Result<(Bound<T>, Var<T>)> {
        let params = self.params.bind(tape);
        let out = self.forward(&params, &Var::constant(frames.clone()))?;
        Ok((params, out))
    }
}
