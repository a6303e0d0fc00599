//! Residual blocks and neighbour-to-centre feature alignment.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2dLayer, LinearLayer, ParamStore, TRUNK_SLOPE};
use crate::tensor::Element;

/// Residual branches end in a layer scaled down at init so deep stacks start
/// close to the identity.
const RESIDUAL_INIT_SCALE: f64 = 0.1;
/// Flow heads start near zero displacement.
const FLOW_INIT_SCALE: f64 = 0.1;
/// Aligned neighbours start faint so fusion first leans on the centre frame.
const ALIGN_OUTPUT_INIT_SCALE: f64 = 0.1;

pub(crate) fn shrink<T: Element>(store: &mut ParamStore<T>, conv: &Conv2dLayer, factor: f64) {
    store.get_mut(conv.weight).scale_in_place(T::from_f64(factor));
}

fn expect_channels<T: Element>(op: &'static str, x: &Var<T>, channels: usize) -> Result<()> {
    match x.shape() {
        [c, _, _] if *c == channels => Ok(()),
        s => Err(Error::invalid(op, format!("expected {channels} x H x W, got {s:?}"))),
    }
}

/// Channel attention residual block.
///
/// `h = conv_b(lrelu(conv_a(x)))`, `z = sigmoid(fc2(relu(fc1(pool(h)))))`,
/// `out = x + fuse([h, z * h])`.
#[derive(Clone, Debug)]
pub struct Carb {
    pub conv_a: Conv2dLayer,
    pub conv_b: Conv2dLayer,
    pub ca_fc1: LinearLayer,
    pub ca_fc2: LinearLayer,
    pub fuse: Conv2dLayer,
    pub channels: usize,
    pub reduction: usize,
}

impl Carb {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 || channels < reduction {
            return Err(Error::Config(format!(
                "{channels} channels are not divisible by reduction {reduction}"
            )));
        }
        let squeezed = channels / reduction;
        let block = Self {
            conv_a: Conv2dLayer::new(store, &format!("{name}.conv_a"), channels, channels, 3, 1, rng),
            conv_b: Conv2dLayer::new(store, &format!("{name}.conv_b"), channels, channels, 3, 1, rng),
            ca_fc1: LinearLayer::new(store, &format!("{name}.ca_fc1"), channels, squeezed, rng),
            ca_fc2: LinearLayer::new(store, &format!("{name}.ca_fc2"), squeezed, channels, rng),
            fuse: Conv2dLayer::new(store, &format!("{name}.fuse"), 2 * channels, channels, 1, 1, rng),
            channels,
            reduction,
        };
        shrink(store, &block.fuse, RESIDUAL_INIT_SCALE);
        Ok(block)
    }

    /// Channel weights `z`, each strictly inside `(0, 1)`.
    pub fn channel_attention_weights<T: Element>(&self, params: &Bound<T>, h: &Var<T>) -> Result<Var<T>> {
        expect_channels("channel_attention", h, self.channels)?;
        let descriptors = h.global_avg_pool()?;
        let hidden = self.ca_fc1.forward(params, &descriptors)?.relu();
        Ok(self.ca_fc2.forward(params, &hidden)?.sigmoid())
    }

    pub fn forward<T: Element>(&self, params: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        expect_channels("carb", x, self.channels)?;
        let h = self.conv_a.forward(params, x)?.leaky_relu(TRUNK_SLOPE);
        let h = self.conv_b.forward(params, &h)?;
        let z = self.channel_attention_weights(params, &h)?;
        let scaled = h.channel_scale(&z)?;
        x.add(&self.fuse.forward(params, &Var::concat(&[h, scaled], 0)?)?)
    }

    pub fn param_count(&self) -> usize {
        self.conv_a.param_count()
            + self.conv_b.param_count()
            + self.ca_fc1.param_count()
            + self.ca_fc2.param_count()
            + self.fuse.param_count()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv_a.macs(h, w) + self.conv_b.macs(h, w) + self.ca_fc1.macs() + self.ca_fc2.macs() + self.fuse.macs(h, w)
    }

    /// Activation, pooling, channel scaling and residual addition.
    pub fn elementwise_ops(&self, h: usize, w: usize) -> u64 {
        let c = self.channels as u64;
        4 * c * (h * w) as u64 + c / self.reduction as u64 + c
    }
}

/// `out = x + conv_b(lrelu(conv_a(x)))`.
#[derive(Clone, Debug)]
pub struct PlainResBlock {
    pub conv_a: Conv2dLayer,
    pub conv_b: Conv2dLayer,
    pub channels: usize,
}

impl PlainResBlock {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let block = Self {
            conv_a: Conv2dLayer::new(store, &format!("{name}.conv_a"), channels, channels, 3, 1, rng),
            conv_b: Conv2dLayer::new(store, &format!("{name}.conv_b"), channels, channels, 3, 1, rng),
            channels,
        };
        shrink(store, &block.conv_b, RESIDUAL_INIT_SCALE);
        block
    }

    pub fn forward<T: Element>(&self, params: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        expect_channels("resblock", x, self.channels)?;
        let h = self.conv_a.forward(params, x)?.leaky_relu(TRUNK_SLOPE);
        x.add(&self.conv_b.forward(params, &h)?)
    }

    pub fn param_count(&self) -> usize {
        self.conv_a.param_count() + self.conv_b.param_count()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv_a.macs(h, w) + self.conv_b.macs(h, w)
    }

    pub fn elementwise_ops(&self, h: usize, w: usize) -> u64 {
        2 * (self.channels * h * w) as u64
    }
}

/// Either residual block flavour.
#[derive(Clone, Debug)]
pub enum ResBlock {
    Carb(Carb),
    Plain(PlainResBlock),
}

impl ResBlock {
    pub fn forward<T: Element>(&self, params: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        match self {
            ResBlock::Carb(b) => b.forward(params, x),
            ResBlock::Plain(b) => b.forward(params, x),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ResBlock::Carb(b) => b.param_count(),
            ResBlock::Plain(b) => b.param_count(),
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        match self {
            ResBlock::Carb(b) => b.macs(h, w),
            ResBlock::Plain(b) => b.macs(h, w),
        }
    }

    pub fn elementwise_ops(&self, h: usize, w: usize) -> u64 {
        match self {
            ResBlock::Carb(b) => b.elementwise_ops(h, w),
            ResBlock::Plain(b) => b.elementwise_ops(h, w),
        }
    }
}

/// Predicts a grouped displacement field from offset features, resamples the
/// neighbour features with it and mixes the result with a 3x3 convolution.
#[derive(Clone, Debug)]
pub struct FlowWarp {
    pub head: Conv2dLayer,
    pub conv: Conv2dLayer,
    pub groups: usize,
}

impl FlowWarp {
    fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize, groups: usize, rng: &mut impl Rng) -> Self {
        let head = Conv2dLayer::new(store, &format!("{name}_head"), channels, 2 * groups, 3, 1, rng);
        shrink(store, &head, FLOW_INIT_SCALE);
        Self {
            head,
            conv: Conv2dLayer::new(store, &format!("{name}_conv"), channels, channels, 3, 1, rng),
            groups,
        }
    }

    /// `2G x H x W` displacement field.
    pub fn flow<T: Element>(&self, params: &Bound<T>, offset: &Var<T>) -> Result<Var<T>> {
        self.head.forward(params, offset)
    }

    pub fn forward<T: Element>(&self, params: &Bound<T>, fea: &Var<T>, offset: &Var<T>) -> Result<Var<T>> {
        let warped = fea.warp(&self.flow(params, offset)?)?;
        self.conv.forward(params, &warped)
    }

    fn param_count(&self) -> usize {
        self.head.param_count() + self.conv.param_count()
    }

    fn macs(&self, h: usize, w: usize) -> u64 {
        self.head.macs(h, w) + self.conv.macs(h, w)
    }

    /// Four bilinear taps with three multiply-adds each, per warped value.
    fn elementwise_ops(&self, channels: usize, h: usize, w: usize) -> u64 {
        8 * (channels * h * w) as u64
    }
}

/// Features of one frame at full, half and quarter resolution.
#[derive(Clone)]
pub struct Pyramid<T: Element> {
    pub levels: [Var<T>; 3],
}

/// One pyramid level of the alignment: offset features from the centre and
/// neighbour (plus the coarser level's offsets), then a flow warp.
#[derive(Clone, Debug)]
pub struct AlignLevel {
    pub offset_conv1: Conv2dLayer,
    /// Merges upsampled coarser offsets; absent at the coarsest level.
    pub offset_conv2: Option<Conv2dLayer>,
    pub offset_conv3: Conv2dLayer,
    pub warp: FlowWarp,
    /// Merges upsampled coarser aligned features; absent at the coarsest level.
    pub fea_conv: Option<Conv2dLayer>,
}

impl AlignLevel {
    fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        groups: usize,
        coarsest: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut conv = |part: &str, cin: usize| Conv2dLayer::new(store, &format!("{name}.{part}"), cin, c, 3, 1, rng);
        let offset_conv1 = conv("offset_conv1", 2 * c);
        let offset_conv2 = (!coarsest).then(|| conv("offset_conv2", 2 * c));
        let offset_conv3 = conv("offset_conv3", c);
        let fea_conv = (!coarsest).then(|| conv("fea_conv", 2 * c));
        Self {
            offset_conv1,
            offset_conv2,
            offset_conv3,
            warp: FlowWarp::new(store, &format!("{name}.warp"), c, groups, rng),
            fea_conv,
        }
    }

    fn param_count(&self) -> usize {
        self.offset_conv1.param_count()
            + self.offset_conv2.as_ref().map_or(0, |c| c.param_count())
            + self.offset_conv3.param_count()
            + self.warp.param_count()
            + self.fea_conv.as_ref().map_or(0, |c| c.param_count())
    }

    fn macs(&self, h: usize, w: usize) -> u64 {
        self.offset_conv1.macs(h, w)
            + self.offset_conv2.as_ref().map_or(0, |c| c.macs(h, w))
            + self.offset_conv3.macs(h, w)
            + self.warp.macs(h, w)
            + self.fea_conv.as_ref().map_or(0, |c| c.macs(h, w))
    }
}

/// Three-level pyramid alignment with a cascaded refinement at full
/// resolution. Each level estimates offset features from the centre and
/// neighbour, refines them with the doubled, upsampled offsets from the level
/// below, and warps the neighbour by a grouped displacement field predicted
/// from them.
#[derive(Clone, Debug)]
pub struct AlignmentModule {
    pub channels: usize,
    pub groups: usize,
    pub l2_conv1: Conv2dLayer,
    pub l2_conv2: Conv2dLayer,
    pub l3_conv1: Conv2dLayer,
    pub l3_conv2: Conv2dLayer,
    /// Full, half and quarter resolution, in that order.
    pub levels: [AlignLevel; 3],
    pub cas_offset_conv1: Conv2dLayer,
    pub cas_offset_conv2: Conv2dLayer,
    pub cas_warp: FlowWarp,
}

impl AlignmentModule {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        groups: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "{channels} channels cannot be split into {groups} warp groups"
            )));
        }
        let c = channels;
        let mut conv = |store: &mut ParamStore<T>, part: &str, cin: usize| {
            Conv2dLayer::new(store, &format!("{name}.{part}"), cin, c, 3, 1, rng)
        };
        let l2_conv1 = conv(store, "l2_conv1", c);
        let l2_conv2 = conv(store, "l2_conv2", c);
        let l3_conv1 = conv(store, "l3_conv1", c);
        let l3_conv2 = conv(store, "l3_conv2", c);
        let l3 = AlignLevel::new(store, &format!("{name}.l3"), c, groups, true, rng);
        let l2 = AlignLevel::new(store, &format!("{name}.l2"), c, groups, false, rng);
        let l1 = AlignLevel::new(store, &format!("{name}.l1"), c, groups, false, rng);
        let cas_offset_conv1 = Conv2dLayer::new(store, &format!("{name}.cas_offset_conv1"), 2 * c, c, 3, 1, rng);
        let cas_offset_conv2 = Conv2dLayer::new(store, &format!("{name}.cas_offset_conv2"), c, c, 3, 1, rng);
        let cas_warp = FlowWarp::new(store, &format!("{name}.cas_warp"), c, groups, rng);
        shrink(store, &cas_warp.conv, ALIGN_OUTPUT_INIT_SCALE);
        Ok(Self {
            channels,
            groups,
            l2_conv1,
            l2_conv2,
            l3_conv1,
            l3_conv2,
            levels: [l1, l2, l3],
            cas_offset_conv1,
            cas_offset_conv2,
            cas_warp,
        })
    }

    /// Builds the three-level feature pyramid of one frame. Spatial extents
    /// must be multiples of 4.
    pub fn pyramid<T: Element>(&self, params: &Bound<T>, fea: &Var<T>) -> Result<Pyramid<T>> {
        expect_channels("alignment", fea, self.channels)?;
        let (h, w) = (fea.shape()[1], fea.shape()[2]);
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(
                "alignment",
                format!("{h} x {w} features are not divisible by 4"),
            ));
        }
        let down = |a: &Conv2dLayer, b: &Conv2dLayer, x: &Var<T>| -> Result<Var<T>> {
            let x = a.forward(params, x)?.subsample2x()?.leaky_relu(TRUNK_SLOPE);
            Ok(b.forward(params, &x)?.leaky_relu(TRUNK_SLOPE))
        };
        let l2 = down(&self.l2_conv1, &self.l2_conv2, fea)?;
        let l3 = down(&self.l3_conv1, &self.l3_conv2, &l2)?;
        Ok(Pyramid {
            levels: [fea.clone(), l2, l3],
        })
    }

    /// Aligns a neighbour pyramid to the centre pyramid.
    pub fn align<T: Element>(&self, params: &Bound<T>, center: &Pyramid<T>, neighbor: &Pyramid<T>) -> Result<Var<T>> {
        let act = |x: Var<T>| x.leaky_relu(TRUNK_SLOPE);
        let mut coarser: Option<(Var<T>, Var<T>)> = None;
        for lvl in (0..3).rev() {
            let level = &self.levels[lvl];
            let (nbr, ctr) = (&neighbor.levels[lvl], &center.levels[lvl]);
            let pair = Var::concat(&[nbr.clone(), ctr.clone()], 0)?;
            let mut offset = act(level.offset_conv1.forward(params, &pair)?);
            if let (Some(merge), Some((prev_offset, _))) = (&level.offset_conv2, &coarser) {
                let up = prev_offset.upsample_nearest2x()?.scale(2.0);
                offset = act(merge.forward(params, &Var::concat(&[offset, up], 0)?)?);
            }
            offset = act(level.offset_conv3.forward(params, &offset)?);
            let mut fea = level.warp.forward(params, nbr, &offset)?;
            if let (Some(merge), Some((_, prev_fea))) = (&level.fea_conv, &coarser) {
                let up = prev_fea.upsample_nearest2x()?;
                fea = merge.forward(params, &Var::concat(&[fea, up], 0)?)?;
                if lvl > 0 {
                    fea = act(fea);
                }
            } else {
                fea = act(fea);
            }
            coarser = Some((offset, fea));
        }
        let (_, fea) = coarser.expect("three levels");
        let pair = Var::concat(&[fea.clone(), center.levels[0].clone()], 0)?;
        let offset = act(self.cas_offset_conv1.forward(params, &pair)?);
        let offset = act(self.cas_offset_conv2.forward(params, &offset)?);
        Ok(act(self.cas_warp.forward(params, &fea, &offset)?))
    }

    /// Aligns `neighbor` to `center`, both `C x H x W`.
    pub fn align_frames<T: Element>(&self, params: &Bound<T>, center: &Var<T>, neighbor: &Var<T>) -> Result<Var<T>> {
        if center.shape() != neighbor.shape() {
            return Err(Error::invalid(
                "alignment",
                format!("centre {:?} and neighbour {:?} differ", center.shape(), neighbor.shape()),
            ));
        }
        let c = self.pyramid(params, center)?;
        let n = self.pyramid(params, neighbor)?;
        self.align(params, &c, &n)
    }

    pub fn param_count(&self) -> usize {
        [&self.l2_conv1, &self.l2_conv2, &self.l3_conv1, &self.l3_conv2, &self.cas_offset_conv1, &self.cas_offset_conv2]
            .iter()
            .map(|c| c.param_count())
            .sum::<usize>()
            + self.levels.iter().map(|l| l.param_count()).sum::<usize>()
            + self.cas_warp.param_count()
    }

    /// Multiply-accumulates of one frame's pyramid. The downsampling
    /// convolutions are counted as stride-2 convolutions.
    pub fn pyramid_macs(&self, h: usize, w: usize) -> u64 {
        self.l2_conv1.macs(h / 2, w / 2)
            + self.l2_conv2.macs(h / 2, w / 2)
            + self.l3_conv1.macs(h / 4, w / 4)
            + self.l3_conv2.macs(h / 4, w / 4)
    }

    /// Multiply-accumulates of aligning one neighbour, pyramids excluded.
    pub fn align_macs(&self, h: usize, w: usize) -> u64 {
        (0..3).map(|l| self.levels[l].macs(h >> l, w >> l)).sum::<u64>()
            + self.cas_offset_conv1.macs(h, w)
            + self.cas_offset_conv2.macs(h, w)
            + self.cas_warp.macs(h, w)
    }

    /// Activations and bilinear sampling for aligning one neighbour.
    pub fn align_elementwise_ops(&self, h: usize, w: usize) -> u64 {
        let c = self.channels;
        let per_level = |hh: usize, ww: usize| 4 * (c * hh * ww) as u64 + self.cas_warp.elementwise_ops(c, hh, ww);
        (0..3).map(|l| per_level(h >> l, w >> l)).sum::<u64>() + per_level(h, w)
    }
}
