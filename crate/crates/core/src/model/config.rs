use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architecture description of a VESR-Net variant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VesrNetConfig {
    pub channels: usize,
    pub n_frames: usize,
    pub n_encoder_carbs: usize,
    pub n_recon_blocks: usize,
    /// Upscaling factor; only 4 (two 2x pixel-shuffle stages) is supported.
    pub scale: usize,
    pub use_separate_nl: bool,
    /// Channel-attention blocks when set, plain residual blocks otherwise.
    pub use_carb: bool,
    pub use_alignment: bool,
    /// Channel squeeze ratio inside channel attention.
    pub reduction: usize,
    /// Warp groups of the alignment module; each group of `channels /
    /// align_groups` channels shares one displacement field.
    pub align_groups: usize,
}

impl Default for VesrNetConfig {
    fn default() -> Self {
        Preset::Full.config()
    }
}

impl VesrNetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_frames == 0 || self.n_frames % 2 == 0 {
            return fail(format!("n_frames must be odd, got {}", self.n_frames));
        }
        if self.scale != 4 {
            return fail(format!("scale must be 4, got {}", self.scale));
        }
        if self.channels < 2 || self.channels % 2 != 0 {
            return fail(format!("channels must be even and at least 2, got {}", self.channels));
        }
        if self.use_carb && (self.reduction == 0 || self.channels % self.reduction != 0) {
            return fail(format!(
                "channels {} are not divisible by reduction {}",
                self.channels, self.reduction
            ));
        }
        if self.use_alignment && (self.align_groups == 0 || self.channels % self.align_groups != 0) {
            return fail(format!(
                "channels {} are not divisible by align_groups {}",
                self.channels, self.align_groups
            ));
        }
        Ok(())
    }

    /// Copy with fields that have no effect under the current toggles reset
    /// to their defaults.
    pub fn normalized(&self) -> Self {
        let d = Self::default();
        Self {
            reduction: if self.use_carb { self.reduction } else { d.reduction },
            align_groups: if self.use_alignment { self.align_groups } else { d.align_groups },
            ..self.clone()
        }
    }

    /// Tiny variant used for gradient checks and desk-scale training.
    pub fn tiny() -> Self {
        Self {
            channels: 16,
            n_frames: 3,
            n_encoder_carbs: 2,
            n_recon_blocks: 4,
            reduction: 4,
            align_groups: 4,
            ..Preset::Small.config()
        }
    }

    /// Applies one `key = value` setting using the field names above.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = || parse_value::<usize>(key, value);
        let flag = || parse_value::<bool>(key, value);
        match key {
            "channels" => self.channels = num()?,
            "n_frames" => self.n_frames = num()?,
            "n_encoder_carbs" => self.n_encoder_carbs = num()?,
            "n_recon_blocks" => self.n_recon_blocks = num()?,
            "scale" => self.scale = num()?,
            "use_separate_nl" => self.use_separate_nl = flag()?,
            "use_carb" => self.use_carb = flag()?,
            "use_alignment" => self.use_alignment = flag()?,
            "reduction" => self.reduction = num()?,
            "align_groups" => self.align_groups = num()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Named configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Small,
    Full,
    /// Neither separate non-local fusion nor channel attention.
    EdvrLikeSmall,
    /// Separate non-local fusion only.
    Model1,
    /// Channel attention only.
    Model2,
    Tiny,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Small,
        Preset::Full,
        Preset::EdvrLikeSmall,
        Preset::Model1,
        Preset::Model2,
        Preset::Tiny,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Small => "small",
            Preset::Full => "full",
            Preset::EdvrLikeSmall => "edvr_like_small",
            Preset::Model1 => "model1",
            Preset::Model2 => "model2",
            Preset::Tiny => "tiny",
        }
    }

    pub fn config(self) -> VesrNetConfig {
        let base = VesrNetConfig {
            channels: 128,
            n_frames: 7,
            n_encoder_carbs: 5,
            n_recon_blocks: 20,
            scale: 4,
            use_separate_nl: true,
            use_carb: true,
            use_alignment: true,
            reduction: 16,
            align_groups: 8,
        };
        let toggles = |nl, carb| VesrNetConfig {
            use_separate_nl: nl,
            use_carb: carb,
            ..base.clone()
        };
        match self {
            Preset::Small => base,
            Preset::Full => VesrNetConfig {
                n_recon_blocks: 40,
                ..base
            },
            Preset::EdvrLikeSmall => toggles(false, false),
            Preset::Model1 => toggles(true, false),
            Preset::Model2 => toggles(false, true),
            Preset::Tiny => VesrNetConfig::tiny(),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset {s:?}")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Configuration of a named preset.
pub fn preset(name: &str) -> Result<VesrNetConfig> {
    Ok(name.parse::<Preset>()?.config())
}

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

/// Closed-form parameter count of the residual block used by `cfg`.
pub fn block_param_count(cfg: &VesrNetConfig) -> usize {
    let c = cfg.channels;
    if cfg.use_carb {
        let s = c / cfg.reduction;
        2 * conv(c, c, 3) + (c * s + s) + (s * c + c) + conv(2 * c, c, 1)
    } else {
        2 * conv(c, c, 3)
    }
}

/// Closed-form parameter count of the alignment module.
pub fn alignment_param_count(cfg: &VesrNetConfig) -> usize {
    let c = cfg.channels;
    12 * conv(c, c, 3) + 8 * conv(2 * c, c, 3) + 4 * conv(c, 2 * cfg.align_groups, 3)
}

/// Closed-form parameter count of the whole network.
pub fn analytic_param_count(cfg: &VesrNetConfig) -> usize {
    let c = cfg.channels;
    let blocks = (cfg.n_encoder_carbs + cfg.n_recon_blocks) * block_param_count(cfg);
    let align = if cfg.use_alignment { alignment_param_count(cfg) } else { 0 };
    let snl = if cfg.use_separate_nl { 9 * conv(c, c, 1) } else { 0 };
    conv(3, c, 3)
        + blocks
        + align
        + snl
        + conv(cfg.n_frames * c, c, 3)
        + conv(c, 4 * c, 3)
        + conv(c, 2 * c, 3)
        + conv(c / 2, c / 2, 3)
        + conv(c / 2, 3, 3)
}
