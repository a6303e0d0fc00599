//! Procedural moving scenes.
//!
//! A scene is a static, smooth background with a layer of opaque rectangles
//! and glyphs on top. The whole foreground layer translates by one integer
//! velocity per frame, so the foreground of frame `t + 1` is the foreground of
//! frame `t` shifted by that velocity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 5x3 bitmaps of a few block letters.
const GLYPHS: [[u8; 5]; 6] = [
    [0b111, 0b101, 0b111, 0b101, 0b101],
    [0b110, 0b101, 0b110, 0b101, 0b110],
    [0b111, 0b100, 0b100, 0b100, 0b111],
    [0b101, 0b101, 0b111, 0b101, 0b101],
    [0b111, 0b010, 0b010, 0b010, 0b111],
    [0b101, 0b111, 0b111, 0b101, 0b101],
];

#[derive(Clone, Debug)]
enum Shape {
    /// Solid box with a linear shading across it.
    Rect { shade: [f32; 3] },
    /// Block letter drawn in `cell`-sized pixels over a contrasting box.
    Glyph { bitmap: [u8; 5], cell: usize, ink: [f32; 3] },
}

#[derive(Clone, Debug)]
struct Object {
    y: i64,
    x: i64,
    h: usize,
    w: usize,
    color: [f32; 3],
    shape: Shape,
}

impl Object {
    /// Colour at object-local coordinates.
    fn sample(&self, ly: usize, lx: usize, ch: usize) -> f32 {
        match &self.shape {
            Shape::Rect { shade } => {
                let t = (ly + lx) as f32 / (self.h + self.w) as f32;
                self.color[ch] + shade[ch] * (t - 0.5)
            }
            Shape::Glyph { bitmap, cell, ink } => {
                let (gy, gx) = (ly / cell, lx / cell);
                let on = gy < 5 && gx < 3 && bitmap[gy] >> (2 - gx) & 1 == 1;
                if on {
                    ink[ch]
                } else {
                    self.color[ch]
                }
            }
        }
    }
}

/// A deterministic scene that can be rendered at any frame index.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub height: usize,
    pub width: usize,
    /// Per-frame displacement `(dy, dx)` of the foreground.
    pub velocity: (i64, i64),
    waves: Vec<[f32; 5]>,
    objects: Vec<Object>,
}

impl SyntheticScene {
    pub fn new(seed: u64, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("synthetic_clip", "spatial extents must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let velocity = (rng.random_range(-2..=2), rng.random_range(-2..=2));
        // per channel: amplitude, fy, fx, phase, offset
        let waves = (0..9)
            .map(|_| {
                [
                    rng.random_range(0.05..0.15),
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.0..std::f32::consts::TAU),
                    rng.random_range(0.25..0.45),
                ]
            })
            .collect();
        let span = height.min(width);
        let n_objects = rng.random_range(3..=6);
        let objects = (0..n_objects)
            .map(|_| {
                let mut color = || [rng.random_range(0.0..1.0f32), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
                let (base, other) = (color(), color());
                let glyph = rng.random_bool(0.5);
                let (h, w, shape) = if glyph {
                    let cell = rng.random_range(1..=(span / 12).max(1));
                    let bitmap = GLYPHS[rng.random_range(0..GLYPHS.len())];
                    (5 * cell + 2, 3 * cell + 2, Shape::Glyph { bitmap, cell, ink: other })
                } else {
                    let h = rng.random_range((span / 8).max(2)..=(span / 3).max(2));
                    let w = rng.random_range((span / 8).max(2)..=(span / 3).max(2));
                    (h, w, Shape::Rect { shade: other.map(|v| v - 0.5) })
                };
                Object {
                    y: rng.random_range(-(h as i64) / 2..height as i64),
                    x: rng.random_range(-(w as i64) / 2..width as i64),
                    h,
                    w,
                    color: base,
                    shape,
                }
            })
            .collect();
        Ok(Self {
            height,
            width,
            velocity,
            waves,
            objects,
        })
    }

    fn background(&self, ch: usize, y: usize, x: usize) -> f32 {
        let (u, v) = (y as f32 / self.height as f32, x as f32 / self.width as f32);
        let mut acc = 0.0;
        for wave in &self.waves[3 * ch..3 * ch + 3] {
            let [amp, fy, fx, phase, offset] = *wave;
            acc += offset / 3.0 + amp * (std::f32::consts::TAU * (fy * u + fx * v) + phase).sin();
        }
        acc + 0.1 * (std::f32::consts::PI * u).cos() * (std::f32::consts::PI * v).sin()
    }

    /// Topmost object covering `(y, x)` at frame `t`, with local coordinates.
    fn hit(&self, t: usize, y: usize, x: usize) -> Option<(&Object, usize, usize)> {
        let (dy, dx) = (self.velocity.0 * t as i64, self.velocity.1 * t as i64);
        self.objects.iter().rev().find_map(|o| {
            let ly = y as i64 - o.y - dy;
            let lx = x as i64 - o.x - dx;
            (ly >= 0 && lx >= 0 && (ly as usize) < o.h && (lx as usize) < o.w).then_some((o, ly as usize, lx as usize))
        })
    }

    /// Whether `(y, x)` shows the foreground at frame `t`.
    pub fn covered(&self, t: usize, y: usize, x: usize) -> bool {
        self.hit(t, y, x).is_some()
    }

    /// Frame `t` as `3 x H x W`, values in `[0, 1]`.
    pub fn render(&self, t: usize) -> Tensor<f32> {
        let (h, w) = (self.height, self.width);
        Tensor::from_fn(&[3, h, w], |i| {
            let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
            let v = match self.hit(t, y, x) {
                Some((o, ly, lx)) => o.sample(ly, lx, ch),
                None => self.background(ch, y, x),
            };
            v.clamp(0.0, 1.0)
        })
    }
}
