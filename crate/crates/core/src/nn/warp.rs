//! Grouped bilinear warping by a dense per-pixel displacement field.

use std::rc::Rc;

use crate::autograd::{record, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Sampling coordinate along one axis, clamped to the border.
#[derive(Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
    /// False where the clamp is active, so the coordinate is locally constant.
    free: bool,
}

fn tap<T: Element>(pos: T, extent: usize) -> Tap<T> {
    let max = T::from_usize(extent - 1);
    let (p, free) = if pos < T::zero() {
        (T::zero(), false)
    } else if pos > max {
        (max, false)
    } else {
        (pos, true)
    };
    let lo = p.floor().to_usize().unwrap_or(0).min(extent - 1);
    Tap {
        lo,
        hi: (lo + 1).min(extent - 1),
        frac: p - T::from_usize(lo),
        free,
    }
}

impl<T: Element> Var<T> {
    /// Samples `self` (`C x H x W`) at `(y + dy, x + dx)` with bilinear
    /// interpolation. `flow` is `2G x H x W`: channels `2g` and `2g + 1` hold
    /// `(dy, dx)` for the `g`-th group of `C / G` consecutive feature channels.
    /// Coordinates are clamped to the image border.
    pub fn warp(&self, flow: &Var<T>) -> Result<Var<T>> {
        let (fs, ws) = (self.shape(), flow.shape());
        let ok = fs.len() == 3
            && ws.len() == 3
            && fs[1..] == ws[1..]
            && ws[0] % 2 == 0
            && ws[0] > 0
            && fs[0] % (ws[0] / 2) == 0;
        if !ok {
            return Err(Error::invalid(
                "warp",
                format!("features {fs:?} are incompatible with flow {ws:?}"),
            ));
        }
        let (c, h, w) = (fs[0], fs[1], fs[2]);
        let groups = ws[0] / 2;
        let per_group = c / groups;
        let plane = h * w;

        let taps = move |flow: &[T], g: usize, y: usize, x: usize| {
            let i = y * w + x;
            let dy = flow[(2 * g) * plane + i];
            let dx = flow[(2 * g + 1) * plane + i];
            (tap(T::from_usize(y) + dy, h), tap(T::from_usize(x) + dx, w))
        };

        let feat = self.value().data();
        let fl = flow.value().data();
        let mut out = vec![T::zero(); c * plane];
        for g in 0..groups {
            for y in 0..h {
                for x in 0..w {
                    let (ty, tx) = taps(fl, g, y, x);
                    let (wy, wx) = (ty.frac, tx.frac);
                    for ch in g * per_group..(g + 1) * per_group {
                        let f = &feat[ch * plane..(ch + 1) * plane];
                        let top = f[ty.lo * w + tx.lo] * (T::one() - wx) + f[ty.lo * w + tx.hi] * wx;
                        let bottom = f[ty.hi * w + tx.lo] * (T::one() - wx) + f[ty.hi * w + tx.hi] * wx;
                        out[ch * plane + y * w + x] = top * (T::one() - wy) + bottom * wy;
                    }
                }
            }
        }
        let value = Tensor::new_unchecked(fs.to_vec(), out);

        let (feat_rc, flow_rc) = (Rc::clone(self.value_rc()), Rc::clone(flow.value_rc()));
        record("warp", &[self, flow], value, move |grad| {
            let (feat, fl, gd) = (feat_rc.data(), flow_rc.data(), grad.data());
            let mut dfeat = vec![T::zero(); feat.len()];
            let mut dflow = vec![T::zero(); fl.len()];
            for g in 0..groups {
                for y in 0..h {
                    for x in 0..w {
                        let (ty, tx) = taps(fl, g, y, x);
                        let (wy, wx) = (ty.frac, tx.frac);
                        let (mut ddy, mut ddx) = (T::zero(), T::zero());
                        for ch in g * per_group..(g + 1) * per_group {
                            let o = gd[ch * plane + y * w + x];
                            let f = &feat[ch * plane..(ch + 1) * plane];
                            let (v00, v01) = (f[ty.lo * w + tx.lo], f[ty.lo * w + tx.hi]);
                            let (v10, v11) = (f[ty.hi * w + tx.lo], f[ty.hi * w + tx.hi]);
                            let d = &mut dfeat[ch * plane..(ch + 1) * plane];
                            d[ty.lo * w + tx.lo] += o * (T::one() - wy) * (T::one() - wx);
                            d[ty.lo * w + tx.hi] += o * (T::one() - wy) * wx;
                            d[ty.hi * w + tx.lo] += o * wy * (T::one() - wx);
                            d[ty.hi * w + tx.hi] += o * wy * wx;
                            ddy += o * ((v10 - v00) * (T::one() - wx) + (v11 - v01) * wx);
                            ddx += o * ((v01 - v00) * (T::one() - wy) + (v11 - v10) * wy);
                        }
                        if ty.free {
                            dflow[(2 * g) * plane + y * w + x] = ddy;
                        }
                        if tx.free {
                            dflow[(2 * g + 1) * plane + y * w + x] = ddx;
                        }
                    }
                }
            }
            Ok(vec![
                Some(Tensor::new_unchecked(feat_rc.shape().to_vec(), dfeat)),
                Some(Tensor::new_unchecked(flow_rc.shape().to_vec(), dflow)),
            ])
        })
    }
}
