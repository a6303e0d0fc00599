//! Sub-pixel rearrangements.
//!
//! Channel layout: `out[c, y, x] = in[c*r^2 + r*(y % r) + (x % r), y / r, x / r]`.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Element;

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(op, format!("expected C x H x W, got {shape:?}"))),
    }
}

impl<T: Element> Var<T> {
    /// `C*r^2 x H x W -> C x rH x rW`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<T>> {
        let (c, h, w) = chw("pixel_shuffle", self.shape())?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::invalid(
                "pixel_shuffle",
                format!("{c} channels are not divisible by r^2 = {}", r * r),
            ));
        }
        let c_out = c / (r * r);
        self.reshape(&[c_out, r, r, h, w])?
            .permute(&[0, 3, 1, 4, 2])?
            .reshape(&[c_out, h * r, w * r])
    }

    /// Inverse of [`Var::pixel_shuffle`]: `C x rH x rW -> C*r^2 x H x W`.
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Var<T>> {
        let (c, h, w) = chw("pixel_unshuffle", self.shape())?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::invalid(
                "pixel_unshuffle",
                format!("{h} x {w} is not divisible by r = {r}"),
            ));
        }
        self.reshape(&[c, h / r, r, w / r, r])?
            .permute(&[0, 2, 4, 1, 3])?
            .reshape(&[c * r * r, h / r, w / r])
    }

    /// Nearest-neighbour 2x enlargement of a `C x H x W` tensor.
    pub fn upsample_nearest2x(&self) -> Result<Var<T>> {
        let (c, h, w) = chw("upsample_nearest2x", self.shape())?;
        let x = self.reshape(&[c, 1, h, w])?;
        Var::concat(&[x.clone(), x.clone(), x.clone(), x], 1)?
            .reshape(&[c * 4, h, w])?
            .pixel_shuffle(2)
    }

    /// Keeps every second row and column, starting at the origin.
    pub fn subsample2x(&self) -> Result<Var<T>> {
        let (c, h, w) = chw("subsample2x", self.shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("subsample2x", format!("{h} x {w} has an odd extent")));
        }
        self.pixel_unshuffle(2)?
            .reshape(&[c, 4, h / 2, w / 2])?
            .narrow(1, 0, 1)?
            .reshape(&[c, h / 2, w / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn four_channels_become_a_two_by_two_grid() {
        let x = Var::<f32>::constant(Tensor::from_vec(&[4, 1, 1], vec![1., 2., 3., 4.]).unwrap());
        let y = x.pixel_shuffle(2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.value().data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn reconstruction_stage_shapes() {
        let x = Var::<f32>::constant(Tensor::zeros(&[512, 16, 16]));
        assert_eq!(x.pixel_shuffle(2).unwrap().shape(), &[128, 32, 32]);
        let x = Var::<f32>::constant(Tensor::zeros(&[256, 8, 8]));
        assert_eq!(x.pixel_shuffle(2).unwrap().shape(), &[64, 16, 16]);
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Var::<f32>::constant(Tensor::arange(&[3, 2, 5]));
        assert_eq!(x.pixel_shuffle(1).unwrap().value(), x.value());
    }

    #[test]
    fn matches_layout_formula() {
        let (c, r, h, w) = (2, 3, 2, 4);
        let x = Var::<f32>::constant(Tensor::arange(&[c * r * r, h, w]));
        let y = x.pixel_shuffle(r).unwrap();
        for co in 0..c {
            for y_ in 0..h * r {
                for x_ in 0..w * r {
                    let src_c = co * r * r + r * (y_ % r) + x_ % r;
                    let src = (src_c * h + y_ / r) * w + x_ / r;
                    assert_eq!(y.value().data()[(co * h * r + y_) * w * r + x_], src as f32);
                }
            }
        }
    }

    #[test]
    fn indivisible_channels_are_rejected() {
        let x = Var::<f32>::constant(Tensor::zeros(&[6, 2, 2]));
        assert!(x.pixel_shuffle(2).is_err());
    }

    #[test]
    fn nearest_upsample_and_subsample() {
        let x = Var::<f32>::constant(Tensor::arange(&[2, 2, 3]));
        let up = x.upsample_nearest2x().unwrap();
        assert_eq!(up.shape(), &[2, 4, 6]);
        assert_eq!(up.value().data()[6 + 3], x.value().data()[1]);
        assert_eq!(up.subsample2x().unwrap().value(), x.value());
    }
}
