//! 2-D cross-correlation via im2col + GEMM.

use std::rc::Rc;

use rand::Rng;

use super::params::{kaiming_uniform, Bound, ParamId, ParamStore};
use crate::autograd::{record, Var};
use crate::error::{Error, Result, TensorError};
use crate::tensor::{gemm, Element, Tensor, Transpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output extent of a convolution, if it is a whole number.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = (input + 2 * pad).checked_sub(kernel)?;
    (span % stride == 0).then_some(span / stride + 1)
}

fn geometry(x: &[usize], w: &[usize], b: &[usize], stride: usize, pad: usize) -> Result<Geometry> {
    if x.len() != 3 {
        return Err(Error::invalid("conv2d", format!("input must be C x H x W, got {x:?}")));
    }
    if w.len() != 4 || w[2] != w[3] {
        return Err(Error::invalid("conv2d", format!("weight must be Cout x Cin x k x k, got {w:?}")));
    }
    if w[1] != x[0] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d channels",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        }
        .into());
    }
    if b != [w[0]] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            lhs: w.to_vec(),
            rhs: b.to_vec(),
        }
        .into());
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be positive"));
    }
    let kernel = w[2];
    let extent = |n: usize| {
        conv_output_extent(n, kernel, stride, pad).ok_or_else(|| {
            Error::invalid(
                "conv2d",
                format!("extent {n} with kernel {kernel}, stride {stride}, pad {pad} is not a whole number of steps"),
            )
        })
    };
    Ok(Geometry {
        channels: x[0],
        height: x[1],
        width: x[2],
        kernel,
        stride,
        pad,
        out_h: extent(x[1])?,
        out_w: extent(x[2])?,
    })
}

/// Unfolds input patches into a `[C*k*k, out_h*out_w]` matrix.
fn im2col<T: Element>(x: &[T], g: &Geometry) -> Vec<T> {
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[oy * g.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im<T: Element>(cols: &[T], g: &Geometry) -> Vec<T> {
    let p = g.positions();
    let mut x = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            plane[iy as usize * g.width + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

impl<T: Element> Var<T> {
    /// Cross-correlation of a `C_in x H x W` input with a
    /// `C_out x C_in x k x k` kernel plus per-channel bias.
    pub fn conv2d(&self, weight: &Var<T>, bias: &Var<T>, stride: usize, pad: usize) -> Result<Var<T>> {
        let g = geometry(self.shape(), weight.shape(), bias.shape(), stride, pad)?;
        let c_out = weight.shape()[0];
        let (k, p) = (g.patch_len(), g.positions());

        let cols_owned;
        let cols: &[T] = if g.is_pointwise() {
            self.value().data()
        } else {
            cols_owned = im2col(self.value().data(), &g);
            &cols_owned
        };
        let mut out = Vec::with_capacity(c_out * p);
        for &b in bias.value().data() {
            out.extend(std::iter::repeat_n(b, p));
        }
        gemm(c_out, k, p, T::one(), weight.value().data(), Transpose::No, cols, Transpose::No, T::one(), &mut out);
        let value = Tensor::new_unchecked(vec![c_out, g.out_h, g.out_w], out);

        let x = Rc::clone(self.value_rc());
        let w = Rc::clone(weight.value_rc());
        record("conv2d", &[self, weight, bias], value, move |dy| {
            let dy = dy.data();
            let db: Vec<T> = dy.chunks_exact(p).map(|row| row.iter().copied().sum()).collect();

            let cols_owned;
            let cols: &[T] = if g.is_pointwise() {
                x.data()
            } else {
                cols_owned = im2col(x.data(), &g);
                &cols_owned
            };
            let mut dw = vec![T::zero(); c_out * k];
            gemm(c_out, p, k, T::one(), dy, Transpose::No, cols, Transpose::Yes, T::zero(), &mut dw);

            let mut dcols = vec![T::zero(); k * p];
            gemm(k, c_out, p, T::one(), w.data(), Transpose::Yes, dy, Transpose::No, T::zero(), &mut dcols);
            let dx = if g.is_pointwise() { dcols } else { col2im(&dcols, &g) };

            Ok(vec![
                Some(Tensor::new_unchecked(x.shape().to_vec(), dx)),
                Some(Tensor::new_unchecked(w.shape().to_vec(), dw)),
                Some(Tensor::new_unchecked(vec![c_out], db)),
            ])
        })
    }
}

/// A convolution with odd square kernel and "same"-style padding `k / 2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dLayer {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernels are odd");
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn forward<T: Element>(&self, params: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.conv2d(params.get(self.weight), params.get(self.bias), self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            conv_output_extent(h, self.kernel, self.stride, self.padding)?,
            conv_output_extent(w, self.kernel, self.stride, self.padding)?,
        ))
    }

    /// Multiply-accumulates for one `h x w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.output_size(h, w).unwrap_or((0, 0));
        (self.kernel * self.kernel * self.in_channels * self.out_channels) as u64 * (oh * ow) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple loop, independent of im2col.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
        let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        Tensor::from_fn(&[co, oh, ow], |i| {
            let (o, y, xo) = (i / (oh * ow), (i / ow) % oh, i % ow);
            let mut acc = b[o];
            for c in 0..ci {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        let ix = (xo * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x.data()[(c * h + iy as usize) * wd + ix as usize]
                                * w.data()[((o * ci + c) * k + ky) * k + kx];
                        }
                    }
                }
            }
            acc
        })
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 5, 5], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            let y = Var::constant(x.clone())
                .conv2d(&Var::constant(w.clone()), &Var::constant(b.clone()), stride, pad)
                .unwrap();
            let expect = conv_oracle(&x, &w, b.data(), stride, pad);
            assert_eq!(y.shape(), expect.shape());
            for (a, e) in y.value().data().iter().zip(expect.data()) {
                assert!((a - e).abs() < 1e-5, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn first_encoder_conv_keeps_spatial_size() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2dLayer::new(&mut store, "conv1", 3, 128, 3, 1, &mut rng);
        let params = store.bind_constants();
        let y = conv.forward(&params, &Var::constant(Tensor::zeros(&[3, 64, 64]))).unwrap();
        assert_eq!(y.shape(), &[128, 64, 64]);
        assert_eq!(conv.param_count(), 3_584);
    }

    #[test]
    fn pointwise_identity_kernel_permutes_channels() {
        // rows of a permuted identity pick input channels in order [2, 0, 1]
        let mut w = Tensor::<f32>::zeros(&[3, 3, 1, 1]);
        for (o, c) in [2usize, 0, 1].into_iter().enumerate() {
            w.data_mut()[o * 3 + c] = 1.0;
        }
        let x = Tensor::<f32>::arange(&[3, 2, 2]);
        let y = Var::constant(x.clone())
            .conv2d(&Var::constant(w), &Var::constant(Tensor::zeros(&[3])), 1, 0)
            .unwrap();
        assert_eq!(&y.value().data()[0..4], &x.data()[8..12]);
        assert_eq!(&y.value().data()[4..8], &x.data()[0..4]);
        assert_eq!(&y.value().data()[8..12], &x.data()[4..8]);
    }

    #[test]
    fn channel_mismatch_and_fractional_extent_are_errors() {
        let x = Var::<f32>::constant(Tensor::zeros(&[2, 5, 5]));
        let w = Var::constant(Tensor::zeros(&[4, 3, 3, 3]));
        let b = Var::constant(Tensor::zeros(&[4]));
        assert!(x.conv2d(&w, &b, 1, 1).is_err());

        let w = Var::constant(Tensor::zeros(&[4, 2, 3, 3]));
        // (5 + 2 - 3) / 2 is whole, (6 + 2 - 3) / 2 is not
        assert!(x.conv2d(&w, &b, 2, 1).is_ok());
        let x6 = Var::<f32>::constant(Tensor::zeros(&[2, 6, 6]));
        assert!(x6.conv2d(&w, &b, 2, 1).is_err());
    }
}
