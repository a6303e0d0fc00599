//! Pooling, softmax and per-channel scaling.

use std::rc::Rc;

use crate::autograd::{record, Var};
use crate::error::{Error, Result, TensorError};
use crate::tensor::{Element, Tensor};

impl<T: Element> Var<T> {
    /// Mean over the spatial axes of a `C x H x W` tensor.
    pub fn global_avg_pool(&self) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::invalid("global_avg_pool", format!("expected C x H x W, got {shape:?}")));
        }
        let plane = shape[1] * shape[2];
        let inv = T::one() / T::from_usize(plane);
        let means: Vec<T> = self
            .value()
            .data()
            .chunks_exact(plane)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new_unchecked(vec![shape[0]], means);
        record("global_avg_pool", &[self], value, move |g| {
            let mut dx = Vec::with_capacity(shape.iter().product());
            for &gc in g.data() {
                dx.extend(std::iter::repeat_n(gc * inv, plane));
            }
            Ok(vec![Some(Tensor::new_unchecked(shape, dx))])
        })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis {
                op: "softmax",
                axis,
                rank: shape.len(),
            }
            .into());
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value().data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * extent + j) * inner + i;
                let max = (0..extent).map(|j| x[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..extent {
                    let mut e = (x[at(j)] - max).exp();
                    // subnormal weights are numerically irrelevant but slow
                    // every later product down
                    if e < T::min_positive_value() {
                        e = T::zero();
                    }
                    y[at(j)] = e;
                    total += e;
                }
                for j in 0..extent {
                    y[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new_unchecked(shape.clone(), y);
        let y = Rc::new(value.clone());
        record("softmax", &[self], value, move |g| {
            // dx = y * (g - sum_j g_j y_j)
            let (gd, yd) = (g.data(), y.data());
            let mut dx = vec![T::zero(); gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * extent + j) * inner + i;
                    let dot: T = (0..extent).map(|j| gd[at(j)] * yd[at(j)]).sum();
                    for j in 0..extent {
                        dx[at(j)] = yd[at(j)] * (gd[at(j)] - dot);
                    }
                }
            }
            Ok(vec![Some(Tensor::new_unchecked(shape, dx))])
        })
    }

    /// `out[c, ...] = self[c, ...] * weights[c]` for a `[C]` weight vector.
    pub fn channel_scale(&self, weights: &Var<T>) -> Result<Var<T>> {
        let shape = self.shape().to_vec();
        if shape.is_empty() || weights.shape() != [shape[0]] {
            return Err(TensorError::ShapeMismatch {
                op: "channel_scale",
                lhs: shape,
                rhs: weights.shape().to_vec(),
            }
            .into());
        }
        let plane = self.numel() / shape[0];
        let mut out = self.value().data().to_vec();
        for (chunk, &w) in out.chunks_exact_mut(plane).zip(weights.value().data()) {
            chunk.iter_mut().for_each(|v| *v *= w);
        }
        let value = Tensor::new_unchecked(shape.clone(), out);
        let (x, z) = (Rc::clone(self.value_rc()), Rc::clone(weights.value_rc()));
        record("channel_scale", &[self, weights], value, move |g| {
            let mut dx = g.data().to_vec();
            let mut dz = Vec::with_capacity(z.numel());
            for ((dchunk, xchunk), &w) in dx
                .chunks_exact_mut(plane)
                .zip(x.data().chunks_exact(plane))
                .zip(z.data())
            {
                dz.push(dchunk.iter().zip(xchunk).map(|(&g, &x)| g * x).sum());
                dchunk.iter_mut().for_each(|v| *v *= w);
            }
            Ok(vec![
                Some(Tensor::new_unchecked(shape, dx)),
                Some(Tensor::new_unchecked(z.shape().to_vec(), dz)),
            ])
        })
    }
}
