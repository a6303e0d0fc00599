//! Arithmetic, reduction and layout operations.

use std::rc::Rc;

use super::{record, Var};
use crate::error::{Result, TensorError};
use crate::tensor::{gemm, inverse_permutation, matmul_dims, Element, Tensor, Transpose};

fn t<T: Element>(v: f64) -> T {
    T::from_f64(v)
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Copies `len` slices starting at `start` along `axis`.
fn narrow_data<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, extent, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new_unchecked(shape, out)
}

impl<T: Element> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = self.value.zip_map(&other.value, "add", |a, b| a + b)?;
        record("add", &[self, other], value, |g| {
            Ok(vec![Some(g.clone()), Some(g.clone())])
        })
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = self.value.zip_map(&other.value, "sub", |a, b| a - b)?;
        record("sub", &[self, other], value, |g| {
            Ok(vec![Some(g.clone()), Some(g.map(|v| -v))])
        })
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        let value = self.value.zip_map(&other.value, "mul", |a, b| a * b)?;
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        record("mul", &[self, other], value, move |g| {
            Ok(vec![
                Some(g.zip_map(&b, "mul", |g, b| g * b)?),
                Some(g.zip_map(&a, "mul", |g, a| g * a)?),
            ])
        })
    }

    /// Multiplies every element by the scalar `s`.
    pub fn scale(&self, s: f64) -> Var<T> {
        let s: T = t(s);
        let value = self.value.map(|v| v * s);
        record("scale", &[self], value, move |g| Ok(vec![Some(g.map(|v| v * s))]))
            .expect("unary op on a single tape")
    }

    pub fn add_scalar(&self, s: f64) -> Var<T> {
        let s: T = t(s);
        let value = self.value.map(|v| v + s);
        record("add_scalar", &[self], value, |g| Ok(vec![Some(g.clone())]))
            .expect("unary op on a single tape")
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&self) -> Var<T> {
        let value = self.value.map(|v| v.abs());
        let x = Rc::clone(&self.value);
        record("abs", &[self], value, move |g| {
            let sign = |v: T| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            };
            Ok(vec![Some(g.zip_map(&x, "abs", |g, x| g * sign(x))?)])
        })
        .expect("unary op on a single tape")
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<T> {
        let value = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        record("sum", &[self], value, move |g| {
            Ok(vec![Some(Tensor::full(&shape, g.data()[0]))])
        })
        .expect("unary op on a single tape")
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (m, k, n) = matmul_dims(self.shape(), other.shape())?;
        let value = self.value.matmul(&other.value)?;
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        record("matmul", &[self, other], value, move |g| {
            // dA = dC * B^T, dB = A^T * dC
            let mut da = vec![T::zero(); m * k];
            gemm(m, n, k, T::one(), g.data(), Transpose::No, b.data(), Transpose::Yes, T::zero(), &mut da);
            let mut db = vec![T::zero(); k * n];
            gemm(k, m, n, T::one(), a.data(), Transpose::Yes, g.data(), Transpose::No, T::zero(), &mut db);
            Ok(vec![
                Some(Tensor::new_unchecked(vec![m, k], da)),
                Some(Tensor::new_unchecked(vec![k, n], db)),
            ])
        })
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        let value = self.value.reshape(shape)?;
        let old = self.shape().to_vec();
        record("reshape", &[self], value, move |g| Ok(vec![Some(g.reshape(&old)?)]))
    }

    /// Output axis `i` is input axis `order[i]`.
    pub fn permute(&self, order: &[usize]) -> Result<Var<T>> {
        let value = self.value.permute(order)?;
        let inverse = inverse_permutation(order);
        record("permute", &[self], value, move |g| Ok(vec![Some(g.permute(&inverse)?)]))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Var<T>> {
        if self.value.rank() != 2 {
            return Err(crate::Error::invalid(
                "transpose",
                format!("expected rank 2, got {:?}", self.shape()),
            ));
        }
        self.permute(&[1, 0])
    }

    /// `len` consecutive slices along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<T>> {
        let rank = self.value.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op: "narrow", axis, rank }.into());
        }
        if len == 0 || start + len > self.shape()[axis] {
            return Err(crate::Error::invalid(
                "narrow",
                format!("range {start}..{} outside extent {}", start + len, self.shape()[axis]),
            ));
        }
        let value = narrow_data(&self.value, axis, start, len);
        let in_shape = self.shape().to_vec();
        record("narrow", &[self], value, move |g| {
            let (outer, extent, inner) = split_at_axis(&in_shape, axis);
            let mut dx = vec![T::zero(); outer * extent * inner];
            for o in 0..outer {
                let dst = (o * extent + start) * inner;
                let src = o * len * inner;
                dx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            Ok(vec![Some(Tensor::new_unchecked(in_shape, dx))])
        })
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<T>], axis: usize) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| crate::Error::invalid("concat", "no inputs"))?;
        let rank = first.value.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { op: "concat", axis, rank }.into());
        }
        for p in parts {
            let same_rank = p.value.rank() == rank;
            let same_other = same_rank
                && (0..rank).all(|a| a == axis || p.shape()[a] == first.shape()[a]);
            if !same_other {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                }
                .into());
            }
        }
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                let base = o * e * inner;
                data.extend_from_slice(&p.value.data()[base..base + e * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let value = Tensor::new_unchecked(shape, data);
        let inputs: Vec<&Var<T>> = parts.iter().collect();
        record("concat", &inputs, value, move |g| {
            let mut start = 0;
            let mut grads = Vec::with_capacity(extents.len());
            for &e in &extents {
                grads.push(Some(narrow_data(g, axis, start, e)));
                start += e;
            }
            Ok(grads)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn v(shape: &[usize], data: &[f32]) -> Var<f32> {
        Var::constant(Tensor::from_vec(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn add_forced_arithmetic() {
        let s = v(&[2], &[1., 2.]).add(&v(&[2], &[3., 4.])).unwrap();
        assert_eq!(s.value().data(), &[4., 6.]);
    }

    #[test]
    fn multiply_by_zero_annihilates() {
        let x = v(&[2, 2], &[1., -2., 3., 4.]);
        assert_eq!(x.scale(0.0).value(), &Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = v(&[2], &[1., 2.]).add(&v(&[3], &[1., 2., 3.])).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn matmul_forced_arithmetic_and_identity() {
        let a = v(&[2, 2], &[1., 2., 3., 4.]);
        let ones = v(&[2, 1], &[1., 1.]);
        assert_eq!(a.matmul(&ones).unwrap().value().data(), &[3., 7.]);
        let x = v(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        let i = Var::constant(Tensor::eye(3));
        assert_eq!(i.matmul(&x).unwrap().value(), x.value());
    }

    #[test]
    fn matmul_inner_mismatch_is_error() {
        let a = v(&[2, 3], &[0.; 6]);
        let b = v(&[2, 3], &[0.; 6]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let a = Var::<f32>::constant(Tensor::arange(&[2, 3, 2]));
        let b = Var::<f32>::constant(Tensor::arange(&[2, 1, 2]).map(|x| x + 100.0));
        let c = Var::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2]);
        assert_eq!(c.narrow(1, 0, 3).unwrap().value(), a.value());
        assert_eq!(c.narrow(1, 3, 1).unwrap().value(), b.value());
    }

    #[test]
    fn concat_routes_gradients_back() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::ones(&[2, 2]));
        let b = tape.leaf(Tensor::ones(&[1, 2]));
        let w = Var::constant(Tensor::arange(&[3, 2]));
        let loss = Var::concat(&[a.clone(), b.clone()], 0).unwrap().mul(&w).unwrap().sum();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&a).data(), &[0., 1., 2., 3.]);
        assert_eq!(g.get(&b).data(), &[4., 5.]);
    }

    #[test]
    fn abs_subgradient_is_zero_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![-2.0, 0.0, 3.0]).unwrap());
        let g = tape.backward(&x.abs().sum()).unwrap();
        assert_eq!(g.get(&x).data(), &[-1.0, 0.0, 1.0]);
    }
}
