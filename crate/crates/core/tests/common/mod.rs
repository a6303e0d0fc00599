#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vesrnet::autograd::{Tape, Var};
use vesrnet::attention::AttentionBranch;
use vesrnet::nn::{Bound, Conv2dLayer, ParamStore};
use vesrnet::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central-difference gradient of a scalar function of several tensors.
pub fn numeric_grad(
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    which: usize,
    h: f64,
) -> Tensor<f64> {
    let mut work = inputs.to_vec();
    let mut g = Tensor::zeros(inputs[which].shape());
    for i in 0..inputs[which].numel() {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + h;
        let up = f(&work);
        work[which].data_mut()[i] = orig - h;
        let down = f(&work);
        work[which].data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Compares analytic and numeric gradients of `<op(inputs), probe>` for every
/// input; returns the worst relative error.
pub fn check_vjp(
    op: &dyn Fn(&[Var<f64>]) -> Var<f64>,
    inputs: &[Tensor<f64>],
    seed: u64,
) -> f64 {
    let out_shape = {
        let vars: Vec<_> = inputs.iter().cloned().map(Var::constant).collect();
        op(&vars).shape().to_vec()
    };
    let probe = uniform(&out_shape, -1.0, 1.0, &mut rng(seed));
    let scalar = |xs: &[Var<f64>]| op(xs).mul(&Var::constant(probe.clone())).unwrap().sum();

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
    let grads = tape.backward(&scalar(&vars)).unwrap();

    let f = |ts: &[Tensor<f64>]| {
        let vars: Vec<_> = ts.iter().cloned().map(Var::constant).collect();
        scalar(&vars).value().item().unwrap()
    };
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(v);
        let numeric = numeric_grad(&f, inputs, k, FD_STEP);
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}

/// Worst relative error between analytic and central-difference gradients of
/// `<forward(params, x), probe>` with respect to the input and every parameter
/// scalar (or a strided subset of them when `max_per_tensor` is set).
pub fn check_module(
    store: &ParamStore<f64>,
    input: &Tensor<f64>,
    forward: &dyn Fn(&Bound<f64>, &Var<f64>) -> Var<f64>,
    max_per_tensor: Option<usize>,
    seed: u64,
) -> f64 {
    let out_shape = forward(&store.bind_constants(), &Var::constant(input.clone()))
        .shape()
        .to_vec();
    let probe = Var::constant(uniform(&out_shape, -1.0, 1.0, &mut rng(seed)));
    let loss = |params: &Bound<f64>, x: &Var<f64>| forward(params, x).mul(&probe).unwrap().sum();
    let eval = |store: &ParamStore<f64>, x: &Tensor<f64>| {
        loss(&store.bind_constants(), &Var::constant(x.clone())).value().item().unwrap()
    };

    let tape = Tape::new();
    let bound = store.bind(&tape);
    let x = tape.leaf(input.clone());
    let grads = tape.backward(&loss(&bound, &x)).unwrap();

    let indices = |n: usize| -> Vec<usize> {
        let step = max_per_tensor.map_or(1, |m| n.div_ceil(m).max(1));
        (0..n).step_by(step).collect()
    };

    let mut worst = 0.0f64;
    let analytic = grads.get(&x);
    let mut xs = input.clone();
    for i in indices(input.numel()) {
        let orig = xs.data()[i];
        xs.data_mut()[i] = orig + FD_STEP;
        let up = eval(store, &xs);
        xs.data_mut()[i] = orig - FD_STEP;
        let down = eval(store, &xs);
        xs.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic.data()[i], (up - down) / (2.0 * FD_STEP)));
    }

    let mut work = store.clone();
    for id in store.ids() {
        let analytic = grads.get(bound.get(id));
        for i in indices(store.get(id).numel()) {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(&work, input);
            work.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(&work, input);
            work.get_mut(id).data_mut()[i] = orig;
            let err = rel_err(analytic.data()[i], (up - down) / (2.0 * FD_STEP));
            worst = worst.max(err);
        }
    }
    worst
}

/// Replaces every parameter, biases included, with uniform noise in `[-scale, scale]`.
pub fn randomize(store: &mut ParamStore<f64>, scale: f64, seed: u64) {
    let mut r = rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, uniform(&shape, -scale, scale, &mut r)).unwrap();
    }
}

/// Stride-1 convolution with zero padding `k / 2`, as a direct loop.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let pad = (k / 2) as isize;
    Tensor::from_fn(&[co, h, wd], |i| {
        let (o, y, xx) = (i / (h * wd), (i / wd) % h, i % wd);
        let mut acc = b.data()[o];
        for c in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let (sy, sx) = (y as isize + ky as isize - pad, xx as isize + kx as isize - pad);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                        acc += w.data()[((o * ci + c) * k + ky) * k + kx]
                            * x.data()[(c * h + sy as usize) * wd + sx as usize];
                    }
                }
            }
        }
        acc
    })
}

pub fn lrelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn assert_close(actual: &Tensor<f64>, expected: &Tensor<f64>, tol: f64) {
    assert_eq!(actual.shape(), expected.shape());
    for (i, (a, e)) in actual.data().iter().zip(expected.data()).enumerate() {
        assert!((a - e).abs() <= tol, "index {i}: {a} vs {e}");
    }
}

/// `out[t, c, y, x] = sum_k W[c, k] in[t, k, y, x] + b[c]`, by hand.
pub fn project_oracle(store: &ParamStore<f64>, conv: &Conv2dLayer, f: &Tensor<f64>) -> Tensor<f64> {
    let [c, h, w] = [f.shape()[1], f.shape()[2], f.shape()[3]];
    let (wt, b) = (store.get(conv.weight).data(), store.get(conv.bias).data());
    Tensor::from_fn(f.shape(), |i| {
        let (ti, ci, p) = (i / (c * h * w), (i / (h * w)) % c, i % (h * w));
        b[ci] + (0..c).map(|k| wt[ci * c + k] * f.data()[(ti * c + k) * h * w + p]).sum::<f64>()
    })
}

/// Direct double loop over positions `(t, y, x)` with channel descriptors.
pub fn nonlocal_oracle(store: &ParamStore<f64>, branch: &AttentionBranch, f: &Tensor<f64>) -> Tensor<f64> {
    let [t, c, h, w] = [f.shape()[0], f.shape()[1], f.shape()[2], f.shape()[3]];
    let (a, b, d) = (
        project_oracle(store, &branch.a, f),
        project_oracle(store, &branch.b, f),
        project_oracle(store, &branch.d, f),
    );
    let n = t * h * w;
    let at = |x: &Tensor<f64>, ch: usize, pos: usize| {
        let (ti, p) = (pos / (h * w), pos % (h * w));
        x.data()[(ti * c + ch) * h * w + p]
    };
    let mut out = f.clone();
    for j in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|i| (0..c).map(|ch| at(&a, ch, j) * at(&b, ch, i)).sum())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for ch in 0..c {
            let e: f64 = (0..n).map(|i| logits[i].exp() / z * at(&d, ch, i)).sum();
            let (ti, p) = (j / (h * w), j % (h * w));
            out.data_mut()[(ti * c + ch) * h * w + p] += e;
        }
    }
    out
}
