mod common;

use common::{check_module, nonlocal_oracle, project_oracle, randomize, rng, uniform};
use proptest::prelude::*;
use vesrnet::attention::{relation_matrix, NonLocalBlock, SeparateNonLocalBlock};
use vesrnet::autograd::Var;
use vesrnet::nn::ParamStore;
use vesrnet::tensor::Tensor;

fn assert_row_stochastic(m: &Tensor<f64>) {
    let n = m.shape()[1];
    for row in m.data().chunks_exact(n) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn relation_matrix_matches_exp_normalize_loop() {
    let mut r = rng(3);
    let a = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let b = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let m = relation_matrix(&Var::constant(a.clone()), &Var::constant(b.clone())).unwrap();
    for j in 0..4 {
        let logit = |i: usize| (0..3).map(|k| a.data()[k * 4 + j] * b.data()[k * 4 + i]).sum::<f64>();
        let z: f64 = (0..4).map(|i| logit(i).exp()).sum();
        for i in 0..4 {
            assert!((m.value().data()[j * 4 + i] - logit(i).exp() / z).abs() < 1e-12);
        }
    }
}

#[test]
fn relation_matrix_rejects_mismatched_descriptors() {
    let a = Var::<f32>::constant(Tensor::zeros(&[3, 4]));
    let b = Var::<f32>::constant(Tensor::zeros(&[2, 4]));
    assert!(relation_matrix(&a, &b).is_err());
}

#[test]
fn nonlocal_preserves_shape() {
    let mut store = ParamStore::<f32>::new();
    let block = NonLocalBlock::new(&mut store, "nl", 4, &mut rng(0));
    let f = Var::constant(Tensor::from_fn(&[2, 4, 6, 6], |i| (i as f32 * 0.01).sin()));
    assert_eq!(block.forward(&store.bind_constants(), &f).unwrap().shape(), &[2, 4, 6, 6]);
}

#[test]
fn nonlocal_constant_input_adds_mean_projection() {
    let mut store = ParamStore::<f64>::new();
    let block = NonLocalBlock::new(&mut store, "nl", 3, &mut rng(1));
    randomize(&mut store, 0.5, 2);
    let f = Tensor::from_fn(&[2, 3, 2, 3], |i| [0.2, -0.4, 0.9][(i / 6) % 3]);
    let (out, m) = block
        .forward_traced(&store.bind_constants(), &Var::constant(f.clone()))
        .unwrap();
    let n = m.shape()[0];
    for &p in m.value().data() {
        assert!((p - 1.0 / n as f64).abs() < 1e-12);
    }
    let d = project_oracle(&store, &block.branch.d, &f);
    for ch in 0..3 {
        let plane: Vec<usize> = (0..36).filter(|i| (i / 6) % 3 == ch).collect();
        let mean = plane.iter().map(|&i| d.data()[i]).sum::<f64>() / plane.len() as f64;
        for &i in &plane {
            assert!((out.value().data()[i] - f.data()[i] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn nonlocal_matches_brute_force_attention() {
    let mut store = ParamStore::<f64>::new();
    let block = NonLocalBlock::new(&mut store, "nl", 2, &mut rng(4));
    randomize(&mut store, 0.8, 5);
    let f = uniform(&[1, 2, 3, 3], -1.0, 1.0, &mut rng(6));
    let out = block.forward(&store.bind_constants(), &Var::constant(f.clone())).unwrap();
    let expect = nonlocal_oracle(&store, &block.branch, &f);
    for (a, b) in out.value().data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn single_frame_temporal_branch_passes_values_through() {
    let mut store = ParamStore::<f64>::new();
    let block = SeparateNonLocalBlock::new(&mut store, "snl", 3, &mut rng(7));
    let f = uniform(&[1, 3, 4, 4], -1.0, 1.0, &mut rng(8));
    let (_, trace) = block
        .forward_traced(&store.bind_constants(), &Var::constant(f.clone()))
        .unwrap();
    assert_eq!(trace.temporal.value().data(), &[1.0]);

    // with spatial and channel aggregation zeroed, out = F + D3
    for conv in [&block.spatial.d, &block.channel.d] {
        store.set(conv.weight, Tensor::zeros(&[3, 3, 1, 1])).unwrap();
    }
    let out = block.forward(&store.bind_constants(), &Var::constant(f.clone())).unwrap();
    let d3 = project_oracle(&store, &block.temporal.d, &f);
    for i in 0..f.numel() {
        assert!((out.value().data()[i] - f.data()[i] - d3.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn frame_permutation_conjugates_temporal_relation() {
    let mut store = ParamStore::<f64>::new();
    let block = SeparateNonLocalBlock::new(&mut store, "snl", 2, &mut rng(9));
    let (t, plane) = (4, 2 * 3 * 3);
    let f = uniform(&[t, 2, 3, 3], -1.0, 1.0, &mut rng(10));
    let perm = [2, 0, 3, 1];
    let g = Tensor::from_fn(f.shape(), |i| f.data()[perm[i / plane] * plane + i % plane]);
    let params = store.bind_constants();
    let (out_f, tf) = block.forward_traced(&params, &Var::constant(f)).unwrap();
    let (out_g, tg) = block.forward_traced(&params, &Var::constant(g)).unwrap();
    let (mf, mg) = (tf.temporal.value().data(), tg.temporal.value().data());
    for j in 0..t {
        for i in 0..t {
            assert!((mg[j * t + i] - mf[perm[j] * t + perm[i]]).abs() < 1e-12);
        }
    }
    // the whole block is permutation equivariant over frames
    for i in 0..out_g.numel() {
        let src = perm[i / plane] * plane + i % plane;
        assert!((out_g.value().data()[i] - out_f.value().data()[src]).abs() < 1e-10);
    }
}

#[test]
fn separate_nonlocal_gradcheck() {
    let mut store = ParamStore::<f64>::new();
    let block = SeparateNonLocalBlock::new(&mut store, "snl", 2, &mut rng(11));
    randomize(&mut store, 0.5, 12);
    let f = uniform(&[3, 2, 2, 3], -1.0, 1.0, &mut rng(13));
    let worst = check_module(&store, &f, &|p, x| block.forward(p, x).unwrap(), None, 14);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn nonlocal_gradcheck() {
    let mut store = ParamStore::<f64>::new();
    let block = NonLocalBlock::new(&mut store, "nl", 2, &mut rng(15));
    randomize(&mut store, 0.5, 16);
    let f = uniform(&[2, 2, 2, 2], -1.0, 1.0, &mut rng(17));
    let worst = check_module(&store, &f, &|p, x| block.forward(p, x).unwrap(), None, 18);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relation_matrices_are_row_stochastic(
        t in 1usize..4, c in 1usize..4, h in 1usize..4, w in 1usize..4,
        seed in any::<u64>(), scale in 0.1f64..20.0,
    ) {
        let mut store = ParamStore::<f64>::new();
        let block = SeparateNonLocalBlock::new(&mut store, "snl", c, &mut rng(seed));
        let f = uniform(&[t, c, h, w], -scale, scale, &mut rng(seed ^ 1));
        let (out, trace) = block.forward_traced(&store.bind_constants(), &Var::constant(f)).unwrap();
        prop_assert_eq!(out.shape(), &[t, c, h, w]);
        prop_assert_eq!(trace.spatial.shape(), &[h * w, h * w]);
        prop_assert_eq!(trace.channel.shape(), &[c, c]);
        prop_assert_eq!(trace.temporal.shape(), &[t, t]);
        for m in [&trace.spatial, &trace.channel, &trace.temporal] {
            assert_row_stochastic(m.value());
        }
    }

    #[test]
    fn nonlocal_relation_is_row_stochastic(
        t in 1usize..3, c in 1usize..4, h in 1usize..4, w in 1usize..4, seed in any::<u64>(),
    ) {
        let mut store = ParamStore::<f64>::new();
        let block = NonLocalBlock::new(&mut store, "nl", c, &mut rng(seed));
        let f = uniform(&[t, c, h, w], -3.0, 3.0, &mut rng(seed ^ 2));
        let (out, m) = block.forward_traced(&store.bind_constants(), &Var::constant(f)).unwrap();
        prop_assert_eq!(out.shape(), &[t, c, h, w]);
        assert_row_stochastic(m.value());
    }
}
