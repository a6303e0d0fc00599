mod common;

use common::{rng, uniform};
use proptest::prelude::*;
use vesrnet::attention::{stack, unstack};
use vesrnet::autograd::{Tape, Var};
use vesrnet::blocks::ResBlock;
use vesrnet::data::bicubic_resize;
use vesrnet::model::{analytic_param_count, build_model, infer_config, preset, Preset, VesrNet, VesrNetConfig};
use vesrnet::nn::Bound;
use vesrnet::tensor::Tensor;

fn small_cfg() -> VesrNetConfig {
    VesrNetConfig {
        channels: 8,
        n_frames: 3,
        n_encoder_carbs: 2,
        n_recon_blocks: 2,
        reduction: 4,
        align_groups: 2,
        ..VesrNetConfig::tiny()
    }
}

fn frames(t: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    uniform(&[t, 3, h, w], 0.0, 1.0, &mut rng(seed))
}

/// The network written out stage by stage from its layers.
fn oracle(net: &VesrNet<f64>, p: &Bound<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let t = x.shape()[0];
    let mut feats = Vec::new();
    for i in 0..t {
        let f = Var::constant(x.select(i).unwrap());
        let mut h = net.conv1.forward(p, &f).unwrap().leaky_relu(0.1);
        for b in &net.encoder {
            h = b.forward(p, &h).unwrap();
        }
        feats.push(h);
    }
    let c = t / 2;
    let align = net.align.as_ref().unwrap();
    let aligned: Vec<_> = (0..t)
        .map(|i| if i == c { feats[c].clone() } else { align.align_frames(p, &feats[c], &feats[i]).unwrap() })
        .collect();
    let fused = net.snl.as_ref().unwrap().forward(p, &stack(&aligned).unwrap()).unwrap();
    let s = fused.shape().to_vec();
    let cat = Var::concat(&unstack(&fused).unwrap(), 0).unwrap();
    assert_eq!(cat.shape(), &[s[0] * s[1], s[2], s[3]]);
    let mut h = net.conv9.forward(p, &cat).unwrap().leaky_relu(0.1);
    for b in &net.recon {
        h = b.forward(p, &h).unwrap();
    }
    let h = net.conv31.forward(p, &h).unwrap().pixel_shuffle(2).unwrap().leaky_relu(0.1);
    let h = net.conv33.forward(p, &h).unwrap().pixel_shuffle(2).unwrap().leaky_relu(0.1);
    let h = net.conv35.forward(p, &h).unwrap().leaky_relu(0.1);
    let out = net.conv36.forward(p, &h).unwrap();
    let base = bicubic_resize(&x.select(c).unwrap(), 4 * s[2], 4 * s[3]).unwrap();
    out.value().zip_map(&base, "add", |a, b| a + b).unwrap()
}

#[test]
fn tiny_forward_matches_stage_by_stage_composition() {
    let net = VesrNet::<f64>::new(&small_cfg(), 3).unwrap();
    let x = frames(3, 8, 8, 4);
    let out = net.infer(&x).unwrap();
    let expect = oracle(&net, &net.params.bind_constants(), &x);
    common::assert_close(&out, &expect, 1e-12);
}

#[test]
fn encoder_is_shared_across_frames() {
    let net = VesrNet::<f64>::new(&small_cfg(), 5).unwrap();
    let p = net.params.bind_constants();
    let x = frames(3, 8, 8, 6);
    let frame = Var::constant(x.select(2).unwrap());
    let mut h = net.conv1.forward(&p, &frame).unwrap().leaky_relu(0.1);
    for b in &net.encoder {
        h = b.forward(&p, &h).unwrap();
    }
    assert_eq!(net.encode_frame(&p, &frame).unwrap().value(), h.value());
}

#[test]
fn same_seed_gives_identical_parameters() {
    let a = build_model(&VesrNetConfig::tiny(), 11).unwrap();
    let b = build_model(&VesrNetConfig::tiny(), 11).unwrap();
    let c = build_model(&VesrNetConfig::tiny(), 12).unwrap();
    let bits = |n: &VesrNet| -> Vec<u32> { n.params.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect() };
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn full_preset_geometry_and_small_input_scale() {
    let net = build_model(&preset("full").unwrap(), 0).unwrap();
    assert_eq!(net.conv9.in_channels, 896);
    assert_eq!(net.conv9.out_channels, 128);
    assert_eq!(net.encoder.iter().filter(|b| matches!(b, ResBlock::Carb(_))).count(), 5);
    let out = net.infer(&Tensor::full(&[7, 3, 16, 16], 0.25)).unwrap();
    assert_eq!(out.shape(), &[3, 64, 64]);
    assert!(out.is_finite());
}

#[test]
fn constructed_counts_equal_closed_form_and_follow_ablation_order() {
    let mut counts = Vec::new();
    for p in [Preset::EdvrLikeSmall, Preset::Model1, Preset::Model2, Preset::Small, Preset::Full, Preset::Tiny] {
        let cfg = p.config();
        let net = build_model(&cfg, 0).unwrap();
        assert_eq!(net.param_count(), analytic_param_count(&cfg), "{p}");
        counts.push(net.param_count());
    }
    assert!(counts[0] < counts[1] && counts[1] < counts[2] && counts[2] < counts[3] && counts[3] < counts[4]);
}

#[test]
fn every_parameter_receives_gradient() {
    let net = VesrNet::<f64>::new(&VesrNetConfig::tiny(), 7).unwrap();
    let tape = Tape::new();
    let params = net.params.bind(&tape);
    let mut loss = Var::constant(Tensor::scalar(0.0));
    for k in 0..2 {
        let out = net.forward(&params, &Var::constant(frames(3, 8, 8, 8 + k))).unwrap();
        let target = Var::constant(uniform(out.shape(), 0.0, 1.0, &mut rng(20 + k)));
        loss = loss.add(&out.sub(&target).unwrap().abs().mean()).unwrap();
    }
    let grads = tape.backward(&loss).unwrap();
    for id in net.params.ids() {
        let g = grads.get(params.get(id));
        assert!(g.max_abs() > 0.0, "{} has an all-zero gradient", net.params.name(id));
    }
}

#[test]
fn checkpoint_round_trip_preserves_outputs_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let variants = [
        VesrNetConfig::tiny(),
        VesrNetConfig { use_carb: false, ..VesrNetConfig::tiny() },
        VesrNetConfig { use_separate_nl: false, use_alignment: false, ..VesrNetConfig::tiny() },
        VesrNetConfig { n_frames: 5, n_recon_blocks: 1, reduction: 2, ..VesrNetConfig::tiny() },
    ];
    for (i, cfg) in variants.iter().enumerate() {
        let net = build_model(cfg, i as u64).unwrap();
        let path = dir.path().join(format!("m{i}.vsrc"));
        net.save(&path).unwrap();
        let back = VesrNet::load(&path).unwrap();
        assert_eq!(back.config, cfg.normalized());
        let x = Tensor::from_fn(&[cfg.n_frames, 3, 8, 8], |j| (j % 17) as f32 / 17.0);
        let (a, b) = (net.infer(&x).unwrap(), back.infer(&x).unwrap());
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn config_inference_ignores_optimizer_tensors() {
    let net = build_model(&VesrNetConfig::tiny(), 0).unwrap();
    let mut tensors: Vec<(String, Tensor<f32>)> = net.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    tensors.push(("adam.step".into(), Tensor::full(&[1], 3.0)));
    assert_eq!(infer_config(&tensors).unwrap(), VesrNetConfig::tiny());
    assert!(VesrNet::from_tensors(&tensors).is_ok());
    tensors.retain(|(n, _)| n != "fusion.conv9.weight");
    assert!(infer_config(&tensors).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_is_four_times_the_input(h in 1usize..4, w in 1usize..4, seed in any::<u64>()) {
        let net = build_model(&small_cfg(), seed).unwrap();
        let x = Tensor::from_fn(&[3, 3, 4 * h, 4 * w], |i| ((i as u64 ^ seed) % 255) as f32 / 255.0);
        let out = net.infer(&x).unwrap();
        prop_assert_eq!(out.shape(), &[3, 16 * h, 16 * w]);
        prop_assert!(out.is_finite());
    }
}
