mod common;

use common::{check_vjp, rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use vesrnet::autograd::Var;
use vesrnet::data::PatchPair;
use vesrnet::model::{VesrNet, VesrNetConfig};
use vesrnet::nn::ParamStore;
use vesrnet::tensor::Tensor;
use vesrnet::train::*;
use vesrnet::{Error, Result};

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        steps_per_epoch: 2,
        total_epochs: 2,
        base_lr: 1e-3,
        checkpoint_every: 2,
        patch: 8,
        n_clips: 2,
        clip_frames: 3,
        hr_size: 32,
        seed: 11,
        ..Default::default()
    }
}

fn quick_model() -> VesrNetConfig {
    VesrNetConfig {
        channels: 8,
        n_encoder_carbs: 1,
        n_recon_blocks: 1,
        reduction: 4,
        align_groups: 2,
        ..VesrNetConfig::tiny()
    }
}

fn quick_trainer() -> (Trainer, SyntheticDataset) {
    let cfg = quick_cfg();
    let model = quick_model();
    let data = SyntheticDataset::generate(&cfg, model.n_frames).unwrap();
    (Trainer::new(VesrNet::new(&model, 3).unwrap(), cfg).unwrap(), data)
}

#[test]
fn l1_gradient_matches_finite_differences_away_from_ties() {
    let pred = uniform(&[3, 4], 0.0, 1.0, &mut rng(1));
    // offsets of at least 0.05 keep every element away from the kink
    let target = pred.map(|v| v + if (v * 100.0) as i64 % 2 == 0 { 0.2 } else { -0.2 });
    let err = check_vjp(&|xs| l1_loss(&xs[0], &xs[1]).unwrap(), &[pred, target], 2);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn l1_subgradient_is_zero_at_ties() {
    let tape = vesrnet::autograd::Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_vec(&[2], vec![0.5, 0.7]).unwrap());
    let y = Var::constant(Tensor::from_vec(&[2], vec![0.5, 0.2]).unwrap());
    let g = tape.backward(&l1_loss(&x, &y).unwrap()).unwrap().get(&x);
    assert_eq!(g.data(), &[0.0, 0.5]);
}

#[test]
fn psnr_matches_direct_formula() {
    let mut r = rng(4);
    let a = Tensor::<f32>::from_fn(&[3, 5, 7], |_| r.random());
    let b = Tensor::<f32>::from_fn(&[3, 5, 7], |_| r.random());
    let mut sse = 0.0f64;
    for i in 0..a.numel() {
        let d = a.data()[i] as f64 - b.data()[i] as f64;
        sse += d * d;
    }
    let expect = 10.0 * (1.0 / (sse / a.numel() as f64)).log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() < 1e-9);
    let peak2 = 10.0 * (4.0 / (sse / a.numel() as f64)).log10();
    assert!((psnr(&a, &b, 2.0).unwrap() - peak2).abs() < 1e-9);
}

fn store_with(values: &[f32]) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.add("w", Tensor::from_vec(&[values.len()], values.to_vec()).unwrap());
    s
}

#[test]
fn first_adam_step_moves_by_lr_against_the_gradient_sign() {
    let mut p = store_with(&[0.5, -1.0, 2.0]);
    let mut adam = AdamState::new(&p, 0.01);
    adam.eps = 0.0;
    let g = Tensor::from_vec(&[3], vec![3.0, -0.25, 1e-3]).unwrap();
    adam.step(&mut p, &[g]).unwrap();
    let got = p.get(p.find("w").unwrap()).data().to_vec();
    for (v, e) in got.iter().zip([0.49, -0.99, 1.99]) {
        assert!((v - e).abs() < 1e-6, "{got:?}");
    }
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = store_with(&[0.5, -1.0]);
    let before = p.clone();
    let mut adam = AdamState::new(&p, 0.1);
    for _ in 0..3 {
        adam.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
    }
    assert_eq!(p.get(p.find("w").unwrap()), before.get(before.find("w").unwrap()));
}

#[test]
fn nan_gradient_aborts_the_step() {
    let mut p = store_with(&[0.5, -1.0]);
    let mut adam = AdamState::new(&p, 0.1);
    let g = Tensor::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
    let err = adam.step(&mut p, &[g]).unwrap_err();
    assert!(matches!(err, Error::NonFinite(ref m) if m.contains('w')), "{err}");
    assert_eq!(adam.t, 0);
    assert_eq!(p.get(p.find("w").unwrap()).data(), &[0.5, -1.0]);
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(&cfg, 0), 1e-4);
    assert!((lr_at(&cfg, 20) - 0.8e-4).abs() < 1e-12);
    assert!((lr_at(&cfg, 40) - 0.64e-4).abs() < 1e-12);
}

proptest! {
    #[test]
    fn lr_is_non_increasing_and_matches_closed_form(epoch in 0usize..500, base in 1e-6f32..1e-2) {
        let cfg = TrainConfig { base_lr: base, ..Default::default() };
        prop_assert!(lr_at(&cfg, epoch + 1) <= lr_at(&cfg, epoch));
        let expect = (base as f64 * 0.8f64.powi((epoch / 20) as i32)) as f32;
        prop_assert_eq!(lr_at(&cfg, epoch), expect);
    }

    #[test]
    fn psnr_is_symmetric_and_capped(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = Tensor::<f32>::from_fn(&[2, 3, 3], |_| r.random());
        let b = Tensor::<f32>::from_fn(&[2, 3, 3], |_| r.random());
        let ab = psnr(&a, &b, 1.0).unwrap();
        prop_assert_eq!(ab, psnr(&b, &a, 1.0).unwrap());
        prop_assert!(ab <= PSNR_CAP);
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
    }
}

#[test]
fn history_has_one_row_per_step_and_round_trips_as_csv() {
    let (mut tr, data) = quick_trainer();
    tr.run(&data, 3, None).unwrap();
    assert_eq!(tr.history.len(), 3);
    assert_eq!(tr.history.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(tr.history[2].epoch, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.csv");
    write_history_csv(&path, &tr.history).unwrap();
    assert_eq!(read_history_csv(&path).unwrap(), tr.history);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let run = || {
        let (mut tr, data) = quick_trainer();
        tr.run(&data, 3, None).unwrap();
        tr
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    for ((_, x), (_, y)) in a.net.params.iter().zip(b.net.params.iter()) {
        assert_eq!(x, y);
    }
    assert_eq!(a.adam, b.adam);
}

#[test]
fn resumed_run_reproduces_the_next_step_loss() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("run.vsrc");
    let (mut straight, data) = quick_trainer();
    straight.run(&data, 3, None).unwrap();

    let (mut first, _) = quick_trainer();
    first.run(&data, 2, Some(&ckpt)).unwrap();
    let mut resumed = Trainer::resume(&ckpt, quick_cfg()).unwrap();
    assert_eq!(resumed.steps_done(), 2);
    let loss = resumed.train_step(&data).unwrap();
    assert_eq!(loss, straight.history[2].loss);
    for ((_, x), (_, y)) in resumed.net.params.iter().zip(straight.net.params.iter()) {
        assert_eq!(x, y);
    }
}

#[test]
fn periodic_checkpoints_are_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("run.vsrc");
    let (mut tr, data) = quick_trainer();
    tr.run(&data, 3, Some(&ckpt)).unwrap();
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("run.vsrc")]);
    let loaded = VesrNet::load(&ckpt).unwrap();
    assert_eq!(loaded.config, quick_model());
    for ((_, x), (_, y)) in loaded.params.iter().zip(tr.net.params.iter()) {
        assert_eq!(x, y);
    }
}

struct Poisoned {
    inner: SyntheticDataset,
    from_step: u64,
}

impl DataSource for Poisoned {
    fn batch(&self, step: u64, size: usize) -> Result<Vec<PatchPair>> {
        let mut batch = self.inner.batch(step, size)?;
        if step >= self.from_step {
            batch[0].hr.data_mut()[0] = f32::NAN;
        }
        Ok(batch)
    }
}

#[test]
fn nan_loss_halts_and_keeps_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("run.vsrc");
    let (mut tr, data) = quick_trainer();
    let poisoned = Poisoned { inner: data, from_step: 2 };
    let err = tr.run(&poisoned, 4, Some(&ckpt)).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(tr.steps_done(), 2);
    let saved = Trainer::resume(&ckpt, quick_cfg()).unwrap();
    assert_eq!(saved.steps_done(), 2);
    for ((_, x), (_, y)) in saved.net.params.iter().zip(tr.net.params.iter()) {
        assert_eq!(x, y);
    }
}

#[test]
fn train_loop_runs_the_configured_number_of_steps() {
    let cfg = quick_cfg();
    let data = SyntheticDataset::generate(&cfg, 3).unwrap();
    let out = train_loop(VesrNet::new(&quick_model(), 0).unwrap(), &data, &cfg, None).unwrap();
    assert_eq!(out.history.len(), cfg.total_steps());
    assert!(out.history.iter().all(|r| r.loss.is_finite()));
}

struct CenterOf;

impl Restorer for CenterOf {
    fn window_len(&self) -> usize {
        3
    }

    fn restore(&self, window: &Tensor<f32>) -> Result<Tensor<f32>> {
        window.select(1)
    }
}

#[test]
fn evaluating_ground_truth_against_itself_gives_the_cap() {
    let clip = vesrnet::data::generate_synthetic_clip(1, 4, 16, 16).unwrap();
    let report = evaluate(&CenterOf, &[(clip.clone(), clip.clone())], 1).unwrap();
    assert_eq!(report.clips[0].frames, 4);
    assert_eq!(report.mean_psnr, PSNR_CAP);
    assert_eq!(report.mean_bicubic_psnr, PSNR_CAP);
}

#[test]
fn untrained_model_evaluates_to_finite_values() {
    let cfg = quick_cfg();
    let data = SyntheticDataset::generate(&cfg, 3).unwrap();
    let net = VesrNet::new(&quick_model(), 0).unwrap();
    let report = evaluate(&net, &data.pairs(), 2).unwrap();
    assert_eq!(report.clips.len(), 2);
    assert_eq!(report.clips[0].frames, 2);
    assert!(report.mean_psnr.is_finite() && report.mean_bicubic_psnr.is_finite());
    assert!(report.table().contains("mean"));
}

#[test]
fn clips_shorter_than_the_window_are_rejected() {
    let hr = vesrnet::data::generate_synthetic_clip(1, 2, 32, 32).unwrap();
    let lr = vesrnet::data::degrade_clip(&hr, &Default::default(), 0).unwrap();
    let net = VesrNet::new(&quick_model(), 0).unwrap();
    assert!(evaluate(&net, &[(hr, lr)], 1).is_err());
}

#[test]
fn config_file_keys_reach_both_configs() {
    let text = "batch_size = 3\nseed = 9\nn_recon_blocks = 2\n";
    let (t, m) = parse_config(text, TrainConfig::default(), VesrNetConfig::tiny()).unwrap();
    assert_eq!((t.batch_size, t.seed, m.n_recon_blocks), (3, 9, 2));
    assert!(parse_config("bogus = 1", TrainConfig::default(), VesrNetConfig::tiny()).is_err());
}
