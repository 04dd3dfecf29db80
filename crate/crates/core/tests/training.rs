use gesture_core::controlnet::{self, ControlNetModel};
use gesture_core::denoiser::{build_denoiser, denoise, DenoiserConfig, DenoiserModel};
use gesture_core::diffusion::{add_noise_with, NoiseSchedule, ScheduleMode};
use gesture_core::motion::JointLayout;
use gesture_core::params::Params;
use gesture_core::training::{
    bit_identical, draw_step, evaluate_pretrain_loss, finetune_step, grad_check, loss_total,
    pretrain_clip_gradients, pretrain_step, AdamW, AdamWConfig, ContactMask, ControlNetOptimizer,
    GradCheckOptions, StepDraw, TrainSample,
};
use gesture_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::cosine(1000, 0.008, ScheduleMode::VariancePreserving).unwrap()
}

fn micro() -> DenoiserConfig {
    DenoiserConfig {
        n_layers: 2,
        d_model: 8,
        n_heads: 2,
        d_heads: 4,
        ff_multiplier: 4,
        input_dim: 12,
        max_frames: 4,
    }
}

fn micro_layout() -> JointLayout {
    let mut l = JointLayout::generic("pair", 2);
    l.contact_joint_indices = vec![1];
    l
}

fn randomize(p: &mut Params, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in p.tensors_mut() {
        *t = Tensor::randn(t.rows(), t.cols(), std, &mut rng);
    }
}

fn randn(r: usize, c: usize, std: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(r, c, std, &mut rng)
}

fn micro_sample(seed: u64) -> TrainSample {
    let mut motion = randn(4, 12, 0.5, seed);
    // Keep the contact joint still over the first two frames so the mask is mixed.
    for c in 6..12 {
        let v = motion.get(0, c);
        motion.set(1, c, v);
    }
    let layout = micro_layout();
    let s = TrainSample::new(motion, &layout, Some(randn(6, 5, 1.0, seed + 1)));
    assert!(s.contact.get(0, 0));
    s
}

fn draw(t: usize, seed: u64, drop_condition: bool) -> StepDraw {
    StepDraw {
        t,
        eps: randn(4, 12, 1.0, seed),
        drop_condition,
    }
}

#[test]
fn denoiser_gradients_match_finite_differences() {
    let mut model = build_denoiser(micro(), 1).unwrap();
    randomize(&mut model.params, 0.3, 2);
    let sample = micro_sample(3);
    let d = draw(400, 4, false);
    let layout = micro_layout();
    let sched = schedule();
    let (_, grads) = pretrain_clip_gradients(&model, &sample, &d, &layout, &sched).unwrap();
    let noised = add_noise_with(&sample.motion, d.t, &sched, d.eps.clone()).unwrap();
    let loss = |stores: &[Params]| {
        let m = DenoiserModel {
            config: model.config,
            params: stores[0].clone(),
        };
        let x0 = denoise(&m, &noised.x_t, d.t)?.x0;
        Ok(loss_total(&sample.motion, &x0, &layout, &sample.contact)?.l_total)
    };
    let report = grad_check(&[model.params.clone()], &[grads], loss, GradCheckOptions::default()).unwrap();
    assert_eq!(report.checked, model.parameter_count());
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn controlnet_gradients_match_finite_differences() {
    let mut frozen = build_denoiser(micro(), 5).unwrap();
    randomize(&mut frozen.params, 0.3, 6);
    let mut cnet = ControlNetModel::from_expert(&frozen, 5, 7).unwrap();
    randomize(&mut cnet.copy.params, 0.3, 8);
    randomize(&mut cnet.moge, 0.3, 9);
    randomize(&mut cnet.audio.params, 0.3, 10);
    let sample = micro_sample(11);
    let d = draw(250, 12, false);
    let layout = micro_layout();
    let sched = schedule();
    let (_, grads) =
        gesture_core::training::finetune_clip_gradients(&frozen, &cnet, &sample, &d, &layout, &sched).unwrap();
    let noised = add_noise_with(&sample.motion, d.t, &sched, d.eps.clone()).unwrap();
    let mel = sample.mel.clone().unwrap();
    let loss = |stores: &[Params]| {
        let mut c = cnet.clone();
        c.copy.params = stores[0].clone();
        c.moge = stores[1].clone();
        c.audio.params = stores[2].clone();
        let audio = c.embed_audio(&mel, 4)?;
        let x0 = controlnet::controlnet_denoise(&frozen, &c, &noised.x_t, d.t, &audio)?;
        Ok(loss_total(&sample.motion, &x0, &layout, &sample.contact)?.l_total)
    };
    let stores = [cnet.copy.params.clone(), cnet.moge.clone(), cnet.audio.params.clone()];
    let report = grad_check(&stores, &grads, loss, GradCheckOptions::default()).unwrap();
    assert_eq!(report.checked, cnet.parameter_count());
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

fn smooth_clip(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Tensor::randn(1, 258, 0.5, &mut rng);
    Tensor::from_fn(n, 258, |r, c| base.get(0, c) + 0.3 * ((r as f64) * 0.4 + c as f64).sin())
}

fn tiny(max_frames: usize) -> DenoiserConfig {
    DenoiserConfig {
        max_frames,
        ..DenoiserConfig::tiny()
    }
}

fn window_means(losses: &[f64], w: usize) -> Vec<f64> {
    losses.chunks(w).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[test]
fn pretraining_overfits_a_single_clip() {
    let layout = JointLayout::upper_body();
    let mut model = build_denoiser(tiny(24), 13).unwrap();
    let batch = vec![TrainSample::new(smooth_clip(24, 1), &layout, None)];
    let mut opt = AdamW::new(AdamWConfig::with_lr(1e-3), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let sched = schedule();
    let losses: Vec<f64> = (0..200)
        .map(|_| pretrain_step(&mut model, &mut opt, &batch, &layout, &sched, &mut rng).unwrap().l_total)
        .collect();
    let means = window_means(&losses, 50);
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
    assert!(means[3] < 0.5 * means[0], "{means:?}");
}

#[test]
fn pretraining_is_replayable_and_zero_lr_is_inert() {
    let layout = JointLayout::upper_body();
    let batch: Vec<_> = (0..3).map(|i| TrainSample::new(smooth_clip(10, i), &layout, None)).collect();
    let sched = schedule();
    let run = |lr: f64| {
        let mut model = build_denoiser(tiny(10), 3).unwrap();
        let mut cfg = AdamWConfig::with_lr(lr);
        if lr == 0.0 {
            cfg.weight_decay = 0.0;
        }
        let mut opt = AdamW::new(cfg, &model.params);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let losses: Vec<f64> = (0..5)
            .map(|_| pretrain_step(&mut model, &mut opt, &batch, &layout, &sched, &mut rng).unwrap().l_total)
            .collect();
        (losses, model)
    };
    let (a, ma) = run(1e-3);
    let (b, mb) = run(1e-3);
    assert_eq!(a, b);
    assert!(bit_identical(&ma.params, &mb.params));
    let (_, m0) = run(0.0);
    assert!(bit_identical(&m0.params, &build_denoiser(tiny(10), 3).unwrap().params));
}

#[test]
fn empty_batch_and_non_finite_losses_are_rejected() {
    let layout = JointLayout::upper_body();
    let mut model = build_denoiser(tiny(10), 3).unwrap();
    let mut opt = AdamW::new(AdamWConfig::with_lr(1e-3), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sched = schedule();
    assert!(matches!(
        pretrain_step(&mut model, &mut opt, &[], &layout, &sched, &mut rng),
        Err(Error::InsufficientData(_))
    ));
    let mut bad = smooth_clip(10, 0);
    bad.set(3, 3, f64::NAN);
    let before = model.params.clone();
    let batch = vec![TrainSample::new(bad, &layout, None)];
    let err = pretrain_step(&mut model, &mut opt, &batch, &layout, &sched, &mut rng).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    assert!(bit_identical(&before, &model.params));
}

fn paired_batch(n: usize, frames: usize) -> Vec<TrainSample> {
    let layout = JointLayout::upper_body();
    (0..n)
        .map(|i| {
            let mel = randn(frames * 2, 16, 1.0, 100 + i as u64);
            TrainSample::new(smooth_clip(frames, i as u64), &layout, Some(mel))
        })
        .collect()
}

#[test]
fn first_finetune_loss_equals_frozen_expert_loss() {
    let layout = JointLayout::upper_body();
    let mut frozen = build_denoiser(tiny(12), 21).unwrap();
    randomize(&mut frozen.params, 0.1, 22);
    let mut cnet = ControlNetModel::from_expert(&frozen, 16, 23).unwrap();
    let mut opt = ControlNetOptimizer::new(AdamWConfig::with_lr(1e-5), &cnet);
    let batch = paired_batch(3, 12);
    let sched = schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let draws = draw_step(&batch, &sched, 0.0, &mut rng.clone());
    let expected = evaluate_pretrain_loss(&frozen, &batch, &draws, &layout, &sched).unwrap();
    let got = finetune_step(&frozen, &mut cnet, &mut opt, &batch, &layout, &sched, 0.0, &mut rng).unwrap();
    assert!((got.l_total - expected.l_total).abs() < 1e-10, "{got:?} vs {expected:?}");
    assert!((got.l_simple - expected.l_simple).abs() < 1e-10);
}

#[test]
fn finetuning_leaves_the_expert_untouched_and_learns() {
    let layout = JointLayout::upper_body();
    let frozen = build_denoiser(tiny(12), 31).unwrap();
    let snapshot = frozen.clone();
    let mut cnet = ControlNetModel::from_expert(&frozen, 16, 32).unwrap();
    let mut opt = ControlNetOptimizer::new(AdamWConfig::with_lr(1e-3), &cnet);
    let batch = paired_batch(1, 12);
    let sched = schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let losses: Vec<f64> = (0..200)
        .map(|_| {
            finetune_step(&frozen, &mut cnet, &mut opt, &batch, &layout, &sched, 0.1, &mut rng)
                .unwrap()
                .l_total
        })
        .collect();
    assert!(bit_identical(&frozen.params, &snapshot.params));
    assert_eq!(frozen, snapshot);
    let means = window_means(&losses, 50);
    assert!(means[3] < means[0], "{means:?}");
    let zero = cnet.moge.get("moge.0.zero.w");
    assert!(zero.frobenius_norm() > 0.0);
}

#[test]
fn contact_masks_must_match_the_clip() {
    let layout = micro_layout();
    let x = randn(4, 12, 1.0, 1);
    assert!(loss_total(&x, &x, &layout, &ContactMask::full(3, 1)).is_err());
}
