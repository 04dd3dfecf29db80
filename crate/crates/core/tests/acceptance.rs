//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use gesture_core::config::RunConfig;
use gesture_core::controlnet::{controlnet_denoise, ControlNetModel};
use gesture_core::curation::{detect_abnormal_wrist, FlagReason, WristLimits};
use gesture_core::denoiser::{build_denoiser, denoise, DenoiserConfig, DenoiserModel};
use gesture_core::diffusion::{
    add_noise_with, cfg_combine, ddim_step, predicted_noise, sample, standard_normal, NoiseSchedule, SamplerConfig,
    ScheduleMode,
};
use gesture_core::metrics::beats::{beat_align, BeatSet};
use gesture_core::metrics::extractor::{ExtractorConfig, FeatureExtractor};
use gesture_core::metrics::frechet::{frechet_distance, GaussianStats};
use gesture_core::metrics::{diversity_from_latents, fgd_from_latents};
use gesture_core::motion::{
    euler_xyz_from_matrix, matrix_from_rot6d, rot6d_from_matrix, JointLayout, MotionClip, Rot6D, RotationMatrix,
};
use gesture_core::params::Params;
use gesture_core::pipeline::run_end_to_end;
use gesture_core::training::{
    finetune_clip_gradients, grad_check, loss_foot_contact, loss_simple, loss_total, loss_velocity,
    pretrain_clip_gradients, ContactMask, GradCheckOptions, StepDraw, TrainSample, LAMBDA_SIMPLE,
};
use gesture_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn randomize(p: &mut Params, std: f64, rng: &mut ChaCha8Rng) {
    for t in p.tensors_mut() {
        *t = Tensor::randn(t.rows(), t.cols(), std, rng);
    }
}

/// A tiny expert with every weight drawn at random, so no block is gated off.
fn active_expert(seed: u64) -> DenoiserModel {
    let mut m = build_denoiser(DenoiserConfig::tiny(), seed).unwrap();
    randomize(&mut m.params, 0.1, &mut ChaCha8Rng::seed_from_u64(seed + 1000));
    m
}

fn vp() -> NoiseSchedule {
    NoiseSchedule::cosine(1000, 0.008, ScheduleMode::VariancePreserving).unwrap()
}

fn criterion_1() -> Outcome {
    let expert = active_expert(1);
    let cnet = ControlNetModel::from_expert(&expert, 80, 2).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=40);
        let t = rng.random_range(1..=1000);
        let x_t = Tensor::randn(n, 258, 1.0, &mut rng);
        let mel = Tensor::randn(rng.random_range(3..=90), 80, 2.0, &mut rng);
        let audio = cnet.embed_audio(&mel, n).map_err(e)?;
        let a = denoise(&expert, &x_t, t).map_err(e)?.x0;
        let b = controlnet_denoise(&expert, &cnet, &x_t, t, &audio).map_err(e)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    check(worst <= 1e-6, || format!("max |diff| {worst:e} > 1e-6"))?;
    Ok(format!("100 triples, max |diff| {worst:e}"))
}

fn contact_layout() -> JointLayout {
    let mut l = JointLayout::generic("upper43-contact", 43);
    l.contact_joint_indices = vec![0, 5];
    l
}

fn contact_motion(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut x = Tensor::randn(n, 258, 0.5, rng);
    // Joint 0 is still over the first half, so the contact mask is mixed.
    for f in 1..n / 2 + 1 {
        for c in 0..6 {
            let v = x.get(0, c);
            x.set(f, c, v);
        }
    }
    x
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let layout = contact_layout();
    let sched = vp();
    let n = 4;
    let sample = TrainSample::new(contact_motion(n, &mut rng), &layout, Some(Tensor::randn(7, 80, 1.0, &mut rng)));
    check(sample.contact.get(0, 0) && !sample.contact.get(n - 1, 1), || "contact mask is not mixed".into())?;
    let draw = StepDraw {
        t: 300,
        eps: Tensor::randn(n, 258, 1.0, &mut rng),
        drop_condition: false,
    };
    let noised = add_noise_with(&sample.motion, draw.t, &sched, draw.eps.clone()).map_err(e)?;
    let opts = GradCheckOptions::default();

    let expert = active_expert(22);
    let (_, grads) = pretrain_clip_gradients(&expert, &sample, &draw, &layout, &sched).map_err(e)?;
    let loss = |s: &[Params]| {
        let m = DenoiserModel { config: expert.config, params: s[0].clone() };
        let x0 = denoise(&m, &noised.x_t, draw.t)?.x0;
        Ok(loss_total(&sample.motion, &x0, &layout, &sample.contact)?.l_total)
    };
    let d = grad_check(&[expert.params.clone()], &[grads], loss, opts).map_err(e)?;
    check(d.checked == expert.parameter_count(), || "denoiser check skipped parameters".into())?;
    check(d.max_rel_error < 1e-3, || format!("denoiser {d:?}"))?;

    let mut cnet = ControlNetModel::from_expert(&expert, 80, 23).map_err(e)?;
    randomize(&mut cnet.copy.params, 0.1, &mut rng);
    randomize(&mut cnet.moge, 0.1, &mut rng);
    randomize(&mut cnet.audio.params, 0.1, &mut rng);
    let (_, grads) = finetune_clip_gradients(&expert, &cnet, &sample, &draw, &layout, &sched).map_err(e)?;
    let mel = sample.mel.clone().unwrap();
    let loss = |s: &[Params]| {
        let mut c = cnet.clone();
        c.copy.params = s[0].clone();
        c.moge = s[1].clone();
        c.audio.params = s[2].clone();
        let audio = c.embed_audio(&mel, n)?;
        let x0 = controlnet_denoise(&expert, &c, &noised.x_t, draw.t, &audio)?;
        Ok(loss_total(&sample.motion, &x0, &layout, &sample.contact)?.l_total)
    };
    let stores = [cnet.copy.params.clone(), cnet.moge.clone(), cnet.audio.params.clone()];
    let c = grad_check(&stores, &grads, loss, opts).map_err(e)?;
    check(c.checked == cnet.parameter_count(), || "ControlNet check skipped parameters".into())?;
    check(c.max_rel_error < 1e-3, || format!("ControlNet {c:?}"))?;
    Ok(format!(
        "denoiser {} params max rel {:.2e}; ControlNet {} params max rel {:.2e}",
        d.checked, d.max_rel_error, c.checked, c.max_rel_error
    ))
}

fn max_orthonormality_error(m: &RotationMatrix) -> f64 {
    let mtm = m.matrix().transpose() * m.matrix();
    let mut worst = (m.matrix().determinant() - 1.0).abs();
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((mtm[(i, j)] - target).abs());
        }
    }
    worst
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut ortho, mut round, mut euler): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Ok(m) = matrix_from_rot6d(Rot6D::from_slice(&v)) else { continue };
        ortho = ortho.max(max_orthonormality_error(&m));
        let back = matrix_from_rot6d(rot6d_from_matrix(&m)).map_err(e)?;
        round = round.max((back.matrix() - m.matrix()).abs().max());

        let angles = [
            rng.random_range(-179.0..179.0),
            rng.random_range(-85.0..85.0),
            rng.random_range(-179.0..179.0),
        ];
        let r = RotationMatrix::from_euler_xyz_deg(angles);
        let d = euler_xyz_from_matrix(&r);
        let again = RotationMatrix::from_euler_xyz_deg(d.degrees);
        let angle_err = d.degrees.iter().zip(angles).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        euler = euler.max(angle_err).max((again.matrix() - r.matrix()).abs().max());
    }
    check(ortho <= 1e-5, || format!("orthonormality error {ortho:e}"))?;
    check(round <= 1e-6, || format!("round-trip error {round:e}"))?;
    check(euler <= 1e-4, || format!("Euler error {euler:e}"))?;
    Ok(format!("ortho {ortho:.1e}, round-trip {round:.1e}, Euler {euler:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for mode in [ScheduleMode::VariancePreserving, ScheduleMode::Additive] {
        let sched = NoiseSchedule::cosine(1000, 0.008, mode).map_err(e)?;
        for _ in 0..200 {
            let x0 = Tensor::randn(6, 12, 1.0, &mut rng);
            let eps = standard_normal(6, 12, &mut rng);
            let t = rng.random_range(1..=1000);
            let t_prev = rng.random_range(0..t);
            let s = add_noise_with(&x0, t, &sched, eps.clone()).map_err(e)?;
            let eps_hat = predicted_noise(&s.x_t, t, &x0, &sched).map_err(e)?;
            let stepped = ddim_step(&s.x_t, t, t_prev, &x0, &sched).map_err(e)?;
            let direct = add_noise_with(&x0, t_prev, &sched, eps.clone()).map_err(e)?.x_t;
            worst = worst.max(eps_hat.max_abs_diff(&eps)).max(stepped.max_abs_diff(&direct));
        }
    }
    check(worst <= 1e-5, || format!("inversion error {worst:e}"))?;

    let expert = active_expert(42);
    let cnet = ControlNetModel::from_expert(&expert, 80, 43).map_err(e)?;
    let audio = cnet.embed_audio(&Tensor::randn(20, 80, 1.0, &mut rng), 10).map_err(e)?;
    let guided = gesture_core::controlnet::Conditioned { expert: &expert, cnet: &cnet };
    let cfg = SamplerConfig { seed: 44, ..SamplerConfig::default() };
    let sched = vp();
    let a = sample(&expert, Some((&guided, &audio)), (10, 258), &cfg, &sched).map_err(e)?;
    let b = sample(&expert, Some((&guided, &audio)), (10, 258), &cfg, &sched).map_err(e)?;
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(bits(&a) == bits(&b), || "sampler is not bit-exact".into())?;

    let five = cfg_combine(&Tensor::scalar(2.0), &Tensor::scalar(1.0), 4.0).map_err(e)?;
    check(five.get(0, 0) == 5.0, || format!("cfg(2, 1; s=4) = {}", five.get(0, 0)))?;
    let c = Tensor::randn(3, 4, 1.0, &mut rng);
    let u = Tensor::randn(3, 4, 1.0, &mut rng);
    let combined = cfg_combine(&c, &u, 4.0).map_err(e)?;
    let by_hand = Tensor::from_fn(3, 4, |r, k| 4.0 * c.get(r, k) - 3.0 * u.get(r, k));
    check(combined.max_abs_diff(&by_hand) <= 1e-12, || "cfg arithmetic mismatch".into())?;
    Ok(format!("inversion max error {worst:.1e} (vp + additive), sampler bit-exact, cfg(2,1;4) = 5"))
}

fn oracle_simple(x: &Tensor, y: &Tensor) -> f64 {
    let (n, c) = x.shape();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..c {
            s += (x.get(i, k) - y.get(i, k)).powi(2);
        }
    }
    s / (n * c) as f64
}

fn oracle_velocity(x: &Tensor, y: &Tensor) -> f64 {
    let (n, c) = x.shape();
    let mut s = 0.0;
    for i in 1..n {
        for k in 0..c {
            let vx = x.get(i, k) - x.get(i - 1, k);
            let vy = y.get(i, k) - y.get(i - 1, k);
            s += (vx - vy).powi(2);
        }
    }
    s / ((n - 1) * c) as f64
}

fn oracle_foot(y: &Tensor, layout: &JointLayout, mask: &ContactMask) -> f64 {
    let (mut s, mut count) = (0.0, 0usize);
    for i in 0..y.rows() - 1 {
        for (ci, &j) in layout.contact_joint_indices.iter().enumerate() {
            if mask.get(i, ci) {
                for k in j * 6..j * 6 + 6 {
                    s += (y.get(i + 1, k) - y.get(i, k)).powi(2);
                    count += 1;
                }
            }
        }
    }
    if count == 0 { 0.0 } else { s / count as f64 }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let layout = contact_layout();
    let mut worst_compose: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=20);
        let x = contact_motion(n, &mut rng);
        let y = Tensor::randn(n, 258, 0.7, &mut rng);
        let mask = ContactMask::from_motion(&x, &layout);
        let r = loss_total(&x, &y, &layout, &mask).map_err(e)?;
        worst_compose = worst_compose.max((r.l_total - (LAMBDA_SIMPLE * r.l_simple + r.l_vel + r.l_foot)).abs());
        worst_oracle = worst_oracle
            .max((r.l_simple - oracle_simple(&x, &y)).abs())
            .max((r.l_vel - oracle_velocity(&x, &y)).abs())
            .max((r.l_foot - oracle_foot(&y, &layout, &mask)).abs())
            .max((loss_simple(&x, &y).map_err(e)? - r.l_simple).abs())
            .max((loss_velocity(&x, &y).map_err(e)? - r.l_vel).abs())
            .max((loss_foot_contact(&x, &y, &layout, &mask).map_err(e)? - r.l_foot).abs());
    }
    check(LAMBDA_SIMPLE == 10.0, || "lambda_simple is not 10".into())?;
    check(worst_compose <= 1e-10, || format!("recomposition error {worst_compose:e}"))?;
    check(worst_oracle <= 1e-10, || format!("oracle error {worst_oracle:e}"))?;

    let x = contact_motion(8, &mut rng);
    let full = ContactMask::full(8, 2);
    let same = loss_total(&x, &x, &layout, &ContactMask::empty(8, 2)).map_err(e)?;
    check(same.l_simple == 0.0 && same.l_vel == 0.0 && same.l_foot == 0.0 && same.l_total == 0.0, || {
        format!("perfect prediction gives {same:?}")
    })?;
    let shifted = x.map(|v| v + 0.25);
    check(loss_velocity(&x, &shifted).map_err(e)? < 1e-28, || "constant offset has velocity loss".into())?;
    let still = Tensor::from_fn(8, 258, |_, k| k as f64 * 0.01);
    check(loss_foot_contact(&x, &still, &layout, &full).map_err(e)? == 0.0, || "static prediction has foot loss".into())?;
    let y = Tensor::randn(8, 258, 1.0, &mut rng);
    check(loss_foot_contact(&x, &y, &layout, &ContactMask::empty(8, 2)).map_err(e)? == 0.0, || "empty mask has foot loss".into())?;
    let no_contacts = JointLayout::upper_body();
    let r = loss_total(&x, &y, &no_contacts, &ContactMask::from_motion(&x, &no_contacts)).map_err(e)?;
    check(r.l_foot == 0.0, || "layout without contact joints has foot loss".into())?;
    Ok(format!("recomposition {worst_compose:.1e}, oracle {worst_oracle:.1e}, zero cases hold"))
}

fn criterion_6() -> Outcome {
    let g = |m: f64, v: f64| GaussianStats::from_parts(vec![m], vec![v], 100).unwrap();
    let d1 = frechet_distance(&g(0.0, 1.0), &g(1.0, 1.0)).map_err(e)?;
    let d2 = frechet_distance(&g(0.0, 1.0), &g(0.0, 4.0)).map_err(e)?;
    check((d1 - 1.0).abs() <= 1e-8 && (d2 - 1.0).abs() <= 1e-8, || format!("closed forms gave {d1}, {d2}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let fe = FeatureExtractor::new(ExtractorConfig::new(258, 30), 62).map_err(e)?;
    let clips: Vec<Tensor> = (0..40).map(|_| Tensor::randn(30, 258, 0.5, &mut rng)).collect();
    let latents = fe.encode_all(&clips).map_err(e)?;
    let self_fgd = fgd_from_latents(&latents, &latents).map_err(e)?.fgd;
    check(self_fgd <= 1e-6, || format!("FGD(self, self) = {self_fgd:e}"))?;

    let beats = |v: &[f64]| BeatSet::new(v.to_vec()).unwrap();
    let one = beat_align(&beats(&[1.0, 2.0]), &beats(&[1.0, 2.0]), 0.1).map_err(e)?;
    let zero = beat_align(&beats(&[]), &beats(&[1.0]), 0.1).map_err(e)?;
    let half = beat_align(&beats(&[1.0]), &beats(&[1.1]), 0.1).map_err(e)?;
    check((one - 1.0).abs() <= 1e-10, || format!("identical beats gave {one}"))?;
    check(zero.abs() <= 1e-10, || format!("empty beats gave {zero}"))?;
    check((half - (-0.5f64).exp()).abs() <= 1e-10, || format!("one-sigma offset gave {half}"))?;

    let dup = Tensor::from_fn(20, 128, |_, k| (k as f64).sin());
    let div = diversity_from_latents(&dup, 500, 63).map_err(e)?;
    check(div == 0.0, || format!("diversity of duplicates {div}"))?;
    Ok(format!("Frechet 1 and 1, FGD(self) {self_fgd:.1e}, BA {one}/{zero}/{half:.6}, diversity 0"))
}

fn wrist_clip(n: usize, f: impl Fn(usize) -> RotationMatrix) -> MotionClip {
    let layout = JointLayout::upper_body();
    let wrists = layout.wrist_indices();
    MotionClip::from_rotations(n, 15.0, layout, |fr, j| {
        if wrists.contains(&j) { f(fr) } else { RotationMatrix::identity() }
    })
}

fn criterion_7() -> Outcome {
    let limits = WristLimits::default();
    let n = 600;
    // 20°/frame ramps keep every step below the 25° delta limit.
    let angle = wrist_clip(n, |f| {
        let a = (160.0 - 20.0 * (f as f64 - 300.0).abs()).max(0.0);
        RotationMatrix::from_euler_xyz_deg([0.0, 0.0, a])
    });
    let r = detect_abnormal_wrist(&angle, &angle.layout.wrist_indices(), &limits).map_err(e)?;
    check(!r.flags.is_empty() && r.flags.iter().all(|f| f.reason == FlagReason::AngleExceeds && f.frame == 300), || {
        format!("160° wrist flags: {:?}", r.flags)
    })?;
    check(r.discard_windows == vec![(225, 375)], || format!("angle windows {:?}", r.discard_windows))?;

    let jump = wrist_clip(n, |f| RotationMatrix::from_euler_xyz_deg([if f >= 200 { 30.0 } else { 0.0 }, 0.0, 0.0]));
    let r2 = detect_abnormal_wrist(&jump, &jump.layout.wrist_indices(), &limits).map_err(e)?;
    check(!r2.flags.is_empty() && r2.flags.iter().all(|f| f.reason == FlagReason::DeltaExceeds && f.frame == 200), || {
        format!("30°/frame flags: {:?}", r2.flags)
    })?;
    check(r2.discard_windows == vec![(125, 275)], || format!("jump windows {:?}", r2.discard_windows))?;

    for (s, w) in r.discard_windows.iter().chain(&r2.discard_windows) {
        check(w - s == 150 && *s > 0 && *w < n, || format!("window [{s}, {w}) is not a 150-frame interior span"))?;
    }

    let gentle = wrist_clip(n, |f| RotationMatrix::from_euler_xyz_deg([40.0 * (f as f64 * 0.1).sin(), 10.0, -20.0]));
    for clean in [wrist_clip(n, |_| RotationMatrix::identity()), gentle] {
        let r = detect_abnormal_wrist(&clean, &clean.layout.wrist_indices(), &limits).map_err(e)?;
        check(r.is_clean() && r.discard_windows.is_empty() && r.flagged_frames.is_empty(), || {
            format!("clean sequence flagged: {:?}", r.flags)
        })?;
    }
    Ok("160° → angle flag, 30°/frame → delta flag, windows [225,375) and [125,275), clean → empty".into())
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn desk_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default_desk();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn criterion_8(first_run: &Path) -> Outcome {
    let cfg = desk_config(first_run);
    let start = Instant::now();
    let report = run_end_to_end(&cfg).map_err(e)?;
    let elapsed = start.elapsed();
    let params = report.expert_parameters + report.controlnet_parameters;
    let pre = report.pretrain.ok_or("no pretraining log")?;
    let ft = report.finetune.ok_or("no finetuning log")?;
    let un = &report.eval.unconditional;
    let co = report.eval.conditional.as_ref().ok_or("no conditional samples")?;
    let gain = co.beat_alignment - un.beat_alignment;
    let detail = format!(
        "{params} params, {}+{} clips, loss -{:.0}% / -{:.0}%, FGD {:.3} -> {:.3}, BA {:.3} -> {:.3} (+{gain:.3}), {:.0}s",
        report.train_clips,
        report.held_out_clips,
        100.0 * pre.reduction,
        100.0 * ft.reduction,
        un.fgd,
        co.fgd,
        un.beat_alignment,
        co.beat_alignment,
        elapsed.as_secs_f64()
    );
    check(report.expert_parameters <= 500_000 && params <= 500_000, || format!("too many parameters: {detail}"))?;
    check(report.train_clips == 64 && pre.steps == 500 && ft.steps == 500, || format!("wrong run shape: {detail}"))?;
    check(pre.reduction >= 0.5 && ft.reduction >= 0.5, || format!("loss trend too weak: {detail}"))?;
    check(co.fgd < un.fgd, || format!("FGD did not improve: {detail}"))?;
    check(gain >= 0.05, || format!("BA gain below 0.05: {detail}"))?;
    check(elapsed < Duration::from_secs(30 * 60), || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn criterion_9(first_run: &Path, second_run: &Path) -> Outcome {
    if !first_run.join("report.json").is_file() {
        run_end_to_end(&desk_config(first_run)).map_err(e)?;
    }
    run_end_to_end(&desk_config(second_run)).map_err(e)?;
    let (a, b) = (files(first_run), files(second_run));
    check(a.keys().eq(b.keys()), || "runs wrote different file sets".into())?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    check(differing.is_empty(), || format!("files differ: {differing:?}"))?;
    let ckpts = a.keys().filter(|k| k.ends_with(".ckpt")).count();
    let samples = a.keys().filter(|k| k.starts_with("samples")).count();
    check(ckpts == 3 && samples > 0 && a.contains_key("report.json"), || "artifacts missing".into())?;
    Ok(format!("{} files identical ({ckpts} checkpoints, {samples} samples, report)", a.len()))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let work = tempfile::tempdir().expect("temporary directory");
    let (run_a, run_b) = (work.path().join("run-a"), work.path().join("run-b"));
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "zero-initialization equivalence", Box::new(criterion_1)),
        (2, "gradient correctness", Box::new(criterion_2)),
        (3, "rotation suite", Box::new(criterion_3)),
        (4, "diffusion algebra", Box::new(criterion_4)),
        (5, "loss suite", Box::new(criterion_5)),
        (6, "metric correctness", Box::new(criterion_6)),
        (7, "curation thresholds", Box::new(criterion_7)),
        (8, "desk-scale learning trend", Box::new(|| criterion_8(&run_a))),
        (9, "end-to-end replayability", Box::new(|| criterion_9(&run_a, &run_b))),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run()))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id} [PRIMARY] {name}: PASS ({d}) [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id} [PRIMARY] {name}: FAIL ({d}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
