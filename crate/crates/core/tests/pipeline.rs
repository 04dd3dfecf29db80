use std::path::Path;

use gesture_core::config::RunConfig;
use gesture_core::export::read_loss_log;
use gesture_core::pipeline::{self, run_end_to_end, RunPaths};
use gesture_core::Error;

fn small(out: &Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
seed = 5
[model]
max_frames = 30
[data]
train_count = 8
held_out = 4
frames = 30
[pretrain]
epochs = 1
max_steps = 3
batch_size = 4
[finetune]
epochs = 1
max_steps = 3
batch_size = 4
[sampler]
steps = 4
[eval]
generated = 4
extractor_steps = 5
latent_dim = 8
hidden = 8
diversity_pairs = 10
[paths]
out = "{}"
{extra}
"#,
        out.display()
    );
    let mut cfg = RunConfig::parse(&text).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn with_epochs(out: &Path, epochs: usize) -> RunConfig {
    let mut cfg = small(out, "");
    cfg.pretrain.epochs = epochs;
    cfg.finetune.epochs = epochs;
    cfg
}

#[test]
fn zero_epoch_run_has_coinciding_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_epochs(dir.path(), 0);
    let report = run_end_to_end(&cfg).unwrap();
    assert!(report.pretrain.is_none() && report.finetune.is_none());
    assert!(report.eval.max_sample_difference.unwrap() <= 1e-9);
    let (u, c) = (&report.eval.unconditional, report.eval.conditional.as_ref().unwrap());
    assert!((u.beat_alignment - c.beat_alignment).abs() <= 1e-12);
    assert!((u.fgd - c.fgd).abs() <= 1e-6);
    assert!(report.numbers().iter().all(|v| v.is_finite()));
    let paths = RunPaths::new(dir.path());
    assert!(read_loss_log(&paths.pretrain_log()).unwrap().is_empty());
}

#[test]
fn short_run_writes_every_artifact_with_finite_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_epochs(dir.path(), 1);
    let report = run_end_to_end(&cfg).unwrap();
    assert_eq!(report.pretrain.unwrap().steps, 2);
    assert!(report.numbers().iter().all(|v| v.is_finite()));
    let paths = RunPaths::new(dir.path());
    for p in [paths.expert(), paths.controlnet(), paths.extractor(), paths.report(), paths.config()] {
        assert!(p.is_file(), "{} missing", p.display());
    }
    assert_eq!(read_loss_log(&paths.finetune_log()).unwrap().len(), 2);
    let samples = pipeline::read_samples(&paths).unwrap();
    assert_eq!(samples.unconditional.len(), 4);
    assert_eq!(samples.conditional.unwrap().len(), 4);
    let reloaded = RunConfig::load(&paths.config()).unwrap();
    assert_eq!(reloaded.file, cfg.file);
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with_epochs(dir.path(), 1);
    let paths = RunPaths::new(dir.path());
    let data = pipeline::load_data(&cfg, &paths).unwrap();
    assert_eq!((data.train.len(), data.held_out.len()), (8, 4));
    let (model, _, _) = pipeline::pretrain(&cfg, &data).unwrap();
    let hash = pipeline::save_expert(&paths.expert(), &model, None).unwrap();
    let (expert, loaded_hash) = pipeline::load_expert(&paths.expert()).unwrap();
    assert_eq!(hash, loaded_hash);
    let (cnet, _, _) = pipeline::finetune(&cfg, &data, &expert).unwrap();
    pipeline::save_controlnet(&paths.controlnet(), &cnet, &hash, None).unwrap();

    // A retrained expert no longer matches the ControlNet's recorded hash.
    let mut other = cfg.clone();
    other.pretrain.max_steps = Some(1);
    let (model2, _, _) = pipeline::pretrain(&other, &data).unwrap();
    let hash2 = pipeline::save_expert(&paths.expert(), &model2, None).unwrap();
    let (expert2, _) = pipeline::load_expert(&paths.expert()).unwrap();
    let err = pipeline::load_controlnet_file(&paths.controlnet(), &expert2, &hash2).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let empty = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), "");
    cfg.data_dir = Some(empty.path().to_path_buf());
    let err = run_end_to_end(&cfg).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "generate"), "{err}");

    let mut cfg = small(dir.path(), "");
    cfg.pretrain.optimizer.learning_rate = 1e300;
    let err = run_end_to_end(&cfg).unwrap_err();
    assert!(err.to_string().starts_with("pretrain stage failed"), "{err}");
    assert!(matches!(&err, Error::Stage { source, .. } if matches!(**source, Error::NonFiniteLoss { .. })));
}
