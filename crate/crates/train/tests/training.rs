use cine_core::metrics::nrmse;
use cine_core::slicing::{build_dataset, DatasetSpec, LabelMode, Perspective, VolumePair};
use cine_nn::{load_checkpoint, save_checkpoint, UNet};
use cine_train::{lr_schedule, predict_volume, train, train_until, PredictOptions, Target, TrainConfig};
use ndarray::Array3;

/// Smooth moving blob plus a fixed streak pattern standing in for the artefact.
fn toy_pair(subject: usize, n: usize, nt: usize) -> VolumePair {
    let phase = subject as f64 * 0.7;
    let target = Array3::from_shape_fn((n, n, nt), |(x, y, t)| {
        let cx = n as f64 / 2.0 + 2.0 * (phase + t as f64 * 0.4).sin();
        let r2 = (x as f64 - cx).powi(2) + (y as f64 - n as f64 / 2.0).powi(2);
        (-r2 / (n as f64 * 1.5)).exp()
    });
    let input = Array3::from_shape_fn((n, n, nt), |(x, y, t)| {
        target[[x, y, t]] + 0.15 * ((x as f64 * 1.3 + y as f64 * 0.7 + t as f64 * 2.1 + phase).sin())
    });
    VolumePair { subject, slice: 0, input, target }
}

fn config(domain: Perspective, target: Target, steps: usize) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        batch_size: 2,
        stages: 2,
        convs_per_stage: 1,
        base_features: 4,
        lr_start: 1e-3,
        lr_end: 1e-4,
        seed: 5,
        ..TrainConfig::desk(domain, target)
    }
}

fn dataset(pairs: &[VolumePair], domain: Perspective, mode: LabelMode) -> Vec<cine_core::slicing::SliceSample> {
    build_dataset(pairs, &DatasetSpec { perspective: domain, crop: 0, stride: 1, label_mode: mode }).unwrap()
}

#[test]
fn single_sample_is_overfit() {
    let cfg = TrainConfig {
        stages: 1,
        convs_per_stage: 2,
        batch_size: 1,
        total_steps: 500,
        lr_start: 2e-3,
        lr_end: 2e-4,
        ..config(Perspective::XtYt, Target::ImageLearning, 500)
    };
    let data = dataset(&[toy_pair(0, 8, 8)], Perspective::XtYt, cfg.label_mode());
    let one = vec![data[3].clone()];
    let out = train(&one, &[], &cfg, None).unwrap();
    let first = out.trace.first_train_loss().unwrap();
    let last = out.trace.last_train_loss().unwrap();
    assert_eq!(out.trace.rows.len(), 500);
    assert!(last < 0.1 * first, "{last} vs {first}");
}

#[test]
fn loss_decreases_for_every_configuration() {
    let pairs: Vec<VolumePair> = (0..2).map(|s| toy_pair(s, 8, 8)).collect();
    for domain in [Perspective::Xy, Perspective::XtYt] {
        for target in [Target::ImageLearning, Target::ResidualLearning] {
            let cfg = config(domain, target, 60);
            let data = dataset(&pairs, domain, cfg.label_mode());
            let toy: Vec<_> = data.into_iter().step_by(3).take(4).collect();
            let out = train(&toy, &toy, &cfg, None).unwrap();
            let vals: Vec<f64> = out.trace.validation().map(|(_, v)| v).collect();
            let head: f64 = out.trace.rows[..4].iter().map(|r| r.train_loss).sum();
            let tail: f64 = out.trace.rows[56..].iter().map(|r| r.train_loss).sum();
            assert!(tail < head, "{domain} {target}: {tail} vs {head}");
            assert_eq!(vals.len(), 60 / cfg.val_every());
            assert!(vals.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Perspective::XtYt, Target::ImageLearning, 30);
    let data = dataset(&[toy_pair(1, 8, 8)], Perspective::XtYt, cfg.label_mode());
    let mut files = Vec::new();
    for run in 0..2 {
        let mut out = train(&data, &data, &cfg, None).unwrap();
        let path = dir.path().join(format!("run{run}.ckpt"));
        save_checkpoint(&path, &mut out.net, &cfg.to_kv()).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);

    let other = TrainConfig { seed: 6, ..cfg.clone() };
    let mut a = train(&data, &[], &other, None).unwrap();
    let mut b = train(&data, &[], &cfg, None).unwrap();
    assert_ne!(a.net.param_vec(), b.net.param_vec());
}

#[test]
fn targets_differ_from_same_seed() {
    let pairs = [toy_pair(2, 8, 8)];
    let img = config(Perspective::XtYt, Target::ImageLearning, 20);
    let res = config(Perspective::XtYt, Target::ResidualLearning, 20);
    let mut a = train(&dataset(&pairs, img.domain, img.label_mode()), &[], &img, None).unwrap();
    let mut b = train(&dataset(&pairs, res.domain, res.label_mode()), &[], &res, None).unwrap();
    assert_ne!(a.net.param_vec(), b.net.param_vec());
}

#[test]
fn resume_continues_schedule_and_stream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Perspective::XtYt, Target::ResidualLearning, 24);
    let data = dataset(&[toy_pair(3, 8, 8)], Perspective::XtYt, cfg.label_mode());
    let mut whole = train(&data, &[], &cfg, None).unwrap();

    let mut partial = train_until(&data, &[], &cfg, None, 10).unwrap();
    assert_eq!(partial.steps_done, 10);
    let path = dir.path().join("mid.ckpt");
    let mut meta = cfg.to_kv();
    meta.set("train.step", partial.steps_done);
    save_checkpoint(&path, &mut partial.net, &meta).unwrap();

    let loaded = load_checkpoint::<f32>(&path).unwrap();
    let step: usize = loaded.meta.require("train.step").unwrap();
    let mut resumed = train(&data, &[], &cfg, Some((loaded.net, step))).unwrap();
    assert_eq!(resumed.net.param_vec(), whole.net.param_vec());
    assert_eq!(resumed.trace.rows.first().unwrap().step, 11);
    let lrs: Vec<f64> = resumed.trace.rows.iter().map(|r| r.lr).collect();
    let expected: Vec<f64> = (10..24).map(|s| lr_schedule(s, 24, cfg.lr_start, cfg.lr_end)).collect();
    assert_eq!(lrs, expected);
}

#[test]
fn memorized_sample_is_reproduced() {
    // one channel-stacked sample covers the whole volume
    let pair = toy_pair(4, 8, 4);
    let cfg = TrainConfig {
        stages: 2,
        convs_per_stage: 2,
        base_features: 8,
        batch_size: 1,
        lr_start: 3e-3,
        lr_end: 3e-4,
        ..config(Perspective::Xyt, Target::ResidualLearning, 4000)
    };
    let data = dataset(std::slice::from_ref(&pair), Perspective::Xyt, cfg.label_mode());
    assert_eq!(data.len(), 1);
    let mut out = train(&data, &[], &cfg, None).unwrap();
    let opts = PredictOptions { window: 8, stride: 8, chunk: 1 };
    let est = predict_volume(&mut out.net, &pair.input, Perspective::Xyt, Target::ResidualLearning, opts).unwrap();
    let err = nrmse(&pair.target.view(), &est.volume.view()).unwrap();
    let before = nrmse(&pair.target.view(), &pair.input.view()).unwrap();
    let last = out.trace.last_train_loss().unwrap();
    assert!(err < 0.05, "NRMSE {err} (input {before}, final loss {last}, first {})", out.trace.first_train_loss().unwrap());
}

#[test]
fn zero_trunk_predictions() {
    let pair = toy_pair(0, 16, 8);
    let cfg = config(Perspective::XtYt, Target::ResidualLearning, 1);
    let mut net = UNet::<f32>::new(cfg.unet_config(8), 0).unwrap();
    net.zero_trunk();
    let opts = PredictOptions { window: 8, stride: 4, chunk: 5 };
    let res = predict_volume(&mut net, &pair.input, Perspective::XtYt, Target::ResidualLearning, opts).unwrap();
    assert!(res.coverage.iter().all(|&c| c > 0));
    let x_i = pair.input.mapv(|v| v as f32 as f64);
    assert_eq!(res.volume, x_i);
    let img = predict_volume(&mut net, &pair.input, Perspective::XtYt, Target::ImageLearning, opts).unwrap();
    assert!(img.volume.iter().all(|&v| v.abs() < 1e-6));
}
