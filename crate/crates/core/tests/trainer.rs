mod common;

use zrudc::gridnet::{GridNetConfig, GridNetParams, PoolKernel};
use zrudc::image::save_image;
use zrudc::losses::LossWeights;
use zrudc::tensor::ops;
use zrudc::trainer::checkpoint::{decode, encode};
use zrudc::trainer::{
    self, degrade, load_checkpoint, load_checkpoint_with, save_checkpoint, synthesize_scene, CheckpointError,
    DegradeConfig, TrainConfig, TrainError,
};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 2,
        crop: 0,
        seed: 1,
        net: GridNetConfig {
            widths: vec![3, 6],
            proxy_size: 32,
        },
        weights: LossWeights {
            spa_region: 4,
            exp_region: 8,
            dcp_patch: 5,
            ..LossWeights::default()
        },
        ..TrainConfig::default()
    }
}

fn scenes(n: usize, side: usize) -> Vec<zrudc::image::ImageRGB> {
    (0..n).map(|i| synthesize_scene(side, side, 200 + i as u64)).collect()
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = GridNetConfig {
        widths: vec![5, 7, 9],
        proxy_size: 64,
    };
    let params = GridNetParams::<f32>::init(net.clone(), 3).unwrap();
    let path = dir.path().join("p.zrud");
    save_checkpoint(&params, &path).unwrap();
    let back = load_checkpoint_with(&path, 64).unwrap();
    assert_eq!(back, params);
    let default_proxy = load_checkpoint(&path).unwrap();
    assert_eq!(default_proxy.config().widths, net.widths);
    assert_eq!(default_proxy.tensors(), params.tensors());
}

#[test]
fn every_truncation_is_rejected() {
    let params = GridNetParams::<f32>::init(
        GridNetConfig {
            widths: vec![2],
            proxy_size: 8,
        },
        0,
    )
    .unwrap();
    let bytes = encode(&params).unwrap();
    assert_eq!(decode(&bytes, 8).unwrap(), params);
    for len in 0..bytes.len() {
        let err = decode(&bytes[..len], 8).unwrap_err();
        assert!(
            matches!(err, CheckpointError::Truncated(_) | CheckpointError::BadMagic(_)),
            "prefix {len}: {err}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode(&extra, 8).is_err());
}

#[test]
fn dataset_loading_is_sorted_and_rejects_empty() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = scenes(3, 12);
    for (name, img) in ["b.png", "a.ppm", "c.png"].iter().zip(&imgs) {
        if name.ends_with("ppm") {
            zrudc::image::save_ppm(img, dir.path().join(name)).unwrap();
        } else {
            save_image(img, dir.path().join(name)).unwrap();
        }
    }
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let loaded = trainer::load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    assert_eq!(loaded[0].to_rgb8(), imgs[1].to_rgb8());
    assert_eq!(loaded[1].to_rgb8(), imgs[0].to_rgb8());

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(
        trainer::load_dataset(empty.path()),
        Err(TrainError::EmptyDataset(_))
    ));
}

#[test]
fn training_replays_exactly() {
    let images = scenes(4, 24);
    let cfg = tiny_config();
    let a = trainer::train(&images, &cfg, None, |_, _| {}).unwrap();
    let b = trainer::train(&images, &cfg, None, |_, _| {}).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(encode(&a.params).unwrap(), encode(&b.params).unwrap());
    assert_eq!(trainer::format_history(&a.epochs), trainer::format_history(&b.epochs));
    assert_eq!(a.epochs.len(), 3);
    assert!(a.steps.iter().all(|r| r.fields().iter().all(|v| v.is_finite())));

    let c = trainer::train(&images, &TrainConfig { seed: 2, ..cfg }, None, |_, _| {}).unwrap();
    assert_ne!(a.steps, c.steps);
}

#[test]
fn zero_objective_leaves_identity_untouched() {
    let images = scenes(2, 16);
    let cfg = TrainConfig {
        weights: LossWeights {
            spa_region: 4,
            exp_region: 8,
            dcp_patch: 5,
            ..LossWeights::zero()
        },
        ..tiny_config()
    };
    let init = GridNetParams::identity(cfg.net.clone(), 0).unwrap();
    let out = trainer::train(&images, &cfg, Some(init.clone()), |_, _| {}).unwrap();
    assert_eq!(out.params, init);
    assert!(out.epochs.windows(2).all(|w| w[0] == w[1]));
}

/// Without the dark-channel term, training on clean scenes keeps the
/// exposure term near where it started. Allowed slack: 10% plus 0.01.
#[test]
fn exposure_stays_stable_without_dark_channel_term() {
    let images = scenes(4, 32);
    let cfg = TrainConfig {
        epochs: 20,
        weights: LossWeights {
            w_dcp: 0.0,
            ..tiny_config().weights
        },
        ..tiny_config()
    };
    let out = trainer::train(&images, &cfg, None, |_, _| {}).unwrap();
    let initial = out.steps[0].terms.exp;
    let tail = &out.steps[out.steps.len() - 4..];
    let late = tail.iter().map(|r| r.terms.exp).sum::<f64>() / tail.len() as f64;
    assert!(late <= 1.1 * initial + 0.01, "exposure {initial} -> {late}");
}

#[test]
fn poisoned_start_is_named() {
    let cfg = tiny_config();
    let mut init = GridNetParams::<f32>::init(cfg.net.clone(), 0).unwrap();
    init.get_mut("enc0.conv0.bias").unwrap().data_mut()[1] = f32::INFINITY;
    let err = trainer::train(&scenes(2, 16), &cfg, Some(init), |_, _| {}).unwrap_err();
    match err {
        TrainError::NonFinite { term, step } => {
            assert_eq!(step, 1);
            assert!(["dcp", "spa", "exp", "cc", "tv", "dbc", "total", "gradient"].contains(&term));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let images = scenes(1, 16);
    let bad = [
        TrainConfig {
            batch_size: 0,
            ..tiny_config()
        },
        TrainConfig {
            crop: 4,
            ..tiny_config()
        },
        TrainConfig {
            adam: trainer::AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            ..tiny_config()
        },
        TrainConfig {
            adam: trainer::AdamConfig {
                beta1: 1.0,
                ..Default::default()
            },
            ..tiny_config()
        },
        TrainConfig {
            net: GridNetConfig {
                widths: vec![],
                proxy_size: 8,
            },
            ..tiny_config()
        },
    ];
    for cfg in bad {
        assert!(trainer::train(&images, &cfg, None, |_, _| {}).is_err(), "{cfg:?}");
    }
    assert!(matches!(
        trainer::train(&[], &tiny_config(), None, |_, _| {}),
        Err(TrainError::EmptyDataset(_))
    ));
}

#[test]
fn haze_raises_dark_channel_over_generator_corpus() {
    for seed in 0..8 {
        let clean = synthesize_scene(48, 48, seed);
        let hazy = degrade(
            &clean,
            &DegradeConfig {
                seed,
                vignette: 0.0,
                blur_sigma: 0.0,
                ..DegradeConfig::default()
            },
        );
        let mean_dark =
            |img: &zrudc::image::ImageRGB| ops::mean_of(ops::dark_channel(img.pixels(), 15).unwrap().data());
        assert!(mean_dark(&hazy) > mean_dark(&clean), "seed {seed}");
    }
}

#[test]
fn degrade_is_a_function_of_seed() {
    let clean = synthesize_scene(32, 32, 1);
    let cfg = DegradeConfig {
        seed: 9,
        ..DegradeConfig::default()
    };
    assert_eq!(degrade(&clean, &cfg).pixels(), degrade(&clean, &cfg).pixels());
    let other = DegradeConfig {
        seed: 10,
        ..cfg.clone()
    };
    assert_ne!(degrade(&clean, &cfg).pixels(), degrade(&clean, &other).pixels());
    assert_eq!(degrade(&clean, &DegradeConfig::identity()).pixels(), clean.pixels());
}

#[test]
fn pool_kernel_changes_trained_output() {
    let images = scenes(3, 24);
    let out = trainer::train(&images, &tiny_config(), None, |_, _| {}).unwrap();
    let a = zrudc::slicing::enhance(&images[0], &out.params, PoolKernel::Off).unwrap();
    let b = zrudc::slicing::enhance(&images[0], &out.params, PoolKernel::Size(3)).unwrap();
    assert_ne!(a.pixels(), b.pixels());
}
