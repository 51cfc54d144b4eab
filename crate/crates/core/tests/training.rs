use polypseg::dataset::{generate_synthetic_sample, ImageSample, SampleLabel};
use polypseg::training::{
    load_checkpoint, save_checkpoint, train, validate, Checkpoint, TrainConfig, MIN_LEARNING_RATE, WEIGHTS_FILE,
};
use polypseg::zoo::{build_model, image_to_batch, ArchitectureKind, ModelConfig};
use polypseg::Error;

fn small(kind: ArchitectureKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(kind).with_seed(3);
    cfg.encoder_channels = vec![8, 8, 16, 16, 32];
    cfg.blocks_per_stage = 1;
    cfg.decoder_channels = match kind {
        ArchitectureKind::UNet | ArchitectureKind::MANet => vec![16, 16, 8, 8, 8],
        ArchitectureKind::FPN => vec![16, 8],
        ArchitectureKind::PSPNet => vec![16],
        ArchitectureKind::LinkNet => vec![8],
    };
    cfg
}

fn samples(base: u64, n: u64) -> Vec<ImageSample> {
    (0..n)
        .map(|i| {
            let label = if i % 4 == 3 { SampleLabel::NonPolyps } else { SampleLabel::Polyps };
            generate_synthetic_sample(base + i, label, (64, 64)).unwrap()
        })
        .collect()
}

fn quick(epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 2, patience, seed: 11, ..Default::default() }
}

#[test]
fn same_seed_gives_identical_history_and_weights() {
    let (tr, va) = (samples(100, 4), samples(200, 2));
    let run = || {
        let model = build_model(&small(ArchitectureKind::LinkNet)).unwrap();
        train(&model, &tr, &va, &quick(3, 5)).unwrap()
    };
    let (a_ckpt, a_hist) = run();
    let (b_ckpt, b_hist) = run();
    assert_eq!(a_hist.without_timing(), b_hist.without_timing());
    assert_eq!(a_ckpt, b_ckpt);
}

#[test]
fn best_checkpoint_is_first_maximum_and_patience_is_respected() {
    let (tr, va) = (samples(300, 4), samples(400, 2));
    for kind in [ArchitectureKind::UNet, ArchitectureKind::FPN] {
        let model = build_model(&small(kind)).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-2, ..quick(12, 2) };
        let (ckpt, hist) = train(&model, &tr, &va, &cfg).unwrap();
        let dice: Vec<f64> = hist.records.iter().map(|r| r.val_dice).collect();
        let best = dice.iter().copied().fold(f64::MIN, f64::max);
        let first_best = dice.iter().position(|&d| d == best).unwrap() + 1;
        assert_eq!(ckpt.meta.epoch, first_best, "{kind}");
        assert_eq!(ckpt.meta.val_dice, best);
        if hist.stopped_early {
            assert_eq!(hist.records.len() - first_best, cfg.patience, "{kind}");
        } else {
            assert_eq!(hist.records.len(), cfg.epochs, "{kind}");
        }
        let lrs: Vec<f64> = hist.records.iter().map(|r| r.learning_rate).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&lr| lr >= MIN_LEARNING_RATE));
        // The model is left holding the best weights.
        assert_eq!(model.params().to_bytes().unwrap(), ckpt.params);
        assert_eq!(validate(&model, &va, &cfg).unwrap().dice, best);
    }
}

#[test]
fn training_loss_falls_on_a_fixed_set() {
    let set = samples(500, 4);
    let model = build_model(&small(ArchitectureKind::UNet)).unwrap();
    let cfg = TrainConfig { learning_rate: 3e-3, batch_size: 4, ..quick(15, 15) };
    let (_, hist) = train(&model, &set, &set, &cfg).unwrap();
    let first = hist.records.first().unwrap().train_loss;
    let last = hist.records.last().unwrap().train_loss;
    assert!(last < 0.8 * first, "{first} -> {last}");
    assert!(hist.records.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
}

#[test]
fn zero_epochs_keeps_initial_weights() {
    let set = samples(600, 2);
    let model = build_model(&small(ArchitectureKind::PSPNet)).unwrap();
    let before = model.params().to_bytes().unwrap();
    let (ckpt, hist) = train(&model, &set, &set, &quick(0, 3)).unwrap();
    assert_eq!(ckpt.meta.epoch, 0);
    assert!(hist.records.is_empty());
    assert_eq!(ckpt.params, before);
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let set = samples(700, 2);
    let model = build_model(&small(ArchitectureKind::MANet)).unwrap();
    let (ckpt, _) = train(&model, &set, &set, &quick(1, 3)).unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let (restored, meta) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(meta, ckpt.meta);
    let x = image_to_batch(&[&set[0].image]).unwrap();
    let a = model.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
    let b = restored.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
    assert_eq!(a, b);

    let weights = dir.path().join(WEIGHTS_FILE);
    let mut bytes = std::fs::read(&weights).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&weights, bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Corrupt(_))));

    let mut broken: Checkpoint = ckpt.clone();
    broken.meta.hash = "0".repeat(64);
    assert!(matches!(broken.restore(), Err(Error::Corrupt(_))));
}

#[test]
fn mixed_precision_training_stays_finite() {
    let set = samples(800, 2);
    let model = build_model(&small(ArchitectureKind::LinkNet)).unwrap();
    let cfg = TrainConfig { mixed_precision: true, ..quick(2, 3) };
    let (_, hist) = train(&model, &set, &set, &cfg).unwrap();
    assert!(hist.records.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let set = samples(900, 2);
    let model = build_model(&small(ArchitectureKind::UNet)).unwrap();
    for cfg in [
        TrainConfig { batch_size: 0, ..quick(1, 1) },
        TrainConfig { patience: 0, ..quick(1, 1) },
        TrainConfig { learning_rate: -1.0, ..quick(1, 1) },
    ] {
        assert!(train(&model, &set, &set, &cfg).is_err());
    }
    assert!(train(&model, &[], &set, &quick(1, 1)).is_err());
}
