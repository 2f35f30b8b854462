use super::*;
use crate::data::{generate_synthetic, Sample, SynthConfig};
use crate::net::{NetConfig, Variant};
use crate::targets::DeriveOptions;

fn tiny_config(variant: Variant, size: usize) -> NetConfig {
    let mut c = NetConfig::new(variant, 2);
    c.stages = 2;
    c.base_channels = 4;
    c.input_size = (size, size);
    c.in_channels = 1;
    c
}

fn synth_samples(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    let pairs = generate_synthetic(&SynthConfig::new(count, size, (1, 1), seed)).unwrap();
    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (image, mask))| {
            Sample::derive(format!("s{i:03}"), image, mask, &DeriveOptions::default()).unwrap()
        })
        .collect()
}

#[test]
fn split_seven_three() {
    let (train, test) = split_indices(10, 0.7, 1).unwrap();
    assert_eq!(train.len(), 7);
    assert_eq!(test.len(), 3);
}

#[test]
fn split_is_deterministic_disjoint_exhaustive() {
    let (a_train, a_test) = split_indices(23, 0.7, 5).unwrap();
    let (b_train, b_test) = split_indices(23, 0.7, 5).unwrap();
    assert_eq!(a_train, b_train);
    assert_eq!(a_test, b_test);
    let mut all: Vec<usize> = a_train.iter().chain(&a_test).copied().collect();
    all.sort();
    assert_eq!(all, (0..23).collect::<Vec<_>>());
}

#[test]
fn split_rejects_empty_sides() {
    assert!(split_indices(0, 0.7, 0).is_err());
    assert!(split_indices(1, 0.7, 0).is_err());
    assert!(split_indices(10, 0.01, 0).is_err());
    assert!(split_indices(10, 0.99, 0).is_err());
}

#[test]
fn adam_zero_gradients_leave_parameters_unchanged() {
    let mut state = AdamState::new();
    let hp = AdamParams {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    state.advance();
    let value = vec![1.5f32, -0.25, 0.0];
    let updated = state.update("w", &value, &[0.0, 0.0, 0.0], &hp).unwrap();
    assert_eq!(updated, value);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut state = AdamState::new();
    let hp = AdamParams {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    state.advance();
    let updated = state.update("w", &[1.0f32], &[1.0], &hp).unwrap();
    // First bias-corrected step: m_hat = v_hat = 1, so the move is
    // lr / (1 + eps).
    let expected = 1.0 - 0.1 / (1.0 + 1e-8);
    assert!((updated[0] as f64 - expected).abs() < 1e-6, "{updated:?}");
}

#[test]
fn adam_minimizes_a_parabola() {
    let mut state = AdamState::new();
    let hp = AdamParams {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let mut w = 1.0f32;
    for _ in 0..500 {
        let grad = 2.0 * w;
        state.advance();
        w = state.update("w", &[w], &[grad], &hp).unwrap()[0];
        if w.abs() < 0.01 {
            break;
        }
    }
    assert!(w.abs() < 0.01, "w = {w}");
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut state = AdamState::new();
    let hp = AdamParams {
        learning_rate: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    state.advance();
    assert!(state.update("w", &[1.0, 2.0], &[1.0], &hp).is_err());
    // Moment buffers remember their length.
    state.update("w", &[1.0, 2.0], &[0.1, 0.1], &hp).unwrap();
    assert!(state.update("w", &[1.0], &[0.1], &hp).is_err());
}

#[test]
fn one_epoch_of_eight_samples_at_batch_four_logs_two_steps() {
    let samples = synth_samples(8, 16, 21);
    let mut net = PsiNet::build(tiny_config(Variant::M, 16), 1).unwrap();
    let config = TrainConfig {
        epochs: 1,
        learning_rate: 1e-3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let log = train(&mut net, &samples, &samples[..2], &config, None).unwrap();
    assert_eq!(log.steps.len(), 2);
    assert_eq!(log.epochs.len(), 1);
}

#[test]
fn overfitting_four_samples_decreases_training_loss() {
    let samples = synth_samples(4, 16, 22);
    let mut net = PsiNet::build(tiny_config(Variant::MCD, 16), 2).unwrap();
    let config = TrainConfig {
        epochs: 20,
        learning_rate: 2e-3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    // Batch of 4 over 4 samples: one step per epoch, identical batch each
    // time, so step values are directly comparable.
    let log = train(&mut net, &samples, &samples[..1], &config, None).unwrap();
    assert_eq!(log.steps.len(), 20);
    assert!(
        log.steps[19].loss.total < log.steps[0].loss.total,
        "step 20 loss {} not below step 1 loss {}",
        log.steps[19].loss.total,
        log.steps[0].loss.total
    );
}

#[test]
fn training_is_bitwise_reproducible() {
    let samples = synth_samples(6, 16, 23);
    let config = TrainConfig {
        epochs: 2,
        learning_rate: 1e-3,
        batch_size: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = PsiNet::build(tiny_config(Variant::MCD, 16), 7).unwrap();
        let log = train(&mut net, &samples[..4], &samples[4..], &config, None).unwrap();
        let params: Vec<(String, Vec<f32>)> = net
            .parameters()
            .map(|(n, t)| (n.to_string(), t.data().to_vec()))
            .collect();
        let mut csv = Vec::new();
        log.write_loss_csv(&mut csv).unwrap();
        (params, csv)
    };
    let (pa, ca) = run();
    let (pb, cb) = run();
    for ((na, va), (nb, vb)) in pa.iter().zip(&pb) {
        assert_eq!(na, nb);
        assert_eq!(va, vb, "parameter {na} must match bitwise");
    }
    assert_eq!(ca, cb, "loss CSVs must match byte for byte");
}

#[test]
fn zero_auxiliary_weights_freeze_auxiliary_decoders() {
    let samples = synth_samples(4, 16, 24);
    let mut net = PsiNet::build(tiny_config(Variant::MCD, 16), 11).unwrap();
    let before: Vec<(String, Vec<f32>)> = net
        .parameters()
        .filter(|(n, _)| n.starts_with("dec.contour") || n.starts_with("dec.distance"))
        .map(|(n, t)| (n.to_string(), t.data().to_vec()))
        .collect();
    let config = TrainConfig {
        epochs: 10,
        learning_rate: 1e-3,
        batch_size: 4,
        weights: LossWeights::new(1.0, 0.0, 0.0).unwrap(),
        ..TrainConfig::default()
    };
    train(&mut net, &samples, &samples[..1], &config, None).unwrap();
    for (name, old) in before {
        let now = net.parameter(&name).unwrap();
        assert_eq!(now.data(), old.as_slice(), "{name} must stay bitwise unchanged");
    }
    // The mask path must have moved.
    let moved = net
        .parameters()
        .filter(|(n, _)| n.starts_with("enc.") || n.starts_with("dec.mask"))
        .any(|(_, t)| t.data().iter().any(|v| *v != 0.0));
    assert!(moved);
}

#[test]
fn checkpoint_roundtrip_preserves_forward_bitwise() {
    let samples = synth_samples(3, 16, 25);
    let mut net = PsiNet::build(tiny_config(Variant::MCD, 16), 13).unwrap();
    let config = TrainConfig {
        epochs: 1,
        learning_rate: 1e-3,
        batch_size: 2,
        ..TrainConfig::default()
    };
    train(&mut net, &samples, &samples[..1], &config, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut adam = AdamState::new();
    adam.advance();
    Checkpoint::capture(&net, &adam, &config).save(&path).unwrap();
    let (restored, adam2, config2) = Checkpoint::load(&path).unwrap().into_net().unwrap();
    assert_eq!(adam2.step_count(), 1);
    assert_eq!(config2.batch_size, config.batch_size);
    assert_eq!(config2.learning_rate, config.learning_rate);

    let before = predict_mask(&net, &samples[0]).unwrap();
    let after = predict_mask(&restored, &samples[0]).unwrap();
    assert_eq!(before.labels(), after.labels());
    for (name, t) in net.parameters() {
        assert_eq!(
            t.data(),
            restored.parameter(name).unwrap().data(),
            "parameter {name}"
        );
    }
}

#[test]
fn checkpoint_rejects_truncation_and_variant_mismatch() {
    let net = PsiNet::build(tiny_config(Variant::MD, 16), 13).unwrap();
    let config = TrainConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    Checkpoint::capture(&net, &AdamState::new(), &config).save(&path).unwrap();

    // Truncated file: no partial state comes back.
    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(Checkpoint::load(&cut), Err(Error::Checkpoint(_))));

    // Not a checkpoint at all.
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"PNG\x00 definitely not").unwrap();
    assert!(Checkpoint::load(&junk).is_err());

    // Variant mismatch refused.
    let checkpoint = Checkpoint::load(&path).unwrap();
    let mut mcd = PsiNet::build(tiny_config(Variant::MCD, 16), 13).unwrap();
    let err = checkpoint.restore_into(&mut mcd).unwrap_err();
    assert!(err.to_string().contains("variant"));
}

#[test]
fn gradients_are_zero_at_the_start_of_every_step() {
    // After an optimizer step the freshly created parameter tensors carry
    // zeroed gradient buffers; train() also zero-resets explicitly.
    let samples = synth_samples(2, 16, 26);
    let mut net = PsiNet::build(tiny_config(Variant::M, 16), 1).unwrap();
    let config = TrainConfig {
        epochs: 1,
        learning_rate: 1e-3,
        batch_size: 2,
        ..TrainConfig::default()
    };
    train(&mut net, &samples, &samples[..1], &config, None).unwrap();
    for (name, t) in net.parameters() {
        assert!(
            t.grad().unwrap().iter().all(|&g| g == 0.0),
            "{name} gradient must be zero after the step"
        );
    }
}
