//! End-to-end checks of the command pipeline: synth -> derive -> train ->
//! eval -> predict, exercised through the same functions the binary calls.

use std::fs;
use std::path::{Path, PathBuf};

use psinet::cli::{self, RunConfig};
use psinet::data::load_mask_png;
use psinet::net::Variant;
use psinet::targets::connected_components;

fn config() -> RunConfig {
    RunConfig::default()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_str().unwrap().to_string(),
                fs::read(&path).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

fn synth_dataset(root: &Path, count: usize, size: usize, instances: (usize, usize), seed: u64) -> PathBuf {
    let out = root.join(format!("data_{seed}"));
    let outcome = cli::cmd_synth(&RunConfig {
        out: Some(out.clone()),
        count: Some(count),
        size: Some(size),
        instances: Some(instances),
        seed: Some(seed),
        ..config()
    })
    .unwrap();
    assert_eq!(outcome.written, count);
    out
}

#[test]
fn synth_is_reproducible_and_multi_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth_dataset(tmp.path(), 16, 32, (2, 3), 7);
    let b = synth_dataset(tmp.path().join("again").as_path(), 16, 32, (2, 3), 7);
    assert_eq!(dir_bytes(&a.join("images")), dir_bytes(&b.join("images")));
    assert_eq!(dir_bytes(&a.join("masks")), dir_bytes(&b.join("masks")));

    for (name, _) in dir_bytes(&a.join("masks")) {
        let mask = load_mask_png(&a.join("masks").join(&name)).unwrap();
        assert!(mask.labels().iter().all(|&l| l <= 1), "binary classes only");
        let components = connected_components(&mask.foreground_bitmap());
        assert!(
            (2..=3).contains(&components.count()),
            "{name}: {} components",
            components.count()
        );
    }
}

#[test]
fn derive_writes_targets_idempotently_and_names_bad_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dataset(tmp.path(), 10, 24, (1, 1), 3);
    let masks = data.join("masks");

    let run = |out: &Path| {
        cli::cmd_derive(&RunConfig {
            data: Some(masks.clone()),
            out: Some(out.to_path_buf()),
            classes: Some(2),
            ..config()
        })
        .unwrap()
    };
    let out1 = tmp.path().join("derived1");
    let outcome = run(&out1);
    assert_eq!(outcome.processed, 10);
    assert_eq!(dir_bytes(&out1.join("contours")).len(), 10);
    assert_eq!(dir_bytes(&out1.join("distances")).len(), 10);

    // Re-running produces byte-identical outputs.
    let out2 = tmp.path().join("derived2");
    run(&out2);
    assert_eq!(
        dir_bytes(&out1.join("contours")),
        dir_bytes(&out2.join("contours"))
    );
    assert_eq!(
        dir_bytes(&out1.join("distances")),
        dir_bytes(&out2.join("distances"))
    );

    // A mask with an out-of-range class is named in the error.
    let bad = masks.join("zbad.png");
    psinet::data::save_mask_png(&bad, 4, 4, &[0, 1, 2, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0])
        .unwrap();
    let err = cli::cmd_derive(&RunConfig {
        data: Some(masks.clone()),
        out: Some(tmp.path().join("derived3")),
        classes: Some(2),
        ..config()
    })
    .unwrap_err();
    assert!(err.to_string().contains("zbad.png"), "{err}");
}

fn train_once(data: &Path, out: &Path, variant: Variant, lambdas: Option<(f64, f64)>) -> cli::TrainOutcome {
    cli::cmd_train(&RunConfig {
        data: Some(data.to_path_buf()),
        out: Some(out.to_path_buf()),
        variant: Some(variant),
        epochs: Some(2),
        lr: Some(1e-3),
        batch: Some(4),
        seed: Some(5),
        classes: Some(2),
        stages: Some(2),
        base_channels: Some(4),
        lambda2: lambdas.map(|l| l.0),
        lambda3: lambdas.map(|l| l.1),
        ..config()
    })
    .unwrap()
}

#[test]
fn train_smoke_produces_checkpoint_and_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dataset(tmp.path(), 8, 16, (1, 1), 11);
    let out = tmp.path().join("run");
    let outcome = train_once(&data, &out, Variant::MCD, None);
    assert!(outcome.checkpoint.is_file());
    assert!(out.join("best.ckpt").is_file());
    let loss_csv = fs::read_to_string(&outcome.loss_csv).unwrap();
    assert!(loss_csv.starts_with("step,epoch,mask_loss,contour_loss,distance_loss,total\n"));
    // 8 samples, batch 4, 2 epochs -> 4 steps.
    assert_eq!(loss_csv.lines().count(), 1 + 4);
    let epochs_csv = fs::read_to_string(&outcome.epoch_csv).unwrap();
    assert!(epochs_csv.starts_with("epoch,dice,jaccard,hausdorff,hausdorff_undefined"));
    assert!(outcome.warnings.is_empty());
}

#[test]
fn train_warns_when_lambdas_target_missing_decoders() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dataset(tmp.path(), 8, 16, (1, 1), 12);
    let outcome = train_once(&data, &tmp.path().join("run"), Variant::M, Some((0.5, 0.5)));
    assert_eq!(outcome.warnings.len(), 2);
    assert!(outcome.warnings[0].contains("lambda2"));
    assert!(outcome.warnings[1].contains("lambda3"));
}

#[test]
fn train_same_seed_gives_identical_loss_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dataset(tmp.path(), 8, 16, (1, 1), 13);
    let a = train_once(&data, &tmp.path().join("a"), Variant::MC, None);
    let b = train_once(&data, &tmp.path().join("b"), Variant::MC, None);
    assert_eq!(fs::read(&a.loss_csv).unwrap(), fs::read(&b.loss_csv).unwrap());
}

#[test]
fn eval_writes_requested_width_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dataset(tmp.path(), 8, 16, (1, 1), 14);
    let run = tmp.path().join("run");
    let trained = train_once(&data, &run, Variant::MCD, None);

    let out = tmp.path().join("eval");
    let outcome = cli::cmd_eval(&RunConfig {
        checkpoint: Some(trained.checkpoint.clone()),
        data: Some(data.clone()),
        out: Some(out.clone()),
        widths: Some(vec![1.0, 3.0, 5.0]),
        ..config()
    })
    .unwrap();
    let per_sample = fs::read_to_string(&outcome.per_sample_csv).unwrap();
    assert!(per_sample.starts_with("sample_id,class,dice,jaccard,hausdorff,trimap_w1,trimap_w3,trimap_w5\n"));
    let curve = fs::read_to_string(&outcome.trimap_csv).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3, "one row per width:\n{curve}");

    // The ellipse-fit flag is accepted and produces a (possibly different)
    // but well-formed report over the same samples.
    let out2 = tmp.path().join("eval_ellipse");
    let fitted = cli::cmd_eval(&RunConfig {
        checkpoint: Some(trained.checkpoint),
        data: Some(data),
        out: Some(out2),
        widths: Some(vec![1.0, 3.0, 5.0]),
        ellipse_fit: Some(true),
        ..config()
    })
    .unwrap();
    assert_eq!(fitted.aggregate.entries, outcome.aggregate.entries);
}

#[test]
fn predict_writes_one_or_three_outputs_per_image() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dataset(tmp.path(), 8, 16, (1, 1), 15);
    let image = data.join("images").join("s0000.png");

    for (variant, expected) in [(Variant::M, 1usize), (Variant::MCD, 3usize)] {
        let run = tmp.path().join(format!("run_{variant}"));
        let trained = train_once(&data, &run, variant, None);
        let out = tmp.path().join(format!("pred_{variant}"));
        let outcome = cli::cmd_predict(
            &RunConfig {
                checkpoint: Some(trained.checkpoint),
                out: Some(out.clone()),
                ..config()
            },
            std::slice::from_ref(&image),
        )
        .unwrap();
        assert_eq!(outcome.outputs.len(), expected, "{variant}");
        let mask = load_mask_png(&out.join("s0000_mask.png")).unwrap();
        assert!(mask.labels().iter().all(|&l| l < 2), "class indices in range");
    }
}

#[test]
fn predict_rejects_wrong_input_size_naming_expected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth_dataset(tmp.path(), 8, 16, (1, 1), 16);
    let trained = train_once(&data, &tmp.path().join("run"), Variant::M, None);

    let other = synth_dataset(tmp.path().join("other").as_path(), 1, 32, (1, 1), 17);
    let err = cli::cmd_predict(
        &RunConfig {
            checkpoint: Some(trained.checkpoint),
            out: Some(tmp.path().join("pred")),
            ..config()
        },
        &[other.join("images").join("s0000.png")],
    )
    .unwrap_err();
    assert!(err.to_string().contains("16"), "names the expected size: {err}");
}

#[test]
fn config_file_merges_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("run.conf");
    fs::write(&path, "epochs=7\nlr=0.25\nvariant=md\n# comment\n\nwidths=1,2\n").unwrap();
    let file = RunConfig::from_file(&path).unwrap();
    assert_eq!(file.epochs, Some(7));
    assert_eq!(file.lr, Some(0.25));
    assert_eq!(file.variant, Some(Variant::MD));
    assert_eq!(file.widths, Some(vec![1.0, 2.0]));

    let flags = RunConfig {
        epochs: Some(3),
        ..RunConfig::default()
    };
    let merged = flags.over(file);
    assert_eq!(merged.epochs, Some(3), "flag wins");
    assert_eq!(merged.lr, Some(0.25), "file fills the gap");

    fs::write(&path, "epoch=7\n").unwrap();
    let err = RunConfig::from_file(&path).unwrap_err();
    assert!(err.to_string().contains("unknown key"), "{err}");
}
