//! Command implementations behind the binary: ground-truth derivation,
//! synthetic data generation, training, evaluation, and prediction. Each
//! command is a plain function over [`RunConfig`] so the pipeline is
//! drivable (and testable) without spawning a process.

mod config;

pub use config::{parse_instances, parse_widths, RunConfig};

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{
    self, generate_synthetic, load_dataset, load_image_png, load_mask_png, save_distance_png,
    save_image_png, save_mask_png, Sample, SynthConfig,
};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::metrics::{self, DEFAULT_TRIMAP_WIDTHS};
use crate::net::{NetConfig, PsiNet, Variant};
use crate::targets::{derive_targets_with, DeriveOptions, DistanceMap, Normalization};
use crate::tensor::Graph;
use crate::trainer::{self, Checkpoint, TrainConfig};

fn require<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn derive_options(config: &RunConfig) -> DeriveOptions {
    DeriveOptions {
        contour_radius: config.contour_radius.unwrap_or(5.0),
        normalization: match config.distance_divisor {
            Some(d) => Normalization::FixedDivisor(d),
            None => Normalization::PerImageMax,
        },
    }
}

/// Outcome of `derive`: how many masks produced target files.
#[derive(Debug)]
pub struct DeriveOutcome {
    pub processed: usize,
    pub contours_dir: PathBuf,
    pub distances_dir: PathBuf,
}

/// Derive contour and distance targets for every mask PNG in a directory.
/// Unreadable or out-of-range masks are all listed in the error.
pub fn cmd_derive(config: &RunConfig) -> Result<DeriveOutcome> {
    let masks_dir = require(&config.data, "data")?;
    let out_dir = require(&config.out, "out")?;
    let num_classes = config.classes.unwrap_or(2);
    let options = derive_options(config);

    let stems = data::png_stems(&masks_dir)?;
    if stems.is_empty() {
        return Err(Error::Dataset(format!(
            "no mask PNGs found in {}",
            masks_dir.display()
        )));
    }
    let contours_dir = out_dir.join("contours");
    let distances_dir = out_dir.join("distances");
    ensure_dir(&contours_dir)?;
    ensure_dir(&distances_dir)?;

    let mut processed = 0usize;
    let mut failures = Vec::new();
    for stem in &stems {
        let path = masks_dir.join(format!("{stem}.png"));
        let result = load_mask_png(&path).and_then(|mask| {
            mask.check_classes(num_classes)?;
            let (contour, distance) = derive_targets_with(&mask, &options);
            save_mask_png(
                &contours_dir.join(format!("{stem}.png")),
                contour.width(),
                contour.height(),
                contour.labels(),
            )?;
            save_distance_png(&distances_dir.join(format!("{stem}.png")), &distance)?;
            Ok(())
        });
        match result {
            Ok(()) => processed += 1,
            Err(e) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Dataset(format!(
            "{} of {} masks failed:\n{}",
            failures.len(),
            stems.len(),
            failures.join("\n")
        )));
    }
    Ok(DeriveOutcome {
        processed,
        contours_dir,
        distances_dir,
    })
}

/// Outcome of `synth`: dataset location and size.
#[derive(Debug)]
pub struct SynthOutcome {
    pub written: usize,
    pub images_dir: PathBuf,
    pub masks_dir: PathBuf,
}

/// Generate a synthetic shape dataset (images + exact masks).
pub fn cmd_synth(config: &RunConfig) -> Result<SynthOutcome> {
    let out_dir = require(&config.out, "out")?;
    let mut synth = SynthConfig::new(
        config.count.unwrap_or(16),
        config.size.unwrap_or(64),
        config.instances.unwrap_or((1, 1)),
        config.seed.unwrap_or(0),
    );
    if let Some(noise) = config.noise {
        synth.noise = noise;
    }
    let pairs = generate_synthetic(&synth)?;
    let images_dir = out_dir.join("images");
    let masks_dir = out_dir.join("masks");
    ensure_dir(&images_dir)?;
    ensure_dir(&masks_dir)?;
    for (i, (image, mask)) in pairs.iter().enumerate() {
        let name = format!("s{i:04}.png");
        save_image_png(&images_dir.join(&name), image)?;
        save_mask_png(&masks_dir.join(&name), mask.width(), mask.height(), mask.labels())?;
    }
    Ok(SynthOutcome {
        written: pairs.len(),
        images_dir,
        masks_dir,
    })
}

fn net_config_for(config: &RunConfig, variant: Variant, samples: &[Sample]) -> Result<NetConfig> {
    let first = &samples[0];
    let mut net = NetConfig::new(variant, config.classes.unwrap_or(2));
    net.in_channels = first.channels();
    net.input_size = (first.height(), first.width());
    net.stages = config.stages.unwrap_or(4);
    net.base_channels = config.base_channels.unwrap_or(16);
    net.bottleneck_upsample = config.bottleneck_upsample.unwrap_or(4);
    net.convs_per_stage = config.convs_per_stage.unwrap_or(2);
    for s in samples {
        if s.height() != first.height() || s.width() != first.width() || s.channels() != first.channels()
        {
            return Err(Error::Dataset(format!(
                "sample {} is {}x{} with {} channels; expected {}x{} with {}",
                s.id,
                s.width(),
                s.height(),
                s.channels(),
                first.width(),
                first.height(),
                first.channels()
            )));
        }
    }
    net.validate()?;
    Ok(net)
}

fn train_config_for(config: &RunConfig) -> Result<TrainConfig> {
    let mut t = TrainConfig {
        epochs: config.epochs.unwrap_or(150),
        learning_rate: config.lr.unwrap_or(1e-4),
        batch_size: config.batch.unwrap_or(4),
        weights: LossWeights::new(
            config.lambda1.unwrap_or(1.0),
            config.lambda2.unwrap_or(1.0),
            config.lambda3.unwrap_or(1.0),
        )?,
        seed: config.seed.unwrap_or(0),
        split_fraction: config.split.unwrap_or(0.7),
        ..TrainConfig::default()
    };
    if let Some(widths) = &config.widths {
        t.trimap_widths = widths.clone();
    }
    if let Some(reduction) = config.reduction {
        t.reduction = reduction;
    }
    t.validate()?;
    Ok(t)
}

/// Outcome of `train`.
#[derive(Debug)]
pub struct TrainOutcome {
    pub warnings: Vec<String>,
    pub steps: usize,
    pub final_val_dice: f64,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub epoch_csv: PathBuf,
}

/// Train a variant on a dataset directory, writing checkpoints and CSVs.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let data_dir = require(&config.data, "data")?;
    let out_dir = require(&config.out, "out")?;
    let variant = config.variant.unwrap_or(Variant::MCD);
    let num_classes = config.classes.unwrap_or(2);

    let mut warnings = Vec::new();
    if !variant.has_contour() && config.lambda2.is_some() {
        warnings.push(format!(
            "warning: variant {variant} has no contour decoder; --lambda2 is ignored"
        ));
    }
    if !variant.has_distance() && config.lambda3.is_some() {
        warnings.push(format!(
            "warning: variant {variant} has no distance decoder; --lambda3 is ignored"
        ));
    }

    let samples = load_dataset(&data_dir, num_classes, &derive_options(config))?;
    let net_config = net_config_for(config, variant, &samples)?;
    let train_config = train_config_for(config)?;
    let (train_set, val_set) =
        trainer::split_samples(&samples, train_config.split_fraction, train_config.seed)?;

    ensure_dir(&out_dir)?;
    let mut net = PsiNet::build(net_config, train_config.seed)?;
    let log = trainer::train(&mut net, &train_set, &val_set, &train_config, Some(&out_dir))?;

    let loss_csv = out_dir.join("loss.csv");
    let epoch_csv = out_dir.join("epochs.csv");
    write_csv(&loss_csv, |w| log.write_loss_csv(w))?;
    write_csv(&epoch_csv, |w| log.write_epoch_csv(w))?;

    Ok(TrainOutcome {
        warnings,
        steps: log.steps.len(),
        final_val_dice: log.epochs.last().map(|e| e.aggregate.mean_dice).unwrap_or(0.0),
        checkpoint: out_dir.join("last.ckpt"),
        loss_csv,
        epoch_csv,
    })
}

fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Outcome of `eval`.
#[derive(Debug)]
pub struct EvalOutcome {
    pub aggregate: metrics::Aggregate,
    pub per_sample_csv: PathBuf,
    pub aggregate_csv: PathBuf,
    pub trimap_csv: PathBuf,
}

/// Evaluate a checkpoint over a dataset directory, writing per-sample,
/// aggregate, and trimap-curve CSVs.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalOutcome> {
    let checkpoint_path = require(&config.checkpoint, "checkpoint")?;
    let data_dir = require(&config.data, "data")?;
    let out_dir = require(&config.out, "out")?;
    let widths = config
        .widths
        .clone()
        .unwrap_or_else(|| DEFAULT_TRIMAP_WIDTHS.to_vec());
    let ellipse = config.ellipse_fit.unwrap_or(false);

    let (net, _, _) = Checkpoint::load(&checkpoint_path)?.into_net()?;
    let samples = load_dataset(&data_dir, net.config().num_classes, &derive_options(config))?;
    let (reports, aggregate) = trainer::evaluate(&net, &samples, &widths, ellipse)?;

    ensure_dir(&out_dir)?;
    let per_sample_csv = out_dir.join("per_sample.csv");
    let aggregate_csv = out_dir.join("aggregate.csv");
    let trimap_csv = out_dir.join("trimap_curve.csv");
    write_csv(&per_sample_csv, |w| {
        metrics::write_per_sample_csv(w, &reports, &widths)
    })?;
    write_csv(&aggregate_csv, |w| metrics::write_aggregate_csv(w, &aggregate))?;
    write_csv(&trimap_csv, |w| metrics::write_trimap_curve_csv(w, &aggregate))?;

    Ok(EvalOutcome {
        aggregate,
        per_sample_csv,
        aggregate_csv,
        trimap_csv,
    })
}

/// Outcome of `predict`: files written per input image.
#[derive(Debug)]
pub struct PredictOutcome {
    pub outputs: Vec<PathBuf>,
}

/// Run a checkpoint on images and write the predicted mask (and contour /
/// distance maps when the variant has those heads).
pub fn cmd_predict(config: &RunConfig, images: &[PathBuf]) -> Result<PredictOutcome> {
    let checkpoint_path = require(&config.checkpoint, "checkpoint")?;
    let out_dir = require(&config.out, "out")?;
    if images.is_empty() {
        return Err(Error::Config("predict needs at least one image".into()));
    }
    let (net, _, _) = Checkpoint::load(&checkpoint_path)?.into_net()?;
    let (eh, ew) = net.config().input_size;
    ensure_dir(&out_dir)?;

    let mut outputs = Vec::new();
    for path in images {
        let image = load_image_png(path)?;
        let dims = image.shape().dims().to_vec();
        if dims != [net.config().in_channels, eh, ew] {
            return Err(Error::shape(
                "predict",
                format!(
                    "{}: got {}x{} with {} channels; checkpoint expects {ew}x{eh} with {} channels",
                    path.display(),
                    dims[2],
                    dims[1],
                    dims[0],
                    net.config().in_channels
                ),
            ));
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let [c, h, w] = [dims[0], dims[1], dims[2]];
        let batch = crate::tensor::Tensor::new([1, c, h, w], image.data().to_vec())?;
        let mut graph = Graph::new();
        let heads = net.forward(&mut graph, &batch)?;
        let preds = heads.predictions(&graph);

        let mask = preds.argmax_masks()?.remove(0);
        let mask_path = out_dir.join(format!("{stem}_mask.png"));
        save_mask_png(&mask_path, mask.width(), mask.height(), mask.labels())?;
        outputs.push(mask_path);

        if let Some(contours) = preds.argmax_contours()? {
            let contour = &contours[0];
            let contour_path = out_dir.join(format!("{stem}_contour.png"));
            save_mask_png(&contour_path, contour.width(), contour.height(), contour.labels())?;
            outputs.push(contour_path);
        }
        if let Some(distance) = &preds.distance {
            let values: Vec<f32> = distance.data().to_vec();
            let map = DistanceMap::new(w, h, values)?;
            let distance_path = out_dir.join(format!("{stem}_distance.png"));
            save_distance_png(&distance_path, &map)?;
            outputs.push(distance_path);
        }
    }
    Ok(PredictOutcome { outputs })
}
