//! Optimization loop: dataset split, bias-corrected Adam, per-step loss
//! logging, per-epoch validation metrics, and checkpointing. Given one
//! build, a (seed, config, data) triple reproduces training bit for bit.

mod checkpoint;

#[cfg(test)]
mod tests;

pub use checkpoint::Checkpoint;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown, LossTerms, LossWeights, Reduction};
use crate::metrics::{self, Aggregate, MetricReport, DEFAULT_TRIMAP_WIDTHS};
use crate::net::PsiNet;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub split_fraction: f64,
    pub reduction: Reduction,
    /// Band widths of the per-epoch validation trimap curve.
    pub trimap_widths: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            learning_rate: 1e-4,
            batch_size: 4,
            weights: LossWeights::default(),
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            split_fraction: 0.7,
            reduction: Reduction::Mean,
            trimap_widths: DEFAULT_TRIMAP_WIDTHS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::arg("train_config", "epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("train_config", "batch_size must be at least 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::arg("train_config", "learning_rate must be positive"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::arg("train_config", "split_fraction must be in (0, 1)"));
        }
        LossWeights::new(self.weights.mask, self.weights.contour, self.weights.distance)?;
        Ok(())
    }
}

/// Seeded shuffle followed by a prefix/suffix split: disjoint, exhaustive,
/// and reproducible.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::arg("split", "dataset is empty"));
    }
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::arg(
            "split",
            format!("fraction {fraction} leaves an empty side for {n} samples"),
        ));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let test = indices.split_off(n_train);
    Ok((indices, test))
}

/// Split samples into (train, test) by [`split_indices`].
pub fn split_samples(samples: &[Sample], fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (train_idx, test_idx) = split_indices(samples.len(), fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

/// Per-parameter first and second moment estimates plus the step counter.
#[derive(Clone, Default)]
pub struct AdamState {
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

/// Adam hyperparameters, extracted from [`TrainConfig`].
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        AdamParams {
            learning_rate: c.learning_rate,
            beta1: c.adam_beta1,
            beta2: c.adam_beta2,
            epsilon: c.adam_epsilon,
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn from_parts(step: u64, moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>) -> Self {
        AdamState { step, moments }
    }

    pub(crate) fn moments(&self) -> &BTreeMap<String, (Vec<f32>, Vec<f32>)> {
        &self.moments
    }

    /// Advance the shared step counter. Call once per optimization step,
    /// before updating the parameter arrays of that step.
    pub fn advance(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of one named parameter array; returns the new
    /// values. Moment buffers are created on first touch.
    pub fn update(&mut self, name: &str, value: &[f32], grad: &[f32], hp: &AdamParams) -> Result<Vec<f32>> {
        if value.len() != grad.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: {} values but {} gradients", value.len(), grad.len()),
            ));
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; value.len()], vec![0.0; value.len()]));
        if m.len() != value.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: moment length {} does not match {} values", m.len(), value.len()),
            ));
        }
        let t = self.step.max(1) as i32;
        let beta1 = hp.beta1 as f32;
        let beta2 = hp.beta2 as f32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let lr = hp.learning_rate as f32;
        let eps = hp.epsilon as f32;
        let mut out = Vec::with_capacity(value.len());
        for i in 0..value.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            out.push(value[i] - lr * m_hat / (v_hat.sqrt() + eps));
        }
        Ok(out)
    }
}

/// One full Adam step over every network parameter (gradients must already
/// be populated by a backward pass).
pub fn adam_step(net: &mut PsiNet<f32>, state: &mut AdamState, hp: &AdamParams) -> Result<()> {
    state.advance();
    let names: Vec<String> = net.parameters().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let tensor = net.parameter(&name).expect("listed parameter exists");
        let grad = tensor
            .grad()
            .ok_or_else(|| Error::arg("adam_step", format!("{name} has no gradient buffer")))?;
        let updated = state.update(&name, tensor.data(), &grad, hp)?;
        net.set_parameter(&name, updated)?;
    }
    Ok(())
}

/// One optimization step's logged losses.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// One epoch's validation metrics.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub aggregate: Aggregate,
}

/// Per-step loss records and per-epoch validation metrics, in increasing
/// (epoch, step) order.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Loss CSV: step,epoch,mask_loss,contour_loss,distance_loss,total.
    pub fn write_loss_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "step,epoch,mask_loss,contour_loss,distance_loss,total")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step, s.epoch, s.loss.mask_loss, s.loss.contour_loss, s.loss.distance_loss, s.loss.total
            )?;
        }
        Ok(())
    }

    /// Epoch metric CSV with one column per trimap width.
    pub fn write_epoch_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let widths = self
            .epochs
            .first()
            .map(|e| e.aggregate.widths.clone())
            .unwrap_or_default();
        write!(out, "epoch,dice,jaccard,hausdorff,hausdorff_undefined")?;
        for w in &widths {
            write!(out, ",trimap_w{w}")?;
        }
        writeln!(out)?;
        for e in &self.epochs {
            let agg = &e.aggregate;
            let hd = agg.mean_hausdorff.map(|v| v.to_string()).unwrap_or_default();
            write!(
                out,
                "{},{},{},{},{}",
                e.epoch, agg.mean_dice, agg.mean_jaccard, hd, agg.hausdorff_undefined
            )?;
            for t in &agg.mean_trimap {
                write!(out, ",{}", t.map(|v| v.to_string()).unwrap_or_default())?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn batch_tensors(samples: &[Sample], indices: &[usize]) -> Result<BatchTensors> {
    let first = &samples[indices[0]];
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let plane = h * w;
    let mut images = Vec::with_capacity(indices.len() * c * plane);
    let mut mask_labels = Vec::with_capacity(indices.len() * plane);
    let mut contour_labels = Vec::with_capacity(indices.len() * plane);
    let mut distances = Vec::with_capacity(indices.len() * plane);
    let mut ids = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &samples[i];
        if s.channels() != c || s.height() != h || s.width() != w {
            return Err(Error::Dataset(format!(
                "sample {} has mismatched dimensions within the batch",
                s.id
            )));
        }
        images.extend_from_slice(s.image.data());
        mask_labels.extend_from_slice(s.mask.labels());
        contour_labels.extend_from_slice(s.contour.labels());
        distances.extend_from_slice(s.distance.values());
        ids.push(s.id.clone());
    }
    Ok(BatchTensors {
        images: Tensor::new([indices.len(), c, h, w], images)?,
        mask_labels,
        contour_labels,
        distance: Tensor::new([indices.len(), 1, h, w], distances)?,
        ids,
    })
}

struct BatchTensors {
    images: Tensor<f32>,
    mask_labels: Vec<u8>,
    contour_labels: Vec<u8>,
    distance: Tensor<f32>,
    ids: Vec<String>,
}

/// Forward + joint loss for one batch; returns the loss node and breakdown.
fn batch_loss(
    net: &PsiNet<f32>,
    graph: &mut Graph<f32>,
    batch: &BatchTensors,
    config: &TrainConfig,
) -> Result<(crate::tensor::Var, LossBreakdown)> {
    let heads = net.forward(graph, &batch.images)?;
    let mask = loss::nll_mask(graph, heads.mask_probs, &batch.mask_labels, config.reduction)?;
    let contour = heads
        .contour_probs
        .map(|v| loss::nll_contour(graph, v, &batch.contour_labels, config.reduction))
        .transpose()?;
    let distance = heads
        .distance
        .map(|v| loss::mse_distance(graph, v, &batch.distance, config.reduction))
        .transpose()?;
    loss::total_loss(
        graph,
        &config.weights,
        &LossTerms {
            mask,
            contour,
            distance,
        },
    )
}

/// Train in place. Per epoch: seeded shuffle, batches of `batch_size`
/// (a short final batch included), zero-grad → forward → loss → backward →
/// Adam; then a validation pass. With an output directory, `last.ckpt` is
/// written every epoch and `best.ckpt` whenever the mean foreground Dice
/// improves. A non-finite loss aborts with the offending batch named.
pub fn train(
    net: &mut PsiNet<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut log = TrainLog::default();
    let mut adam = AdamState::new();
    let hp = AdamParams::from(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best_dice = f64::NEG_INFINITY;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            net.zero_grads();
            let batch = batch_tensors(train_set, chunk)?;
            let mut graph = Graph::new();
            let (total, breakdown) = batch_loss(net, &mut graph, &batch, config)?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    batch: batch.ids,
                });
            }
            graph.backward(total)?;
            adam_step(net, &mut adam, &hp)?;
            log.steps.push(StepRecord {
                step,
                epoch,
                loss: breakdown,
            });
        }

        let (_, aggregate) = evaluate(net, val_set, &config.trimap_widths, false)?;
        let improved = aggregate.mean_dice > best_dice;
        if improved {
            best_dice = aggregate.mean_dice;
        }
        if let Some(dir) = checkpoint_dir {
            let checkpoint = Checkpoint::capture(net, &adam, config);
            checkpoint.save(&dir.join("last.ckpt"))?;
            if improved {
                checkpoint.save(&dir.join("best.ckpt"))?;
            }
        }
        log.epochs.push(EpochRecord { epoch, aggregate });
    }
    Ok(log)
}

/// Forward every sample, argmax the mask head (optionally replacing each
/// class region by its fitted ellipse), and score against the ground truth.
pub fn evaluate(
    net: &PsiNet<f32>,
    samples: &[Sample],
    widths: &[f64],
    ellipse_fit: bool,
) -> Result<(Vec<(String, MetricReport)>, Aggregate)> {
    let num_classes = net.config().num_classes;
    let mut reports = Vec::with_capacity(samples.len());
    for sample in samples {
        let pred = predict_mask(net, sample)?;
        let pred = if ellipse_fit {
            metrics::ellipse_fit_mask(&pred)
        } else {
            pred
        };
        let report = metrics::evaluate_pair(&pred, &sample.mask, num_classes, widths)?;
        reports.push((sample.id.clone(), report));
    }
    let aggregate = metrics::aggregate(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    Ok((reports, aggregate))
}

/// Argmax mask prediction for a single sample.
pub fn predict_mask(net: &PsiNet<f32>, sample: &Sample) -> Result<crate::targets::Mask> {
    let batch = batch_tensors(std::slice::from_ref(sample), &[0])?;
    let mut graph = Graph::new();
    let heads = net.forward(&mut graph, &batch.images)?;
    let preds = heads.predictions(&graph);
    Ok(preds.argmax_masks()?.remove(0))
}
