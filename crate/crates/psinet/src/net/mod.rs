//! The segmentation network: one contracting encoder shared by up to three
//! structurally identical expanding decoders (mask, contour, distance),
//! differing only in their final 3x3 head. The deepest encoder features are
//! upsampled by a configurable factor (default 4) before entering the
//! decoders, which then upsample by 2 per stage and concatenate the
//! matching encoder features at every resolution they visit.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::targets::Mask;
use crate::tensor::{Element, Graph, Tensor, Var};

/// Which decoders are attached: mask only, mask+contour, mask+distance, or
/// all three.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Variant {
    M,
    MC,
    MD,
    MCD,
}

impl Variant {
    pub fn has_contour(self) -> bool {
        matches!(self, Variant::MC | Variant::MCD)
    }

    pub fn has_distance(self) -> bool {
        matches!(self, Variant::MD | Variant::MCD)
    }

    pub fn all() -> [Variant; 4] {
        [Variant::M, Variant::MC, Variant::MD, Variant::MCD]
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m" => Ok(Variant::M),
            "mc" => Ok(Variant::MC),
            "md" => Ok(Variant::MD),
            "mcd" => Ok(Variant::MCD),
            other => Err(Error::arg(
                "variant",
                format!("expected one of m, mc, md, mcd; got {other:?}"),
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::M => "m",
            Variant::MC => "mc",
            Variant::MD => "md",
            Variant::MCD => "mcd",
        };
        f.write_str(s)
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct NetConfig {
    pub variant: Variant,
    pub num_classes: usize,
    /// Encoder depth; channel count doubles per stage.
    pub stages: usize,
    /// Channel count of the first stage.
    pub base_channels: usize,
    /// Upsampling factor applied to the deepest encoder features before the
    /// decoders; 2 restores a strictly symmetric decoder.
    pub bottleneck_upsample: usize,
    /// (height, width); both must be divisible by 2^stages.
    pub input_size: (usize, usize),
    pub in_channels: usize,
    /// Convolutions (each ReLU-activated) per encoder/decoder stage.
    pub convs_per_stage: usize,
}

impl NetConfig {
    pub fn new(variant: Variant, num_classes: usize) -> Self {
        NetConfig {
            variant,
            num_classes,
            stages: 4,
            base_channels: 16,
            bottleneck_upsample: 4,
            input_size: (256, 256),
            in_channels: 3,
            convs_per_stage: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::arg("net_config", "num_classes must be at least 2"));
        }
        if self.stages == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::arg(
                "net_config",
                "stages, base_channels, and in_channels must be positive",
            ));
        }
        if self.convs_per_stage == 0 {
            return Err(Error::arg("net_config", "convs_per_stage must be positive"));
        }
        if self.bottleneck_upsample != 2 && self.bottleneck_upsample != 4 {
            return Err(Error::arg(
                "net_config",
                format!("bottleneck_upsample must be 2 or 4, got {}", self.bottleneck_upsample),
            ));
        }
        if self.bottleneck_levels() > self.stages {
            return Err(Error::arg(
                "net_config",
                format!(
                    "bottleneck_upsample {} skips more levels than the {} encoder stages provide",
                    self.bottleneck_upsample, self.stages
                ),
            ));
        }
        let divisor = 1usize << self.stages;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % divisor != 0 || w % divisor != 0 {
            return Err(Error::arg(
                "net_config",
                format!("input size {h}x{w} must be divisible by 2^stages = {divisor}"),
            ));
        }
        Ok(())
    }

    fn bottleneck_levels(&self) -> usize {
        match self.bottleneck_upsample {
            2 => 1,
            4 => 2,
            _ => unreachable!("validated"),
        }
    }

    /// Coarsest resolution level a decoder visits (level L is H/2^L).
    fn landing_level(&self) -> usize {
        self.stages - self.bottleneck_levels()
    }

    fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << (stage - 1)
    }

    fn head_channels(&self, task: Task) -> usize {
        match task {
            Task::Mask | Task::Contour => self.num_classes,
            Task::Distance => 1,
        }
    }

    fn active_tasks(&self) -> Vec<Task> {
        let mut tasks = vec![Task::Mask];
        if self.variant.has_contour() {
            tasks.push(Task::Contour);
        }
        if self.variant.has_distance() {
            tasks.push(Task::Distance);
        }
        tasks
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Task {
    Mask,
    Contour,
    Distance,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Mask => "mask",
            Task::Contour => "contour",
            Task::Distance => "distance",
        }
    }
}

/// Head outputs of one forward pass, as graph nodes so losses can attach.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub mask_probs: Var,
    pub contour_probs: Option<Var>,
    pub distance: Option<Var>,
}

impl HeadVars {
    pub fn predictions<T: Element>(&self, graph: &Graph<T>) -> Predictions<T> {
        Predictions {
            mask_probs: graph.value(self.mask_probs).clone(),
            contour_probs: self.contour_probs.map(|v| graph.value(v).clone()),
            distance: self.distance.map(|v| graph.value(v).clone()),
        }
    }
}

/// Forward outputs: per-pixel class probabilities for the mask head, plus
/// contour probabilities and the estimated distance map when the variant
/// has those decoders.
#[derive(Clone, Debug)]
pub struct Predictions<T: Element> {
    pub mask_probs: Tensor<T>,
    pub contour_probs: Option<Tensor<T>>,
    pub distance: Option<Tensor<T>>,
}

impl<T: Element> Predictions<T> {
    /// Per-sample argmax over mask class probabilities.
    pub fn argmax_masks(&self) -> Result<Vec<Mask>> {
        argmax_masks(&self.mask_probs)
    }

    /// Per-sample argmax over contour class probabilities, if present.
    pub fn argmax_contours(&self) -> Result<Option<Vec<Mask>>> {
        self.contour_probs.as_ref().map(argmax_masks).transpose()
    }
}

/// Channel argmax of a [N, C, H, W] probability tensor as class-index masks
/// (first channel wins ties).
pub fn argmax_masks<T: Element>(probs: &Tensor<T>) -> Result<Vec<Mask>> {
    let [n, c, h, w] = probs.shape().nchw()?;
    let plane = h * w;
    let data = probs.data();
    let mut masks = Vec::with_capacity(n);
    for img in 0..n {
        let mut labels = vec![0u8; plane];
        for (p, l) in labels.iter_mut().enumerate() {
            let mut best = 0usize;
            let mut best_v = data[(img * c) * plane + p];
            for ch in 1..c {
                let v = data[(img * c + ch) * plane + p];
                if v > best_v {
                    best_v = v;
                    best = ch;
                }
            }
            *l = best as u8;
        }
        masks.push(Mask::new(w, h, labels)?);
    }
    Ok(masks)
}

/// A parameterized network instance.
pub struct PsiNet<T: Element> {
    config: NetConfig,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> PsiNet<T> {
    /// Build a network with fan-in-scaled uniform weights and zero biases.
    /// Each parameter's values are drawn from a stream keyed by (seed,
    /// parameter name), so shared submodules initialize identically across
    /// variants and parameter values never depend on creation order.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        check_skip_resolutions(&config)?;
        let mut params = BTreeMap::new();
        let mut add_conv = |name: String, c_out: usize, c_in: usize| -> Result<()> {
            let fan_in = c_in * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut rng = param_rng(seed, &name);
            let data: Vec<T> = (0..c_out * c_in * 9)
                .map(|_| T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound))
                .collect();
            params.insert(
                format!("{name}.weight"),
                Tensor::param([c_out, c_in, 3, 3], data)?,
            );
            params.insert(
                format!("{name}.bias"),
                Tensor::param(vec![c_out], vec![T::zero(); c_out])?,
            );
            Ok(())
        };

        for stage in 1..=config.stages {
            let c_out = config.stage_channels(stage);
            for conv in 1..=config.convs_per_stage {
                let c_in = if conv == 1 {
                    if stage == 1 {
                        config.in_channels
                    } else {
                        config.stage_channels(stage - 1)
                    }
                } else {
                    c_out
                };
                add_conv(format!("enc.s{stage:02}.c{conv}"), c_out, c_in)?;
            }
        }

        for task in config.active_tasks() {
            let mut carried = config.stage_channels(config.stages);
            for level in (0..=config.landing_level()).rev() {
                let level_ch = config.base_channels << level;
                for conv in 1..=config.convs_per_stage {
                    let c_in = if conv == 1 { carried + level_ch } else { level_ch };
                    add_conv(
                        format!("dec.{}.l{level:02}.c{conv}", task.name()),
                        level_ch,
                        c_in,
                    )?;
                }
                carried = level_ch;
            }
            add_conv(
                format!("dec.{}.head", task.name()),
                config.head_channels(task),
                config.base_channels,
            )?;
        }

        Ok(PsiNet { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Parameters in sorted name order.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.elem_count()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.params.values() {
            t.zero_grad();
        }
    }

    /// Replace one parameter's values (same shape required). The tensor is
    /// re-created as a fresh `param` with zeroed gradient.
    pub fn set_parameter(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let current = self
            .params
            .get(name)
            .ok_or_else(|| Error::arg("set_parameter", format!("unknown parameter {name:?}")))?;
        let replacement = Tensor::param(current.shape().clone(), data)?;
        self.params.insert(name.to_string(), replacement);
        Ok(())
    }

    /// Same parameter values at a different element precision.
    pub fn cast<U: Element>(&self) -> PsiNet<U> {
        PsiNet {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.cast::<U>()))
                .collect(),
        }
    }

    fn param_var(&self, graph: &mut Graph<T>, name: &str) -> Var {
        graph.leaf(self.params.get(name).expect("parameter exists by construction"))
    }

    fn conv_block(
        &self,
        graph: &mut Graph<T>,
        mut x: Var,
        prefix: &str,
        convs: usize,
    ) -> Result<Var> {
        for conv in 1..=convs {
            let w = self.param_var(graph, &format!("{prefix}.c{conv}.weight"));
            let b = self.param_var(graph, &format!("{prefix}.c{conv}.bias"));
            x = graph.conv2d(x, w, b)?;
            x = graph.relu(x);
        }
        Ok(x)
    }

    /// Run the network on a batch of images shaped
    /// [N, in_channels, H, W] with (H, W) equal to the configured size.
    pub fn forward(&self, graph: &mut Graph<T>, images: &Tensor<T>) -> Result<HeadVars> {
        let [_, c, h, w] = images.shape().nchw()?;
        let (eh, ew) = self.config.input_size;
        if c != self.config.in_channels || h != eh || w != ew {
            return Err(Error::shape(
                "forward",
                format!(
                    "expected [N, {}, {}, {}] input, got {}",
                    self.config.in_channels,
                    eh,
                    ew,
                    images.shape()
                ),
            ));
        }
        let mut x = graph.leaf(images);
        let mut skips = Vec::with_capacity(self.config.stages);
        for stage in 1..=self.config.stages {
            x = self.conv_block(graph, x, &format!("enc.s{stage:02}"), self.config.convs_per_stage)?;
            skips.push(x);
            x = graph.maxpool2(x)?;
        }
        let bottleneck = x;

        let mut heads = BTreeMap::new();
        for task in self.config.active_tasks() {
            let mut d = graph.upsample(bottleneck, self.config.bottleneck_upsample)?;
            for level in (0..=self.config.landing_level()).rev() {
                d = graph.concat_channels(d, skips[level])?;
                d = self.conv_block(
                    graph,
                    d,
                    &format!("dec.{}.l{level:02}", task.name()),
                    self.config.convs_per_stage,
                )?;
                if level > 0 {
                    d = graph.upsample(d, 2)?;
                }
            }
            let hw = self.param_var(graph, &format!("dec.{}.head.weight", task.name()));
            let hb = self.param_var(graph, &format!("dec.{}.head.bias", task.name()));
            let logits = graph.conv2d(d, hw, hb)?;
            let out = match task {
                Task::Mask | Task::Contour => graph.softmax_channels(logits)?,
                Task::Distance => graph.sigmoid(logits),
            };
            heads.insert(task.name(), out);
        }

        Ok(HeadVars {
            mask_probs: heads["mask"],
            contour_probs: heads.get("contour").copied(),
            distance: heads.get("distance").copied(),
        })
    }
}

/// Every decoder level must see a skip tensor of its own spatial size; the
/// schedule is a pure function of the config, so one structural check at
/// build time covers all forwards.
fn check_skip_resolutions(config: &NetConfig) -> Result<()> {
    let (h, w) = config.input_size;
    // Encoder stage s produces skip features at H / 2^(s-1).
    let skip_res = |level: usize| (h >> level, w >> level);
    // The decoder lands at the bottleneck resolution times the upsample.
    let mut res = (
        (h >> config.stages) * config.bottleneck_upsample,
        (w >> config.stages) * config.bottleneck_upsample,
    );
    for level in (0..=config.landing_level()).rev() {
        if res != skip_res(level) {
            return Err(Error::arg(
                "net_config",
                format!(
                    "decoder at {}x{} cannot concatenate skip features at {}x{}",
                    res.0,
                    res.1,
                    skip_res(level).0,
                    skip_res(level).1
                ),
            ));
        }
        if level > 0 {
            res = (res.0 * 2, res.1 * 2);
        }
    }
    Ok(())
}

fn fnv1a64(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a64(name).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
