//! Run configuration merged from an optional key=value config file and
//! command-line flags; flags override file values. Every accepted key maps
//! to a documented field and unknown keys are rejected.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::loss::Reduction;
use crate::net::Variant;

/// All tunables a command may consume; commands read the subset they need.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda3: Option<f64>,
    pub seed: Option<u64>,
    pub classes: Option<usize>,
    pub widths: Option<Vec<f64>>,
    pub ellipse_fit: Option<bool>,
    pub count: Option<usize>,
    pub size: Option<usize>,
    pub instances: Option<(usize, usize)>,
    pub stages: Option<usize>,
    pub base_channels: Option<usize>,
    pub bottleneck_upsample: Option<usize>,
    pub convs_per_stage: Option<usize>,
    pub split: Option<f64>,
    pub reduction: Option<Reduction>,
    pub contour_radius: Option<f64>,
    pub distance_divisor: Option<f64>,
    pub noise: Option<f64>,
}

pub fn parse_widths(text: &str) -> Result<Vec<f64>> {
    let widths: Vec<f64> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid width {s:?}")))
        })
        .collect::<Result<_>>()?;
    if widths.is_empty() {
        return Err(Error::Config("widths list is empty".into()));
    }
    Ok(widths)
}

pub fn parse_instances(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Config(format!("invalid instance count {s:?}")))
    };
    match parts.as_slice() {
        [one] => {
            let n = parse(one)?;
            Ok((n, n))
        }
        [lo, hi] => Ok((parse(lo)?, parse(hi)?)),
        _ => Err(Error::Config(format!(
            "instances must be N or LO,HI; got {text:?}"
        ))),
    }
}

impl RunConfig {
    /// Parse a plain-text config file: one `key=value` per line, `#`
    /// comments and blank lines ignored, unknown keys rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("key {key} has invalid value {v:?}")))
        }
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "variant" => self.variant = Some(value.parse()?),
            "epochs" => self.epochs = Some(num(key, value)?),
            "lr" => self.lr = Some(num(key, value)?),
            "batch" => self.batch = Some(num(key, value)?),
            "lambda1" => self.lambda1 = Some(num(key, value)?),
            "lambda2" => self.lambda2 = Some(num(key, value)?),
            "lambda3" => self.lambda3 = Some(num(key, value)?),
            "seed" => self.seed = Some(num(key, value)?),
            "classes" => self.classes = Some(num(key, value)?),
            "widths" => self.widths = Some(parse_widths(value)?),
            "ellipse_fit" => self.ellipse_fit = Some(num::<bool>(key, value)?),
            "count" => self.count = Some(num(key, value)?),
            "size" => self.size = Some(num(key, value)?),
            "instances" => self.instances = Some(parse_instances(value)?),
            "stages" => self.stages = Some(num(key, value)?),
            "base_channels" => self.base_channels = Some(num(key, value)?),
            "bottleneck_upsample" => self.bottleneck_upsample = Some(num(key, value)?),
            "convs_per_stage" => self.convs_per_stage = Some(num(key, value)?),
            "split" => self.split = Some(num(key, value)?),
            "reduction" => {
                self.reduction = Some(match value {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    other => {
                        return Err(Error::Config(format!(
                            "key reduction must be mean or sum, got {other:?}"
                        )))
                    }
                })
            }
            "contour_radius" => self.contour_radius = Some(num(key, value)?),
            "distance_divisor" => self.distance_divisor = Some(num(key, value)?),
            "noise" => self.noise = Some(num(key, value)?),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Overlay `self` (flag values) on top of `base` (file values): any
    /// field set here wins.
    pub fn over(self, base: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($field:ident) => {
                self.$field.or(base.$field)
            };
        }
        RunConfig {
            data: pick!(data),
            out: pick!(out),
            checkpoint: pick!(checkpoint),
            variant: pick!(variant),
            epochs: pick!(epochs),
            lr: pick!(lr),
            batch: pick!(batch),
            lambda1: pick!(lambda1),
            lambda2: pick!(lambda2),
            lambda3: pick!(lambda3),
            seed: pick!(seed),
            classes: pick!(classes),
            widths: pick!(widths),
            ellipse_fit: pick!(ellipse_fit),
            count: pick!(count),
            size: pick!(size),
            instances: pick!(instances),
            stages: pick!(stages),
            base_channels: pick!(base_channels),
            bottleneck_upsample: pick!(bottleneck_upsample),
            convs_per_stage: pick!(convs_per_stage),
            split: pick!(split),
            reduction: pick!(reduction),
            contour_radius: pick!(contour_radius),
            distance_divisor: pick!(distance_divisor),
            noise: pick!(noise),
        }
    }
}
