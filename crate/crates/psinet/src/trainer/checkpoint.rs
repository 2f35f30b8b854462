//! Checkpoint file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PSIN"                      magic, 4 bytes
//! u32                         format version (currently 1)
//! u32 + bytes                 length-prefixed key=value config text
//! repeated until EOF:
//!   u32 + bytes               name length + name
//!   u32                       rank
//!   u32 * rank                dimensions
//!   f32 * product(dims)       raw little-endian values
//! ```
//!
//! Arrays hold the network parameters (by name) followed by the Adam
//! moments as `adam.m.<param>` / `adam.v.<param>`; the step counter rides
//! in the config block. Loading validates magic, version, and shapes and
//! never yields partial state.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::{LossWeights, Reduction};
use crate::net::{NetConfig, PsiNet, Variant};
use crate::trainer::{AdamState, TrainConfig};

const MAGIC: &[u8; 4] = b"PSIN";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub net_config: NetConfig,
    pub train_config: TrainConfig,
    pub adam_step: u64,
    /// Parameter and moment arrays: name -> (dims, values).
    pub arrays: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// Snapshot a network, its optimizer state, and the run config.
    pub fn capture(net: &PsiNet<f32>, adam: &AdamState, train: &TrainConfig) -> Self {
        let mut arrays = BTreeMap::new();
        for (name, tensor) in net.parameters() {
            arrays.insert(
                name.to_string(),
                (tensor.shape().dims().to_vec(), tensor.data().to_vec()),
            );
        }
        for (name, (m, v)) in adam.moments() {
            arrays.insert(format!("adam.m.{name}"), (vec![m.len()], m.clone()));
            arrays.insert(format!("adam.v.{name}"), (vec![v.len()], v.clone()));
        }
        Checkpoint {
            net_config: net.config().clone(),
            train_config: train.clone(),
            adam_step: adam.step_count(),
            arrays,
        }
    }

    fn config_text(&self) -> String {
        let n = &self.net_config;
        let t = &self.train_config;
        let reduction = match t.reduction {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        };
        let widths = t
            .trimap_widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut text = String::new();
        let mut kv = |k: &str, v: String| {
            text.push_str(k);
            text.push('=');
            text.push_str(&v);
            text.push('\n');
        };
        kv("net.variant", n.variant.to_string());
        kv("net.num_classes", n.num_classes.to_string());
        kv("net.stages", n.stages.to_string());
        kv("net.base_channels", n.base_channels.to_string());
        kv("net.bottleneck_upsample", n.bottleneck_upsample.to_string());
        kv("net.input_h", n.input_size.0.to_string());
        kv("net.input_w", n.input_size.1.to_string());
        kv("net.in_channels", n.in_channels.to_string());
        kv("net.convs_per_stage", n.convs_per_stage.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.lambda1", t.weights.mask.to_string());
        kv("train.lambda2", t.weights.contour.to_string());
        kv("train.lambda3", t.weights.distance.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.adam_beta1", t.adam_beta1.to_string());
        kv("train.adam_beta2", t.adam_beta2.to_string());
        kv("train.adam_epsilon", t.adam_epsilon.to_string());
        kv("train.split_fraction", t.split_fraction.to_string());
        kv("train.reduction", reduction.to_string());
        kv("train.trimap_widths", widths);
        kv("adam.step", self.adam_step.to_string());
        text
    }

    fn parse_config(text: &str) -> Result<(NetConfig, TrainConfig, u64)> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed config line {line:?}")))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("config key {k} missing")))
        };
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("config key {k} has invalid value {v:?}")))
        }

        let variant: Variant = get("net.variant")?
            .parse()
            .map_err(|_| Error::Checkpoint("invalid net.variant".into()))?;
        let mut net = NetConfig::new(variant, parse("net.num_classes", get("net.num_classes")?)?);
        net.stages = parse("net.stages", get("net.stages")?)?;
        net.base_channels = parse("net.base_channels", get("net.base_channels")?)?;
        net.bottleneck_upsample = parse("net.bottleneck_upsample", get("net.bottleneck_upsample")?)?;
        net.input_size = (
            parse("net.input_h", get("net.input_h")?)?,
            parse("net.input_w", get("net.input_w")?)?,
        );
        net.in_channels = parse("net.in_channels", get("net.in_channels")?)?;
        net.convs_per_stage = parse("net.convs_per_stage", get("net.convs_per_stage")?)?;

        let weights = LossWeights::new(
            parse("train.lambda1", get("train.lambda1")?)?,
            parse("train.lambda2", get("train.lambda2")?)?,
            parse("train.lambda3", get("train.lambda3")?)?,
        )?;
        let reduction = match get("train.reduction")?.as_str() {
            "mean" => Reduction::Mean,
            "sum" => Reduction::Sum,
            other => return Err(Error::Checkpoint(format!("invalid train.reduction {other:?}"))),
        };
        let widths_text = get("train.trimap_widths")?;
        let trimap_widths = widths_text
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| parse::<f64>("train.trimap_widths", s))
            .collect::<Result<Vec<f64>>>()?;
        let train = TrainConfig {
            epochs: parse("train.epochs", get("train.epochs")?)?,
            learning_rate: parse("train.learning_rate", get("train.learning_rate")?)?,
            batch_size: parse("train.batch_size", get("train.batch_size")?)?,
            weights,
            seed: parse("train.seed", get("train.seed")?)?,
            adam_beta1: parse("train.adam_beta1", get("train.adam_beta1")?)?,
            adam_beta2: parse("train.adam_beta2", get("train.adam_beta2")?)?,
            adam_epsilon: parse("train.adam_epsilon", get("train.adam_epsilon")?)?,
            split_fraction: parse("train.split_fraction", get("train.split_fraction")?)?,
            reduction,
            trimap_widths,
        };
        let step = parse("adam.step", get("adam.step")?)?;
        Ok((net, train, step))
    }

    /// Serialize to `path`, writing a temporary file first so a crash never
    /// leaves a half-written checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        let config = self.config_text();
        bytes.extend_from_slice(&(config.len() as u32).to_le_bytes());
        bytes.extend_from_slice(config.as_bytes());
        for (name, (dims, values)) in &self.arrays {
            bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for &d in dims {
                bytes.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader {
            bytes: &bytes,
            pos: 0,
        };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}; not a checkpoint file"
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {VERSION})"
            )));
        }
        let config_len = r.u32()? as usize;
        let config_text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?
            .to_string();
        let (net_config, train_config, adam_step) = Self::parse_config(&config_text)?;

        let mut arrays = BTreeMap::new();
        while !r.at_end() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let count: usize = dims.iter().product();
            let raw = r.take(count * 4)?;
            let mut values = Vec::with_capacity(count);
            for chunk in raw.chunks_exact(4) {
                values.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            if arrays.insert(name.clone(), (dims, values)).is_some() {
                return Err(Error::Checkpoint(format!("duplicate array {name:?}")));
            }
        }
        Ok(Checkpoint {
            net_config,
            train_config,
            adam_step,
            arrays,
        })
    }

    /// Rebuild the network, optimizer state, and train config.
    pub fn into_net(self) -> Result<(PsiNet<f32>, AdamState, TrainConfig)> {
        let mut net = PsiNet::build(self.net_config.clone(), 0)?;
        self.restore_into(&mut net)?;
        let mut moments = BTreeMap::new();
        for (name, (_, values)) in &self.arrays {
            if let Some(param) = name.strip_prefix("adam.m.") {
                let v = self
                    .arrays
                    .get(&format!("adam.v.{param}"))
                    .ok_or_else(|| Error::Checkpoint(format!("adam.v.{param} missing")))?;
                moments.insert(param.to_string(), (values.clone(), v.1.clone()));
            }
        }
        let adam = AdamState::from_parts(self.adam_step, moments);
        Ok((net, adam, self.train_config))
    }

    /// Copy the stored parameters into an existing network. The target's
    /// config must match exactly; a checkpoint of one variant refuses to
    /// load into another.
    pub fn restore_into(&self, net: &mut PsiNet<f32>) -> Result<()> {
        if *net.config() != self.net_config {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for variant {} ({:?}); target network is variant {} ({:?})",
                self.net_config.variant,
                self.net_config,
                net.config().variant,
                net.config()
            )));
        }
        let expected: Vec<String> = net.parameters().map(|(n, _)| n.to_string()).collect();
        for name in &expected {
            let (dims, values) = self
                .arrays
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {name} missing")))?;
            let current = net.parameter(name).expect("listed parameter exists");
            if current.shape().dims() != dims.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: stored shape {:?} does not match {:?}",
                    dims,
                    current.shape().dims()
                )));
            }
            net.set_parameter(name, values.clone())?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
