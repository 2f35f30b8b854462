use super::kernels;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

/// How pixel losses reduce over the image domain and batch.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Reduction {
    /// Mean over all pixels and batch entries.
    #[default]
    Mean,
    /// Plain sum.
    Sum,
}

/// Probabilities below this are clamped before the log in NLL losses.
pub const LOG_CLAMP_FLOOR: f64 = 1e-12;

enum Record<T: Element> {
    Leaf {
        source: Tensor<T>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    SoftmaxChannels {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Sum {
        input: Var,
    },
    /// -reduce(log(max(p[label], floor))) over pixels.
    NllLoss {
        probs: Var,
        labels: Vec<u8>,
        reduction: Reduction,
    },
    /// reduce((pred - target)^2) over elements.
    MseLoss {
        pred: Var,
        target: Tensor<T>,
        reduction: Reduction,
    },
    /// Scalar combination sum_i w_i * term_i.
    WeightedSum {
        terms: Vec<(T, Var)>,
    },
}

struct Node<T: Element> {
    value: Tensor<T>,
    record: Record<T>,
}

/// Wengert tape: operations recorded in execution order, so every node's
/// inputs precede it and one reverse sweep visits each node exactly once.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, record: Record<T>) -> Var {
        self.nodes.push(Node { value, record });
        Var(self.nodes.len() - 1)
    }

    /// Record a tensor as a graph input. Gradients reaching the leaf are
    /// accumulated into the tensor's own grad buffer when it is a `param`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.clone(), Record::Leaf { source: t.clone() })
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn nchw(&self, op: &'static str, v: Var) -> Result<[usize; 4]> {
        self.value(v).shape().nchw().map_err(|_| {
            Error::shape(op, format!("expected NCHW tensor, got {}", self.value(v).shape()))
        })
    }

    /// 3x3 convolution, stride 1, padding 1 (same-size output).
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, c_in, h, w] = self.nchw("conv2d", input)?;
        let [c_out, wc_in, kh, kw] = self.nchw("conv2d", weight)?;
        if kh != 3 || kw != 3 {
            return Err(Error::arg("conv2d", format!("kernel must be 3x3, got {kh}x{kw}")));
        }
        if wc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels but weight expects {wc_in}"),
            ));
        }
        if self.value(bias).shape().dims() != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {} does not match {c_out} output channels",
                    self.value(bias).shape()
                ),
            ));
        }
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            n,
            c_in,
            c_out,
            h,
            w,
        );
        let value = Tensor::new([n, c_out, h, w], out)?;
        Ok(self.push(value, Record::Conv2d { input, weight, bias }))
    }

    /// Elementwise max(x, 0).
    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape().clone(), data).expect("same length");
        self.push(value, Record::Relu { input })
    }

    /// 2x2 max pooling, stride 2. Requires even spatial dimensions.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw("maxpool2", input)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::arg(
                "maxpool2",
                format!("spatial dimensions must be even, got {h}x{w}"),
            ));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), n, c, h, w);
        let value = Tensor::new([n, c, h / 2, w / 2], out)?;
        Ok(self.push(value, Record::MaxPool2 { input, argmax }))
    }

    /// Bilinear upsampling by factor 2 or 4 (half-pixel centers, edges clamped).
    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor != 2 && factor != 4 {
            return Err(Error::arg("upsample", format!("factor must be 2 or 4, got {factor}")));
        }
        let [n, c, h, w] = self.nchw("upsample", input)?;
        let out = kernels::upsample_forward(self.value(input).data(), n, c, h, w, factor);
        let value = Tensor::new([n, c, h * factor, w * factor], out)?;
        Ok(self.push(value, Record::Upsample { input, factor }))
    }

    /// Channel-axis concatenation of two NCHW tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.nchw("concat_channels", a)?;
        let [nb, cb, hb, wb] = self.nchw("concat_channels", b)?;
        if na != nb || ha != hb || wa != wb {
            return Err(Error::shape(
                "concat_channels",
                format!(
                    "batch/spatial mismatch: {} vs {}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity((ca + cb) * na * plane);
        let da = self.value(a).data();
        let db = self.value(b).data();
        for img in 0..na {
            out.extend_from_slice(&da[img * ca * plane..(img + 1) * ca * plane]);
            out.extend_from_slice(&db[img * cb * plane..(img + 1) * cb * plane]);
        }
        let value = Tensor::new([na, ca + cb, ha, wa], out)?;
        Ok(self.push(value, Record::ConcatChannels { a, b }))
    }

    /// Per-pixel softmax over the channel axis.
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw("softmax_channels", input)?;
        if c < 2 {
            return Err(Error::arg(
                "softmax_channels",
                format!("needs at least 2 channels, got {c}"),
            ));
        }
        let out = kernels::softmax_channels_forward(self.value(input).data(), n, c, h, w);
        let value = Tensor::new([n, c, h, w], out)?;
        Ok(self.push(value, Record::SoftmaxChannels { input }))
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let one = T::one();
        let data: Vec<T> = x.data().iter().map(|&v| one / (one + (-v).exp())).collect();
        let value = Tensor::new(x.shape().clone(), data).expect("same length");
        self.push(value, Record::Sigmoid { input })
    }

    /// Elementwise addition of same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{} vs {}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().clone(), data)?;
        Ok(self.push(value, Record::Add { a, b }))
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "mul",
                format!("{} vs {}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().clone(), data)?;
        Ok(self.push(value, Record::Mul { a, b }))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(input).data() {
            acc = acc + v;
        }
        self.push(Tensor::scalar(acc), Record::Sum { input })
    }

    /// Negative log likelihood of per-pixel class probabilities against
    /// integer labels. `probs` is [N, C, H, W]; `labels` is N*H*W class
    /// indices in row-major [N, H, W] order. Probabilities are clamped at
    /// [`LOG_CLAMP_FLOOR`] before the log.
    pub fn nll_loss(&mut self, probs: Var, labels: &[u8], reduction: Reduction) -> Result<Var> {
        let [n, c, h, w] = self.nchw("nll_loss", probs)?;
        if labels.len() != n * h * w {
            return Err(Error::shape(
                "nll_loss",
                format!("expected {} labels, got {}", n * h * w, labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: c,
            });
        }
        let plane = h * w;
        let floor = T::from_f64(LOG_CLAMP_FLOOR);
        let data = self.value(probs).data();
        let mut acc = T::zero();
        for img in 0..n {
            for p in 0..plane {
                let label = labels[img * plane + p] as usize;
                let prob = data[(img * c + label) * plane + p].max(floor);
                acc = acc - prob.ln();
            }
        }
        if let Reduction::Mean = reduction {
            acc = acc / T::from_f64((n * plane) as f64);
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Record::NllLoss {
                probs,
                labels: labels.to_vec(),
                reduction,
            },
        ))
    }

    /// Squared-error loss between a prediction node and a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor<T>, reduction: Reduction) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("prediction {} vs target {}", self.value(pred).shape(), target.shape()),
            ));
        }
        let mut acc = T::zero();
        for (&p, &t) in self.value(pred).data().iter().zip(target.data()) {
            let d = p - t;
            acc = acc + d * d;
        }
        if let Reduction::Mean = reduction {
            acc = acc / T::from_f64(target.elem_count() as f64);
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Record::MseLoss {
                pred,
                target: target.clone(),
                reduction,
            },
        ))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(T, Var)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::arg("weighted_sum", "no terms"));
        }
        let mut acc = T::zero();
        for &(weight, var) in terms {
            acc = acc + weight * self.value(var).scalar_value()?;
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Record::WeightedSum {
                terms: terms.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar node. Gradients are accumulated into the
    /// grad buffers of every `param` tensor recorded as a leaf; repeated
    /// calls without a grad reset keep accumulating.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).elem_count() != 1 {
            return Err(Error::arg(
                "backward",
                format!("loss must be scalar, got shape {}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].record {
                Record::Leaf { source } => source.accumulate_grad(&g),
                Record::Conv2d { input, weight, bias } => {
                    let [n, c_in, _, _] = self.nodes[input.0].value.shape().nchw()?;
                    let [c_out, _, _, _] = self.nodes[weight.0].value.shape().nchw()?;
                    let [_, _, h, w] = self.nodes[i].value.shape().nchw()?;
                    let (gi, gw, gb) = kernels::conv2d_backward(
                        &g,
                        self.nodes[input.0].value.data(),
                        self.nodes[weight.0].value.data(),
                        n,
                        c_in,
                        c_out,
                        h,
                        w,
                    );
                    add_into(&mut grads[input.0], gi);
                    add_into(&mut grads[weight.0], gw);
                    add_into(&mut grads[bias.0], gb);
                }
                Record::Relu { input } => {
                    let x = self.nodes[input.0].value.data();
                    let gi = x
                        .iter()
                        .zip(&g)
                        .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect();
                    add_into(&mut grads[input.0], gi);
                }
                Record::MaxPool2 { input, argmax } => {
                    let gi =
                        kernels::maxpool2_backward(&g, argmax, self.nodes[input.0].value.elem_count());
                    add_into(&mut grads[input.0], gi);
                }
                Record::Upsample { input, factor } => {
                    let [n, c, h, w] = self.nodes[input.0].value.shape().nchw()?;
                    let gi = kernels::upsample_backward(&g, n, c, h, w, *factor);
                    add_into(&mut grads[input.0], gi);
                }
                Record::ConcatChannels { a, b } => {
                    let [n, ca, h, w] = self.nodes[a.0].value.shape().nchw()?;
                    let [_, cb, _, _] = self.nodes[b.0].value.shape().nchw()?;
                    let plane = h * w;
                    let mut ga = vec![T::zero(); n * ca * plane];
                    let mut gb = vec![T::zero(); n * cb * plane];
                    for img in 0..n {
                        let base = img * (ca + cb) * plane;
                        ga[img * ca * plane..(img + 1) * ca * plane]
                            .copy_from_slice(&g[base..base + ca * plane]);
                        gb[img * cb * plane..(img + 1) * cb * plane]
                            .copy_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                    }
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Record::SoftmaxChannels { input } => {
                    let [n, c, h, w] = self.nodes[i].value.shape().nchw()?;
                    let gi = kernels::softmax_channels_backward(
                        &g,
                        self.nodes[i].value.data(),
                        n,
                        c,
                        h,
                        w,
                    );
                    add_into(&mut grads[input.0], gi);
                }
                Record::Sigmoid { input } => {
                    let y = self.nodes[i].value.data();
                    let gi = y
                        .iter()
                        .zip(&g)
                        .map(|(&yi, &gi)| gi * yi * (T::one() - yi))
                        .collect();
                    add_into(&mut grads[input.0], gi);
                }
                Record::Add { a, b } => {
                    add_into(&mut grads[a.0], g.clone());
                    add_into(&mut grads[b.0], g);
                }
                Record::Mul { a, b } => {
                    let da = self.nodes[a.0].value.data();
                    let db = self.nodes[b.0].value.data();
                    let ga = db.iter().zip(&g).map(|(&bi, &gi)| bi * gi).collect();
                    let gb = da.iter().zip(&g).map(|(&ai, &gi)| ai * gi).collect();
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Record::Sum { input } => {
                    let n = self.nodes[input.0].value.elem_count();
                    add_into(&mut grads[input.0], vec![g[0]; n]);
                }
                Record::NllLoss {
                    probs,
                    labels,
                    reduction,
                } => {
                    let [n, c, h, w] = self.nodes[probs.0].value.shape().nchw()?;
                    let plane = h * w;
                    let data = self.nodes[probs.0].value.data();
                    let floor = T::from_f64(LOG_CLAMP_FLOOR);
                    let scale = match reduction {
                        Reduction::Mean => g[0] / T::from_f64((n * plane) as f64),
                        Reduction::Sum => g[0],
                    };
                    let mut gp = vec![T::zero(); data.len()];
                    for img in 0..n {
                        for p in 0..plane {
                            let label = labels[img * plane + p] as usize;
                            let idx = (img * c + label) * plane + p;
                            // Clamped probabilities get zero gradient.
                            if data[idx] > floor {
                                gp[idx] = -scale / data[idx];
                            }
                        }
                    }
                    add_into(&mut grads[probs.0], gp);
                }
                Record::MseLoss {
                    pred,
                    target,
                    reduction,
                } => {
                    let data = self.nodes[pred.0].value.data();
                    let scale = match reduction {
                        Reduction::Mean => g[0] / T::from_f64(target.elem_count() as f64),
                        Reduction::Sum => g[0],
                    };
                    let two = T::from_f64(2.0);
                    let gp = data
                        .iter()
                        .zip(target.data())
                        .map(|(&p, &t)| two * scale * (p - t))
                        .collect();
                    add_into(&mut grads[pred.0], gp);
                }
                Record::WeightedSum { terms } => {
                    for &(weight, var) in terms {
                        add_into(&mut grads[var.0], vec![weight * g[0]]);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Element>(slot: &mut Option<Vec<T>>, delta: Vec<T>) {
    match slot {
        None => *slot = Some(delta),
        Some(acc) => {
            debug_assert_eq!(acc.len(), delta.len());
            for (a, d) in acc.iter_mut().zip(delta) {
                *a = *a + d;
            }
        }
    }
}
