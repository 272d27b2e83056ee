//! Model presets, backpropagation training, evaluation and k-means.
//!
//! Training runs in f64 on a copy of the graph's float weights and writes
//! f32 weights back into the returned graph.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::run_flat;
use crate::ir::{Activation, GraphBuilder, ModelGraph, Op, TensorData};
use crate::rng::{derive_seed, seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Audio,
    Timeseries,
}

impl FromStr for DataKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "audio" => Ok(DataKind::Audio),
            "timeseries" | "time-series" => Ok(DataKind::Timeseries),
            other => Err(Error::Config(format!("unknown data kind `{other}` (audio, timeseries)"))),
        }
    }
}

/// Architecture template, written the way model columns read:
/// `"2x conv1d (32 to 64)"`, `"mlp (20, 10)"`, `"MobileNetV2 0.35"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelDescriptor {
    /// conv1d(k=3) + relu + maxpool(2,2) blocks, filters doubling from
    /// `first` to `last`.
    ConvStack { blocks: usize, first: usize, last: usize },
    Mlp { hidden: Vec<usize> },
    /// Wide conv1d stack without pooling, sized like a MobileNetV2 width
    /// multiplier. Stands in for the 2D network.
    MobileNetStandIn { alpha: f64 },
}

impl ModelDescriptor {
    pub fn conv_filters(&self) -> Vec<usize> {
        match *self {
            ModelDescriptor::ConvStack { blocks, first, last } => {
                if blocks == 1 {
                    return vec![first];
                }
                let ratio = (last as f64 / first as f64).powf(1.0 / (blocks - 1) as f64);
                (0..blocks)
                    .map(|i| (first as f64 * ratio.powi(i as i32)).round() as usize)
                    .collect()
            }
            ModelDescriptor::MobileNetStandIn { alpha } => {
                vec![((1280.0 * alpha).round() as usize).max(1); 3]
            }
            ModelDescriptor::Mlp { .. } => Vec::new(),
        }
    }
}

impl fmt::Display for ModelDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelDescriptor::ConvStack { blocks, first, last } => {
                write!(f, "{blocks}x conv1d ({first} to {last})")
            }
            ModelDescriptor::Mlp { hidden } => {
                let h: Vec<String> = hidden.iter().map(usize::to_string).collect();
                write!(f, "mlp ({})", h.join(", "))
            }
            ModelDescriptor::MobileNetStandIn { alpha } => write!(f, "MobileNetV2 {alpha}"),
        }
    }
}

impl FromStr for ModelDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse model descriptor `{s}`"));
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("mobilenetv2") {
            let alpha: f64 = rest.trim().parse().map_err(|_| bad())?;
            if !(alpha > 0.0 && alpha <= 1.4) {
                return Err(bad());
            }
            return Ok(ModelDescriptor::MobileNetStandIn { alpha });
        }
        let inner = |x: &str| -> Option<String> {
            let open = x.find('(')?;
            let close = x.rfind(')')?;
            (close > open).then(|| x[open + 1..close].to_string())
        };
        if lower.starts_with("mlp") {
            let args = inner(&lower).ok_or_else(bad)?;
            let hidden = args
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad())?;
            if hidden.contains(&0) {
                return Err(bad());
            }
            return Ok(ModelDescriptor::Mlp { hidden });
        }
        let (count, rest) = lower.split_once("x conv1d").ok_or_else(bad)?;
        let blocks: usize = count.trim().parse().map_err(|_| bad())?;
        let args = inner(rest).ok_or_else(bad)?;
        let (a, b) = args.split_once("to").ok_or_else(bad)?;
        let first: usize = a.trim().parse().map_err(|_| bad())?;
        let last: usize = b.trim().parse().map_err(|_| bad())?;
        if blocks == 0 || first == 0 || last < first {
            return Err(bad());
        }
        Ok(ModelDescriptor::ConvStack { blocks, first, last })
    }
}

impl Serialize for DescriptorString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

/// Serializes a descriptor as its display string.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorString(pub ModelDescriptor);

impl<'de> Deserialize<'de> for DescriptorString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map(DescriptorString).map_err(serde::de::Error::custom)
    }
}

/// `U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))`.
pub fn glorot_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f32> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..a) as f32).collect()
}

/// Instantiates a descriptor for a `(rows, cols)` feature matrix. The
/// classifier bias starts at `log(1/classes)`.
pub fn build_model(
    desc: &ModelDescriptor,
    feature_shape: (usize, usize),
    classes: usize,
    seed: u64,
) -> Result<ModelGraph> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    let (rows, cols) = feature_shape;
    let mut rng = seeded(seed);
    let mut b = GraphBuilder::new(&[rows, cols]);
    let kernel = 3;
    match desc {
        ModelDescriptor::Mlp { hidden } => {
            b.flatten()?;
            for &h in hidden {
                let fan_in = b.current_shape().iter().product();
                b.dense_with(h, glorot_uniform(&mut rng, fan_in, h, fan_in * h), vec![0.0; h])?;
                b.relu()?;
            }
        }
        ModelDescriptor::ConvStack { .. } | ModelDescriptor::MobileNetStandIn { .. } => {
            let pool = matches!(desc, ModelDescriptor::ConvStack { .. });
            for filters in desc.conv_filters() {
                let (len, ch) = (b.current_shape()[0], b.current_shape()[1]);
                if len < kernel {
                    return Err(Error::Config(format!(
                        "`{desc}` needs more frames than {rows} for a {kernel}-tap stack"
                    )));
                }
                let w = glorot_uniform(&mut rng, kernel * ch, filters, filters * kernel * ch);
                b.conv1d_with(filters, kernel, 1, w, vec![0.0; filters])?;
                b.relu()?;
                if pool && b.current_shape()[0] >= 2 {
                    b.maxpool1d(2, 2)?;
                }
            }
            b.flatten()?;
        }
    }
    let fan_in: usize = b.current_shape().iter().product();
    let bias = vec![(1.0 / classes as f64).ln() as f32; classes];
    b.dense_with(
        classes,
        glorot_uniform(&mut rng, fan_in, classes, fan_in * classes),
        bias,
    )?;
    b.softmax()?;
    b.finish()
}

pub fn preset_descriptor(kind: DataKind) -> ModelDescriptor {
    match kind {
        DataKind::Audio => ModelDescriptor::ConvStack {
            blocks: 2,
            first: 8,
            last: 16,
        },
        DataKind::Timeseries => ModelDescriptor::Mlp { hidden: vec![20, 10] },
    }
}

pub fn init_preset(
    kind: DataKind,
    feature_shape: (usize, usize),
    classes: usize,
    seed: u64,
) -> Result<ModelGraph> {
    build_model(&preset_descriptor(kind), feature_shape, classes, seed)
}

/// Per-node trainable parameters in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Params {
    pub fn from_graph(g: &ModelGraph) -> Result<Self> {
        let layers = g
            .nodes
            .iter()
            .map(|n| match n.op {
                Op::Dense { .. } | Op::Conv1d { .. } => {
                    let get = |k: usize| -> Result<Vec<f64>> {
                        g.weights[&n.inputs[k]]
                            .as_f32()
                            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
                            .ok_or_else(|| Error::Training("only float graphs can be trained".into()))
                    };
                    Ok(Some((get(1)?, get(2)?)))
                }
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Params { layers })
    }

    pub fn write_into(&self, g: &mut ModelGraph) {
        for (node, p) in g.nodes.iter().zip(&self.layers) {
            if let Some((w, b)) = p {
                let to32 = |v: &[f64]| TensorData::F32(v.iter().map(|&x| x as f32).collect());
                g.weights.insert(node.inputs[1].clone(), to32(w));
                g.weights.insert(node.inputs[2].clone(), to32(b));
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Params {
            layers: self
                .layers
                .iter()
                .map(|p| p.as_ref().map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
                .collect(),
        }
    }

    fn axpy(&mut self, a: f64, other: &Params) {
        for (p, o) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some((w, b)), Some((ow, ob))) = (p, o) {
                w.iter_mut().zip(ow).for_each(|(x, y)| *x += a * y);
                b.iter_mut().zip(ob).for_each(|(x, y)| *x += a * y);
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(|(w, b)| w.iter().chain(b).all(|v| v.is_finite()))
    }
}

struct Geometry {
    in_shape: Vec<usize>,
}

/// f64 forward/backward over a float graph.
pub struct Network<'g> {
    graph: &'g ModelGraph,
    geometry: Vec<Geometry>,
}

impl<'g> Network<'g> {
    pub fn new(graph: &'g ModelGraph) -> Result<Self> {
        let geometry = graph
            .nodes
            .iter()
            .map(|n| {
                Ok(Geometry {
                    in_shape: graph.require_tensor(&n.inputs[0])?.shape.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { graph, geometry })
    }

    /// Activations: `[input, out_0, out_1, …]`.
    pub fn forward(&self, params: &Params, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.graph.nodes.len() + 1);
        acts.push(x.to_vec());
        for (i, node) in self.graph.nodes.iter().enumerate() {
            let input = &acts[i];
            let shape = &self.geometry[i].in_shape;
            let relu = node.fused_activation == Activation::Relu;
            let mut y = match node.op {
                Op::Dense { units } => {
                    let (w, b) = params.layers[i].as_ref().expect("dense params");
                    let mut y = b.clone();
                    for (j, &xj) in input.iter().enumerate() {
                        for (o, &wv) in y.iter_mut().zip(&w[j * units..(j + 1) * units]) {
                            *o += xj * wv;
                        }
                    }
                    y
                }
                Op::Conv1d {
                    filters,
                    kernel_size,
                    stride,
                } => {
                    let (w, b) = params.layers[i].as_ref().expect("conv params");
                    let ch = shape[1];
                    let span = kernel_size * ch;
                    let out_len = (shape[0] - kernel_size) / stride + 1;
                    let mut y = vec![0.0; out_len * filters];
                    for o in 0..out_len {
                        let win = &input[o * stride * ch..o * stride * ch + span];
                        for f in 0..filters {
                            let wf = &w[f * span..(f + 1) * span];
                            y[o * filters + f] =
                                b[f] + win.iter().zip(wf).map(|(a, c)| a * c).sum::<f64>();
                        }
                    }
                    y
                }
                Op::Relu => input.iter().map(|v| v.max(0.0)).collect(),
                Op::MaxPool1d { pool, stride } => {
                    crate::interp::maxpool1d(input, shape[0], shape[1], pool, stride)
                }
                Op::Flatten => input.clone(),
                Op::Softmax => softmax(input),
                Op::KmeansDistance { k } => {
                    let c = self.centroids(i);
                    vec![nearest(input, &c, k).1]
                }
            };
            if relu {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    fn centroids(&self, node: usize) -> Vec<f64> {
        let n = &self.graph.nodes[node];
        self.graph.weights[&n.inputs[1]]
            .as_f32()
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .unwrap_or_default()
    }

    /// Backpropagates `grad` (dL/d out of node `upto − 1`) through nodes
    /// `upto−1 … 0`. Returns parameter gradients and dL/d input.
    pub fn backward(
        &self,
        params: &Params,
        acts: &[Vec<f64>],
        grad: Vec<f64>,
        upto: usize,
    ) -> (Params, Vec<f64>) {
        let mut grads = params.zeros_like();
        let mut dy = grad;
        for i in (0..upto).rev() {
            let node = &self.graph.nodes[i];
            let x = &acts[i];
            let y = &acts[i + 1];
            if node.fused_activation == Activation::Relu {
                dy.iter_mut().zip(y).for_each(|(d, &v)| {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let shape = &self.geometry[i].in_shape;
            let mut dx = vec![0.0; x.len()];
            match node.op {
                Op::Dense { units } => {
                    let (w, _) = params.layers[i].as_ref().expect("dense params");
                    let (gw, gb) = grads.layers[i].as_mut().expect("dense grads");
                    for (j, &xj) in x.iter().enumerate() {
                        let row = j * units;
                        let mut acc = 0.0;
                        for u in 0..units {
                            gw[row + u] += xj * dy[u];
                            acc += w[row + u] * dy[u];
                        }
                        dx[j] = acc;
                    }
                    gb.iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
                }
                Op::Conv1d {
                    filters,
                    kernel_size,
                    stride,
                } => {
                    let (w, _) = params.layers[i].as_ref().expect("conv params");
                    let (gw, gb) = grads.layers[i].as_mut().expect("conv grads");
                    let ch = shape[1];
                    let span = kernel_size * ch;
                    let out_len = (shape[0] - kernel_size) / stride + 1;
                    for o in 0..out_len {
                        let base = o * stride * ch;
                        for f in 0..filters {
                            let d = dy[o * filters + f];
                            if d == 0.0 {
                                continue;
                            }
                            gb[f] += d;
                            let wf = &w[f * span..(f + 1) * span];
                            let gwf = &mut gw[f * span..(f + 1) * span];
                            for j in 0..span {
                                gwf[j] += d * x[base + j];
                                dx[base + j] += d * wf[j];
                            }
                        }
                    }
                }
                Op::Relu => {
                    for ((d, &xv), &g) in dx.iter_mut().zip(x).zip(&dy) {
                        *d = if xv > 0.0 { g } else { 0.0 };
                    }
                }
                Op::MaxPool1d { pool, stride } => {
                    let ch = shape[1];
                    let out_len = (shape[0] - pool) / stride + 1;
                    for o in 0..out_len {
                        for c in 0..ch {
                            let mut best = o * stride * ch + c;
                            for p in 1..pool {
                                let idx = (o * stride + p) * ch + c;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                            dx[best] += dy[o * ch + c];
                        }
                    }
                }
                Op::Flatten => dx.copy_from_slice(&dy),
                Op::Softmax => {
                    let dot: f64 = y.iter().zip(&dy).map(|(p, g)| p * g).sum();
                    for ((d, &p), &g) in dx.iter_mut().zip(y).zip(&dy) {
                        *d = p * (g - dot);
                    }
                }
                Op::KmeansDistance { k } => {
                    let c = self.centroids(i);
                    let (best, dist) = nearest(x, &c, k);
                    if dist > 0.0 {
                        let dim = x.len();
                        for j in 0..dim {
                            dx[j] = dy[0] * (x[j] - c[best * dim + j]) / dist;
                        }
                    }
                }
            }
            dy = dx;
        }
        (grads, dy)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn nearest(x: &[f64], centroids: &[f64], k: usize) -> (usize, f64) {
    let dim = x.len();
    let mut best = (0, f64::INFINITY);
    for c in 0..k {
        let d: f64 = x
            .iter()
            .zip(&centroids[c * dim..(c + 1) * dim])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// Cross-entropy of a graph ending in softmax; returns `(loss, probs)`
/// plus the gradient for the pre-softmax logits (`p − onehot`).
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut grad: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
    grad[label] -= 1.0;
    (lse - logits[label], grad)
}

/// Loss and summed parameter gradients of a batch.
pub fn batch_gradient(
    net: &Network,
    params: &Params,
    features: &[Vec<f64>],
    labels: &[usize],
    batch: &[usize],
) -> (f64, Params) {
    let n = net.graph.nodes.len();
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for &i in batch {
        let acts = net.forward(params, &features[i]);
        let (l, g) = cross_entropy(&acts[n - 1], labels[i]);
        loss += l;
        let (grads, _) = net.backward(params, &acts, g, n - 1);
        total.axpy(1.0, &grads);
    }
    (loss, total)
}

fn mean_loss(net: &Network, params: &Params, features: &[Vec<f64>], labels: &[usize], idx: &[usize]) -> f64 {
    let n = net.graph.nodes.len();
    let s: f64 = idx
        .iter()
        .map(|&i| cross_entropy(&net.forward(params, &features[i])[n - 1], labels[i]).0)
        .sum();
    s / idx.len().max(1) as f64
}

fn accuracy(net: &Network, params: &Params, features: &[Vec<f64>], labels: &[usize], idx: &[usize]) -> f64 {
    let n = net.graph.nodes.len();
    let hits = idx
        .iter()
        .filter(|&&i| argmax(&net.forward(params, &features[i])[n]) == labels[i])
        .count();
    hits as f64 / idx.len().max(1) as f64
}

pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Option<f64>,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: None,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::Config("validation_fraction must be in (0, 0.5)".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config("learning_rate must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Something whose loss can be measured after a short run at a given
/// learning rate.
pub trait LrProbe {
    fn initial_loss(&mut self) -> f64;
    fn loss_after(&mut self, lr: f64) -> f64;
}

/// Geometric grid over `[1e-5, 1]`, four points per decade.
pub fn lr_grid() -> Vec<f64> {
    (0..=20).map(|i| 10f64.powf(-5.0 + i as f64 / 4.0)).collect()
}

pub fn diverged(loss: f64, initial: f64) -> bool {
    !loss.is_finite() || loss > 4.0 * initial
}

/// One decade below the smallest diverging rate; the largest rate when
/// nothing diverges.
pub fn lr_find_with(probe: &mut impl LrProbe) -> Result<f64> {
    let initial = probe.initial_loss();
    let grid = lr_grid();
    for (i, &lr) in grid.iter().enumerate() {
        if diverged(probe.loss_after(lr), initial) {
            if i == 0 {
                return Err(Error::Training(format!(
                    "loss diverges at every learning rate down to {lr:e}; inspect the features for scale or label problems"
                )));
            }
            return Ok(lr / 10.0);
        }
    }
    Ok(*grid.last().expect("non-empty grid"))
}

struct SgdProbe<'a> {
    net: &'a Network<'a>,
    params: &'a Params,
    features: &'a [Vec<f64>],
    labels: &'a [usize],
    idx: Vec<usize>,
    batch_size: usize,
}

impl LrProbe for SgdProbe<'_> {
    fn initial_loss(&mut self) -> f64 {
        mean_loss(self.net, self.params, self.features, self.labels, &self.idx)
    }

    /// Worst of the per-batch losses seen during the mini-epoch and the
    /// loss at its end.
    fn loss_after(&mut self, lr: f64) -> f64 {
        let mut p = self.params.clone();
        let mut worst = 0.0f64;
        for batch in self.idx.chunks(self.batch_size) {
            let (loss, g) = batch_gradient(self.net, &p, self.features, self.labels, batch);
            worst = worst.max(loss / batch.len() as f64);
            p.axpy(-lr / batch.len() as f64, &g);
            if !p.is_finite() || !worst.is_finite() {
                return f64::NAN;
            }
        }
        worst.max(mean_loss(self.net, &p, self.features, self.labels, &self.idx))
    }
}

const LR_PROBE_SAMPLES: usize = 64;

fn check_data(g: &ModelGraph, features: &[Vec<f32>], labels: &[usize]) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::Training("no training data".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let expected = g.input_spec()?.elements();
    if let Some(f) = features.iter().find(|f| f.len() != expected) {
        return Err(Error::Training(format!(
            "feature vector of length {} does not match model input of {expected}",
            f.len()
        )));
    }
    let classes = g.output_spec()?.elements();
    if !matches!(g.nodes.last().map(|n| &n.op), Some(Op::Softmax)) {
        return Err(Error::Training("training needs a graph ending in softmax".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Training(format!("label {l} out of range for {classes} outputs")));
    }
    Ok(classes)
}

fn to_f64(features: &[Vec<f32>]) -> Vec<Vec<f64>> {
    features
        .iter()
        .map(|f| f.iter().map(|&x| f64::from(x)).collect())
        .collect()
}

pub fn lr_find(g: &ModelGraph, features: &[Vec<f32>], labels: &[usize], cfg: &TrainConfig) -> Result<f64> {
    check_data(g, features, labels)?;
    let f = to_f64(features);
    let params = Params::from_graph(g)?;
    let net = Network::new(g)?;
    let mut idx: Vec<usize> = (0..features.len()).collect();
    idx.shuffle(&mut seeded(derive_seed(cfg.seed, 0x1f)));
    idx.truncate(LR_PROBE_SAMPLES);
    lr_find_with(&mut SgdProbe {
        net: &net,
        params: &params,
        features: &f,
        labels,
        idx,
        batch_size: cfg.batch_size.max(1),
    })
}

/// Keeps the snapshot with the strictly best score seen so far.
#[derive(Debug, Clone)]
pub struct BestCheckpoint<T> {
    best: Option<(f64, f64, usize, T)>,
}

impl<T> Default for BestCheckpoint<T> {
    fn default() -> Self {
        BestCheckpoint { best: None }
    }
}

impl<T> BestCheckpoint<T> {
    pub fn offer(&mut self, epoch: usize, score: f64, snapshot: impl FnOnce() -> T) -> bool {
        self.offer_ranked(epoch, score, 0.0, snapshot)
    }

    /// Higher `score` wins; on equal scores a strictly lower `loss` wins.
    pub fn offer_ranked(&mut self, epoch: usize, score: f64, loss: f64, snapshot: impl FnOnce() -> T) -> bool {
        let better = match &self.best {
            None => true,
            Some((s, l, _, _)) => score > *s || (score == *s && loss < *l),
        };
        if better {
            self.best = Some((score, loss, epoch, snapshot()));
        }
        better
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.2)
    }

    pub fn into_best(self) -> Option<(f64, usize, T)> {
        self.best.map(|(s, _, e, t)| (s, e, t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub learning_rate: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Stratified hold-out indices; classes with one example stay in training.
pub fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut seeded(derive_seed(seed, c as u64)));
        let n_held = if idx.len() >= 2 {
            ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        held.extend_from_slice(&idx[..n_held]);
        train.extend_from_slice(&idx[n_held..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

/// Mini-batch SGD on cross-entropy. Returns the checkpoint with the best
/// validation accuracy.
/// Per-column input standardization used during training. Stored models
/// keep raw-feature semantics: the statistics are folded into the first
/// dense or conv1d layer when training ends.
struct InputScaling {
    node: usize,
    cols: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl InputScaling {
    /// Statistics over `idx`, when the first non-flatten node is linear.
    fn fit(g: &ModelGraph, f: &[Vec<f64>], idx: &[usize]) -> Option<Self> {
        let node = g.nodes.iter().position(|n| n.op != Op::Flatten)?;
        if !matches!(g.nodes[node].op, Op::Dense { .. } | Op::Conv1d { .. }) || idx.is_empty() {
            return None;
        }
        let cols = *g.input_spec().ok()?.shape.last()?;
        let mut sum = vec![0.0; cols];
        let mut sq = vec![0.0; cols];
        let mut count = vec![0usize; cols];
        for &i in idx {
            for (j, &v) in f[i].iter().enumerate() {
                sum[j % cols] += v;
                sq[j % cols] += v * v;
                count[j % cols] += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n.max(1) as f64).collect();
        let std = sq
            .iter()
            .zip(&count)
            .zip(&mean)
            .map(|((q, &n), m)| {
                let var = (q / n.max(1) as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-8 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Some(InputScaling { node, cols, mean, std })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j % self.cols]) / self.std[j % self.cols])
            .collect()
    }

    /// Rewrites first-layer weights trained on standardized inputs so they
    /// take raw features.
    fn fold(&self, g: &ModelGraph, params: &mut Params) {
        let op = &g.nodes[self.node].op;
        let Some((w, b)) = params.layers[self.node].as_mut() else { return };
        // (input column, output unit) of weight element k
        let span = w.len() / b.len().max(1);
        let cols = self.cols;
        let locate = |k: usize| match *op {
            Op::Dense { units } => ((k / units) % cols, k % units),
            _ => (k % cols, k / span),
        };
        for k in 0..w.len() {
            let (c, o) = locate(k);
            let (m, s) = (self.mean[c], self.std[c]);
            b[o] -= w[k] * m / s;
            w[k] /= s;
        }
    }
}

pub fn train(
    g: &ModelGraph,
    features: &[Vec<f32>],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(ModelGraph, TrainHistory)> {
    cfg.validate()?;
    check_data(g, features, labels)?;
    let raw = to_f64(features);
    let net = Network::new(g)?;
    let mut params = Params::from_graph(g)?;
    let (train_idx, val_idx) = stratified_split(labels, cfg.validation_fraction, derive_seed(cfg.seed, 0x5a));
    let scaling = InputScaling::fit(g, &raw, &train_idx);
    // The starting weights act on standardized features.
    let f = match &scaling {
        Some(s) => raw.iter().map(|x| s.apply(x)).collect(),
        None => raw,
    };
    let lr = match cfg.learning_rate {
        Some(lr) => lr,
        None => {
            let mut idx = train_idx.clone();
            idx.shuffle(&mut seeded(derive_seed(cfg.seed, 0x1f)));
            idx.truncate(LR_PROBE_SAMPLES);
            lr_find_with(&mut SgdProbe {
                net: &net,
                params: &params,
                features: &f,
                labels,
                idx,
                batch_size: cfg.batch_size,
            })?
        }
    };
    let score_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };
    let mut best = BestCheckpoint::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seeded(derive_seed(cfg.seed, 0x1000 + epoch as u64)));
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_gradient(&net, &params, &f, labels, batch);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss became non-finite at epoch {epoch}, batch {bi} (learning rate {lr:e}); lower the learning rate or check feature scaling"
                )));
            }
            epoch_loss += loss;
            params.axpy(-lr / batch.len() as f64, &grads);
        }
        if !params.is_finite() {
            return Err(Error::Training(format!(
                "weights became non-finite at epoch {epoch} (learning rate {lr:e})"
            )));
        }
        let val_accuracy = accuracy(&net, &params, &f, labels, score_idx);
        let val_loss = mean_loss(&net, &params, &f, labels, score_idx);
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss / order.len() as f64,
            train_accuracy: accuracy(&net, &params, &f, labels, &train_idx),
            val_accuracy,
            val_loss,
        });
        best.offer_ranked(epoch, val_accuracy, val_loss, || params.clone());
    }
    let (best_val_accuracy, best_epoch, mut best_params) = best.into_best().expect("at least one epoch");
    if let Some(s) = &scaling {
        s.fold(g, &mut best_params);
    }
    let mut out = g.clone();
    best_params.write_into(&mut out);
    Ok((
        out,
        TrainHistory {
            learning_rate: lr,
            epochs: history,
            best_epoch,
            best_val_accuracy,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub per_class_f1: Vec<f64>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        let per_class_f1 = (0..k)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
                let actual: usize = confusion[c].iter().sum();
                let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
                let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
                if p + r > 0.0 {
                    2.0 * p * r / (p + r)
                } else {
                    0.0
                }
            })
            .collect();
        EvalReport {
            confusion,
            accuracy: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
            per_class_f1,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Argmax predictions through the interpreter (float or int8 graphs).
pub fn predict(g: &ModelGraph, features: &[Vec<f32>]) -> Result<Vec<usize>> {
    features.iter().map(|x| run_flat(g, x).map(|p| argmax(&p))).collect()
}

pub fn evaluate(g: &ModelGraph, features: &[Vec<f32>], labels: &[usize]) -> Result<EvalReport> {
    let k = g.output_spec()?.elements();
    let mut confusion = vec![vec![0usize; k]; k];
    for (p, &l) in predict(g, features)?.into_iter().zip(labels) {
        if l >= k {
            return Err(Error::invalid(format!("label {l} out of range for {k} outputs")));
        }
        confusion[l][p] += 1;
    }
    Ok(EvalReport::from_confusion(confusion))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points
        .iter()
        .map(|p| {
            centroids
                .iter()
                .enumerate()
                .map(|(c, cen)| (c, sq_dist(p, cen)))
                .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b })
        })
        .unzip()
}

/// k-means++ seeding then Lloyd iterations (at most 100, or until no
/// centroid moves more than 1e-6).
pub fn kmeans_fit(features: &[Vec<f32>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || k > features.len() {
        return Err(Error::invalid(format!("k = {k} must be in 1..={}", features.len())));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    let pts = to_f64(features);
    let mut rng = seeded(seed);
    let mut centroids = vec![pts[rng.random_range(0..pts.len())].clone()];
    while centroids.len() < k {
        let (_, d) = assign(&pts, &centroids);
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = pts.len() - 1;
            for (i, &di) in d.iter().enumerate() {
                if r < di {
                    pick = i;
                    break;
                }
                r -= di;
            }
            pick
        } else {
            rng.random_range(0..pts.len())
        };
        centroids.push(pts[next].clone());
    }
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..100 {
        iterations += 1;
        let (labels, d) = assign(&pts, &centroids);
        history.push(d.iter().sum());
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in pts.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut updated: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
            .collect();
        let mut taken = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..pts.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| d[a].total_cmp(&d[b]))
                    .unwrap_or(0);
                taken.push(far);
                updated[c] = pts[far].clone();
            }
        }
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < 1e-6 {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        inertia_history: history,
        iterations,
    })
}

/// Euclidean distance to the nearest centroid.
pub fn kmeans_score(x: &[f32], centroids: &[Vec<f64>]) -> f64 {
    let p: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
    centroids
        .iter()
        .map(|c| sq_dist(&p, c))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Anomaly graph: flatten then distance to the nearest centroid.
pub fn kmeans_graph(feature_shape: (usize, usize), km: &KMeans) -> Result<ModelGraph> {
    let mut b = GraphBuilder::new(&[feature_shape.0, feature_shape.1]);
    let flat: Vec<f32> = km.centroids.iter().flatten().map(|&v| v as f32).collect();
    b.flatten()?.kmeans_distance(km.centroids.len(), flat)?;
    b.finish()
}
