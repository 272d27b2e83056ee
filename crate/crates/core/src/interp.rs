//! Reference interpreter and static arena planner.
//!
//! The interpreter is the ground truth for generated code: every kernel
//! here has a C twin in [`crate::codegen`] that performs the same
//! arithmetic in the same order.
//!
//! Integer path, per output element of dense/conv1d:
//!
//! ```text
//! acc = bias_q[c] + Σ (x_q − x_zp) · w_q          (int32)
//! y_q = clamp(round(acc · M[c]) + y_zp, lo, 127)  (M = s_x·s_w[c]/s_y in f64)
//! ```
//!
//! where `round` is half-away-from-zero and `lo` is `max(y_zp, −128)` with a
//! fused relu, else −128. Softmax and k-means distance always run in f32 on
//! dequantized values.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::ir::{Activation, DType, ModelGraph, Node, Op, QuantParams, TensorData};

pub const ARENA_ALIGNMENT: usize = 16;

pub fn align_up(x: usize, alignment: usize) -> usize {
    x.div_ceil(alignment) * alignment
}

/// Live range of one activation buffer, in node steps (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lifetime {
    pub size: usize,
    pub first: usize,
    pub last: usize,
}

impl Lifetime {
    pub fn overlaps(&self, other: &Lifetime) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArenaPlan {
    pub offsets: BTreeMap<String, usize>,
    pub sizes: BTreeMap<String, usize>,
    pub lifetimes: BTreeMap<String, Lifetime>,
    pub peak_bytes: usize,
    pub alignment: usize,
}

impl ArenaPlan {
    pub fn offset(&self, id: &str) -> Option<usize> {
        self.offsets.get(id).copied()
    }

    /// Largest total size of simultaneously live tensors; no valid plan can
    /// be smaller.
    pub fn live_lower_bound(&self) -> usize {
        live_lower_bound(&self.lifetimes.values().copied().collect::<Vec<_>>())
    }

    /// Checks that overlapping lifetimes occupy disjoint byte ranges.
    pub fn check(&self) -> Result<()> {
        let entries: Vec<(&String, &Lifetime)> = self.lifetimes.iter().collect();
        for (i, (a, la)) in entries.iter().enumerate() {
            let oa = self.offsets[*a];
            if !oa.is_multiple_of(self.alignment) {
                return Err(Error::graph(*a, "misaligned arena offset"));
            }
            if oa + la.size > self.peak_bytes {
                return Err(Error::graph(*a, "tensor extends past the arena"));
            }
            for (b, lb) in &entries[i + 1..] {
                let ob = self.offsets[*b];
                let disjoint = oa + la.size <= ob || ob + lb.size <= oa;
                if la.overlaps(lb) && !disjoint && la.size > 0 && lb.size > 0 {
                    return Err(Error::graph(*a, format!("overlaps live tensor {b} in the arena")));
                }
            }
        }
        Ok(())
    }
}

pub fn live_lower_bound(lifetimes: &[Lifetime]) -> usize {
    let steps = lifetimes.iter().map(|l| l.last + 1).max().unwrap_or(0);
    (0..steps)
        .map(|s| {
            lifetimes
                .iter()
                .filter(|l| l.first <= s && s <= l.last)
                .map(|l| l.size)
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0)
}

/// Lowest aligned offset for `item` that avoids every already placed
/// buffer whose lifetime overlaps it.
fn first_fit(item: &Lifetime, placed: &[(Lifetime, usize)], alignment: usize) -> usize {
    let mut blocks: Vec<(usize, usize)> = placed
        .iter()
        .filter(|(l, _)| l.overlaps(item) && l.size > 0)
        .map(|(l, off)| (*off, off + l.size))
        .collect();
    blocks.sort_unstable();
    let mut candidate = 0;
    for (start, end) in blocks {
        if candidate + item.size <= start {
            break;
        }
        candidate = candidate.max(align_up(end, alignment));
    }
    candidate
}

fn place_in_order(lifetimes: &[Lifetime], order: &[usize], alignment: usize) -> (Vec<usize>, usize) {
    let mut offsets = vec![0; lifetimes.len()];
    let mut placed: Vec<(Lifetime, usize)> = Vec::with_capacity(lifetimes.len());
    for &i in order {
        let off = first_fit(&lifetimes[i], &placed, alignment);
        offsets[i] = off;
        placed.push((lifetimes[i], off));
    }
    let peak = lifetimes
        .iter()
        .zip(&offsets)
        .map(|(l, o)| o + l.size)
        .max()
        .unwrap_or(0);
    (offsets, peak)
}

/// Greedy first-fit under a few orderings (decreasing size, longest
/// lifetime, earliest start, largest size × duration); keeps the smallest
/// arena. Returns offsets in input order and the arena size
/// (`max(offset + size)`).
pub fn plan_lifetimes(lifetimes: &[Lifetime], alignment: usize) -> (Vec<usize>, usize) {
    fn span(l: &Lifetime) -> usize {
        l.last - l.first + 1
    }
    let orders: [fn(&Lifetime, &Lifetime) -> Ordering; 4] = [
        |a, b| b.size.cmp(&a.size).then(a.first.cmp(&b.first)),
        |a, b| span(b).cmp(&span(a)).then(b.size.cmp(&a.size)),
        |a, b| a.first.cmp(&b.first).then(b.size.cmp(&a.size)),
        |a, b| (b.size * span(b)).cmp(&(a.size * span(a))).then(a.first.cmp(&b.first)),
    ];
    let mut best: Option<(Vec<usize>, usize)> = None;
    for cmp in orders {
        let mut order: Vec<usize> = (0..lifetimes.len()).collect();
        order.sort_by(|&i, &j| cmp(&lifetimes[i], &lifetimes[j]).then(i.cmp(&j)));
        let candidate = place_in_order(lifetimes, &order, alignment);
        if best.as_ref().is_none_or(|b| candidate.1 < b.1) {
            best = Some(candidate);
        }
    }
    best.unwrap_or_default()
}

/// Lifetimes of the graph's activation tensors. The input is live from
/// step 0; the output stays live through the last step.
pub fn tensor_lifetimes(g: &ModelGraph) -> Result<BTreeMap<String, Lifetime>> {
    let last_step = g.nodes.len().saturating_sub(1);
    let mut out = BTreeMap::new();
    for id in g.activation_ids() {
        let spec = g.require_tensor(id)?;
        let first = if id == g.input {
            0
        } else {
            g.nodes.iter().position(|n| n.output == id).unwrap_or(0)
        };
        let mut last = g
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.first().map(String::as_str) == Some(id))
            .map(|(i, _)| i)
            .max()
            .unwrap_or(first);
        if id == g.output {
            last = last_step;
        }
        out.insert(
            id.to_string(),
            Lifetime {
                size: spec.size_bytes(),
                first,
                last,
            },
        );
    }
    Ok(out)
}

pub fn plan_arena(g: &ModelGraph) -> Result<ArenaPlan> {
    let lifetimes = tensor_lifetimes(g)?;
    let ids: Vec<&String> = lifetimes.keys().collect();
    let list: Vec<Lifetime> = lifetimes.values().copied().collect();
    let (offsets, peak) = plan_lifetimes(&list, ARENA_ALIGNMENT);
    Ok(ArenaPlan {
        offsets: ids.iter().map(|s| (*s).clone()).zip(offsets).collect(),
        sizes: lifetimes.iter().map(|(k, l)| (k.clone(), l.size)).collect(),
        peak_bytes: peak,
        lifetimes,
        alignment: ARENA_ALIGNMENT,
    })
}

/// `s_in · s_w / s_out` in f64.
pub fn requant_multiplier(input_scale: f64, weight_scale: f64, output_scale: f64) -> f64 {
    input_scale * weight_scale / output_scale
}

/// Round half away from zero (`f64::round`, C `round`).
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

pub fn quantize_value(x: f32, q: &QuantParams) -> i8 {
    let v = round_half_away(f64::from(x) / q.scales[0]) + f64::from(q.zero_point);
    v.clamp(-128.0, 127.0) as i8
}

pub fn dequantize_value(q: i8, params: &QuantParams) -> f32 {
    (i32::from(q) - params.zero_point) as f32 * params.scales[0] as f32
}

pub fn dense_f32(x: &[f32], w: &[f32], b: &[f32], units: usize, relu: bool) -> Vec<f32> {
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * units..(i + 1) * units];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    if relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

pub struct Conv1dGeometry {
    pub in_len: usize,
    pub in_ch: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1dGeometry {
    pub fn out_len(&self) -> usize {
        (self.in_len - self.kernel) / self.stride + 1
    }
}

pub fn conv1d_f32(x: &[f32], w: &[f32], b: &[f32], geo: &Conv1dGeometry, relu: bool) -> Vec<f32> {
    let out_len = geo.out_len();
    let span = geo.kernel * geo.in_ch;
    let mut out = vec![0.0f32; out_len * geo.filters];
    for o in 0..out_len {
        let window = &x[o * geo.stride * geo.in_ch..o * geo.stride * geo.in_ch + span];
        for f in 0..geo.filters {
            let wf = &w[f * span..(f + 1) * span];
            let mut acc = b[f];
            for (xv, wv) in window.iter().zip(wf) {
                acc += xv * wv;
            }
            out[o * geo.filters + f] = if relu { acc.max(0.0) } else { acc };
        }
    }
    out
}

pub fn maxpool1d<T: Copy + PartialOrd>(x: &[T], len: usize, ch: usize, pool: usize, stride: usize) -> Vec<T> {
    let out_len = (len - pool) / stride + 1;
    let mut out = Vec::with_capacity(out_len * ch);
    for o in 0..out_len {
        for c in 0..ch {
            let mut m = x[o * stride * ch + c];
            for p in 1..pool {
                let v = x[(o * stride + p) * ch + c];
                if v > m {
                    m = v;
                }
            }
            out.push(m);
        }
    }
    out
}

pub fn softmax_f32(x: &[f32]) -> Vec<f32> {
    let mut m = x[0];
    for &v in &x[1..] {
        if v > m {
            m = v;
        }
    }
    let mut e: Vec<f32> = x.iter().map(|&v| (v - m).exp()).collect();
    let mut sum = 0.0f32;
    for &v in &e {
        sum += v;
    }
    e.iter_mut().for_each(|v| *v /= sum);
    e
}

/// Euclidean distance to the nearest centroid.
pub fn kmeans_distance_f32(x: &[f32], centroids: &[f32], k: usize) -> f32 {
    let dim = x.len();
    let mut best = f32::INFINITY;
    for c in 0..k {
        let mut d = 0.0f32;
        for (xv, cv) in x.iter().zip(&centroids[c * dim..(c + 1) * dim]) {
            let diff = xv - cv;
            d += diff * diff;
        }
        if d < best {
            best = d;
        }
    }
    best.sqrt()
}

fn requantize(acc: i32, multiplier: f64, zero_point: i32, lo: i32) -> i8 {
    let v = round_half_away(f64::from(acc) * multiplier) + f64::from(zero_point);
    v.clamp(f64::from(lo), 127.0) as i8
}

pub struct QuantizedLayer<'a> {
    pub input_zero_point: i32,
    pub output_zero_point: i32,
    pub multipliers: &'a [f64],
    pub relu: bool,
}

impl QuantizedLayer<'_> {
    fn lower_bound(&self) -> i32 {
        if self.relu {
            self.output_zero_point.max(-128)
        } else {
            -128
        }
    }
}

pub fn dense_i8(x: &[i8], w: &[i8], b: &[i32], units: usize, layer: &QuantizedLayer) -> Vec<i8> {
    let mut acc = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let xv = i32::from(xi) - layer.input_zero_point;
        let row = &w[i * units..(i + 1) * units];
        for (a, &wv) in acc.iter_mut().zip(row) {
            *a += xv * i32::from(wv);
        }
    }
    let lo = layer.lower_bound();
    acc.iter()
        .enumerate()
        .map(|(u, &a)| requantize(a, layer.multipliers[u], layer.output_zero_point, lo))
        .collect()
}

pub fn conv1d_i8(x: &[i8], w: &[i8], b: &[i32], geo: &Conv1dGeometry, layer: &QuantizedLayer) -> Vec<i8> {
    let out_len = geo.out_len();
    let span = geo.kernel * geo.in_ch;
    let lo = layer.lower_bound();
    let mut out = vec![0i8; out_len * geo.filters];
    for o in 0..out_len {
        let window = &x[o * geo.stride * geo.in_ch..o * geo.stride * geo.in_ch + span];
        for f in 0..geo.filters {
            let wf = &w[f * span..(f + 1) * span];
            let mut acc = b[f];
            for (&xv, &wv) in window.iter().zip(wf) {
                acc += (i32::from(xv) - layer.input_zero_point) * i32::from(wv);
            }
            out[o * geo.filters + f] =
                requantize(acc, layer.multipliers[f], layer.output_zero_point, lo);
        }
    }
    out
}

/// Runtime tensor value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl Value {
    pub fn to_tensor_data(&self) -> TensorData {
        match self {
            Value::F32(v) => TensorData::F32(v.clone()),
            Value::I8(v) => TensorData::I8(v.clone()),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Value::F32(_) => DType::F32,
            Value::I8(_) => DType::I8,
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        self.to_tensor_data().to_le_bytes()
    }

    fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Result<Value> {
        Ok(match TensorData::from_le_bytes(dtype, bytes)? {
            TensorData::F32(v) => Value::F32(v),
            TensorData::I8(v) => Value::I8(v),
            TensorData::I32(_) => return Err(Error::invalid("i32 activations are not supported")),
        })
    }
}

/// Per-tensor values recorded during a run, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub tensor_id: String,
    pub data: TensorData,
}

impl Trace {
    pub fn get(&self, id: &str) -> Option<&TensorData> {
        self.entries.iter().find(|e| e.tensor_id == id).map(|e| &e.data)
    }

    /// Binary dump: per tensor `u32 id_len, id bytes, u8 dtype
    /// (0 f32, 1 i8, 2 i32), u32 len`, then `len` little-endian values.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.entries {
            out.extend_from_slice(&(e.tensor_id.len() as u32).to_le_bytes());
            out.extend_from_slice(e.tensor_id.as_bytes());
            out.push(match e.data.dtype() {
                DType::F32 => 0,
                DType::I8 => 1,
                DType::I32 => 2,
            });
            out.extend_from_slice(&(e.data.len() as u32).to_le_bytes());
            out.extend_from_slice(&e.data.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Trace> {
        let err = |at: usize, m: &str| Error::Parse {
            what: "trace dump".into(),
            location: format!("byte {at}"),
            message: m.into(),
        };
        let mut pos = 0;
        let mut entries = Vec::new();
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(*pos..*pos + n)
                .ok_or_else(|| err(*pos, "unexpected end of dump"))?;
            *pos += n;
            Ok(s)
        };
        while pos < bytes.len() {
            let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(take(&mut pos, id_len)?)
                .map_err(|_| err(pos, "tensor id is not utf-8"))?
                .to_string();
            let dtype = match take(&mut pos, 1)?[0] {
                0 => DType::F32,
                1 => DType::I8,
                2 => DType::I32,
                _ => return Err(err(pos - 1, "unknown dtype code")),
            };
            let len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let raw = take(&mut pos, len * dtype.size_bytes())?;
            entries.push(TraceEntry {
                tensor_id: id,
                data: TensorData::from_le_bytes(dtype, raw)?,
            });
        }
        Ok(Trace { entries })
    }
}

fn quant_of<'a>(g: &'a ModelGraph, id: &str) -> Result<&'a QuantParams> {
    g.require_tensor(id)?
        .quant
        .as_ref()
        .ok_or_else(|| Error::graph(id, "missing quantization parameters on the int8 path"))
}

fn weight<'a>(g: &'a ModelGraph, node: &Node, k: usize) -> Result<&'a TensorData> {
    g.weights
        .get(&node.inputs[k])
        .ok_or_else(|| Error::graph(&node.id, format!("weight {} has no data", node.inputs[k])))
}

/// Per-channel requantization multipliers of a dense/conv1d node.
pub fn node_multipliers(g: &ModelGraph, node: &Node) -> Result<Vec<f64>> {
    let sx = quant_of(g, &node.inputs[0])?.scales[0];
    let wq = quant_of(g, &node.inputs[1])?;
    let sy = quant_of(g, &node.output)?.scales[0];
    let channels = match node.op {
        Op::Dense { units } => units,
        Op::Conv1d { filters, .. } => filters,
        _ => return Err(Error::graph(&node.id, "no requantization for this op")),
    };
    Ok((0..channels)
        .map(|c| requant_multiplier(sx, wq.scale(c), sy))
        .collect())
}

fn mismatch(node: &Node, what: &str) -> Error {
    Error::graph(&node.id, format!("unexpected operand types: {what}"))
}

/// Executes one node given its activation input.
pub fn eval_node(g: &ModelGraph, node: &Node, x: &Value) -> Result<Value> {
    let in_shape = &g.require_tensor(&node.inputs[0])?.shape;
    let relu = node.fused_activation == Activation::Relu;
    Ok(match (&node.op, x) {
        (Op::Dense { units }, Value::F32(xv)) => {
            let w = weight(g, node, 1)?.as_f32().ok_or_else(|| mismatch(node, "f32 weights"))?;
            let b = weight(g, node, 2)?.as_f32().ok_or_else(|| mismatch(node, "f32 bias"))?;
            Value::F32(dense_f32(xv, w, b, *units, relu))
        }
        (Op::Dense { units }, Value::I8(xv)) => {
            let w = weight(g, node, 1)?.as_i8().ok_or_else(|| mismatch(node, "i8 weights"))?;
            let b = weight(g, node, 2)?.as_i32().ok_or_else(|| mismatch(node, "i32 bias"))?;
            let m = node_multipliers(g, node)?;
            let layer = QuantizedLayer {
                input_zero_point: quant_of(g, &node.inputs[0])?.zero_point,
                output_zero_point: quant_of(g, &node.output)?.zero_point,
                multipliers: &m,
                relu,
            };
            Value::I8(dense_i8(xv, w, b, *units, &layer))
        }
        (
            Op::Conv1d {
                filters,
                kernel_size,
                stride,
            },
            _,
        ) => {
            let geo = Conv1dGeometry {
                in_len: in_shape[0],
                in_ch: in_shape[1],
                filters: *filters,
                kernel: *kernel_size,
                stride: *stride,
            };
            match x {
                Value::F32(xv) => {
                    let w = weight(g, node, 1)?.as_f32().ok_or_else(|| mismatch(node, "f32 weights"))?;
                    let b = weight(g, node, 2)?.as_f32().ok_or_else(|| mismatch(node, "f32 bias"))?;
                    Value::F32(conv1d_f32(xv, w, b, &geo, relu))
                }
                Value::I8(xv) => {
                    let w = weight(g, node, 1)?.as_i8().ok_or_else(|| mismatch(node, "i8 weights"))?;
                    let b = weight(g, node, 2)?.as_i32().ok_or_else(|| mismatch(node, "i32 bias"))?;
                    let m = node_multipliers(g, node)?;
                    let layer = QuantizedLayer {
                        input_zero_point: quant_of(g, &node.inputs[0])?.zero_point,
                        output_zero_point: quant_of(g, &node.output)?.zero_point,
                        multipliers: &m,
                        relu,
                    };
                    Value::I8(conv1d_i8(xv, w, b, &geo, &layer))
                }
            }
        }
        (Op::Relu, Value::F32(xv)) => Value::F32(xv.iter().map(|v| v.max(0.0)).collect()),
        (Op::Relu, Value::I8(xv)) => {
            let zp = quant_of(g, &node.inputs[0])?.zero_point.clamp(-128, 127) as i8;
            Value::I8(xv.iter().map(|&v| v.max(zp)).collect())
        }
        (Op::MaxPool1d { pool, stride }, Value::F32(xv)) => {
            Value::F32(maxpool1d(xv, in_shape[0], in_shape[1], *pool, *stride))
        }
        (Op::MaxPool1d { pool, stride }, Value::I8(xv)) => {
            Value::I8(maxpool1d(xv, in_shape[0], in_shape[1], *pool, *stride))
        }
        (Op::Flatten, v) => v.clone(),
        (Op::Softmax, Value::F32(xv)) => Value::F32(softmax_f32(xv)),
        (Op::Softmax, Value::I8(xv)) => {
            let q = quant_of(g, &node.inputs[0])?;
            let deq: Vec<f32> = xv.iter().map(|&v| dequantize_value(v, q)).collect();
            Value::F32(softmax_f32(&deq))
        }
        (Op::KmeansDistance { k }, _) => {
            let c = weight(g, node, 1)?.as_f32().ok_or_else(|| mismatch(node, "f32 centroids"))?;
            let xf: Vec<f32> = match x {
                Value::F32(v) => v.clone(),
                Value::I8(v) => {
                    let q = quant_of(g, &node.inputs[0])?;
                    v.iter().map(|&e| dequantize_value(e, q)).collect()
                }
            };
            Value::F32(vec![kmeans_distance_f32(&xf, c, *k)])
        }
    })
}

/// Converts float input values into the graph's input dtype.
pub fn prepare_input(g: &ModelGraph, input: &[f32]) -> Result<Value> {
    let spec = g.input_spec()?;
    if input.len() != spec.elements() {
        return Err(Error::invalid(format!(
            "input has {} values, graph expects {:?} = {}",
            input.len(),
            spec.shape,
            spec.elements()
        )));
    }
    Ok(match spec.dtype {
        DType::F32 => Value::F32(input.to_vec()),
        DType::I8 => {
            let q = quant_of(g, &g.input)?;
            Value::I8(input.iter().map(|&x| quantize_value(x, q)).collect())
        }
        DType::I32 => return Err(Error::graph(&g.input, "i32 graph input")),
    })
}

/// Converts the final tensor to float output.
pub fn finish_output(g: &ModelGraph, v: &Value) -> Result<Vec<f32>> {
    Ok(match v {
        Value::F32(v) => v.clone(),
        Value::I8(q) => {
            let params = quant_of(g, &g.output)?;
            q.iter().map(|&e| dequantize_value(e, params)).collect()
        }
    })
}

fn run_internal(g: &ModelGraph, input: &[f32], trace: bool) -> Result<(Vec<f32>, Option<Trace>)> {
    let mut values: BTreeMap<&str, Value> = BTreeMap::new();
    let mut entries = Vec::new();
    let x = prepare_input(g, input)?;
    if trace {
        entries.push(TraceEntry {
            tensor_id: g.input.clone(),
            data: x.to_tensor_data(),
        });
    }
    values.insert(g.input.as_str(), x);
    for node in &g.nodes {
        let x = values
            .get(node.inputs[0].as_str())
            .ok_or_else(|| Error::graph(&node.id, "input not computed"))?;
        let y = eval_node(g, node, x)?;
        if trace {
            entries.push(TraceEntry {
                tensor_id: node.output.clone(),
                data: y.to_tensor_data(),
            });
        }
        values.insert(node.output.as_str(), y);
    }
    let out = values
        .get(g.output.as_str())
        .ok_or_else(|| Error::graph(&g.output, "output not computed"))?;
    Ok((finish_output(g, out)?, trace.then_some(Trace { entries })))
}

/// Runs a flat input vector through the graph.
pub fn run_flat(g: &ModelGraph, input: &[f32]) -> Result<Vec<f32>> {
    run_internal(g, input, false).map(|(o, _)| o)
}

pub fn run_flat_traced(g: &ModelGraph, input: &[f32]) -> Result<(Vec<f32>, Trace)> {
    let (out, trace) = run_internal(g, input, true)?;
    Ok((out, trace.expect("trace requested")))
}

fn check_matrix(g: &ModelGraph, input: &FeatureMatrix) -> Result<()> {
    let spec = g.input_spec()?;
    let matches = match spec.shape.as_slice() {
        [r, c] => *r == input.rows && *c == input.cols,
        _ => spec.elements() == input.len(),
    };
    if !matches {
        return Err(Error::invalid(format!(
            "input {}×{} does not match graph input {:?}",
            input.rows, input.cols, spec.shape
        )));
    }
    Ok(())
}

pub fn run_graph(g: &ModelGraph, input: &FeatureMatrix) -> Result<Vec<f32>> {
    check_matrix(g, input)?;
    run_flat(g, &input.values)
}

pub fn run_graph_traced(g: &ModelGraph, input: &FeatureMatrix) -> Result<(Vec<f32>, Trace)> {
    check_matrix(g, input)?;
    run_flat_traced(g, &input.values)
}

/// Executes with every activation stored in `arena` at its planned offset.
/// Each node reads its input back from arena bytes, so a plan that lets
/// live tensors collide changes the result. `after_node(step, arena)` runs
/// after each node writes its output.
pub fn run_in_arena(
    g: &ModelGraph,
    plan: &ArenaPlan,
    input: &[f32],
    arena: &mut [u8],
    mut after_node: impl FnMut(usize, &[u8]),
) -> Result<Vec<f32>> {
    if arena.len() < plan.peak_bytes {
        return Err(Error::invalid(format!(
            "arena of {} bytes is smaller than the plan ({})",
            arena.len(),
            plan.peak_bytes
        )));
    }
    let store = |arena: &mut [u8], id: &str, v: &Value| -> Result<()> {
        let off = plan
            .offset(id)
            .ok_or_else(|| Error::graph(id, "tensor missing from arena plan"))?;
        let bytes = v.to_le_bytes();
        arena[off..off + bytes.len()].copy_from_slice(&bytes);
        Ok(())
    };
    let load = |arena: &[u8], id: &str| -> Result<Value> {
        let spec = g.require_tensor(id)?;
        let off = plan
            .offset(id)
            .ok_or_else(|| Error::graph(id, "tensor missing from arena plan"))?;
        Value::from_le_bytes(spec.dtype, &arena[off..off + spec.size_bytes()])
    };
    store(arena, &g.input, &prepare_input(g, input)?)?;
    for (step, node) in g.nodes.iter().enumerate() {
        let x = load(arena, &node.inputs[0])?;
        let y = eval_node(g, node, &x)?;
        store(arena, &node.output, &y)?;
        after_node(step, arena);
    }
    finish_output(g, &load(arena, &g.output)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::GraphBuilder;

    #[test]
    fn chain_plan_peak() {
        let lt = [
            Lifetime { size: 100, first: 0, last: 0 },
            Lifetime { size: 50, first: 0, last: 1 },
            Lifetime { size: 80, first: 1, last: 1 },
        ];
        assert_eq!(live_lower_bound(&lt), 150);
        let (offsets, peak) = plan_lifetimes(&lt, ARENA_ALIGNMENT);
        // A at 0, C reuses A's bytes, B lands after A on a 16-byte boundary.
        assert_eq!(offsets, vec![0, 112, 0]);
        assert_eq!(peak, 162);
        let (_, unaligned) = plan_lifetimes(&lt, 1);
        assert_eq!(unaligned, 150);
    }

    #[test]
    fn single_tensor_plan() {
        let (offsets, peak) = plan_lifetimes(&[Lifetime { size: 64, first: 0, last: 0 }], 16);
        assert_eq!(offsets, vec![0]);
        assert_eq!(peak, 64);
    }

    #[test]
    fn graph_plan_is_valid() {
        let mut b = GraphBuilder::new(&[20, 3]);
        b.conv1d(4, 3, 1).unwrap().relu().unwrap().maxpool1d(2, 2).unwrap().flatten().unwrap();
        b.dense(3).unwrap().softmax().unwrap();
        let g = b.finish().unwrap();
        let plan = plan_arena(&g).unwrap();
        plan.check().unwrap();
        assert!(plan.peak_bytes >= plan.live_lower_bound());
        let total: usize = plan.sizes.values().map(|s| align_up(*s, 16)).sum();
        assert!(plan.peak_bytes <= total);
    }

    #[test]
    fn dense_identity() {
        let mut b = GraphBuilder::new(&[2]);
        b.dense_with(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let g = b.finish().unwrap();
        assert_eq!(run_flat(&g, &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn softmax_uniform() {
        let out = softmax_f32(&[0.0, 0.0, 0.0]);
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn input_shape_mismatch() {
        let mut b = GraphBuilder::new(&[2, 2]);
        b.flatten().unwrap();
        let g = b.finish().unwrap();
        let m = FeatureMatrix::new(1, 4, vec![0.0; 4]).unwrap();
        assert!(run_graph(&g, &m).is_err());
    }

    #[test]
    fn i8_graph_without_quant_params_fails() {
        let mut b = GraphBuilder::new(&[2]);
        b.dense(2).unwrap();
        let mut g = b.finish().unwrap();
        g.tensors[0].dtype = DType::I8;
        assert!(run_flat(&g, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn quantize_saturates_and_rounds_away() {
        let q = QuantParams::per_tensor(0.5, 0);
        assert_eq!(quantize_value(0.25, &q), 1);
        assert_eq!(quantize_value(-0.25, &q), -1);
        assert_eq!(quantize_value(1000.0, &q), 127);
        assert_eq!(quantize_value(-1000.0, &q), -128);
    }

    #[test]
    fn trace_dump_round_trip() {
        let mut b = GraphBuilder::new(&[3]);
        b.dense(2).unwrap().softmax().unwrap();
        let g = b.finish().unwrap();
        let m = FeatureMatrix::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let (_, trace) = run_graph_traced(&g, &m).unwrap();
        assert_eq!(trace.entries.len(), 3);
        let back = Trace::decode(&trace.encode()).unwrap();
        assert_eq!(back, trace);
        assert!(Trace::decode(&trace.encode()[..5]).is_err());
    }

    #[test]
    fn arena_run_matches_plain_run() {
        let mut b = GraphBuilder::new(&[12, 2]);
        let w: Vec<f32> = (0..24).map(|i| (i as f32 * 0.37).sin()).collect();
        b.conv1d_with(4, 3, 1, w, vec![0.1, -0.1, 0.2, 0.0]).unwrap().relu().unwrap();
        b.flatten().unwrap().dense(3).unwrap().softmax().unwrap();
        let g = b.finish().unwrap();
        let input: Vec<f32> = (0..24).map(|i| (i as f32 * 0.11).cos()).collect();
        let plan = plan_arena(&g).unwrap();
        let mut arena = vec![0xA5u8; plan.peak_bytes];
        let via_arena = run_in_arena(&g, &plan, &input, &mut arena, |_, _| {}).unwrap();
        assert_eq!(via_arena, run_flat(&g, &input).unwrap());
    }
}
