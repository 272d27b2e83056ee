//! Post-training int8 quantization.
//!
//! Activations are asymmetric per tensor, weights symmetric per output
//! channel, biases int32 at `s_in · s_w[c]`. Softmax and k-means distance
//! outputs stay f32.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{round_half_away, run_flat_traced};
use crate::ir::{shape_infer_validate, DType, ModelGraph, Op, QuantParams, TensorData};

/// Observed value ranges, keyed by tensor id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub activations: BTreeMap<String, (f32, f32)>,
    /// Per output channel `(min, max)` of each dense/conv1d weight.
    pub weights: BTreeMap<String, Vec<(f32, f32)>>,
}

fn weight_channels(op: &Op, w: &[f32]) -> Vec<Vec<f32>> {
    match op {
        Op::Dense { units } => (0..*units)
            .map(|u| w.iter().skip(u).step_by(*units).copied().collect())
            .collect(),
        Op::Conv1d { filters, .. } => {
            let span = w.len() / filters;
            w.chunks(span).map(<[f32]>::to_vec).collect()
        }
        _ => Vec::new(),
    }
}

fn min_max(v: &[f32]) -> (f32, f32) {
    v.iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Runs the float graph over the representative set, keeping a running
/// min/max for every activation tensor.
pub fn calibrate_ranges(g: &ModelGraph, representative: &[Vec<f32>]) -> Result<Ranges> {
    if representative.is_empty() {
        return Err(Error::invalid("representative set is empty"));
    }
    if g.dtype() != DType::F32 {
        return Err(Error::invalid("range calibration needs a float graph"));
    }
    let mut ranges = Ranges::default();
    for x in representative {
        let (_, trace) = run_flat_traced(g, x)?;
        for e in trace.entries {
            let vals = e.data.as_f32().expect("float graph");
            let (lo, hi) = min_max(vals);
            let r = ranges
                .activations
                .entry(e.tensor_id)
                .or_insert((f32::INFINITY, f32::NEG_INFINITY));
            r.0 = r.0.min(lo);
            r.1 = r.1.max(hi);
        }
    }
    for node in &g.nodes {
        if let Op::Dense { .. } | Op::Conv1d { .. } = node.op {
            let w = g.weights[&node.inputs[1]]
                .as_f32()
                .ok_or_else(|| Error::graph(&node.id, "weights are not f32"))?;
            ranges.weights.insert(
                node.inputs[1].clone(),
                weight_channels(&node.op, w).iter().map(|c| min_max(c)).collect(),
            );
        }
    }
    Ok(ranges)
}

/// Asymmetric activation parameters for `[min, max]`. The range is widened
/// to include zero so that zero is exactly representable.
///
/// `scale = (max − min)/255`, `zero_point = −128 − round(min/scale)`.
/// A degenerate range gets scale 1 and a warning.
pub fn activation_quant(min: f32, max: f32) -> (QuantParams, Option<String>) {
    let lo = f64::from(min.min(0.0));
    let hi = f64::from(max.max(0.0));
    let (scale, warning) = if hi > lo {
        ((hi - lo) / 255.0, None)
    } else {
        (1.0, Some(format!("degenerate range [{min}, {max}], scale set to 1")))
    };
    let zp = (-128.0 - round_half_away(lo / scale)).clamp(-128.0, 127.0) as i32;
    (QuantParams::per_tensor(scale, zp), warning)
}

/// Symmetric scale for one weight channel: `max|w| / 127` (1 for an
/// all-zero channel).
pub fn weight_scale(min: f32, max: f32) -> f64 {
    let m = f64::from(min.abs().max(max.abs()));
    if m > 0.0 {
        m / 127.0
    } else {
        1.0
    }
}

pub fn quantize_symmetric(x: f32, scale: f64) -> i8 {
    round_half_away(f64::from(x) / scale).clamp(-127.0, 127.0) as i8
}

pub fn quantize_bias(b: f32, scale: f64) -> i32 {
    round_half_away(f64::from(b) / scale).clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32
}

#[derive(Debug, Clone)]
pub struct Quantized {
    pub graph: ModelGraph,
    pub warnings: Vec<String>,
}

/// Rewrites a calibrated float graph into the int8 form run by the
/// interpreter and generated code.
pub fn quantize_graph(g: &ModelGraph, ranges: &Ranges) -> Result<Quantized> {
    if g.dtype() != DType::F32 || g.weights.values().any(|w| w.dtype() != DType::F32) {
        return Err(Error::invalid("graph is already quantized"));
    }
    let mut out = g.clone();
    let mut warnings = Vec::new();
    let act_params = |id: &str, warnings: &mut Vec<String>| -> Result<QuantParams> {
        let (lo, hi) = *ranges
            .activations
            .get(id)
            .ok_or_else(|| Error::graph(id, "no calibrated range for tensor"))?;
        let (q, w) = activation_quant(lo, hi);
        if let Some(w) = w {
            warnings.push(format!("{id}: {w}"));
        }
        Ok(q)
    };

    let input_q = act_params(&g.input, &mut warnings)?;
    let set = |g: &mut ModelGraph, id: &str, dtype: DType, q: Option<QuantParams>| {
        let t = g.tensor_mut(id).expect("validated graph");
        t.dtype = dtype;
        t.quant = q;
    };
    set(&mut out, &g.input, DType::I8, Some(input_q));

    for node in &g.nodes {
        let in_q = out
            .require_tensor(&node.inputs[0])?
            .quant
            .clone();
        match &node.op {
            Op::Dense { .. } | Op::Conv1d { .. } => {
                let in_q = in_q.ok_or_else(|| Error::graph(&node.id, "float input to an int8 layer"))?;
                let w_id = &node.inputs[1];
                let b_id = &node.inputs[2];
                let w = g.weights[w_id].as_f32().expect("checked f32");
                let b = g.weights[b_id].as_f32().expect("checked f32");
                let channels = weight_channels(&node.op, w);
                let scales: Vec<f64> = match ranges.weights.get(w_id) {
                    Some(r) if r.len() == channels.len() => {
                        r.iter().map(|&(lo, hi)| weight_scale(lo, hi)).collect()
                    }
                    _ => channels
                        .iter()
                        .map(|c| {
                            let (lo, hi) = min_max(c);
                            weight_scale(lo, hi)
                        })
                        .collect(),
                };
                let wq: Vec<i8> = match node.op {
                    Op::Dense { units } => w
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| quantize_symmetric(v, scales[i % units]))
                        .collect(),
                    _ => {
                        let span = w.len() / channels.len();
                        w.iter()
                            .enumerate()
                            .map(|(i, &v)| quantize_symmetric(v, scales[i / span]))
                            .collect()
                    }
                };
                let bias_scales: Vec<f64> = scales.iter().map(|s| s * in_q.scales[0]).collect();
                let bq: Vec<i32> = b
                    .iter()
                    .zip(&bias_scales)
                    .map(|(&v, &s)| quantize_bias(v, s))
                    .collect();
                out.weights.insert(w_id.clone(), TensorData::I8(wq));
                out.weights.insert(b_id.clone(), TensorData::I32(bq));
                set(&mut out, w_id, DType::I8, Some(QuantParams::per_channel(scales)));
                set(&mut out, b_id, DType::I32, Some(QuantParams::per_channel(bias_scales)));
                let oq = act_params(&node.output, &mut warnings)?;
                set(&mut out, &node.output, DType::I8, Some(oq));
            }
            Op::Relu | Op::MaxPool1d { .. } | Op::Flatten => match in_q {
                Some(q) => set(&mut out, &node.output, DType::I8, Some(q)),
                None => set(&mut out, &node.output, DType::F32, None),
            },
            Op::Softmax | Op::KmeansDistance { .. } => {
                set(&mut out, &node.output, DType::F32, None);
            }
        }
    }
    Ok(Quantized {
        graph: shape_infer_validate(&out)?,
        warnings,
    })
}

/// Calibrates on `representative` and quantizes in one step.
pub fn quantize_with(g: &ModelGraph, representative: &[Vec<f32>]) -> Result<Quantized> {
    quantize_graph(g, &calibrate_ranges(g, representative)?)
}
