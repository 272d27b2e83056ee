//! Operator-graph model representation.
//!
//! Activation layouts: the graph input is `[rows, cols]` (a feature
//! matrix); 1D ops work on `[length, channels]`; dense consumes any shape
//! as a flat vector and produces `[units]`.
//!
//! Weight layouts:
//! - dense: weight `[in, units]`, bias `[units]`
//! - conv1d: weight `[filters, kernel_size, in_channels]`, bias `[filters]`
//! - kmeans_distance: centroids `[k, dim]`
//!
//! Only `valid` padding is supported.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I8,
    /// Quantized biases only.
    I32,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I8 => 1,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::I8 => "i8",
            DType::I32 => "i32",
        })
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "float32" | "float" => Ok(DType::F32),
            "i8" | "int8" => Ok(DType::I8),
            other => Err(Error::Config(format!("unknown dtype `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerTensor,
    PerChannel,
}

/// Affine quantization: `real = scale · (q − zero_point)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    /// One entry per tensor, or one per output channel.
    pub scales: Vec<f64>,
    pub zero_point: i32,
    pub granularity: Granularity,
}

impl QuantParams {
    pub fn per_tensor(scale: f64, zero_point: i32) -> Self {
        QuantParams {
            scales: vec![scale],
            zero_point,
            granularity: Granularity::PerTensor,
        }
    }

    pub fn per_channel(scales: Vec<f64>) -> Self {
        QuantParams {
            scales,
            zero_point: 0,
            granularity: Granularity::PerChannel,
        }
    }

    /// Scale of channel `c` (per-tensor params ignore `c`).
    pub fn scale(&self, c: usize) -> f64 {
        match self.granularity {
            Granularity::PerTensor => self.scales[0],
            Granularity::PerChannel => self.scales[c],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub id: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
}

impl TensorSpec {
    pub fn new(id: impl Into<String>, shape: Vec<usize>, dtype: DType) -> Self {
        TensorSpec {
            id: id.into(),
            shape,
            dtype,
            quant: None,
        }
    }

    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn size_bytes(&self) -> usize {
        self.elements() * self.dtype.size_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Dense { units: usize },
    Conv1d { filters: usize, kernel_size: usize, stride: usize },
    Relu,
    Softmax,
    #[serde(rename = "maxpool1d")]
    MaxPool1d { pool: usize, stride: usize },
    Flatten,
    KmeansDistance { k: usize },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Dense { .. } => OpKind::Dense,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::Relu => OpKind::Relu,
            Op::Softmax => OpKind::Softmax,
            Op::MaxPool1d { .. } => OpKind::MaxPool1d,
            Op::Flatten => OpKind::Flatten,
            Op::KmeansDistance { .. } => OpKind::KmeansDistance,
        }
    }

    /// Number of constant inputs after the activation input.
    pub fn weight_inputs(&self) -> usize {
        match self {
            Op::Dense { .. } | Op::Conv1d { .. } => 2,
            Op::KmeansDistance { .. } => 1,
            _ => 0,
        }
    }
}

/// Operator kinds, used for kernel selection and code-size accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Dense,
    Conv1d,
    Relu,
    Softmax,
    #[serde(rename = "maxpool1d")]
    MaxPool1d,
    Flatten,
    KmeansDistance,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::Dense,
        OpKind::Conv1d,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::MaxPool1d,
        OpKind::Flatten,
        OpKind::KmeansDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Dense => "dense",
            OpKind::Conv1d => "conv1d",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::MaxPool1d => "maxpool1d",
            OpKind::Flatten => "flatten",
            OpKind::KmeansDistance => "kmeans_distance",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub op: Op,
    /// Activation input first, then constant inputs.
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default)]
    pub fused_activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dtype", content = "values", rename_all = "lowercase")]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
            TensorData::I32(_) => DType::I32,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match self {
            TensorData::I8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match self {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    /// Little-endian bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
            TensorData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Result<Self> {
        let width = dtype.size_bytes();
        if !bytes.len().is_multiple_of(width) {
            return Err(Error::Checksum(format!(
                "{} bytes is not a whole number of {dtype} values",
                bytes.len()
            )));
        }
        Ok(match dtype {
            DType::F32 => TensorData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
            DType::I8 => TensorData::I8(bytes.iter().map(|&b| b as i8).collect()),
            DType::I32 => TensorData::I32(
                bytes
                    .chunks_exact(4)
                    .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub tensors: Vec<TensorSpec>,
    /// Topological order.
    pub nodes: Vec<Node>,
    pub weights: BTreeMap<String, TensorData>,
    pub input: String,
    pub output: String,
}

impl ModelGraph {
    pub fn tensor(&self, id: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.id == id)
    }

    pub fn tensor_mut(&mut self, id: &str) -> Option<&mut TensorSpec> {
        self.tensors.iter_mut().find(|t| t.id == id)
    }

    pub fn require_tensor(&self, id: &str) -> Result<&TensorSpec> {
        self.tensor(id)
            .ok_or_else(|| Error::graph(id, "tensor not declared"))
    }

    pub fn input_spec(&self) -> Result<&TensorSpec> {
        self.require_tensor(&self.input)
    }

    pub fn output_spec(&self) -> Result<&TensorSpec> {
        self.require_tensor(&self.output)
    }

    pub fn is_weight(&self, id: &str) -> bool {
        self.weights.contains_key(id)
    }

    /// Non-constant tensors: the graph input and every node output.
    pub fn activation_ids(&self) -> Vec<&str> {
        std::iter::once(self.input.as_str())
            .chain(self.nodes.iter().map(|n| n.output.as_str()))
            .collect()
    }

    /// Graph dtype: the dtype of the input tensor.
    pub fn dtype(&self) -> DType {
        self.tensor(&self.input).map_or(DType::F32, |t| t.dtype)
    }

    pub fn op_kinds(&self) -> BTreeSet<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    pub fn weight_bytes(&self) -> usize {
        self.weights
            .values()
            .map(|w| w.len() * w.dtype().size_bytes())
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.values().map(TensorData::len).sum()
    }

    fn consumers(&self, tensor: &str) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.iter().any(|i| i == tensor))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Output shape of `op` for the given activation input shape.
pub fn infer_output_shape(node: &Node, input: &[usize]) -> Result<Vec<usize>> {
    let err = |m: String| Err(Error::graph(&node.id, m));
    let elements: usize = input.iter().product();
    match &node.op {
        Op::Dense { units } => {
            if *units == 0 {
                return err("dense units must be ≥ 1".into());
            }
            Ok(vec![*units])
        }
        Op::Conv1d {
            filters,
            kernel_size,
            stride,
        } => {
            if *filters == 0 || *kernel_size == 0 || *stride == 0 {
                return err("conv1d filters, kernel_size and stride must be ≥ 1".into());
            }
            let [len, _ch] = input else {
                return err(format!("conv1d expects [length, channels], got {input:?}"));
            };
            if len < kernel_size {
                return err(format!("conv1d kernel {kernel_size} longer than input {len}"));
            }
            Ok(vec![(len - kernel_size) / stride + 1, *filters])
        }
        Op::MaxPool1d { pool, stride } => {
            if *pool == 0 || *stride == 0 {
                return err("maxpool1d pool and stride must be ≥ 1".into());
            }
            let [len, ch] = input else {
                return err(format!("maxpool1d expects [length, channels], got {input:?}"));
            };
            if len < pool {
                return err(format!("pool {pool} longer than input {len}"));
            }
            Ok(vec![(len - pool) / stride + 1, *ch])
        }
        Op::Relu => Ok(input.to_vec()),
        Op::Softmax => Ok(vec![elements]),
        Op::Flatten => Ok(vec![elements]),
        Op::KmeansDistance { k } => {
            if *k == 0 {
                return err("kmeans_distance needs k ≥ 1".into());
            }
            Ok(vec![1])
        }
    }
}

/// Expected shapes of the constant inputs of `node`.
pub fn expected_weight_shapes(node: &Node, input: &[usize]) -> Vec<Vec<usize>> {
    let elements: usize = input.iter().product();
    match &node.op {
        Op::Dense { units } => vec![vec![elements, *units], vec![*units]],
        Op::Conv1d {
            filters,
            kernel_size,
            ..
        } => {
            let ch = input.get(1).copied().unwrap_or(0);
            vec![vec![*filters, *kernel_size, ch], vec![*filters]]
        }
        Op::KmeansDistance { k } => vec![vec![*k, elements]],
        _ => Vec::new(),
    }
}

/// Checks structure, dtypes and weights and fills in every activation
/// shape. Declared shapes that disagree with inference are errors naming
/// the node.
pub fn shape_infer_validate(g: &ModelGraph) -> Result<ModelGraph> {
    let mut g = g.clone();
    let mut ids = BTreeSet::new();
    for t in &g.tensors {
        if !ids.insert(t.id.as_str()) {
            return Err(Error::graph(&t.id, "tensor declared twice"));
        }
        if t.dtype == DType::I8 && t.quant.is_none() {
            return Err(Error::graph(&t.id, "i8 tensor without quantization parameters"));
        }
    }
    let input = g.input_spec()?.clone();
    if input.shape.is_empty() || input.elements() == 0 {
        return Err(Error::graph(&g.input, "input shape must be non-empty and positive"));
    }
    g.output_spec()?;
    if g.nodes.is_empty() {
        return Err(Error::graph("graph", "graph has no nodes"));
    }

    let mut produced: BTreeMap<String, usize> = BTreeMap::new();
    let mut weight_refs: BTreeMap<&str, usize> = BTreeMap::new();
    let mut node_ids = BTreeSet::new();
    let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    shapes.insert(g.input.clone(), input.shape.clone());

    let nodes = g.nodes.clone();
    for (idx, node) in nodes.iter().enumerate() {
        if !node_ids.insert(node.id.as_str()) {
            return Err(Error::graph(&node.id, "duplicate node id"));
        }
        let expected_inputs = 1 + node.op.weight_inputs();
        if node.inputs.len() != expected_inputs {
            return Err(Error::graph(
                &node.id,
                format!("expects {expected_inputs} inputs, has {}", node.inputs.len()),
            ));
        }
        let act = &node.inputs[0];
        if g.is_weight(act) {
            return Err(Error::graph(&node.id, format!("activation input {act} is a constant")));
        }
        if node.output == g.input || g.is_weight(&node.output) {
            return Err(Error::graph(&node.id, "node writes to the graph input or a constant"));
        }
        let in_shape = match shapes.get(act) {
            Some(s) => s.clone(),
            None => {
                let later = nodes[idx..].iter().any(|n| &n.output == act);
                let msg = if later {
                    format!("input {act} is produced later (cycle or bad topological order)")
                } else {
                    format!("input {act} is never produced (dangling)")
                };
                return Err(Error::graph(&node.id, msg));
            }
        };
        for (w, shape) in node.inputs[1..]
            .iter()
            .zip(expected_weight_shapes(node, &in_shape))
        {
            let data = g
                .weights
                .get(w)
                .ok_or_else(|| Error::graph(&node.id, format!("weight {w} has no data")))?;
            let spec = g.require_tensor(w)?;
            if spec.shape != shape {
                return Err(Error::graph(
                    &node.id,
                    format!("weight {w} has shape {:?}, expected {shape:?}", spec.shape),
                ));
            }
            if data.len() != spec.elements() || data.dtype() != spec.dtype {
                return Err(Error::graph(
                    &node.id,
                    format!("weight {w} data does not match its declared shape/dtype"),
                ));
            }
            *weight_refs.entry(w.as_str()).or_default() += 1;
        }
        let out_shape = infer_output_shape(node, &in_shape)?;
        if produced.insert(node.output.clone(), idx).is_some() {
            return Err(Error::graph(&node.id, format!("tensor {} produced twice", node.output)));
        }
        if node.fused_activation == Activation::Relu
            && !matches!(node.op, Op::Dense { .. } | Op::Conv1d { .. })
        {
            return Err(Error::graph(&node.id, "only dense and conv1d carry a fused activation"));
        }
        let spec = g
            .tensor_mut(&node.output)
            .ok_or_else(|| Error::graph(&node.id, format!("output {} not declared", node.output)))?;
        if !spec.shape.is_empty() && spec.shape != out_shape {
            return Err(Error::graph(
                &node.id,
                format!("output declared {:?}, inferred {out_shape:?}", spec.shape),
            ));
        }
        spec.shape = out_shape.clone();
        shapes.insert(node.output.clone(), out_shape);
    }

    for w in g.weights.keys() {
        match weight_refs.get(w.as_str()) {
            Some(1) => {}
            Some(n) => return Err(Error::graph(w, format!("weight referenced {n} times"))),
            None => return Err(Error::graph(w, "weight never referenced")),
        }
    }
    if !produced.contains_key(&g.output) {
        return Err(Error::graph(&g.output, "graph output is not produced by any node"));
    }
    for t in &g.tensors {
        let used = t.id == g.input
            || produced.contains_key(&t.id)
            || g.weights.contains_key(&t.id);
        if !used {
            return Err(Error::graph(&t.id, "dangling tensor"));
        }
    }
    for node in &g.nodes {
        if node.output != g.output && g.consumers(&node.output).is_empty() {
            return Err(Error::graph(&node.id, format!("output {} is never consumed", node.output)));
        }
    }
    for t in &g.tensors {
        if t.elements() == 0 {
            return Err(Error::graph(&t.id, "tensor with zero elements"));
        }
    }
    Ok(g)
}

/// Folds every `relu` whose input comes from a dense or conv1d node with
/// no other consumer into that node's `fused_activation`.
pub fn fuse_activations(g: &ModelGraph) -> ModelGraph {
    let mut g = g.clone();
    loop {
        let candidate = g.nodes.iter().enumerate().find_map(|(ri, relu)| {
            if relu.op != Op::Relu {
                return None;
            }
            let src = &relu.inputs[0];
            let pi = g.nodes.iter().position(|n| &n.output == src)?;
            let producer = &g.nodes[pi];
            let fusable = matches!(producer.op, Op::Dense { .. } | Op::Conv1d { .. })
                && producer.fused_activation == Activation::None
                && *src != g.output
                && g.consumers(src) == vec![ri];
            fusable.then_some((pi, ri))
        });
        let Some((pi, ri)) = candidate else {
            return g;
        };
        let relu = g.nodes.remove(ri);
        let intermediate = std::mem::replace(&mut g.nodes[pi].output, relu.output);
        g.nodes[pi].fused_activation = Activation::Relu;
        g.tensors.retain(|t| t.id != intermediate);
    }
}

/// Incremental graph construction with automatic shapes and ids.
/// Weights start at zero unless given explicitly.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    graph: ModelGraph,
    current: String,
    shape: Vec<usize>,
}

impl GraphBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        GraphBuilder {
            graph: ModelGraph {
                tensors: vec![TensorSpec::new("input", input_shape.to_vec(), DType::F32)],
                nodes: Vec::new(),
                weights: BTreeMap::new(),
                input: "input".into(),
                output: "input".into(),
            },
            current: "input".into(),
            shape: input_shape.to_vec(),
        }
    }

    pub fn current_shape(&self) -> &[usize] {
        &self.shape
    }

    fn push(&mut self, op: Op, weights: Vec<Vec<f32>>) -> Result<&mut Self> {
        let idx = self.graph.nodes.len();
        let id = format!("n{idx}_{}", op.kind().name());
        let mut node = Node {
            id: id.clone(),
            op,
            inputs: vec![self.current.clone()],
            output: format!("t{idx}"),
            fused_activation: Activation::None,
        };
        let shapes = expected_weight_shapes(&node, &self.shape);
        let names = ["w", "b"];
        for (k, (shape, data)) in shapes.into_iter().zip(weights).enumerate() {
            let elements: usize = shape.iter().product();
            let data = if data.is_empty() { vec![0.0; elements] } else { data };
            if data.len() != elements {
                return Err(Error::graph(
                    &id,
                    format!("given {} weight values, shape {shape:?} needs {elements}", data.len()),
                ));
            }
            let wid = format!("{id}_{}", names[k]);
            self.graph.tensors.push(TensorSpec::new(&wid, shape, DType::F32));
            self.graph.weights.insert(wid.clone(), TensorData::F32(data));
            node.inputs.push(wid);
        }
        let out_shape = infer_output_shape(&node, &self.shape)?;
        self.graph
            .tensors
            .push(TensorSpec::new(&node.output, out_shape.clone(), DType::F32));
        self.current = node.output.clone();
        self.shape = out_shape;
        self.graph.nodes.push(node);
        Ok(self)
    }

    pub fn dense(&mut self, units: usize) -> Result<&mut Self> {
        self.push(Op::Dense { units }, vec![Vec::new(), Vec::new()])
    }

    pub fn dense_with(&mut self, units: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<&mut Self> {
        self.push(Op::Dense { units }, vec![weight, bias])
    }

    pub fn conv1d(&mut self, filters: usize, kernel_size: usize, stride: usize) -> Result<&mut Self> {
        self.push(
            Op::Conv1d {
                filters,
                kernel_size,
                stride,
            },
            vec![Vec::new(), Vec::new()],
        )
    }

    pub fn conv1d_with(
        &mut self,
        filters: usize,
        kernel_size: usize,
        stride: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<&mut Self> {
        self.push(
            Op::Conv1d {
                filters,
                kernel_size,
                stride,
            },
            vec![weight, bias],
        )
    }

    pub fn relu(&mut self) -> Result<&mut Self> {
        self.push(Op::Relu, Vec::new())
    }

    pub fn softmax(&mut self) -> Result<&mut Self> {
        self.push(Op::Softmax, Vec::new())
    }

    pub fn maxpool1d(&mut self, pool: usize, stride: usize) -> Result<&mut Self> {
        self.push(Op::MaxPool1d { pool, stride }, Vec::new())
    }

    pub fn flatten(&mut self) -> Result<&mut Self> {
        self.push(Op::Flatten, Vec::new())
    }

    pub fn kmeans_distance(&mut self, k: usize, centroids: Vec<f32>) -> Result<&mut Self> {
        self.push(Op::KmeansDistance { k }, vec![centroids])
    }

    pub fn finish(&self) -> Result<ModelGraph> {
        let mut g = self.graph.clone();
        g.output = self.current.clone();
        shape_infer_validate(&g)
    }
}

pub const MODEL_FORMAT: &str = "tinyforge-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelBody {
    tensors: Vec<TensorSpec>,
    nodes: Vec<Node>,
    input: String,
    output: String,
    /// Little-endian weight bytes, base64.
    weights: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    format: String,
    version: u32,
    graph: ModelBody,
    crc32: u32,
}

fn body_crc(body: &ModelBody) -> Result<u32> {
    Ok(crc32fast::hash(&serde_json::to_vec(body)?))
}

/// Serializes a graph into the JSON model envelope.
pub fn encode_model(g: &ModelGraph) -> Result<Vec<u8>> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let body = ModelBody {
        tensors: g.tensors.clone(),
        nodes: g.nodes.clone(),
        input: g.input.clone(),
        output: g.output.clone(),
        weights: g
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), b64.encode(v.to_le_bytes())))
            .collect(),
    };
    let crc32 = body_crc(&body)?;
    let envelope = ModelEnvelope {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        graph: body,
        crc32,
    };
    let mut bytes = serde_json::to_vec_pretty(&envelope)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parses and validates a model envelope. Any byte sequence yields either
/// a valid graph or an error.
pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    #[derive(Deserialize)]
    struct Header {
        version: u32,
    }
    let header: Header = serde_json::from_slice(bytes)
        .map_err(|e| Error::Checksum(format!("unreadable model envelope: {e}")))?;
    if header.version != MODEL_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: MODEL_VERSION,
        });
    }
    let envelope: ModelEnvelope = serde_json::from_slice(bytes)
        .map_err(|e| Error::Checksum(format!("unreadable model envelope: {e}")))?;
    if envelope.format != MODEL_FORMAT {
        return Err(Error::Checksum(format!("unknown format tag `{}`", envelope.format)));
    }
    let crc = body_crc(&envelope.graph)?;
    if crc != envelope.crc32 {
        return Err(Error::Checksum(format!(
            "crc32 mismatch: stored {:08x}, computed {crc:08x}",
            envelope.crc32
        )));
    }
    let body = envelope.graph;
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut weights = BTreeMap::new();
    for (id, blob) in &body.weights {
        let spec = body
            .tensors
            .iter()
            .find(|t| &t.id == id)
            .ok_or_else(|| Error::graph(id, "weight blob for undeclared tensor"))?;
        let raw = b64
            .decode(blob)
            .map_err(|e| Error::Checksum(format!("weight {id}: {e}")))?;
        weights.insert(id.clone(), TensorData::from_le_bytes(spec.dtype, &raw)?);
    }
    shape_infer_validate(&ModelGraph {
        tensors: body.tensors,
        nodes: body.nodes,
        weights,
        input: body.input,
        output: body.output,
    })
}

pub fn save_model(g: &ModelGraph, path: &Path) -> Result<()> {
    let validated = shape_infer_validate(g)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_model(&validated)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "train or quantize a model first".into(),
            }
        } else {
            Error::Io(e)
        }
    })?;
    decode_model(&bytes)
}
