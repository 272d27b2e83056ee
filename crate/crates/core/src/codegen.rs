//! Interpreter-free C99 code generation.
//!
//! The emitted translation unit bakes weights as `static const` arrays,
//! places every activation at its planned offset in one static arena and
//! calls kernels directly in graph order. Only kernels for op kinds the
//! graph uses are emitted.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::DeviceProfile;
use crate::interp::{node_multipliers, ArenaPlan};
use crate::ir::{Activation, DType, ModelGraph, Node, Op, OpKind, QuantParams, TensorData};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodegenOptions {
    pub symbol_prefix: String,
    /// Expected graph dtype; checked against the graph.
    pub dtype: DType,
    /// Calls an externally defined `<prefix>_trace` after every layer.
    pub emit_trace_hooks: bool,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        CodegenOptions {
            symbol_prefix: "model".into(),
            dtype: DType::F32,
            emit_trace_hooks: false,
        }
    }
}

const C_KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum",
    "extern", "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return",
    "short", "signed", "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void",
    "volatile", "while",
];

pub fn is_c_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !C_KEYWORDS.contains(&s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedC {
    pub header: String,
    pub source: String,
    pub header_name: String,
    pub source_name: String,
}

fn c_ident(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn f32_lit(v: f32) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite constant {v} cannot be emitted")));
    }
    let s = format!("{v:?}");
    Ok(if s.contains('.') || s.contains('e') {
        format!("{s}f")
    } else {
        format!("{s}.0f")
    })
}

fn f64_lit(v: f64) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::invalid(format!("non-finite constant {v} cannot be emitted")));
    }
    let s = format!("{v:?}");
    Ok(if s.contains('.') || s.contains('e') { s } else { format!("{s}.0") })
}

fn emit_array(out: &mut String, ctype: &str, name: &str, items: &[String]) {
    let _ = writeln!(out, "static const {ctype} {name}[{}] = {{", items.len());
    for chunk in items.chunks(8) {
        let _ = writeln!(out, "    {},", chunk.join(", "));
    }
    out.push_str("};\n");
}

fn c_type(dtype: DType) -> &'static str {
    match dtype {
        DType::F32 => "float",
        DType::I8 => "int8_t",
        DType::I32 => "int32_t",
    }
}

const KERNEL_DENSE_F32: &str = "\
static void k_dense_f32(const float *x, size_t n_in, const float *w, const float *b,
                        size_t units, int relu, float *y)
{
    size_t i, u;
    for (u = 0; u < units; ++u) y[u] = b[u];
    for (i = 0; i < n_in; ++i) {
        const float xi = x[i];
        const float *row = w + i * units;
        for (u = 0; u < units; ++u) y[u] += xi * row[u];
    }
    if (relu) {
        for (u = 0; u < units; ++u) if (y[u] < 0.0f) y[u] = 0.0f;
    }
}
";

const KERNEL_DENSE_I8: &str = "\
static void k_dense_i8(const int8_t *x, size_t n_in, int32_t x_zp, const int8_t *w,
                       const int32_t *b, const double *m, size_t units, int32_t y_zp,
                       int32_t lo, int32_t *acc, int8_t *y)
{
    size_t i, u;
    for (u = 0; u < units; ++u) acc[u] = b[u];
    for (i = 0; i < n_in; ++i) {
        const int32_t xv = (int32_t)x[i] - x_zp;
        const int8_t *row = w + i * units;
        for (u = 0; u < units; ++u) acc[u] += xv * (int32_t)row[u];
    }
    for (u = 0; u < units; ++u) y[u] = requant(acc[u], m[u], y_zp, lo);
}
";

const KERNEL_CONV_F32: &str = "\
static void k_conv1d_f32(const float *x, size_t in_len, size_t in_ch, const float *w,
                         const float *b, size_t filters, size_t kernel, size_t stride,
                         int relu, float *y)
{
    const size_t span = kernel * in_ch;
    const size_t out_len = (in_len - kernel) / stride + 1;
    size_t o, f, j;
    for (o = 0; o < out_len; ++o) {
        const float *win = x + o * stride * in_ch;
        for (f = 0; f < filters; ++f) {
            const float *wf = w + f * span;
            float acc = b[f];
            for (j = 0; j < span; ++j) acc += win[j] * wf[j];
            if (relu && acc < 0.0f) acc = 0.0f;
            y[o * filters + f] = acc;
        }
    }
}
";

const KERNEL_CONV_I8: &str = "\
static void k_conv1d_i8(const int8_t *x, size_t in_len, size_t in_ch, int32_t x_zp,
                        const int8_t *w, const int32_t *b, const double *m, size_t filters,
                        size_t kernel, size_t stride, int32_t y_zp, int32_t lo, int8_t *y)
{
    const size_t span = kernel * in_ch;
    const size_t out_len = (in_len - kernel) / stride + 1;
    size_t o, f, j;
    for (o = 0; o < out_len; ++o) {
        const int8_t *win = x + o * stride * in_ch;
        for (f = 0; f < filters; ++f) {
            const int8_t *wf = w + f * span;
            int32_t acc = b[f];
            for (j = 0; j < span; ++j) acc += ((int32_t)win[j] - x_zp) * (int32_t)wf[j];
            y[o * filters + f] = requant(acc, m[f], y_zp, lo);
        }
    }
}
";

const HELPER_REQUANT: &str = "\
static int8_t requant(int32_t acc, double m, int32_t zp, int32_t lo)
{
    double v = round((double)acc * m) + (double)zp;
    if (v < (double)lo) v = (double)lo;
    if (v > 127.0) v = 127.0;
    return (int8_t)v;
}
";

const HELPER_QUANTIZE: &str = "\
static void k_quantize(const float *x, size_t n, double scale, int32_t zp, int8_t *y)
{
    size_t i;
    for (i = 0; i < n; ++i) {
        double v = round((double)x[i] / scale) + (double)zp;
        if (v < -128.0) v = -128.0;
        if (v > 127.0) v = 127.0;
        y[i] = (int8_t)v;
    }
}
";

const HELPER_DEQUANTIZE: &str = "\
static void k_dequantize(const int8_t *x, size_t n, int32_t zp, float scale, float *y)
{
    size_t i;
    for (i = 0; i < n; ++i) y[i] = (float)((int32_t)x[i] - zp) * scale;
}
";

const HELPER_COPY: &str = "\
static void k_copy(const void *src, size_t bytes, void *dst)
{
    const uint8_t *s = (const uint8_t *)src;
    uint8_t *d = (uint8_t *)dst;
    size_t i;
    for (i = 0; i < bytes; ++i) d[i] = s[i];
}
";

const KERNEL_RELU_F32: &str = "\
static void k_relu_f32(const float *x, size_t n, float *y)
{
    size_t i;
    for (i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}
";

const KERNEL_RELU_I8: &str = "\
static void k_relu_i8(const int8_t *x, size_t n, int8_t zp, int8_t *y)
{
    size_t i;
    for (i = 0; i < n; ++i) y[i] = x[i] > zp ? x[i] : zp;
}
";

const KERNEL_POOL_F32: &str = "\
static void k_maxpool1d_f32(const float *x, size_t len, size_t ch, size_t pool,
                            size_t stride, float *y)
{
    const size_t out_len = (len - pool) / stride + 1;
    size_t o, c, p;
    for (o = 0; o < out_len; ++o) {
        for (c = 0; c < ch; ++c) {
            float m = x[o * stride * ch + c];
            for (p = 1; p < pool; ++p) {
                const float v = x[(o * stride + p) * ch + c];
                if (v > m) m = v;
            }
            y[o * ch + c] = m;
        }
    }
}
";

const KERNEL_POOL_I8: &str = "\
static void k_maxpool1d_i8(const int8_t *x, size_t len, size_t ch, size_t pool,
                           size_t stride, int8_t *y)
{
    const size_t out_len = (len - pool) / stride + 1;
    size_t o, c, p;
    for (o = 0; o < out_len; ++o) {
        for (c = 0; c < ch; ++c) {
            int8_t m = x[o * stride * ch + c];
            for (p = 1; p < pool; ++p) {
                const int8_t v = x[(o * stride + p) * ch + c];
                if (v > m) m = v;
            }
            y[o * ch + c] = m;
        }
    }
}
";

const KERNEL_SOFTMAX: &str = "\
static void k_softmax_f32(const float *x, size_t n, float *y)
{
    float m = x[0];
    float s = 0.0f;
    size_t i;
    for (i = 1; i < n; ++i) if (x[i] > m) m = x[i];
    for (i = 0; i < n; ++i) y[i] = expf(x[i] - m);
    for (i = 0; i < n; ++i) s += y[i];
    for (i = 0; i < n; ++i) y[i] /= s;
}
";

const KERNEL_KMEANS_F32: &str = "\
static void k_kmeans_distance_f32(const float *x, size_t dim, const float *c, size_t k, float *y)
{
    float best = INFINITY;
    size_t i, j;
    for (i = 0; i < k; ++i) {
        float d = 0.0f;
        for (j = 0; j < dim; ++j) {
            const float diff = x[j] - c[i * dim + j];
            d += diff * diff;
        }
        if (d < best) best = d;
    }
    y[0] = sqrtf(best);
}
";

const KERNEL_KMEANS_I8: &str = "\
static void k_kmeans_distance_i8(const int8_t *x, size_t dim, int32_t zp, float scale,
                                 const float *c, size_t k, float *y)
{
    float best = INFINITY;
    size_t i, j;
    for (i = 0; i < k; ++i) {
        float d = 0.0f;
        for (j = 0; j < dim; ++j) {
            const float diff = (float)((int32_t)x[j] - zp) * scale - c[i * dim + j];
            d += diff * diff;
        }
        if (d < best) best = d;
    }
    y[0] = sqrtf(best);
}
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Piece {
    Requant,
    Quantize,
    Dequantize,
    Copy,
    DenseF32,
    DenseI8,
    ConvF32,
    ConvI8,
    ReluF32,
    ReluI8,
    PoolF32,
    PoolI8,
    Softmax,
    KmeansF32,
    KmeansI8,
}

impl Piece {
    fn text(self) -> &'static str {
        match self {
            Piece::Requant => HELPER_REQUANT,
            Piece::Quantize => HELPER_QUANTIZE,
            Piece::Dequantize => HELPER_DEQUANTIZE,
            Piece::Copy => HELPER_COPY,
            Piece::DenseF32 => KERNEL_DENSE_F32,
            Piece::DenseI8 => KERNEL_DENSE_I8,
            Piece::ConvF32 => KERNEL_CONV_F32,
            Piece::ConvI8 => KERNEL_CONV_I8,
            Piece::ReluF32 => KERNEL_RELU_F32,
            Piece::ReluI8 => KERNEL_RELU_I8,
            Piece::PoolF32 => KERNEL_POOL_F32,
            Piece::PoolI8 => KERNEL_POOL_I8,
            Piece::Softmax => KERNEL_SOFTMAX,
            Piece::KmeansF32 => KERNEL_KMEANS_F32,
            Piece::KmeansI8 => KERNEL_KMEANS_I8,
        }
    }
}

fn quant<'a>(g: &'a ModelGraph, id: &str) -> Result<&'a QuantParams> {
    g.require_tensor(id)?
        .quant
        .as_ref()
        .ok_or_else(|| Error::graph(id, "int8 tensor without quantization parameters"))
}

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 0,
        DType::I8 => 1,
        DType::I32 => 2,
    }
}

/// Checks that every node has a kernel for its operand types.
fn check_supported(g: &ModelGraph) -> Result<()> {
    for n in &g.nodes {
        let x = g.require_tensor(&n.inputs[0])?.dtype;
        let y = g.require_tensor(&n.output)?.dtype;
        let ok = match (&n.op, x, y) {
            (Op::Dense { .. } | Op::Conv1d { .. }, DType::F32, DType::F32) => true,
            (Op::Dense { .. } | Op::Conv1d { .. }, DType::I8, DType::I8) => true,
            (Op::Relu | Op::MaxPool1d { .. } | Op::Flatten, a, b) => a == b && a != DType::I32,
            (Op::Softmax | Op::KmeansDistance { .. }, DType::F32 | DType::I8, DType::F32) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::graph(
                &n.id,
                format!("no kernel for {} with {x} input and {y} output", n.op.kind().name()),
            ));
        }
        for w in &n.inputs[1..] {
            if !g.weights.contains_key(w) {
                return Err(Error::graph(&n.id, format!("weight {w} has no data")));
            }
        }
    }
    Ok(())
}

struct Emitter<'a> {
    g: &'a ModelGraph,
    plan: &'a ArenaPlan,
}

impl Emitter<'_> {
    fn ptr(&self, id: &str, write: bool) -> Result<String> {
        let spec = self.g.require_tensor(id)?;
        let off = self
            .plan
            .offset(id)
            .ok_or_else(|| Error::graph(id, "tensor missing from arena plan"))?;
        let ty = c_type(spec.dtype);
        Ok(if write {
            format!("({ty} *)(arena.bytes + {off})")
        } else {
            format!("(const {ty} *)(arena.bytes + {off})")
        })
    }

    fn weight_name(&self, id: &str) -> String {
        format!("w_{}", c_ident(id))
    }

    fn call(&self, n: &Node, idx: usize, pieces: &mut BTreeSet<Piece>, scratch: &mut usize) -> Result<String> {
        let g = self.g;
        let x_id = &n.inputs[0];
        let xs = g.require_tensor(x_id)?;
        let x = self.ptr(x_id, false)?;
        let y = self.ptr(&n.output, true)?;
        let relu = i32::from(n.fused_activation == Activation::Relu);
        let i8_path = xs.dtype == DType::I8;
        let lo = |zp: i32| if relu == 1 { zp.max(-128) } else { -128 };
        Ok(match n.op {
            Op::Dense { units } => {
                let (w, b) = (self.weight_name(&n.inputs[1]), self.weight_name(&n.inputs[2]));
                if i8_path {
                    pieces.extend([Piece::DenseI8, Piece::Requant]);
                    *scratch = (*scratch).max(units);
                    let (xz, yz) = (quant(g, x_id)?.zero_point, quant(g, &n.output)?.zero_point);
                    format!(
                        "k_dense_i8({x}, {}, {xz}, {w}, {b}, m_{idx}, {units}, {yz}, {}, acc_scratch, {y});",
                        xs.elements(),
                        lo(yz)
                    )
                } else {
                    pieces.insert(Piece::DenseF32);
                    format!("k_dense_f32({x}, {}, {w}, {b}, {units}, {relu}, {y});", xs.elements())
                }
            }
            Op::Conv1d {
                filters,
                kernel_size,
                stride,
            } => {
                let (w, b) = (self.weight_name(&n.inputs[1]), self.weight_name(&n.inputs[2]));
                let (len, ch) = (xs.shape[0], xs.shape[1]);
                if i8_path {
                    pieces.extend([Piece::ConvI8, Piece::Requant]);
                    let (xz, yz) = (quant(g, x_id)?.zero_point, quant(g, &n.output)?.zero_point);
                    format!(
                        "k_conv1d_i8({x}, {len}, {ch}, {xz}, {w}, {b}, m_{idx}, {filters}, {kernel_size}, {stride}, {yz}, {}, {y});",
                        lo(yz)
                    )
                } else {
                    pieces.insert(Piece::ConvF32);
                    format!(
                        "k_conv1d_f32({x}, {len}, {ch}, {w}, {b}, {filters}, {kernel_size}, {stride}, {relu}, {y});"
                    )
                }
            }
            Op::Relu => {
                if i8_path {
                    pieces.insert(Piece::ReluI8);
                    let zp = quant(g, x_id)?.zero_point.clamp(-128, 127);
                    format!("k_relu_i8({x}, {}, {zp}, {y});", xs.elements())
                } else {
                    pieces.insert(Piece::ReluF32);
                    format!("k_relu_f32({x}, {}, {y});", xs.elements())
                }
            }
            Op::MaxPool1d { pool, stride } => {
                let (len, ch) = (xs.shape[0], xs.shape[1]);
                let kernel = if i8_path { Piece::PoolI8 } else { Piece::PoolF32 };
                pieces.insert(kernel);
                let name = if i8_path { "k_maxpool1d_i8" } else { "k_maxpool1d_f32" };
                format!("{name}({x}, {len}, {ch}, {pool}, {stride}, {y});")
            }
            Op::Flatten => {
                pieces.insert(Piece::Copy);
                format!("k_copy({x}, {}, {y});", xs.size_bytes())
            }
            Op::Softmax => {
                pieces.insert(Piece::Softmax);
                let n_el = xs.elements();
                if i8_path {
                    pieces.insert(Piece::Dequantize);
                    let q = quant(g, x_id)?;
                    format!(
                        "k_dequantize({x}, {n_el}, {}, {}, {y});\n    k_softmax_f32({}, {n_el}, {y});",
                        q.zero_point,
                        f32_lit(q.scales[0] as f32)?,
                        self.ptr(&n.output, false)?
                    )
                } else {
                    format!("k_softmax_f32({x}, {n_el}, {y});")
                }
            }
            Op::KmeansDistance { k } => {
                let c = self.weight_name(&n.inputs[1]);
                if i8_path {
                    pieces.insert(Piece::KmeansI8);
                    let q = quant(g, x_id)?;
                    format!(
                        "k_kmeans_distance_i8({x}, {}, {}, {}, {c}, {k}, {y});",
                        xs.elements(),
                        q.zero_point,
                        f32_lit(q.scales[0] as f32)?
                    )
                } else {
                    pieces.insert(Piece::KmeansF32);
                    format!("k_kmeans_distance_f32({x}, {}, {c}, {k}, {y});", xs.elements())
                }
            }
        })
    }
}

/// Emits `<prefix>.h` and `<prefix>.c`. All checks run before
/// any text is produced.
pub fn emit_c(g: &ModelGraph, plan: &ArenaPlan, opts: &CodegenOptions) -> Result<GeneratedC> {
    let p = &opts.symbol_prefix;
    if !is_c_identifier(p) {
        return Err(Error::Config(format!("symbol prefix `{p}` is not a C identifier")));
    }
    if g.dtype() != opts.dtype {
        return Err(Error::Config(format!(
            "options ask for {} code but the graph is {}",
            opts.dtype,
            g.dtype()
        )));
    }
    check_supported(g)?;
    for id in g.activation_ids() {
        if plan.offset(id).is_none() {
            return Err(Error::graph(id, "arena plan does not cover this tensor"));
        }
    }
    let input = g.input_spec()?;
    let output = g.output_spec()?;
    let upper = p.to_ascii_uppercase();

    let mut body = String::new();
    let mut pieces = BTreeSet::new();
    let mut scratch = 0usize;
    let em = Emitter { g, plan };

    match input.dtype {
        DType::F32 => {
            pieces.insert(Piece::Copy);
            let _ = writeln!(
                body,
                "    k_copy(io_input, sizeof io_input, {});",
                em.ptr(&g.input, true)?
            );
        }
        _ => {
            pieces.insert(Piece::Quantize);
            let q = quant(g, &g.input)?;
            let _ = writeln!(
                body,
                "    k_quantize(io_input, {}, {}, {}, {});",
                input.elements(),
                f64_lit(q.scales[0])?,
                q.zero_point,
                em.ptr(&g.input, true)?
            );
        }
    }
    let hook = |body: &mut String, id: &str| -> Result<()> {
        if opts.emit_trace_hooks {
            let spec = g.require_tensor(id)?;
            let _ = writeln!(
                body,
                "    {p}_trace(\"{id}\", {}, arena.bytes + {}, {});",
                dtype_code(spec.dtype),
                plan.offset(id).unwrap_or(0),
                spec.elements()
            );
        }
        Ok(())
    };
    hook(&mut body, &g.input)?;
    for (idx, n) in g.nodes.iter().enumerate() {
        let _ = writeln!(body, "    {}", em.call(n, idx, &mut pieces, &mut scratch)?);
        hook(&mut body, &n.output)?;
    }
    match output.dtype {
        DType::F32 => {
            pieces.insert(Piece::Copy);
            let _ = writeln!(
                body,
                "    k_copy({}, sizeof io_output, io_output);",
                em.ptr(&g.output, false)?
            );
        }
        _ => {
            pieces.insert(Piece::Dequantize);
            let q = quant(g, &g.output)?;
            let _ = writeln!(
                body,
                "    k_dequantize({}, {}, {}, {}, io_output);",
                em.ptr(&g.output, false)?,
                output.elements(),
                q.zero_point,
                f32_lit(q.scales[0] as f32)?
            );
        }
    }

    let mut consts = String::new();
    for n in &g.nodes {
        for w in &n.inputs[1..] {
            let name = em.weight_name(w);
            match &g.weights[w] {
                TensorData::F32(v) => {
                    let items = v.iter().map(|&x| f32_lit(x)).collect::<Result<Vec<_>>>()?;
                    emit_array(&mut consts, "float", &name, &items);
                }
                TensorData::I8(v) => {
                    emit_array(&mut consts, "int8_t", &name, &v.iter().map(i8::to_string).collect::<Vec<_>>());
                }
                TensorData::I32(v) => {
                    let items: Vec<String> = v
                        .iter()
                        .map(|&x| if x == i32::MIN { "(-2147483647 - 1)".into() } else { x.to_string() })
                        .collect();
                    emit_array(&mut consts, "int32_t", &name, &items);
                }
            }
        }
    }
    for (idx, n) in g.nodes.iter().enumerate() {
        if matches!(n.op, Op::Dense { .. } | Op::Conv1d { .. })
            && g.require_tensor(&n.inputs[0])?.dtype == DType::I8
        {
            let m = node_multipliers(g, n)?;
            let items = m.iter().map(|&v| f64_lit(v)).collect::<Result<Vec<_>>>()?;
            emit_array(&mut consts, "double", &format!("m_{idx}"), &items);
        }
    }

    let needs_math = pieces.iter().any(|k| {
        matches!(
            k,
            Piece::Requant | Piece::Quantize | Piece::Softmax | Piece::KmeansF32 | Piece::KmeansI8
        )
    });

    let header_name = format!("{p}.h");
    let source_name = format!("{p}.c");
    let mut h = String::new();
    let _ = write!(
        h,
        "/*\n * {p}: generated inference code.\n *\n\
         *   void {p}_init(void);                          reset the arena\n\
         *   float *{p}_input(void);                       {} input floats\n\
         *   const float *{p}_invoke(size_t *out_len);     run, {} output floats\n\
         *\n * One static arena: calls must not overlap.\n */\n",
        input.elements(),
        output.elements()
    );
    let _ = write!(
        h,
        "#ifndef {upper}_MODEL_H\n#define {upper}_MODEL_H\n\n#include <stddef.h>\n\n\
         #define {upper}_INPUT_LEN {}\n#define {upper}_OUTPUT_LEN {}\n#define {upper}_ARENA_BYTES {}\n\n",
        input.elements(),
        output.elements(),
        plan.peak_bytes
    );
    if opts.emit_trace_hooks {
        let _ = write!(
            h,
            "/* Defined by the caller; dtype 0 = f32, 1 = i8. */\n\
             void {p}_trace(const char *tensor, int dtype, const void *data, size_t len);\n\n"
        );
    }
    let _ = write!(
        h,
        "void {p}_init(void);\nfloat *{p}_input(void);\nconst float *{p}_invoke(size_t *out_len);\n\n#endif\n"
    );

    let mut c = String::new();
    c.push_str("#include <stddef.h>\n#include <stdint.h>\n");
    if needs_math {
        c.push_str("#include <math.h>\n");
    }
    let _ = write!(c, "#include \"{header_name}\"\n\n");
    let _ = write!(
        c,
        "static union {{\n    uint8_t bytes[{}];\n    double align_d;\n    long double align_ld;\n}} arena;\n\n\
         static float io_input[{}];\nstatic float io_output[{}];\n",
        plan.peak_bytes.max(1),
        input.elements(),
        output.elements()
    );
    if scratch > 0 {
        let _ = writeln!(c, "static int32_t acc_scratch[{scratch}];");
    }
    c.push('\n');
    c.push_str(&consts);
    c.push('\n');
    for piece in &pieces {
        c.push_str(piece.text());
        c.push('\n');
    }
    let _ = write!(
        c,
        "void {p}_init(void)\n{{\n    size_t i;\n    for (i = 0; i < sizeof arena.bytes; ++i) arena.bytes[i] = 0;\n    \
         for (i = 0; i < {}; ++i) io_input[i] = 0.0f;\n}}\n\n",
        input.elements()
    );
    let _ = write!(c, "float *{p}_input(void)\n{{\n    return io_input;\n}}\n\n");
    let _ = write!(
        c,
        "const float *{p}_invoke(size_t *out_len)\n{{\n{body}    if (out_len) *out_len = {};\n    return io_output;\n}}\n",
        output.elements()
    );

    Ok(GeneratedC {
        header: h,
        source: c,
        header_name,
        source_name,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    Generated,
    InterpreterBaseline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub flash_bytes: usize,
    pub ram_bytes: usize,
    pub weight_bytes: usize,
    pub code_bytes: usize,
    pub scaffold_bytes: usize,
    pub arena_bytes: usize,
    pub io_bytes: usize,
    pub ram_scaffold_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlashRamReport {
    pub generated: Footprint,
    pub interpreter_baseline: Footprint,
}

impl FlashRamReport {
    pub fn mode(&self, mode: BuildMode) -> &Footprint {
        match mode {
            BuildMode::Generated => &self.generated,
            BuildMode::InterpreterBaseline => &self.interpreter_baseline,
        }
    }
}

/// Generated: weights + code of used kernels + small scaffold; RAM is the
/// arena plus IO buffers. Baseline: weights + code of every kernel +
/// interpreter scaffold, with the interpreter's runtime RAM on top.
pub fn flash_ram_report(g: &ModelGraph, plan: &ArenaPlan, profile: &DeviceProfile) -> Result<FlashRamReport> {
    let weight_bytes = g.weight_bytes();
    let io_bytes = (g.input_spec()?.elements() + g.output_spec()?.elements()) * 4;
    let used: usize = g.op_kinds().into_iter().map(|k| profile.code_bytes(k)).sum();
    let all: usize = OpKind::ALL.iter().map(|&k| profile.code_bytes(k)).sum();
    let footprint = |code: usize, scaffold: usize, ram_scaffold: usize| Footprint {
        flash_bytes: weight_bytes + code + scaffold,
        ram_bytes: plan.peak_bytes + io_bytes + ram_scaffold,
        weight_bytes,
        code_bytes: code,
        scaffold_bytes: scaffold,
        arena_bytes: plan.peak_bytes,
        io_bytes,
        ram_scaffold_bytes: ram_scaffold,
    };
    Ok(FlashRamReport {
        generated: footprint(used, profile.generated_scaffold_bytes, profile.generated_ram_bytes),
        interpreter_baseline: footprint(
            all,
            profile.interpreter_scaffold_bytes,
            profile.interpreter_ram_bytes,
        ),
    })
}
