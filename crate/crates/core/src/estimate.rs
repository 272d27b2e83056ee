//! Parametric latency/RAM/flash estimates from device profiles.
//!
//! ```text
//! nn_ms  = (MACs · cycles_per_mac(dtype) + elementwise · cycles_per_elementwise) / clock · 1000
//! dsp_ms = (frames · fft/2 · log2(fft) · cycles_per_butterfly
//!           + frames · filterbank_macs · cycles_per_mac_f32) / clock · 1000
//! ```
//!
//! The cycle constants are uncalibrated defaults; profile files override them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codegen::{flash_ram_report, BuildMode};
use crate::dsp::{Block, DspConfig, MelFilterbank};
use crate::error::{Error, Result};
use crate::interp::plan_arena;
use crate::ir::{Activation, DType, ModelGraph, Op, OpKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceProfile {
    pub name: String,
    pub clock_hz: f64,
    pub cycles_per_mac_f32: f64,
    pub cycles_per_mac_i8: f64,
    pub cycles_per_fft_butterfly: f64,
    pub cycles_per_elementwise: f64,
    /// Code bytes of each kernel, keyed by op name.
    pub kernel_code_bytes: BTreeMap<String, usize>,
    pub interpreter_scaffold_bytes: usize,
    pub generated_scaffold_bytes: usize,
    /// RAM held by the interpreter runtime besides the arena.
    pub interpreter_ram_bytes: usize,
    pub generated_ram_bytes: usize,
    pub flash_capacity_bytes: usize,
    pub ram_capacity_bytes: usize,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        let kernel_code_bytes = [
            (OpKind::Dense, 1_400),
            (OpKind::Conv1d, 2_600),
            (OpKind::Relu, 240),
            (OpKind::Softmax, 1_100),
            (OpKind::MaxPool1d, 520),
            (OpKind::Flatten, 80),
            (OpKind::KmeansDistance, 760),
        ]
        .into_iter()
        .map(|(k, v)| (k.name().to_string(), v))
        .collect();
        DeviceProfile {
            name: "generic".into(),
            clock_hz: 64e6,
            cycles_per_mac_f32: 8.0,
            cycles_per_mac_i8: 2.0,
            cycles_per_fft_butterfly: 10.0,
            cycles_per_elementwise: 4.0,
            kernel_code_bytes,
            interpreter_scaffold_bytes: 36_000,
            generated_scaffold_bytes: 1_200,
            interpreter_ram_bytes: 4_096,
            generated_ram_bytes: 64,
            flash_capacity_bytes: 1 << 20,
            ram_capacity_bytes: 256 << 10,
        }
    }
}

impl DeviceProfile {
    fn builtin(name: &str, clock_hz: f64, flash: usize, ram: usize) -> Self {
        DeviceProfile {
            name: name.into(),
            clock_hz,
            flash_capacity_bytes: flash,
            ram_capacity_bytes: ram,
            ..DeviceProfile::default()
        }
    }

    /// Arduino Nano 33 BLE Sense, ESP-EYE and Raspberry Pi Pico.
    pub fn builtins() -> Vec<DeviceProfile> {
        vec![
            DeviceProfile::builtin("nano33", 64e6, 1 << 20, 256 << 10),
            DeviceProfile::builtin("esp-eye", 160e6, 4 << 20, 8 << 20),
            DeviceProfile::builtin("pico", 133e6, 16 << 20, 264 << 10),
        ]
    }

    pub fn code_bytes(&self, kind: OpKind) -> usize {
        self.kernel_code_bytes.get(kind.name()).copied().unwrap_or(0)
    }

    pub fn cycles_per_mac(&self, dtype: DType) -> f64 {
        match dtype {
            DType::I8 => self.cycles_per_mac_i8,
            _ => self.cycles_per_mac_f32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.clock_hz,
            self.cycles_per_mac_f32,
            self.cycles_per_mac_i8,
            self.cycles_per_fft_butterfly,
            self.cycles_per_elementwise,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("profile `{}`: clock and cycle costs must be positive", self.name)));
        }
        if self.flash_capacity_bytes == 0 || self.ram_capacity_bytes == 0 {
            return Err(Error::Config(format!("profile `{}`: capacities must be positive", self.name)));
        }
        Ok(())
    }

    /// Loads `name` from `<dir>/<name>.json` when present, else a built-in.
    pub fn load(name: &str, dir: Option<&Path>) -> Result<DeviceProfile> {
        if let Some(dir) = dir {
            let path = dir.join(format!("{name}.json"));
            if path.exists() {
                let text = fs::read_to_string(&path)?;
                let mut p: DeviceProfile = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    what: "device profile".into(),
                    location: format!("{}:{}", path.display(), e.line()),
                    message: e.to_string(),
                })?;
                if p.name.is_empty() || p.name == "generic" {
                    p.name = name.to_string();
                }
                p.validate()?;
                return Ok(p);
            }
        }
        DeviceProfile::builtins()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown device profile `{name}` (built-ins: nano33, esp-eye, pico)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMacs {
    pub node: String,
    pub macs: u64,
    pub elementwise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacCount {
    pub per_node: Vec<NodeMacs>,
    pub total_macs: u64,
    pub elementwise: u64,
}

/// dense = in·out, conv1d = out_len·filters·kernel·in_ch, k-means =
/// k·dim; relu/softmax/maxpool (and fused relu) count one elementwise op
/// per output element.
pub fn count_macs(g: &ModelGraph) -> Result<MacCount> {
    let mut per_node = Vec::with_capacity(g.nodes.len());
    for n in &g.nodes {
        let input = g.require_tensor(&n.inputs[0])?;
        let out = g.require_tensor(&n.output)?.elements() as u64;
        let in_el = input.elements() as u64;
        let (macs, mut elementwise) = match n.op {
            Op::Dense { units } => (in_el * units as u64, 0),
            Op::Conv1d {
                filters,
                kernel_size,
                ..
            } => {
                let out_len = out / filters as u64;
                (out_len * filters as u64 * kernel_size as u64 * input.shape[1] as u64, 0)
            }
            Op::KmeansDistance { k } => (k as u64 * in_el, 0),
            Op::Relu | Op::Softmax | Op::MaxPool1d { .. } => (0, out),
            Op::Flatten => (0, 0),
        };
        if n.fused_activation == Activation::Relu {
            elementwise += out;
        }
        per_node.push(NodeMacs {
            node: n.id.clone(),
            macs,
            elementwise,
        });
    }
    Ok(MacCount {
        total_macs: per_node.iter().map(|n| n.macs).sum(),
        elementwise: per_node.iter().map(|n| n.elementwise).sum(),
        per_node,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub dsp_latency_ms: f64,
    pub nn_latency_ms: f64,
    pub total_latency_ms: f64,
    pub dsp_ram_bytes: usize,
    pub nn_ram_bytes: usize,
    pub ram_bytes: usize,
    pub flash_bytes: usize,
    pub macs: u64,
}

/// DSP cost terms for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspCost {
    pub frames: usize,
    pub butterflies_per_frame: u64,
    pub filterbank_macs_per_frame: u64,
    pub ram_bytes: usize,
}

pub fn dsp_cost(cfg: &DspConfig, sample_rate_hz: u32, channels: usize) -> Result<DspCost> {
    cfg.validate(sample_rate_hz)?;
    let (rows, cols) = cfg.feature_shape(sample_rate_hz, channels);
    let features = rows * cols * 4;
    if cfg.block == Block::Raw {
        return Ok(DspCost {
            frames: 0,
            butterflies_per_frame: 0,
            filterbank_macs_per_frame: 0,
            ram_bytes: features,
        });
    }
    let fft = cfg.resolved_fft_size(sample_rate_hz);
    let fb = MelFilterbank::new(cfg, sample_rate_hz)?;
    let mut macs = fb.nonzero_weights() as u64;
    if cfg.block == Block::Mfcc {
        macs += (cfg.num_mel_filters * cfg.num_cepstral_coeffs) as u64;
    }
    Ok(DspCost {
        frames: cfg.num_frames(sample_rate_hz),
        butterflies_per_frame: (fft / 2) as u64 * u64::from(fft.trailing_zeros()),
        filterbank_macs_per_frame: macs,
        ram_bytes: fft * 4 * 2 + features,
    })
}

pub fn nn_latency_ms(macs: &MacCount, dtype: DType, profile: &DeviceProfile) -> f64 {
    let cycles = macs.total_macs as f64 * profile.cycles_per_mac(dtype)
        + macs.elementwise as f64 * profile.cycles_per_elementwise;
    cycles / profile.clock_hz * 1000.0
}

pub fn dsp_latency_ms(cost: &DspCost, profile: &DeviceProfile) -> f64 {
    let frames = cost.frames as f64;
    let cycles = frames * cost.butterflies_per_frame as f64 * profile.cycles_per_fft_butterfly
        + frames * cost.filterbank_macs_per_frame as f64 * profile.cycles_per_mac_f32;
    cycles / profile.clock_hz * 1000.0
}

pub fn estimate(
    g: &ModelGraph,
    cfg: &DspConfig,
    sample_rate_hz: u32,
    profile: &DeviceProfile,
    mode: BuildMode,
) -> Result<ResourceEstimate> {
    let macs = count_macs(g)?;
    let channels = if cfg.block == Block::Raw {
        g.input_spec()?.shape.last().copied().unwrap_or(1)
    } else {
        1
    };
    let dsp = dsp_cost(cfg, sample_rate_hz, channels)?;
    let plan = plan_arena(g)?;
    let report = flash_ram_report(g, &plan, profile)?;
    let nn = report.mode(mode);
    let dsp_ms = dsp_latency_ms(&dsp, profile);
    let nn_ms = nn_latency_ms(&macs, g.dtype(), profile);
    Ok(ResourceEstimate {
        dsp_latency_ms: dsp_ms,
        nn_latency_ms: nn_ms,
        total_latency_ms: dsp_ms + nn_ms,
        dsp_ram_bytes: dsp.ram_bytes,
        nn_ram_bytes: nn.ram_bytes,
        ram_bytes: dsp.ram_bytes + nn.ram_bytes,
        flash_bytes: nn.flash_bytes,
        macs: macs.total_macs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub resource: String,
    pub used: f64,
    pub limit: f64,
    /// `limit − used` (negative when violated).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fits: bool,
    pub violations: Vec<Violation>,
}

fn check(out: &mut Vec<Violation>, resource: &str, used: f64, limit: f64) {
    if used > limit {
        out.push(Violation {
            resource: resource.into(),
            used,
            limit,
            margin: limit - used,
        });
    }
}

/// Inclusive capacity check (`used ≤ capacity` fits).
pub fn fits_device(est: &ResourceEstimate, profile: &DeviceProfile) -> FitReport {
    let mut v = Vec::new();
    check(&mut v, "ram", est.ram_bytes as f64, profile.ram_capacity_bytes as f64);
    check(&mut v, "flash", est.flash_bytes as f64, profile.flash_capacity_bytes as f64);
    FitReport {
        fits: v.is_empty(),
        violations: v,
    }
}

/// Optional user limits applied on top of device capacities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub ram_bytes: Option<usize>,
    pub flash_bytes: Option<usize>,
    pub latency_ms: Option<f64>,
}

impl Constraints {
    pub fn is_empty(&self) -> bool {
        self.ram_bytes.is_none() && self.flash_bytes.is_none() && self.latency_ms.is_none()
    }

    pub fn violations(&self, est: &ResourceEstimate) -> Vec<Violation> {
        let mut v = Vec::new();
        if let Some(r) = self.ram_bytes {
            check(&mut v, "ram", est.ram_bytes as f64, r as f64);
        }
        if let Some(f) = self.flash_bytes {
            check(&mut v, "flash", est.flash_bytes as f64, f as f64);
        }
        if let Some(l) = self.latency_ms {
            check(&mut v, "latency_ms", est.total_latency_ms, l);
        }
        v
    }

    /// Parses `ram=256k`, `flash=1m`, `latency=300` (ms).
    pub fn apply(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("constraint `{spec}` is not key=value")))?;
        match key.trim() {
            "ram" => self.ram_bytes = Some(parse_bytes(value)?),
            "flash" => self.flash_bytes = Some(parse_bytes(value)?),
            "latency" | "latency_ms" => {
                let v: f64 = value
                    .trim()
                    .trim_end_matches("ms")
                    .parse()
                    .map_err(|_| Error::Config(format!("bad latency `{value}`")))?;
                self.latency_ms = Some(v);
            }
            other => return Err(Error::Config(format!("unknown constraint `{other}` (ram, flash, latency)"))),
        }
        Ok(())
    }
}

/// `256k` → 262144, `1m` → 1048576, plain numbers are bytes.
pub fn parse_bytes(s: &str) -> Result<usize> {
    let t = s.trim().to_ascii_lowercase();
    let t = t.trim_end_matches('b');
    let (num, mult) = match t.chars().last() {
        Some('k') => (&t[..t.len() - 1], 1usize << 10),
        Some('m') => (&t[..t.len() - 1], 1 << 20),
        _ => (t, 1),
    };
    num.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| *v >= 0.0)
        .map(|v| (v * mult as f64).round() as usize)
        .ok_or_else(|| Error::Config(format!("bad byte size `{s}`")))
}
