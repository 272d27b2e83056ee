//! Preprocessing blocks: raw passthrough, mel-filterbank energies (MFE) and
//! mel-frequency cepstral coefficients (MFCC).
//!
//! The spectral path for one analysis window is
//!
//! 1. crop or zero-pad the signal to `window_size_s`,
//! 2. cut frames of `frame_length_s` every `frame_stride_s` (no padding),
//! 3. Hann window, zero-pad to `fft_size`, power spectrum `|X_k|² / fft_size`,
//! 4. triangular mel filters, floor at the noise floor, `10·log10`,
//! 5. (MFCC only) orthonormal DCT-II truncated to the cepstral count.
//!
//! No pre-emphasis is applied.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::project::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Raw,
    Mfe,
    Mfcc,
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Block::Raw),
            "mfe" => Ok(Block::Mfe),
            "mfcc" => Ok(Block::Mfcc),
            other => Err(Error::Config(format!("unknown DSP block `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspConfig {
    pub block: Block,
    pub frame_length_s: f64,
    pub frame_stride_s: f64,
    /// Power of two. `None` picks the next power of two ≥ frame samples.
    pub fft_size: Option<usize>,
    pub num_mel_filters: usize,
    pub num_cepstral_coeffs: usize,
    pub low_freq_hz: f64,
    /// `None` means the Nyquist frequency.
    pub high_freq_hz: Option<f64>,
    pub noise_floor_db: f64,
    pub window_size_s: f64,
    /// Hann window before the FFT.
    pub apply_window: bool,
}

impl Default for DspConfig {
    fn default() -> Self {
        DspConfig {
            block: Block::Mfe,
            frame_length_s: 0.02,
            frame_stride_s: 0.01,
            fft_size: None,
            num_mel_filters: 40,
            num_cepstral_coeffs: 13,
            low_freq_hz: 0.0,
            high_freq_hz: None,
            noise_floor_db: -52.0,
            window_size_s: 1.0,
            apply_window: true,
        }
    }
}

impl DspConfig {
    pub fn raw(window_size_s: f64) -> Self {
        DspConfig {
            block: Block::Raw,
            window_size_s,
            ..DspConfig::default()
        }
    }

    pub fn mfe(frame_length_s: f64, frame_stride_s: f64, num_mel_filters: usize) -> Self {
        DspConfig {
            block: Block::Mfe,
            frame_length_s,
            frame_stride_s,
            num_mel_filters,
            ..DspConfig::default()
        }
    }

    pub fn mfcc(
        frame_length_s: f64,
        frame_stride_s: f64,
        num_mel_filters: usize,
        num_cepstral_coeffs: usize,
    ) -> Self {
        DspConfig {
            block: Block::Mfcc,
            frame_length_s,
            frame_stride_s,
            num_mel_filters,
            num_cepstral_coeffs,
            ..DspConfig::default()
        }
    }

    pub fn frame_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_length_s * f64::from(sample_rate_hz)).round() as usize
    }

    pub fn stride_samples(&self, sample_rate_hz: u32) -> usize {
        (self.frame_stride_s * f64::from(sample_rate_hz)).round() as usize
    }

    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        (self.window_size_s * f64::from(sample_rate_hz)).round() as usize
    }

    pub fn resolved_fft_size(&self, sample_rate_hz: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.frame_samples(sample_rate_hz).max(1).next_power_of_two())
    }

    pub fn resolved_high_freq(&self, sample_rate_hz: u32) -> f64 {
        self.high_freq_hz
            .unwrap_or(f64::from(sample_rate_hz) / 2.0)
    }

    /// Number of frames in one analysis window.
    pub fn num_frames(&self, sample_rate_hz: u32) -> usize {
        frame_count(
            self.window_samples(sample_rate_hz),
            self.frame_samples(sample_rate_hz),
            self.stride_samples(sample_rate_hz),
        )
    }

    /// `(rows, cols)` of the feature matrix for signals with `channels`.
    pub fn feature_shape(&self, sample_rate_hz: u32, channels: usize) -> (usize, usize) {
        match self.block {
            Block::Raw => (1, self.window_samples(sample_rate_hz) * channels),
            Block::Mfe => (self.num_frames(sample_rate_hz), self.num_mel_filters),
            Block::Mfcc => (self.num_frames(sample_rate_hz), self.num_cepstral_coeffs),
        }
    }

    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.window_size_s > 0.0) {
            return bad(format!("window_size_s {} must be positive", self.window_size_s));
        }
        if self.window_samples(sample_rate_hz) == 0 {
            return bad("window shorter than one sample".into());
        }
        if self.block == Block::Raw {
            return Ok(());
        }
        if !(self.frame_length_s > 0.0 && self.frame_stride_s > 0.0) {
            return bad("frame length and stride must be positive".into());
        }
        let frame = self.frame_samples(sample_rate_hz);
        let stride = self.stride_samples(sample_rate_hz);
        if frame == 0 || stride == 0 {
            return bad("frame or stride shorter than one sample".into());
        }
        if frame > self.window_samples(sample_rate_hz) {
            return bad(format!(
                "frame length {}s exceeds window {}s",
                self.frame_length_s, self.window_size_s
            ));
        }
        let fft = self.resolved_fft_size(sample_rate_hz);
        if !fft.is_power_of_two() {
            return bad(format!("fft_size {fft} is not a power of two"));
        }
        if frame > fft {
            return bad(format!("frame of {frame} samples exceeds fft_size {fft}"));
        }
        if self.num_mel_filters < 2 {
            return bad("num_mel_filters must be ≥ 2".into());
        }
        if self.block == Block::Mfcc
            && (self.num_cepstral_coeffs < 1 || self.num_cepstral_coeffs > self.num_mel_filters)
        {
            return bad(format!(
                "num_cepstral_coeffs {} must lie in 1..={}",
                self.num_cepstral_coeffs, self.num_mel_filters
            ));
        }
        let high = self.resolved_high_freq(sample_rate_hz);
        if !(self.low_freq_hz >= 0.0 && self.low_freq_hz < high && high <= f64::from(sample_rate_hz) / 2.0)
        {
            return bad(format!(
                "frequency range [{}, {high}] invalid for sample rate {sample_rate_hz}",
                self.low_freq_hz
            ));
        }
        Ok(())
    }
}

impl fmt::Display for DspConfig {
    /// Compact `MFE (0.02, 0.01, 40)` style label.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            Block::Raw => write!(f, "Raw ({})", self.window_size_s),
            Block::Mfe => write!(
                f,
                "MFE ({}, {}, {})",
                self.frame_length_s, self.frame_stride_s, self.num_mel_filters
            ),
            Block::Mfcc => write!(
                f,
                "MFCC ({}, {}, {})",
                self.frame_length_s, self.frame_stride_s, self.num_mel_filters
            ),
        }
    }
}

/// `1 + ⌊(window − frame) / stride⌋`, or 0 when the window is shorter than
/// a frame.
pub fn frame_count(window: usize, frame: usize, stride: usize) -> usize {
    if frame == 0 || stride == 0 || window < frame {
        0
    } else {
        1 + (window - frame) / stride
    }
}

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::invalid(format!(
                "{} values do not fill a {rows}×{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix contains non-finite values"));
        }
        Ok(FeatureMatrix { rows, cols, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Splits `x` into contiguous frames. The last partial frame is dropped.
pub fn frame_signal<'a>(x: &'a [f64], cfg: &DspConfig, sample_rate_hz: u32) -> Result<Vec<&'a [f64]>> {
    let frame = cfg.frame_samples(sample_rate_hz);
    let stride = cfg.stride_samples(sample_rate_hz);
    if frame == 0 || stride == 0 {
        return Err(Error::Config("frame and stride must span at least one sample".into()));
    }
    if x.len() < frame {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one frame ({frame})",
            x.len()
        )));
    }
    let n = frame_count(x.len(), frame, stride);
    Ok((0..n).map(|i| &x[i * stride..i * stride + frame]).collect())
}

/// Hann window `0.5 − 0.5·cos(2πn/(N−1))`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos())
        .collect()
}

/// Radix-2 FFT of a real sequence of power-of-two length `n`.
///
/// A length-`n` real input is packed into an `n/2` complex sequence, run
/// through an iterative complex FFT and untangled, giving bins `0..=n/2`.
#[derive(Debug, Clone)]
pub struct RealFft {
    n: usize,
    /// `e^{-2πik/n}` for `k < n/2`.
    twiddles: Vec<Complex64>,
}

impl RealFft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Config(format!("fft size {n} is not a power of two")));
        }
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Ok(RealFft { n, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Returns `X_0 ..= X_{n/2}`. `input` is zero-padded to `n`.
    pub fn transform(&self, input: &[f64]) -> Vec<Complex64> {
        let n = self.n;
        assert!(input.len() <= n, "input longer than fft size");
        let at = |i: usize| input.get(i).copied().unwrap_or(0.0);
        if n == 1 {
            return vec![Complex64::new(at(0), 0.0)];
        }
        if n == 2 {
            return vec![
                Complex64::new(at(0) + at(1), 0.0),
                Complex64::new(at(0) - at(1), 0.0),
            ];
        }
        let half = n / 2;
        let mut z: Vec<Complex64> = (0..half)
            .map(|i| Complex64::new(at(2 * i), at(2 * i + 1)))
            .collect();
        // The half-size transform uses every other twiddle of the full size.
        complex_fft_in_place(&mut z, |k| self.twiddles[2 * k]);

        let mut out = Vec::with_capacity(half + 1);
        for k in 0..=half {
            let zk = z[k % half];
            let zc = z[(half - k) % half].conj();
            let even = (zk + zc) * 0.5;
            let odd = (zk - zc) * Complex64::new(0.0, -0.5);
            let w = if k < half {
                self.twiddles[k]
            } else {
                Complex64::new(-1.0, 0.0)
            };
            out.push(even + w * odd);
        }
        out
    }
}

/// Iterative radix-2 decimation-in-time FFT. `twiddle(k)` must return
/// `e^{-2πik/len}` for `k < len/2`.
fn complex_fft_in_place(data: &mut [Complex64], twiddle: impl Fn(usize) -> Complex64) {
    let n = data.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let w = twiddle(k * step);
                let a = data[start + k];
                let b = data[start + k + len / 2] * w;
                data[start + k] = a + b;
                data[start + k + len / 2] = a - b;
            }
        }
        len <<= 1;
    }
}

/// Power spectrum `|X_k|² / fft_size` for `k = 0..=fft_size/2`.
///
/// With the window disabled, Parseval's theorem reads
/// `Σ x² = P_0 + P_{n/2} + 2·Σ_{0<k<n/2} P_k`.
pub fn fft_power_spectrum(frame: &[f64], fft_size: usize, window: bool) -> Result<Vec<f64>> {
    let fft = RealFft::new(fft_size)?;
    power_spectrum_with(&fft, frame, window.then(|| hann(frame.len())).as_deref())
}

fn power_spectrum_with(fft: &RealFft, frame: &[f64], window: Option<&[f64]>) -> Result<Vec<f64>> {
    if frame.len() > fft.len() {
        return Err(Error::invalid(format!(
            "frame of {} samples exceeds fft size {}",
            frame.len(),
            fft.len()
        )));
    }
    let spectrum = match window {
        Some(w) => {
            let windowed: Vec<f64> = frame.iter().zip(w).map(|(x, w)| x * w).collect();
            fft.transform(&windowed)
        }
        None => fft.transform(frame),
    };
    let scale = 1.0 / fft.len() as f64;
    Ok(spectrum.iter().map(|c| c.norm_sqr() * scale).collect())
}

/// `2595 · log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centers evenly spaced on the mel scale.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// One weight row of length `fft_size/2 + 1` per filter.
    weights: Vec<Vec<f64>>,
    floor: f64,
}

impl MelFilterbank {
    pub fn new(cfg: &DspConfig, sample_rate_hz: u32) -> Result<Self> {
        let fft_size = cfg.resolved_fft_size(sample_rate_hz);
        let bins = fft_size / 2 + 1;
        let bin_hz = f64::from(sample_rate_hz) / fft_size as f64;
        let low = hz_to_mel(cfg.low_freq_hz);
        let high = hz_to_mel(cfg.resolved_high_freq(sample_rate_hz));
        let m = cfg.num_mel_filters;
        if m < 2 {
            return Err(Error::Config("num_mel_filters must be ≥ 2".into()));
        }
        let edges: Vec<f64> = (0..m + 2)
            .map(|i| mel_to_hz(low + (high - low) * i as f64 / (m + 1) as f64))
            .collect();
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            let (left, center, right) = (edges[i], edges[i + 1], edges[i + 2]);
            if right - left < bin_hz {
                return Err(Error::Config(format!(
                    "{m} mel filters are too many for fft size {fft_size}: filter {i} spans {:.2} Hz < one bin ({bin_hz:.2} Hz)",
                    right - left
                )));
            }
            let row: Vec<f64> = (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f > left && f < center {
                        (f - left) / (center - left)
                    } else if f >= center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    }
                })
                .collect();
            if row.iter().all(|&w| w == 0.0) {
                return Err(Error::Config(format!(
                    "mel filter {i} covers no fft bin at size {fft_size}"
                )));
            }
            weights.push(row);
        }
        Ok(MelFilterbank {
            weights,
            floor: 10f64.powf(cfg.noise_floor_db / 10.0),
        })
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Log filter energies: `10·log10(max(Σ w·P, floor))`.
    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| {
                let e: f64 = row.iter().zip(power).map(|(w, p)| w * p).sum();
                10.0 * e.max(self.floor).log10()
            })
            .collect()
    }

    /// Number of non-zero filter weights, the per-frame MAC count.
    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().flatten().filter(|&&w| w != 0.0).count()
    }
}

pub fn mel_filterbank(power: &[f64], cfg: &DspConfig, sample_rate_hz: u32) -> Result<Vec<f64>> {
    let bank = MelFilterbank::new(cfg, sample_rate_hz)?;
    let expected = cfg.resolved_fft_size(sample_rate_hz) / 2 + 1;
    if power.len() != expected {
        return Err(Error::invalid(format!(
            "power spectrum has {} bins, expected {expected}",
            power.len()
        )));
    }
    Ok(bank.apply(power))
}

/// Orthonormal DCT-II basis, `coeffs × n`.
#[derive(Debug, Clone)]
pub struct Dct {
    basis: Vec<Vec<f64>>,
}

impl Dct {
    pub fn new(n: usize, coeffs: usize) -> Self {
        let basis = (0..coeffs)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / n as f64).sqrt()
                } else {
                    (2.0 / n as f64).sqrt()
                };
                (0..n)
                    .map(|i| scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                    .collect()
            })
            .collect();
        Dct { basis }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|row| row.iter().zip(x).map(|(b, v)| b * v).sum())
            .collect()
    }

    /// Inverse of the untruncated transform (orthonormal DCT-III).
    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let n = self.basis.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| self.basis.iter().zip(c).map(|(row, ck)| row[i] * ck).sum())
            .collect()
    }
}

/// Orthonormal DCT-II of log-mel energies, first `num_cepstral_coeffs`.
pub fn mfcc(log_mel: &[f64], num_cepstral_coeffs: usize) -> Result<Vec<f64>> {
    if num_cepstral_coeffs > log_mel.len() {
        return Err(Error::invalid(format!(
            "{num_cepstral_coeffs} cepstral coefficients requested from {} filters",
            log_mel.len()
        )));
    }
    Ok(Dct::new(log_mel.len(), num_cepstral_coeffs).apply(log_mel))
}

/// A DSP block prepared for one sample rate.
#[derive(Debug, Clone)]
pub struct DspPipeline {
    cfg: DspConfig,
    sample_rate_hz: u32,
    fft: Option<RealFft>,
    window: Option<Vec<f64>>,
    bank: Option<MelFilterbank>,
    dct: Option<Dct>,
}

impl DspPipeline {
    pub fn new(cfg: &DspConfig, sample_rate_hz: u32) -> Result<Self> {
        cfg.validate(sample_rate_hz)?;
        let spectral = cfg.block != Block::Raw;
        let fft = if spectral {
            Some(RealFft::new(cfg.resolved_fft_size(sample_rate_hz))?)
        } else {
            None
        };
        let window = (spectral && cfg.apply_window).then(|| hann(cfg.frame_samples(sample_rate_hz)));
        let bank = if spectral {
            Some(MelFilterbank::new(cfg, sample_rate_hz)?)
        } else {
            None
        };
        let dct = (cfg.block == Block::Mfcc)
            .then(|| Dct::new(cfg.num_mel_filters, cfg.num_cepstral_coeffs));
        Ok(DspPipeline {
            cfg: cfg.clone(),
            sample_rate_hz,
            fft,
            window,
            bank,
            dct,
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> Option<&MelFilterbank> {
        self.bank.as_ref()
    }

    pub fn process(&self, sample: &Sample) -> Result<FeatureMatrix> {
        if sample.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::invalid(format!(
                "sample rate {} differs from pipeline rate {}",
                sample.sample_rate_hz, self.sample_rate_hz
            )));
        }
        let window = self.cfg.window_samples(self.sample_rate_hz);
        if self.cfg.block == Block::Raw {
            let mut values = sample.data.clone();
            values.resize(window * sample.channels, 0.0);
            return FeatureMatrix::new(1, values.len(), values);
        }
        if sample.channels != 1 {
            return Err(Error::invalid(format!(
                "{:?} block needs a single-channel sample, got {} channels",
                self.cfg.block, sample.channels
            )));
        }
        let mut signal = sample.channel(0);
        signal.resize(window, 0.0);
        self.process_signal(&signal)
    }

    /// Runs the spectral path over an exact analysis window.
    pub fn process_signal(&self, signal: &[f64]) -> Result<FeatureMatrix> {
        let (Some(fft), Some(bank)) = (&self.fft, &self.bank) else {
            let values = signal.iter().map(|&v| v as f32).collect::<Vec<_>>();
            return FeatureMatrix::new(1, values.len(), values);
        };
        let frames = frame_signal(signal, &self.cfg, self.sample_rate_hz)?;
        let cols = match self.cfg.block {
            Block::Mfcc => self.cfg.num_cepstral_coeffs,
            _ => self.cfg.num_mel_filters,
        };
        let mut values = Vec::with_capacity(frames.len() * cols);
        for frame in &frames {
            let power = power_spectrum_with(fft, frame, self.window.as_deref())?;
            let log_mel = bank.apply(&power);
            match &self.dct {
                Some(dct) => values.extend(dct.apply(&log_mel).into_iter().map(|v| v as f32)),
                None => values.extend(log_mel.into_iter().map(|v| v as f32)),
            }
        }
        FeatureMatrix::new(frames.len(), cols, values)
    }
}

pub fn dsp_process(sample: &Sample, cfg: &DspConfig) -> Result<FeatureMatrix> {
    DspPipeline::new(cfg, sample.sample_rate_hz)?.process(sample)
}

/// Feature vector file: little-endian `u32 count, u32 len`, then
/// `count × len` float32 values.
pub fn encode_fvf(vectors: &[Vec<f32>]) -> Result<Vec<u8>> {
    let len = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != len) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    let mut out = Vec::with_capacity(8 + 4 * len * vectors.len());
    out.extend_from_slice(&(vectors.len() as u32).to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    for v in vectors {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_fvf(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    let parse_err = |m: String| Error::Parse {
        what: "feature vector file".into(),
        location: "header".into(),
        message: m,
    };
    if bytes.len() < 8 {
        return Err(parse_err(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = count
        .checked_mul(len)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| parse_err("size overflow".into()))?;
    if bytes.len() != expected {
        return Err(parse_err(format!(
            "file has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let body = &bytes[8..];
    Ok((0..count)
        .map(|i| {
            body[i * 4 * len..(i + 1) * 4 * len]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::project::Split;

    fn naive_dft(x: &[f64], n: usize) -> Vec<Complex64> {
        (0..=n / 2)
            .map(|k| {
                (0..x.len())
                    .map(|t| Complex64::from_polar(x[t], -2.0 * PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn frame_counts_for_table_rows() {
        let x = vec![0.0; 16000];
        let cfg = DspConfig::mfe(0.02, 0.01, 40);
        let frames = frame_signal(&x, &cfg, 16000).unwrap();
        assert_eq!(frames.len(), 99);
        assert!(frames.iter().all(|f| f.len() == 320));

        let cfg = DspConfig::mfcc(0.05, 0.025, 40, 13);
        assert_eq!(frame_signal(&x, &cfg, 16000).unwrap().len(), 39);

        let whole = DspConfig::mfe(1.0, 1.0, 40);
        assert_eq!(frame_signal(&x, &whole, 16000).unwrap().len(), 1);
    }

    #[test]
    fn short_signal_is_an_error() {
        let cfg = DspConfig::mfe(0.02, 0.01, 40);
        assert!(frame_signal(&[0.0; 100], &cfg, 16000).is_err());
    }

    #[test]
    fn impulse_power_spectrum() {
        let p = fft_power_spectrum(&[1.0, 0.0, 0.0, 0.0], 4, false).unwrap();
        assert_eq!(p.len(), 3);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn sine_peaks_at_its_bin() {
        let x: Vec<f64> = (0..64).map(|t| (2.0 * PI * 3.0 * t as f64 / 64.0).sin()).collect();
        let p = fft_power_spectrum(&x, 64, false).unwrap();
        let argmax = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 3);
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut seed = 17;
        for n in [1usize, 2, 4, 8, 16, 32, 64, 128, 256, 512] {
            let fft = RealFft::new(n).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| lcg(&mut seed)).collect();
                let fast = fft.transform(&x);
                let slow = naive_dft(&x, n);
                let scale = slow.iter().map(|c| c.norm()).fold(1e-300, f64::max);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).norm() / scale <= 1e-9, "n={n}");
                }
            }
        }
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        assert!(fft_power_spectrum(&[1.0; 3], 6, false).is_err());
    }

    #[test]
    fn parseval_without_window() {
        let mut seed = 5;
        for n in [4usize, 16, 256] {
            let x: Vec<f64> = (0..n).map(|_| lcg(&mut seed)).collect();
            let p = fft_power_spectrum(&x, n, false).unwrap();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spectral = p[0] + p[n / 2] + 2.0 * p[1..n / 2].iter().sum::<f64>();
            assert!((energy - spectral).abs() / energy < 1e-6);
        }
    }

    #[test]
    fn hann_endpoints() {
        let w = hann(5);
        assert_eq!(w[0], 0.0);
        assert!((w[2] - 1.0).abs() < 1e-15);
        assert!(w[4].abs() < 1e-15);
    }

    #[test]
    fn mel_closed_form() {
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn unit_power_gives_log_filter_area() {
        let cfg = DspConfig::mfe(0.02, 0.01, 40);
        let bank = MelFilterbank::new(&cfg, 16000).unwrap();
        let power = vec![1.0; 257];
        let out = mel_filterbank(&power, &cfg, 16000).unwrap();
        for (i, row) in bank.weights().iter().enumerate() {
            let mut area = 0.0;
            for w in row {
                area += *w;
            }
            assert!((out[i] - 10.0 * area.log10()).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_hits_noise_floor() {
        let cfg = DspConfig::mfe(0.02, 0.01, 40);
        let out = mel_filterbank(&vec![0.0; 257], &cfg, 16000).unwrap();
        assert!(out.iter().all(|v| (v + 52.0).abs() < 1e-9));
    }

    #[test]
    fn too_many_filters_rejected() {
        let mut cfg = DspConfig::mfe(0.004, 0.004, 64);
        cfg.fft_size = Some(64);
        assert!(MelFilterbank::new(&cfg, 16000).is_err());
    }

    #[test]
    fn dct_of_constant() {
        let c = mfcc(&[2.5; 16], 16).unwrap();
        assert!((c[0] - 2.5 * 4.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dct_round_trip() {
        let mut seed = 3;
        let x: Vec<f64> = (0..32).map(|_| lcg(&mut seed)).collect();
        let dct = Dct::new(32, 32);
        let back = dct.inverse(&dct.apply(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn block_output_shapes() {
        let mono = Sample::from_values(
            "x",
            Split::Train,
            16000,
            1,
            (0..16000).map(|i| (i as f32 * 0.05).sin()).collect(),
        )
        .unwrap();
        let mfe = dsp_process(&mono, &DspConfig::mfe(0.02, 0.01, 40)).unwrap();
        assert_eq!((mfe.rows, mfe.cols), (99, 40));
        let mfcc = dsp_process(&mono, &DspConfig::mfcc(0.02, 0.01, 32, 13)).unwrap();
        assert_eq!((mfcc.rows, mfcc.cols), (99, 13));

        let imu = Sample::from_values("x", Split::Train, 100, 3, vec![0.5; 300]).unwrap();
        let raw = dsp_process(&imu, &DspConfig::raw(1.0)).unwrap();
        assert_eq!((raw.rows, raw.cols), (1, 300));
    }

    #[test]
    fn spectral_blocks_need_mono() {
        let imu = Sample::from_values("x", Split::Train, 16000, 2, vec![0.5; 32000]).unwrap();
        assert!(dsp_process(&imu, &DspConfig::default()).is_err());
    }

    #[test]
    fn config_invariants() {
        let mut cfg = DspConfig::mfcc(0.02, 0.01, 10, 13);
        assert!(cfg.validate(16000).is_err());
        cfg.num_cepstral_coeffs = 10;
        assert!(cfg.validate(16000).is_ok());
        cfg.fft_size = Some(256);
        assert!(cfg.validate(16000).is_err(), "320-sample frame exceeds 256");
        cfg.fft_size = Some(512);
        cfg.high_freq_hz = Some(9000.0);
        assert!(cfg.validate(16000).is_err());
    }

    #[test]
    fn fvf_round_trip_preserves_bits() {
        let v = vec![vec![1.0f32, -0.0, f32::MIN_POSITIVE], vec![3.5, 1e-30, -7.25]];
        let bytes = encode_fvf(&v).unwrap();
        assert_eq!(bytes.len(), 8 + 4 * 6);
        let back = decode_fvf(&bytes).unwrap();
        for (a, b) in v.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(decode_fvf(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(decode_fvf(&encode_fvf(&[]).unwrap()).unwrap().len(), 0);
    }
}
