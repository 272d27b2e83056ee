//! Dataset ingestion, train/test split management and the on-disk project
//! layout.
//!
//! Layout of a project directory:
//!
//! ```text
//! project.json                      classes, seed
//! impulse.json                      DSP config + model template
//! dataset/{train,test}/<label>/<id>.(wav|csv|json)
//! artifacts/                        features, model files
//! deploy/                           generated C
//! reports/                          train/eval/tuner/calibration reports
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::estimate::Constraints;
use crate::rng;
use crate::trainer::{preset_descriptor, DataKind, DescriptorString};

/// Scale applied to PCM16 samples: `value / 32768`.
pub const PCM16_SCALE: f32 = 32768.0;

const TIME_COLUMNS: [&str; 3] = ["t", "time", "timestamp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Ok(Split::Train),
            "test" | "testing" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Wav,
    Json,
}

impl Format {
    /// Guesses the format from a file extension. CBOR and image formats are
    /// recognised only to reject them with a clear message.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        ext.parse()
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Wav => "wav",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "wav" => Ok(Format::Wav),
            "json" => Ok(Format::Json),
            "cbor" | "jpg" | "jpeg" | "png" => Err(Error::UnsupportedFormat(format!(
                "{s} ingestion is unsupported in this artifact (only csv, wav, json)"
            ))),
            other => Err(Error::UnsupportedFormat(format!(
                "unknown file format `{other}`"
            ))),
        }
    }
}

/// One labeled recording. `data` is row-major `num_frames × channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub label: String,
    pub split: Split,
    pub sample_rate_hz: u32,
    pub channels: usize,
    pub data: Vec<f32>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Sample {
    /// Builds a sample from raw values, checking the invariants. The id is
    /// derived from the values so identical content gets the same id.
    pub fn from_values(
        label: impl Into<String>,
        split: Split,
        sample_rate_hz: u32,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let mut bytes = Vec::with_capacity(data.len() * 4 + 8);
        bytes.extend_from_slice(&sample_rate_hz.to_le_bytes());
        bytes.extend_from_slice(&(channels as u32).to_le_bytes());
        for v in &data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let sample = Sample {
            id: content_id(&bytes),
            label: label.into(),
            split,
            sample_rate_hz,
            channels,
            data,
            metadata: BTreeMap::new(),
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn num_frames(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.data.len() / self.channels
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Extracts one channel as `f64`.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels.max(1))
            .map(|&v| f64::from(v))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::invalid(format!("sample {}: sample rate must be positive", self.id)));
        }
        if self.channels == 0 {
            return Err(Error::invalid(format!("sample {}: channels must be ≥ 1", self.id)));
        }
        if self.data.is_empty() || !self.data.len().is_multiple_of(self.channels) {
            return Err(Error::invalid(format!(
                "sample {}: {} values do not form ≥ 1 frame of {} channels",
                self.id,
                self.data.len(),
                self.channels
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "sample {}: non-finite value at index {i}",
                self.id
            )));
        }
        Ok(())
    }
}

fn content_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Reads and parses a file into a [`Sample`].
pub fn ingest(path: &Path, format: Format, label: &str, split: Split) -> Result<Sample> {
    let bytes = std::fs::read(path)?;
    let mut sample = ingest_bytes(&bytes, format, label, split)?;
    if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
        sample.metadata.insert("source".into(), name.into());
    }
    Ok(sample)
}

/// Parses in-memory file content. The sample id is a prefix of the SHA-256
/// of the bytes, so ingestion is deterministic.
pub fn ingest_bytes(bytes: &[u8], format: Format, label: &str, split: Split) -> Result<Sample> {
    let (sample_rate_hz, channels, data) = match format {
        Format::Wav => parse_wav(bytes)?,
        Format::Csv => parse_csv(bytes)?,
        Format::Json => parse_json(bytes)?,
    };
    let sample = Sample {
        id: content_id(bytes),
        label: label.to_string(),
        split,
        sample_rate_hz,
        channels,
        data,
        metadata: BTreeMap::new(),
    };
    sample.validate()?;
    Ok(sample)
}

fn wav_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        what: "wav".into(),
        location: format!("byte {offset}"),
        message: message.into(),
    }
}

fn read_u16(bytes: &[u8], at: usize) -> Result<u16> {
    bytes
        .get(at..at + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| wav_err(at, "unexpected end of file"))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| wav_err(at, "unexpected end of file"))
}

/// Mono PCM16 RIFF/WAVE. Values are scaled by 1/32768.
fn parse_wav(bytes: &[u8]) -> Result<(u32, usize, Vec<f32>)> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(wav_err(0, "missing RIFF tag"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(wav_err(8, "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = read_u32(bytes, pos + 4)? as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(wav_err(pos + 4, format!("chunk length {len} overruns file")));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(wav_err(body, "fmt chunk shorter than 16 bytes"));
                }
                fmt = Some((
                    read_u16(bytes, body)?,
                    read_u16(bytes, body + 2)?,
                    read_u32(bytes, body + 4)?,
                    read_u16(bytes, body + 14)?,
                ));
            }
            b"data" => {
                let (audio_format, channels, rate, bits) =
                    fmt.ok_or_else(|| wav_err(pos, "data chunk before fmt chunk"))?;
                if audio_format != 1 || bits != 16 {
                    return Err(Error::UnsupportedFormat(format!(
                        "wav encoding {audio_format} with {bits} bits (only PCM16)"
                    )));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!(
                        "wav with {channels} channels (only mono)"
                    )));
                }
                if rate == 0 {
                    return Err(wav_err(body - 8, "sample rate is zero"));
                }
                if !len.is_multiple_of(2) {
                    return Err(wav_err(body, "odd data length for PCM16"));
                }
                let data = bytes[body..body + len]
                    .chunks_exact(2)
                    .map(|b| f32::from(i16::from_le_bytes([b[0], b[1]])) / PCM16_SCALE)
                    .collect();
                return Ok((rate, 1, data));
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err(wav_err(pos, "no data chunk"))
}

/// Encodes mono PCM16 WAV. Values are clamped to the int16 range.
pub fn encode_wav(sample_rate_hz: u32, data: &[f32]) -> Vec<u8> {
    let data_len = (data.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &v in data {
        let q = (f64::from(v) * f64::from(PCM16_SCALE)).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// CSV with a header row. Time columns (`t`, `time`, `timestamp`) are
/// dropped. The sample rate comes from the median step of the time column
/// (read as milliseconds when the step exceeds 1) and defaults to 100 Hz
/// without one.
fn parse_csv(bytes: &[u8]) -> Result<(u32, usize, Vec<f32>)> {
    let csv_err = |line: u64, message: String| Error::Parse {
        what: "csv".into(),
        location: format!("line {line}"),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| csv_err(1, e.to_string()))?
        .clone();
    let time_col = headers
        .iter()
        .position(|h| TIME_COLUMNS.contains(&h.to_ascii_lowercase().as_str()));
    let channels = headers.len() - usize::from(time_col.is_some());
    if channels == 0 {
        return Err(csv_err(1, "no value columns".into()));
    }
    let mut data = Vec::new();
    let mut times = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for (i, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .map_err(|_| csv_err(line, format!("column {} is not a number: `{field}`", i + 1)))?;
            if Some(i) == time_col {
                times.push(value);
            } else {
                data.push(value as f32);
            }
        }
    }
    if data.is_empty() {
        return Err(csv_err(2, "no data rows".into()));
    }
    let sample_rate_hz = rate_from_times(&times).unwrap_or(100);
    Ok((sample_rate_hz, channels, data))
}

fn rate_from_times(times: &[f64]) -> Option<u32> {
    if times.len() < 2 {
        return None;
    }
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(|a, b| a.total_cmp(b));
    let step = steps[steps.len() / 2];
    if step <= 0.0 || !step.is_finite() {
        return None;
    }
    let step_s = if step > 1.0 { step / 1000.0 } else { step };
    let rate = (1.0 / step_s).round();
    (rate >= 1.0).then_some(rate as u32)
}

#[derive(Deserialize, Serialize)]
struct JsonSample {
    sample_rate_hz: u32,
    channels: usize,
    data: Vec<Vec<f64>>,
}

fn parse_json(bytes: &[u8]) -> Result<(u32, usize, Vec<f32>)> {
    let parsed: JsonSample = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        what: "json".into(),
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut data = Vec::with_capacity(parsed.data.len() * parsed.channels);
    for (i, row) in parsed.data.iter().enumerate() {
        if row.len() != parsed.channels {
            return Err(Error::Parse {
                what: "json".into(),
                location: format!("data row {i}"),
                message: format!("expected {} values, found {}", parsed.channels, row.len()),
            });
        }
        data.extend(row.iter().map(|&v| v as f32));
    }
    Ok((parsed.sample_rate_hz, parsed.channels, data))
}

/// Encodes a sample in the JSON sample format.
pub fn encode_json(sample: &Sample) -> Vec<u8> {
    let rows = sample
        .data
        .chunks(sample.channels.max(1))
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect();
    serde_json::to_vec(&JsonSample {
        sample_rate_hz: sample.sample_rate_hz,
        channels: sample.channels,
        data: rows,
    })
    .expect("json sample serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub classes: Vec<String>,
}

impl Dataset {
    /// Builds a dataset and checks its invariants.
    pub fn new(samples: Vec<Sample>, classes: Vec<String>) -> Result<Self> {
        let ds = Dataset { samples, classes };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset with classes in first-seen label order.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let mut classes: Vec<String> = Vec::new();
        for s in &samples {
            if !classes.contains(&s.label) {
                classes.push(s.label.clone());
            }
        }
        Dataset::new(samples, classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("dataset has no classes"));
        }
        let unique: BTreeSet<&String> = self.classes.iter().collect();
        if unique.len() != self.classes.len() {
            return Err(Error::invalid("duplicate class names"));
        }
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            s.validate()?;
            if !ids.insert(&s.id) {
                return Err(Error::invalid(format!("duplicate sample id {}", s.id)));
            }
            if !self.classes.contains(&s.label) {
                return Err(Error::invalid(format!(
                    "sample {} has unknown label `{}`",
                    s.id, s.label
                )));
            }
        }
        for class in &self.classes {
            if !self
                .samples
                .iter()
                .any(|s| &s.label == class && s.split == Split::Train)
            {
                return Err(Error::invalid(format!("class `{class}` has no train samples")));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Stratified train/test split. Within each class the samples are ordered
/// by id and shuffled with a seeded RNG; the first
/// `round(test_fraction · n)` (kept within `1..n`) become test samples.
pub fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let mut out = ds.clone();
    for (ci, class) in ds.classes.iter().enumerate() {
        let mut members: Vec<usize> = (0..ds.samples.len())
            .filter(|&i| &ds.samples[i].label == class)
            .collect();
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class `{class}` has {} sample(s); splitting needs at least 2",
                members.len()
            )));
        }
        members.sort_by(|&a, &b| ds.samples[a].id.cmp(&ds.samples[b].id));
        let mut rng = rng::seeded(rng::derive_seed(seed, ci as u64));
        members.shuffle(&mut rng);
        let n = members.len();
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        for (k, &i) in members.iter().enumerate() {
            out.samples[i].split = if k < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub train: usize,
    pub test: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_class: BTreeMap<String, ClassCounts>,
    pub total_samples: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub total_duration_s: f64,
    /// Fraction of samples in the train split.
    pub train_fraction: f64,
}

impl DatasetStats {
    /// Counts for a label; unknown labels count zero.
    pub fn count(&self, label: &str) -> ClassCounts {
        self.per_class.get(label).cloned().unwrap_or_default()
    }
}

pub fn dataset_stats(ds: &Dataset) -> DatasetStats {
    let mut per_class: BTreeMap<String, ClassCounts> = ds
        .classes
        .iter()
        .map(|c| (c.clone(), ClassCounts::default()))
        .collect();
    let mut duration = 0.0;
    for s in &ds.samples {
        let entry = per_class.entry(s.label.clone()).or_default();
        entry.total += 1;
        match s.split {
            Split::Train => entry.train += 1,
            Split::Test => entry.test += 1,
        }
        duration += s.duration_s();
    }
    let train = ds.samples.iter().filter(|s| s.split == Split::Train).count();
    let total = ds.samples.len();
    DatasetStats {
        per_class,
        total_samples: total,
        train_samples: train,
        test_samples: total - train,
        total_duration_s: duration,
        train_fraction: if total == 0 { 0.0 } else { train as f64 / total as f64 },
    }
}

/// Persisted project metadata (`project.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMeta {
    pub classes: Vec<String>,
    pub seed: u64,
}

/// A project directory on disk.
#[derive(Debug, Clone)]
pub struct ProjectDir {
    root: PathBuf,
}

impl ProjectDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ProjectDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn artifacts(&self) -> PathBuf {
        self.root.join("artifacts")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn deploy(&self) -> PathBuf {
        self.root.join("deploy")
    }

    /// Creates the directory skeleton and an empty `project.json` if absent.
    pub fn init(&self, seed: u64) -> Result<()> {
        for dir in ["dataset/train", "dataset/test", "artifacts", "deploy", "reports"] {
            std::fs::create_dir_all(self.root.join(dir))?;
        }
        let meta = self.root.join("project.json");
        if !meta.exists() {
            self.save_meta(&ProjectMeta {
                classes: Vec::new(),
                seed,
            })?;
        }
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.root.join("project.json").is_file()
    }

    pub fn load_meta(&self) -> Result<ProjectMeta> {
        read_json(&self.root.join("project.json"), "run `init` first")
    }

    pub fn save_meta(&self, meta: &ProjectMeta) -> Result<()> {
        write_json(&self.root.join("project.json"), meta)
    }

    pub fn load_impulse(&self) -> Result<ImpulseConfig> {
        read_json(&self.root.join("impulse.json"), "run `init` first")
    }

    pub fn save_impulse(&self, impulse: &ImpulseConfig) -> Result<()> {
        write_json(&self.root.join("impulse.json"), impulse)
    }

    /// Writes a sample under `dataset/<split>/<label>/<id>.json`. Returns the
    /// path. Samples are stored in the JSON sample format so that CSV
    /// sensor data keeps its channel layout.
    pub fn store_sample(&self, sample: &Sample) -> Result<PathBuf> {
        let dir = self
            .root
            .join("dataset")
            .join(sample.split.as_str())
            .join(&sample.label);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", sample.id));
        std::fs::write(&path, encode_json(sample))?;
        Ok(path)
    }

    /// Moves stored samples so their location matches their split.
    pub fn store_dataset(&self, ds: &Dataset) -> Result<()> {
        let base = self.root.join("dataset");
        for split in ["train", "test"] {
            let dir = base.join(split);
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            std::fs::create_dir_all(&dir)?;
        }
        for s in &ds.samples {
            self.store_sample(s)?;
        }
        Ok(())
    }

    /// Loads every sample under `dataset/`, ordered by (split, label, id).
    /// Class order comes from `project.json`.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let meta = self.load_meta()?;
        let mut samples = Vec::new();
        for split in [Split::Train, Split::Test] {
            let split_dir = self.root.join("dataset").join(split.as_str());
            if !split_dir.is_dir() {
                continue;
            }
            let mut labels: Vec<PathBuf> = std::fs::read_dir(&split_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            labels.sort();
            for label_dir in labels {
                let label = label_dir
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or_default()
                    .to_string();
                let mut files: Vec<PathBuf> = std::fs::read_dir(&label_dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file())
                    .collect();
                files.sort();
                for file in files {
                    let format = Format::from_path(&file)?;
                    let mut s = ingest(&file, format, &label, split)?;
                    // Stored files keep the id they were ingested with.
                    if let Some(stem) = file.file_stem().and_then(|s| s.to_str()) {
                        s.id = stem.to_string();
                    }
                    samples.push(s);
                }
            }
        }
        let classes = if meta.classes.is_empty() {
            let mut seen: Vec<String> = Vec::new();
            for s in &samples {
                if !seen.contains(&s.label) {
                    seen.push(s.label.clone());
                }
            }
            seen
        } else {
            meta.classes
        };
        Dataset::new(samples, classes)
    }
}

/// The configured dataflow (`impulse.json`): DSP block, learn block and
/// deployment target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseConfig {
    pub kind: DataKind,
    pub dsp: DspConfig,
    pub model: DescriptorString,
    pub profile: String,
    #[serde(default)]
    pub constraints: Constraints,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub learning_rate: Option<f64>,
}

impl ImpulseConfig {
    pub fn preset(kind: DataKind) -> Self {
        let dsp = match kind {
            DataKind::Audio => DspConfig::mfe(0.02, 0.02, 32),
            DataKind::Timeseries => DspConfig::raw(1.0),
        };
        ImpulseConfig {
            kind,
            dsp,
            model: DescriptorString(preset_descriptor(kind)),
            profile: "nano33".into(),
            constraints: Constraints::default(),
            epochs: 30,
            batch_size: 16,
            learning_rate: None,
        }
    }
}

/// Exclusive per-project lock held for the duration of one command.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

impl ProjectLock {
    pub const FILE: &'static str = ".tinyforge.lock";

    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(Self::FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write as _;
                writeln!(f, "{}", std::process::id())?;
                Ok(ProjectLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidInput(format!(
                "project is locked by another command ({}); delete it if no command is running",
                path.display()
            ))),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, hint: &str) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: hint.to_string(),
            }
        } else {
            Error::Io(e)
        }
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
