//! Python bindings. Structured results (histories, reports, estimates) come
//! back as plain dicts and lists.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use tinyforge::calibrate::{
    apply_postprocess, ga_search, score_far_frr, CalibrationProblem, GaParams, Interval, PostProcessConfig,
    SearchBounds,
};
use tinyforge::codegen::{emit_c, BuildMode, CodegenOptions};
use tinyforge::dsp::{self, DspConfig as CoreDsp, DspPipeline};
use tinyforge::estimate::{self, DeviceProfile};
use tinyforge::interp::{plan_arena, run_flat};
use tinyforge::ir::{self, ModelGraph};
use tinyforge::project::{split_dataset, Dataset as CoreDataset, Split};
use tinyforge::trainer::{self, ModelDescriptor, TrainConfig};
use tinyforge::{quant, synth, tuner};

create_exception!(tinyforge, TinyforgeError, PyException);

fn err(e: tinyforge::Error) -> PyErr {
    TinyforgeError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_split(s: &str) -> PyResult<Split> {
    s.parse().map_err(err)
}

/// Feature extraction settings.
#[pyclass(module = "tinyforge", name = "DspConfig")]
pub struct PyDspConfig {
    inner: CoreDsp,
}

#[pymethods]
impl PyDspConfig {
    #[staticmethod]
    fn mfe(frame_length_s: f64, frame_stride_s: f64, num_mel_filters: usize) -> Self {
        PyDspConfig {
            inner: CoreDsp::mfe(frame_length_s, frame_stride_s, num_mel_filters),
        }
    }

    #[staticmethod]
    fn mfcc(frame_length_s: f64, frame_stride_s: f64, num_mel_filters: usize, num_cepstral_coeffs: usize) -> Self {
        PyDspConfig {
            inner: CoreDsp::mfcc(frame_length_s, frame_stride_s, num_mel_filters, num_cepstral_coeffs),
        }
    }

    #[staticmethod]
    fn raw(window_size_s: f64) -> Self {
        PyDspConfig {
            inner: CoreDsp::raw(window_size_s),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(|inner| PyDspConfig { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    /// `(rows, cols)` of the feature matrix for one window.
    #[pyo3(signature = (sample_rate_hz, channels = 1))]
    fn feature_shape(&self, sample_rate_hz: u32, channels: usize) -> (usize, usize) {
        self.inner.feature_shape(sample_rate_hz, channels)
    }

    /// Features of one window of mono samples, row-major.
    fn process(&self, signal: Vec<f64>, sample_rate_hz: u32) -> PyResult<Vec<f32>> {
        let p = DspPipeline::new(&self.inner, sample_rate_hz).map_err(err)?;
        Ok(p.process_signal(&signal).map_err(err)?.values)
    }

    fn __repr__(&self) -> String {
        format!("DspConfig({})", self.to_json())
    }
}

/// A labeled dataset with train/test splits.
#[pyclass(module = "tinyforge", name = "Dataset")]
pub struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    /// Three classes of noisy tones in separate frequency bands.
    #[staticmethod]
    #[pyo3(signature = (per_class, seed = 0))]
    fn tones(per_class: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: synth::tone_dataset(per_class, seed).map_err(err)?,
        })
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.classes.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    /// Stratified re-split; returns a new dataset.
    #[pyo3(signature = (test_fraction = 0.2, seed = 0))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: split_dataset(&self.inner, test_fraction, seed).map_err(err)?,
        })
    }

    /// `(features, labels)` for one split.
    #[pyo3(signature = (dsp, split = "train"))]
    fn featurize(&self, dsp: PyRef<'_, PyDspConfig>, split: &str) -> PyResult<(Vec<Vec<f32>>, Vec<usize>)> {
        tuner::featurize(&self.inner, &dsp.inner, parse_split(split)?).map_err(err)
    }
}

/// An operator graph, float or int8.
#[pyclass(module = "tinyforge", name = "Model")]
pub struct PyModel {
    inner: ModelGraph,
}

#[pymethods]
impl PyModel {
    /// Untrained model from a template such as `"2x conv1d (8 to 16)"` or
    /// `"mlp (20, 10)"`.
    #[staticmethod]
    #[pyo3(signature = (descriptor, rows, cols, classes, seed = 0))]
    fn build(descriptor: &str, rows: usize, cols: usize, classes: usize, seed: u64) -> PyResult<Self> {
        let desc: ModelDescriptor = descriptor.parse().map_err(err)?;
        Ok(PyModel {
            inner: trainer::build_model(&desc, (rows, cols), classes, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: ir::load_model(path.as_ref()).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyModel {
            inner: ir::decode_model(data).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        ir::save_model(&self.inner, path.as_ref()).map_err(err)
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        ir::encode_model(&self.inner).map_err(err)
    }

    #[getter]
    fn dtype(&self) -> String {
        self.inner.dtype().to_string()
    }

    #[getter]
    fn input_shape(&self) -> PyResult<Vec<usize>> {
        Ok(self.inner.input_spec().map_err(err)?.shape.clone())
    }

    #[getter]
    fn output_shape(&self) -> PyResult<Vec<usize>> {
        Ok(self.inner.output_spec().map_err(err)?.shape.clone())
    }

    /// Runs one flattened input through the reference interpreter.
    fn run(&self, x: Vec<f32>) -> PyResult<Vec<f32>> {
        run_flat(&self.inner, &x).map_err(err)
    }

    fn predict(&self, features: Vec<Vec<f32>>) -> PyResult<Vec<usize>> {
        trainer::predict(&self.inner, &features).map_err(err)
    }

    /// Returns `(trained_model, history)`.
    #[pyo3(signature = (features, labels, epochs = 30, batch_size = 16, learning_rate = None, seed = 0))]
    fn train(
        &self,
        py: Python<'_>,
        features: Vec<Vec<f32>>,
        labels: Vec<usize>,
        epochs: usize,
        batch_size: usize,
        learning_rate: Option<f64>,
        seed: u64,
    ) -> PyResult<(PyModel, Py<PyAny>)> {
        let cfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed,
            ..TrainConfig::default()
        };
        let (g, hist) = py
            .detach(|| trainer::train(&self.inner, &features, &labels, &cfg))
            .map_err(err)?;
        Ok((PyModel { inner: g }, to_py(py, &hist)?))
    }

    /// Confusion matrix, accuracy and per-class F1.
    fn evaluate(&self, py: Python<'_>, features: Vec<Vec<f32>>, labels: Vec<usize>) -> PyResult<Py<PyAny>> {
        to_py(py, &trainer::evaluate(&self.inner, &features, &labels).map_err(err)?)
    }

    /// Post-training int8 quantization; returns `(model, warnings)`.
    fn quantize(&self, representative: Vec<Vec<f32>>) -> PyResult<(PyModel, Vec<String>)> {
        let q = quant::quantize_with(&self.inner, &representative).map_err(err)?;
        Ok((PyModel { inner: q.graph }, q.warnings))
    }

    /// Peak bytes of the planned activation arena.
    fn arena_bytes(&self) -> PyResult<usize> {
        Ok(plan_arena(&self.inner).map_err(err)?.peak_bytes)
    }

    /// `(header_name, header, source_name, source)` of the generated C.
    #[pyo3(signature = (prefix = "model", trace_hooks = false))]
    fn emit_c(&self, prefix: &str, trace_hooks: bool) -> PyResult<(String, String, String, String)> {
        let plan = plan_arena(&self.inner).map_err(err)?;
        let opts = CodegenOptions {
            symbol_prefix: prefix.into(),
            dtype: self.inner.dtype(),
            emit_trace_hooks: trace_hooks,
        };
        let c = emit_c(&self.inner, &plan, &opts).map_err(err)?;
        Ok((c.header_name, c.header, c.source_name, c.source))
    }

    /// Latency/RAM/flash estimate on a named device profile.
    #[pyo3(signature = (dsp, sample_rate_hz, profile = "nano33"))]
    fn estimate(&self, py: Python<'_>, dsp: PyRef<'_, PyDspConfig>, sample_rate_hz: u32, profile: &str) -> PyResult<Py<PyAny>> {
        let p = DeviceProfile::load(profile, None).map_err(err)?;
        let est = estimate::estimate(&self.inner, &dsp.inner, sample_rate_hz, &p, BuildMode::Generated).map_err(err)?;
        let fit = estimate::fits_device(&est, &p);
        to_py(py, &serde_json::json!({ "estimate": est, "fits": fit.fits, "violations": fit.violations }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(dtype={}, nodes={}, input={:?})",
            self.inner.dtype(),
            self.inner.nodes.len(),
            self.input_shape().unwrap_or_default()
        )
    }
}

/// Detections as `(class, frame)` pairs.
#[pyfunction]
#[pyo3(signature = (probs, positive, window = 1, threshold = 0.5, suppression = 0))]
fn postprocess(probs: Vec<Vec<f32>>, positive: usize, window: usize, threshold: f64, suppression: usize) -> PyResult<Vec<(usize, usize)>> {
    let cfg = PostProcessConfig {
        averaging_window_frames: window,
        threshold,
        suppression_frames: suppression,
    };
    cfg.validate().map_err(err)?;
    Ok(apply_postprocess(&probs, positive, &cfg)
        .into_iter()
        .map(|d| (d.class, d.frame))
        .collect())
}

fn frame_intervals(spans: &[(usize, usize)]) -> Vec<Interval> {
    spans
        .iter()
        .map(|&(a, b)| Interval {
            class: 0,
            start_sample: a,
            end_sample: b + 1,
            start_frame: a,
            end_frame: b,
        })
        .collect()
}

/// `(far, frr)` of detection frames against inclusive frame intervals.
#[pyfunction]
#[pyo3(signature = (detection_frames, intervals, total_frames, window = 1, tolerance = 0))]
fn far_frr(detection_frames: Vec<usize>, intervals: Vec<(usize, usize)>, total_frames: usize, window: usize, tolerance: usize) -> (f64, f64) {
    let d: Vec<_> = detection_frames
        .into_iter()
        .map(|frame| tinyforge::calibrate::Detection { class: 0, frame })
        .collect();
    score_far_frr(&d, &frame_intervals(&intervals), total_frames, window, tolerance)
}

/// Genetic search over post-processing settings; returns the report dict.
#[pyfunction]
#[pyo3(signature = (probs, positive, intervals, tolerance = 2, population = 24, generations = 30, seed = 0))]
fn calibrate(
    py: Python<'_>,
    probs: Vec<Vec<f32>>,
    positive: usize,
    intervals: Vec<(usize, usize)>,
    tolerance: usize,
    population: usize,
    generations: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let problem = CalibrationProblem {
        probs,
        positive,
        intervals: frame_intervals(&intervals),
        tolerance_frames: tolerance,
    };
    let params = GaParams {
        population,
        generations,
        seed,
        ..GaParams::default()
    };
    let report = py
        .detach(|| ga_search(&problem, &SearchBounds::default(), &params, &[]))
        .map_err(err)?;
    to_py(py, &report)
}

#[pyfunction]
fn encode_fvf(vectors: Vec<Vec<f32>>) -> PyResult<Vec<u8>> {
    dsp::encode_fvf(&vectors).map_err(err)
}

#[pyfunction]
fn decode_fvf(data: &[u8]) -> PyResult<Vec<Vec<f32>>> {
    dsp::decode_fvf(data).map_err(err)
}

#[pymodule]
#[pyo3(name = "tinyforge")]
fn tinyforge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TinyforgeError", m.py().get_type::<TinyforgeError>())?;
    m.add_class::<PyDspConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(far_frr, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(encode_fvf, m)?)?;
    m.add_function(wrap_pyfunction!(decode_fvf, m)?)?;
    Ok(())
}
