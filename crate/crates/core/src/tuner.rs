//! Random search over DSP × model × dtype with resource pre-filtering.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegen::BuildMode;
use crate::dsp::{Block, DspConfig, DspPipeline};
use crate::error::{Error, Result};
use crate::estimate::{estimate, fits_device, Constraints, DeviceProfile, ResourceEstimate, Violation};
use crate::ir::{DType, ModelGraph, QuantParams};
use crate::project::{Dataset, Split};
use crate::quant::quantize_with;
use crate::rng::{derive_seed, seeded};
use crate::trainer::{build_model, evaluate, train, EvalReport, ModelDescriptor, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub dsp: DspConfig,
    pub model: ModelDescriptor,
    pub dtype: DType,
}

impl TrialConfig {
    fn key(&self) -> String {
        serde_json::to_string(self).expect("serializable config")
    }
}

/// One cross-product of choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceGroup {
    pub dsp: Vec<DspConfig>,
    pub models: Vec<ModelDescriptor>,
    pub dtypes: Vec<DType>,
}

/// Union of cross-products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub groups: Vec<SpaceGroup>,
}

fn row(dsp: DspConfig, model: &str) -> SpaceGroup {
    SpaceGroup {
        dsp: vec![dsp],
        models: vec![model.parse().expect("valid built-in descriptor")],
        dtypes: vec![DType::F32],
    }
}

impl SearchSpace {
    /// Eight keyword-spotting preprocessing/model pairings.
    pub fn kws() -> Self {
        SearchSpace {
            groups: vec![
                row(DspConfig::mfe(0.02, 0.01, 40), "MobileNetV2 0.35"),
                row(DspConfig::mfcc(0.02, 0.01, 40, 13), "4x conv1d (32 to 256)"),
                row(DspConfig::mfcc(0.02, 0.01, 32, 13), "4x conv1d (16 to 128)"),
                row(DspConfig::mfe(0.02, 0.01, 32), "3x conv1d (32 to 128)"),
                row(DspConfig::mfe(0.02, 0.02, 32), "2x conv1d (32 to 64)"),
                row(DspConfig::mfcc(0.05, 0.025, 40, 13), "3x conv1d (16 to 64)"),
                row(DspConfig::mfe(0.05, 0.025, 32), "2x conv1d (32 to 64)"),
                row(DspConfig::mfe(0.032, 0.016, 32), "2x conv1d (16 to 32)"),
            ],
        }
    }

    /// The table rows plus a grid of smaller variants in both dtypes.
    pub fn extended() -> Self {
        let mut s = SearchSpace::kws();
        s.groups.push(SpaceGroup {
            dsp: vec![
                DspConfig::mfe(0.02, 0.02, 32),
                DspConfig::mfe(0.032, 0.016, 32),
                DspConfig::mfcc(0.05, 0.025, 32, 13),
            ],
            models: vec![
                "2x conv1d (8 to 16)".parse().expect("valid"),
                "2x conv1d (16 to 32)".parse().expect("valid"),
            ],
            dtypes: vec![DType::F32, DType::I8],
        });
        s
    }

    /// Distinct configurations in listing order.
    pub fn enumerate(&self) -> Vec<TrialConfig> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for g in &self.groups {
            for d in &g.dsp {
                for m in &g.models {
                    for &t in &g.dtypes {
                        let c = TrialConfig {
                            dsp: d.clone(),
                            model: m.clone(),
                            dtype: t,
                        };
                        if seen.insert(c.key()) {
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.enumerate().is_empty() {
            return Err(Error::Search("search space is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub configs: Vec<TrialConfig>,
    pub warnings: Vec<String>,
}

/// Uniform i.i.d. draws over the distinct configurations, deduplicated
/// with bounded redraws.
pub fn sample_configs(space: &SearchSpace, n: usize, seed: u64) -> Result<Sampled> {
    if n == 0 {
        return Err(Error::Search("number of trials must be ≥ 1".into()));
    }
    let all = space.enumerate();
    if all.is_empty() {
        return Err(Error::Search("search space is empty".into()));
    }
    let mut rng = seeded(seed);
    let mut warnings = Vec::new();
    let target = n.min(all.len());
    if n > all.len() {
        warnings.push(format!(
            "requested {n} trials but the space has only {} distinct configurations",
            all.len()
        ));
    }
    let mut picked: Vec<usize> = Vec::with_capacity(target);
    let mut taken = vec![false; all.len()];
    let mut attempts = 0;
    let max_attempts = 64 * n.max(all.len());
    while picked.len() < target && attempts < max_attempts {
        attempts += 1;
        let i = rng.random_range(0..all.len());
        if !taken[i] {
            taken[i] = true;
            picked.push(i);
        }
    }
    for i in 0..all.len() {
        if picked.len() >= target {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            picked.push(i);
        }
    }
    Ok(Sampled {
        configs: picked.into_iter().map(|i| all[i].clone()).collect(),
        warnings,
    })
}

/// Shape-only int8 view of a float graph, for sizing.
pub fn as_int8_shapes(g: &ModelGraph) -> ModelGraph {
    let mut out = g.clone();
    let quantized_weights: BTreeSet<String> = g
        .nodes
        .iter()
        .filter(|n| n.op.weight_inputs() == 2)
        .flat_map(|n| n.inputs[1..].iter().cloned())
        .collect();
    for t in &mut out.tensors {
        if quantized_weights.contains(&t.id) {
            let is_bias = t.shape.len() == 1;
            t.dtype = if is_bias { DType::I32 } else { DType::I8 };
            t.quant = Some(QuantParams::per_tensor(1.0, 0));
        }
    }
    for id in &quantized_weights {
        if let Some(w) = out.weights.get_mut(id) {
            let n = w.len();
            let is_bias = g.tensor(id).is_some_and(|t| t.shape.len() == 1);
            *w = if is_bias {
                crate::ir::TensorData::I32(vec![0; n])
            } else {
                crate::ir::TensorData::I8(vec![0; n])
            };
        }
    }
    let float_out: BTreeSet<&str> = g
        .nodes
        .iter()
        .filter(|n| matches!(n.op, crate::ir::Op::Softmax | crate::ir::Op::KmeansDistance { .. }))
        .map(|n| n.output.as_str())
        .collect();
    for id in g.activation_ids() {
        if !float_out.contains(id) {
            let t = out.tensor_mut(id).expect("activation exists");
            t.dtype = DType::I8;
            t.quant = Some(QuantParams::per_tensor(1.0, 0));
        }
    }
    out
}

/// Builds the untrained graph of a configuration and estimates it.
pub fn estimate_config(
    cfg: &TrialConfig,
    sample_rate_hz: u32,
    classes: usize,
    profile: &DeviceProfile,
    seed: u64,
) -> Result<ResourceEstimate> {
    cfg.dsp.validate(sample_rate_hz)?;
    let shape = cfg.dsp.feature_shape(sample_rate_hz, 1);
    let g = build_model(&cfg.model, shape, classes, seed)?;
    let g = match cfg.dtype {
        DType::I8 => as_int8_shapes(&g),
        _ => g,
    };
    estimate(&g, &cfg.dsp, sample_rate_hz, profile, BuildMode::Generated)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub trial_id: usize,
    pub config: TrialConfig,
    pub estimate: ResourceEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredConfig {
    pub trial_id: usize,
    pub config: TrialConfig,
    pub estimate: Option<ResourceEstimate>,
    pub violations: Vec<Violation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub kept: Vec<Candidate>,
    pub filtered: Vec<FilteredConfig>,
}

/// Drops configurations whose untrained estimate exceeds device capacity
/// or any user constraint. Trial ids are positions in `configs`.
pub fn heuristic_filter(
    configs: &[TrialConfig],
    sample_rate_hz: u32,
    classes: usize,
    profile: &DeviceProfile,
    constraints: &Constraints,
    seed: u64,
) -> Partition {
    let results: Vec<(usize, Result<ResourceEstimate>)> = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| (i, estimate_config(c, sample_rate_hz, classes, profile, derive_seed(seed, i as u64))))
        .collect();
    let mut kept = Vec::new();
    let mut filtered = Vec::new();
    for (i, r) in results {
        let config = configs[i].clone();
        match r {
            Ok(est) => {
                let mut violations = fits_device(&est, profile).violations;
                for v in constraints.violations(&est) {
                    if !violations.iter().any(|o| o.resource == v.resource && o.limit <= v.limit) {
                        violations.push(v);
                    }
                }
                if violations.is_empty() {
                    kept.push(Candidate {
                        trial_id: i,
                        config,
                        estimate: est,
                    });
                } else {
                    filtered.push(FilteredConfig {
                        trial_id: i,
                        config,
                        estimate: Some(est),
                        violations,
                        error: None,
                    });
                }
            }
            Err(e) => filtered.push(FilteredConfig {
                trial_id: i,
                config,
                estimate: None,
                violations: Vec::new(),
                error: Some(e.to_string()),
            }),
        }
    }
    Partition { kept, filtered }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Filtered,
    Trained,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub config: TrialConfig,
    pub status: TrialStatus,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub eval: Option<EvalReport>,
    pub estimate: Option<ResourceEstimate>,
    pub error: Option<String>,
}

/// Features of every sample in `split`, with class indices.
pub fn featurize(ds: &Dataset, cfg: &DspConfig, split: Split) -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
    let mut pipelines: Vec<(u32, DspPipeline)> = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for s in ds.split(split) {
        if !pipelines.iter().any(|(sr, _)| *sr == s.sample_rate_hz) {
            pipelines.push((s.sample_rate_hz, DspPipeline::new(cfg, s.sample_rate_hz)?));
        }
        let p = &pipelines.iter().find(|(sr, _)| *sr == s.sample_rate_hz).expect("inserted").1;
        features.push(p.process(s)?.values);
        labels.push(ds.class_index(&s.label).expect("validated dataset"));
    }
    Ok((features, labels))
}

const REPRESENTATIVE_SAMPLES: usize = 50;

fn run_one(c: &Candidate, ds: &Dataset, profile: &DeviceProfile, train_cfg: &TrainConfig, seed: u64) -> Result<(EvalReport, ResourceEstimate)> {
    let sr = ds
        .samples
        .first()
        .map(|s| s.sample_rate_hz)
        .ok_or_else(|| Error::Search("dataset is empty".into()))?;
    let (train_x, train_y) = featurize(ds, &c.config.dsp, Split::Train)?;
    let (test_x, test_y) = featurize(ds, &c.config.dsp, Split::Test)?;
    if test_x.is_empty() {
        return Err(Error::Search("dataset has no test samples; run split first".into()));
    }
    let channels = if c.config.dsp.block == Block::Raw {
        ds.samples[0].channels
    } else {
        1
    };
    let shape = c.config.dsp.feature_shape(sr, channels);
    let g = build_model(&c.config.model, shape, ds.classes.len(), seed)?;
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let (trained, _) = train(&g, &train_x, &train_y, &cfg)?;
    let final_graph = match c.config.dtype {
        DType::I8 => {
            let n = train_x.len().min(REPRESENTATIVE_SAMPLES);
            quantize_with(&trained, &train_x[..n])?.graph
        }
        _ => trained,
    };
    let report = evaluate(&final_graph, &test_x, &test_y)?;
    let est = estimate(&final_graph, &c.config.dsp, sr, profile, BuildMode::Generated)?;
    Ok((report, est))
}

/// Trains and evaluates every kept candidate in parallel. A failing trial
/// is recorded and does not stop the batch.
pub fn run_trials(
    kept: &[Candidate],
    ds: &Dataset,
    profile: &DeviceProfile,
    train_cfg: &TrainConfig,
    batch_seed: u64,
) -> Result<Vec<Trial>> {
    if ds.split(Split::Test).next().is_none() {
        return Err(Error::Search("dataset has no test split; run split first".into()));
    }
    let trials: Vec<Trial> = kept
        .par_iter()
        .map(|c| {
            let seed = derive_seed(batch_seed, c.trial_id as u64);
            match run_one(c, ds, profile, train_cfg, seed) {
                Ok((report, est)) => Trial {
                    trial_id: c.trial_id,
                    config: c.config.clone(),
                    status: TrialStatus::Trained,
                    seed,
                    accuracy: Some(report.accuracy),
                    eval: Some(report),
                    estimate: Some(est),
                    error: None,
                },
                Err(e) => Trial {
                    trial_id: c.trial_id,
                    config: c.config.clone(),
                    status: TrialStatus::Failed,
                    seed,
                    accuracy: None,
                    eval: None,
                    estimate: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    if !trials.is_empty() && trials.iter().all(|t| t.status == TrialStatus::Failed) {
        let first = trials[0].error.clone().unwrap_or_default();
        return Err(Error::Search(format!("all {} trials failed; first error: {first}", trials.len())));
    }
    Ok(trials)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Accuracy,
    Latency,
    Ram,
    Flash,
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Objective::Accuracy),
            "latency" => Ok(Objective::Latency),
            "ram" => Ok(Objective::Ram),
            "flash" => Ok(Objective::Flash),
            o => Err(Error::Config(format!("unknown objective `{o}` (accuracy, latency, ram, flash)"))),
        }
    }
}

/// Trained trials ordered by the objective (accuracy descending,
/// resources ascending); ties go to lower total latency, then lower id.
pub fn rank_trials(trials: &[Trial], objective: Objective) -> Result<Vec<Trial>> {
    let mut ranked: Vec<Trial> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Trained && t.estimate.is_some())
        .cloned()
        .collect();
    if ranked.is_empty() {
        return Err(Error::Search("no trained trials to rank".into()));
    }
    let est = |t: &Trial| t.estimate.clone().expect("filtered above");
    ranked.sort_by(|a, b| {
        let (ea, eb) = (est(a), est(b));
        let primary = match objective {
            Objective::Accuracy => b.accuracy.unwrap_or(0.0).total_cmp(&a.accuracy.unwrap_or(0.0)),
            Objective::Latency => ea.total_latency_ms.total_cmp(&eb.total_latency_ms),
            Objective::Ram => ea.ram_bytes.cmp(&eb.ram_bytes),
            Objective::Flash => ea.flash_bytes.cmp(&eb.flash_bytes),
        };
        primary
            .then(ea.total_latency_ms.total_cmp(&eb.total_latency_ms))
            .then(a.trial_id.cmp(&b.trial_id))
    });
    Ok(ranked)
}

fn block_label(d: &DspConfig) -> String {
    match d.block {
        Block::Raw => format!("Raw ({})", d.window_size_s),
        Block::Mfe => format!("MFE ({}, {}, {})", d.frame_length_s, d.frame_stride_s, d.num_mel_filters),
        Block::Mfcc => format!("MFCC ({}, {}, {})", d.frame_length_s, d.frame_stride_s, d.num_mel_filters),
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Table rows for ranked trials. Latency components are rounded to
/// 0.01 ms and the total is their sum; RAM is in bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub trial_id: usize,
    pub dsp: String,
    pub model: String,
    pub dtype: DType,
    pub accuracy: f64,
    pub latency_dsp_ms: f64,
    pub latency_nn_ms: f64,
    pub latency_total_ms: f64,
    pub ram_dsp: usize,
    pub ram_nn: usize,
    pub ram_total: usize,
    pub flash: usize,
}

pub fn report_rows(ranked: &[Trial]) -> Vec<ReportRow> {
    ranked
        .iter()
        .filter_map(|t| {
            let e = t.estimate.as_ref()?;
            let (d, n) = (round2(e.dsp_latency_ms), round2(e.nn_latency_ms));
            Some(ReportRow {
                trial_id: t.trial_id,
                dsp: block_label(&t.config.dsp),
                model: t.config.model.to_string(),
                dtype: t.config.dtype,
                accuracy: t.accuracy.unwrap_or(0.0),
                latency_dsp_ms: d,
                latency_nn_ms: n,
                latency_total_ms: round2(d + n),
                ram_dsp: e.dsp_ram_bytes,
                ram_nn: e.nn_ram_bytes,
                ram_total: e.dsp_ram_bytes + e.nn_ram_bytes,
                flash: e.flash_bytes,
            })
        })
        .collect()
}

pub fn report_markdown(rows: &[ReportRow], title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {title}\n");
    s.push_str("| Trial | Preprocessing | Model | Type | Acc. | DSP ms | Infer. ms | Total ms | DSP RAM | Infer. RAM | Total RAM | Flash |\n");
    s.push_str("|---:|---|---|---|---:|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.1}% | {:.2} | {:.2} | {:.2} | {} | {} | {} | {} |",
            r.trial_id,
            r.dsp,
            r.model,
            r.dtype,
            r.accuracy * 100.0,
            r.latency_dsp_ms,
            r.latency_nn_ms,
            r.latency_total_ms,
            r.ram_dsp,
            r.ram_nn,
            r.ram_total,
            r.flash
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerReport {
    pub seed: u64,
    pub profile: String,
    pub constraints: Constraints,
    pub objective: Objective,
    pub warnings: Vec<String>,
    pub trials: Vec<Trial>,
    pub ranking: Vec<ReportRow>,
}

pub struct TuneRequest<'a> {
    pub space: &'a SearchSpace,
    pub trials: usize,
    pub seed: u64,
    pub profile: &'a DeviceProfile,
    pub constraints: &'a Constraints,
    pub train: &'a TrainConfig,
    pub objective: Objective,
}

/// Sample, filter, train and rank in one call.
pub fn tune(ds: &Dataset, req: &TuneRequest) -> Result<TunerReport> {
    let sampled = sample_configs(req.space, req.trials, req.seed)?;
    let sr = ds
        .samples
        .first()
        .map(|s| s.sample_rate_hz)
        .ok_or_else(|| Error::Search("dataset is empty".into()))?;
    let part = heuristic_filter(&sampled.configs, sr, ds.classes.len(), req.profile, req.constraints, req.seed);
    let mut warnings = sampled.warnings;
    let mut trials = if part.kept.is_empty() {
        warnings.push("every sampled configuration was filtered out".into());
        Vec::new()
    } else {
        run_trials(&part.kept, ds, req.profile, req.train, req.seed)?
    };
    for f in &part.filtered {
        trials.push(Trial {
            trial_id: f.trial_id,
            config: f.config.clone(),
            status: TrialStatus::Filtered,
            seed: derive_seed(req.seed, f.trial_id as u64),
            accuracy: None,
            eval: None,
            estimate: f.estimate.clone(),
            error: f.error.clone().or_else(|| {
                Some(
                    f.violations
                        .iter()
                        .map(|v| format!("{} {} > {}", v.resource, v.used, v.limit))
                        .collect::<Vec<_>>()
                        .join("; "),
                )
            }),
        });
    }
    trials.sort_by_key(|t| t.trial_id);
    let ranking = match rank_trials(&trials, req.objective) {
        Ok(r) => report_rows(&r),
        Err(_) => Vec::new(),
    };
    Ok(TunerReport {
        seed: req.seed,
        profile: req.profile.name.clone(),
        constraints: req.constraints.clone(),
        objective: req.objective,
        warnings,
        trials,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_space() -> SearchSpace {
        SearchSpace {
            groups: vec![SpaceGroup {
                dsp: vec![DspConfig::mfe(0.02, 0.02, 32), DspConfig::mfe(0.05, 0.025, 32), DspConfig::mfcc(0.05, 0.025, 32, 13)],
                models: vec!["2x conv1d (8 to 16)".parse().unwrap(), "mlp (16)".parse().unwrap()],
                dtypes: vec![DType::F32, DType::I8],
            }],
        }
    }

    #[test]
    fn table_space_has_eight_rows() {
        assert_eq!(SearchSpace::kws().enumerate().len(), 8);
    }

    #[test]
    fn exhaustive_draw() {
        let space = SearchSpace {
            groups: vec![SpaceGroup {
                models: vec!["mlp (4)".parse().unwrap()],
                dtypes: vec![DType::F32],
                ..small_space().groups[0].clone()
            }, SpaceGroup {
                models: vec!["mlp (8)".parse().unwrap()],
                dtypes: vec![DType::F32],
                ..small_space().groups[0].clone()
            }],
        };
        assert_eq!(space.enumerate().len(), 6);
        let s = sample_configs(&space, 6, 3).unwrap();
        let keys: BTreeSet<String> = s.configs.iter().map(TrialConfig::key).collect();
        assert_eq!(keys.len(), 6);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn oversampling_warns() {
        let s = sample_configs(&small_space(), 1000, 1).unwrap();
        assert_eq!(s.configs.len(), 12);
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(sample_configs(&small_space(), 5, 9).unwrap(), sample_configs(&small_space(), 5, 9).unwrap());
        assert!(sample_configs(&small_space(), 0, 9).is_err());
    }

    #[test]
    fn filter_without_constraints_keeps_fitting_configs() {
        let profile = DeviceProfile::load("esp-eye", None).unwrap();
        let configs = small_space().enumerate();
        let p = heuristic_filter(&configs, 16_000, 3, &profile, &Constraints::default(), 1);
        assert_eq!(p.kept.len(), configs.len());
    }

    #[test]
    fn ram_constraint_drops_wide_model() {
        let profile = DeviceProfile::load("esp-eye", None).unwrap();
        let configs = SearchSpace::kws().enumerate();
        let mut c = Constraints::default();
        c.apply("ram=256k").unwrap();
        let p = heuristic_filter(&configs[..1], 16_000, 3, &profile, &c, 1);
        assert!(p.kept.is_empty());
        assert!(p.filtered[0].violations.iter().any(|v| v.resource == "ram"));
        for k in heuristic_filter(&configs, 16_000, 3, &profile, &c, 1).kept {
            assert!(k.estimate.ram_bytes <= 256 * 1024);
        }
    }

    fn fake(id: usize, acc: f64, latency: f64) -> Trial {
        Trial {
            trial_id: id,
            config: small_space().enumerate()[0].clone(),
            status: TrialStatus::Trained,
            seed: 0,
            accuracy: Some(acc),
            eval: None,
            estimate: Some(ResourceEstimate {
                dsp_latency_ms: latency / 2.0,
                nn_latency_ms: latency / 2.0,
                total_latency_ms: latency,
                dsp_ram_bytes: 10,
                nn_ram_bytes: 100 * (id + 1),
                ram_bytes: 10 + 100 * (id + 1),
                flash_bytes: 1000,
                macs: 0,
            }),
            error: None,
        }
    }

    #[test]
    fn ranking_rules() {
        let t = vec![fake(0, 0.73, 1.0), fake(1, 0.85, 1.0), fake(2, 0.75, 1.0)];
        let r = rank_trials(&t, Objective::Accuracy).unwrap();
        let acc: Vec<f64> = r.iter().map(|t| t.accuracy.unwrap()).collect();
        assert_eq!(acc, vec![0.85, 0.75, 0.73]);
        let t = vec![fake(0, 0.8, 493.0), fake(1, 0.8, 308.0)];
        assert_eq!(rank_trials(&t, Objective::Accuracy).unwrap()[0].trial_id, 1);
        let t = vec![fake(2, 0.8, 1.0), fake(0, 0.8, 1.0), fake(1, 0.8, 1.0)];
        let ids: Vec<usize> = rank_trials(&t, Objective::Ram).unwrap().iter().map(|t| t.trial_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(rank_trials(&[], Objective::Accuracy).is_err());
    }

    #[test]
    fn rows_sum() {
        let rows = report_rows(&[fake(0, 0.5, 3.3333)]);
        let r = &rows[0];
        assert_eq!(r.ram_total, r.ram_dsp + r.ram_nn);
        assert!((r.latency_total_ms - round2(r.latency_dsp_ms + r.latency_nn_ms)).abs() < 1e-12);
        assert!(report_markdown(&rows, "Tuner").contains("| 0 |"));
    }
}
