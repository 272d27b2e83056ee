use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tinyforge::calibrate::{
    ga_search, stream_probabilities, synth_stream, CalibrationProblem, GaParams, SearchBounds, StreamSpec,
    BACKGROUND_LABELS,
};
use tinyforge::codegen::{emit_c, flash_ram_report, BuildMode, CodegenOptions};
use tinyforge::dsp::{decode_fvf, encode_fvf, DspConfig, DspPipeline};
use tinyforge::estimate::{estimate, fits_device, Constraints, DeviceProfile};
use tinyforge::interp::{plan_arena, run_flat, run_graph};
use tinyforge::ir::{load_model, save_model, DType, ModelGraph};
use tinyforge::project::{
    dataset_stats, ingest, read_json, split_dataset, write_json, Dataset, DatasetStats, Format, ImpulseConfig,
    ProjectDir, ProjectLock, ProjectMeta, Split,
};
use tinyforge::quant::quantize_with;
use tinyforge::synth::tone_dataset;
use tinyforge::trainer::{
    build_model, evaluate, kmeans_fit, kmeans_graph, train, DataKind, EvalReport, TrainConfig,
};
use tinyforge::tuner::{as_int8_shapes, featurize, report_markdown, tune, Objective, SearchSpace, TuneRequest, TunerReport};
use tinyforge::Error;

use crate::{Cli, Command, Global, Kind, ObjectiveChoice, Outcome, Precision, SpaceChoice};

const FEATURES_INDEX: &str = "artifacts/features.json";
const FEATURES_TRAIN: &str = "artifacts/features_train.fvf";
const FEATURES_TEST: &str = "artifacts/features_test.fvf";
const MODEL_F32: &str = "artifacts/model_f32.json";
const MODEL_I8: &str = "artifacts/model_i8.json";
const ANOMALY: &str = "artifacts/anomaly.json";

/// An opened, locked project.
struct Ctx {
    proj: ProjectDir,
    meta: ProjectMeta,
    impulse: ImpulseConfig,
    seed: u64,
    global: Global,
    _lock: ProjectLock,
}

impl Ctx {
    fn open(g: &Global) -> Result<Self> {
        let proj = ProjectDir::new(&g.project);
        if !proj.is_initialized() {
            return Err(Error::MissingArtifact {
                path: proj.path("project.json"),
                hint: "run `tinyforge init` first".into(),
            }
            .into());
        }
        let lock = ProjectLock::acquire(proj.root())?;
        let meta = proj.load_meta()?;
        let impulse = proj.load_impulse()?;
        Ok(Ctx {
            seed: g.seed.unwrap_or(meta.seed),
            proj,
            meta,
            impulse,
            global: g.clone(),
            _lock: lock,
        })
    }

    fn profile(&self) -> Result<DeviceProfile> {
        let name = self.global.profile.as_deref().unwrap_or(&self.impulse.profile);
        let dir = std::env::var_os("TINYFORGE_PROFILE_DIR").map(PathBuf::from);
        Ok(DeviceProfile::load(name, dir.as_deref())?)
    }

    fn model_path(&self, dtype: Precision) -> PathBuf {
        self.proj.path(match dtype {
            Precision::F32 => MODEL_F32,
            Precision::I8 => MODEL_I8,
        })
    }

    fn load_model(&self, dtype: Precision) -> Result<ModelGraph> {
        let path = self.model_path(dtype);
        if !path.exists() {
            let hint = match dtype {
                Precision::F32 => "run `tinyforge train` first",
                Precision::I8 => "run `tinyforge quantize` first",
            };
            return Err(Error::MissingArtifact { path, hint: hint.into() }.into());
        }
        Ok(load_model(&path)?)
    }

    fn train_config(&self, epochs: Option<usize>) -> TrainConfig {
        TrainConfig {
            epochs: epochs.unwrap_or(self.impulse.epochs),
            batch_size: self.impulse.batch_size,
            learning_rate: self.impulse.learning_rate,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleRef {
    id: String,
    label: usize,
}

/// Metadata of the feature files written by `dsp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureIndex {
    dsp: DspConfig,
    sample_rate_hz: u32,
    channels: usize,
    shape: (usize, usize),
    classes: Vec<String>,
    train: Vec<SampleRef>,
    test: Vec<SampleRef>,
}

struct Features {
    index: FeatureIndex,
    train_x: Vec<Vec<f32>>,
    train_y: Vec<usize>,
    test_x: Vec<Vec<f32>>,
    test_y: Vec<usize>,
}

fn load_features(ctx: &Ctx) -> Result<Features> {
    let index: FeatureIndex = read_json(&ctx.proj.path(FEATURES_INDEX), "run `tinyforge dsp` first")?;
    if index.dsp != ctx.impulse.dsp {
        bail!(Error::Config(
            "features were computed with a different DSP config; rerun `tinyforge dsp`".into()
        ));
    }
    let read = |rel: &str| -> Result<Vec<Vec<f32>>> {
        let path = ctx.proj.path(rel);
        let bytes = std::fs::read(&path).map_err(|_| Error::MissingArtifact {
            path: path.clone(),
            hint: "run `tinyforge dsp` first".into(),
        })?;
        Ok(decode_fvf(&bytes)?)
    };
    let train_x = read(FEATURES_TRAIN)?;
    let test_x = read(FEATURES_TEST)?;
    if train_x.len() != index.train.len() || test_x.len() != index.test.len() {
        bail!(Error::Config("feature files disagree with features.json; rerun `tinyforge dsp`".into()));
    }
    Ok(Features {
        train_y: index.train.iter().map(|s| s.label).collect(),
        test_y: index.test.iter().map(|s| s.label).collect(),
        index,
        train_x,
        test_x,
    })
}

fn sample_rate(ds: &Dataset) -> Result<u32> {
    ds.samples
        .first()
        .map(|s| s.sample_rate_hz)
        .ok_or_else(|| anyhow!(Error::InvalidInput("dataset is empty".into())))
}

fn dtype_of(p: Precision) -> DType {
    match p {
        Precision::F32 => DType::F32,
        Precision::I8 => DType::I8,
    }
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            let _ = write!(s, "{}{c:<w$}", if i > 0 { "  " } else { "" }, w = width[i]);
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.iter().map(|h| h.to_string()).collect());
    for r in rows {
        out += &line(r.clone());
    }
    out
}

fn kib(bytes: usize) -> String {
    format!("{:.1} KiB", bytes as f64 / 1024.0)
}

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Init {
            kind,
            synthetic,
            per_class,
        } => init(g, *kind, *synthetic, *per_class),
        Command::Ingest {
            files,
            label,
            split,
            format,
        } => ingest_files(&Ctx::open(g)?, files, label.as_deref(), split, format.as_deref()),
        Command::Split { test_fraction } => split(&Ctx::open(g)?, *test_fraction),
        Command::Stats => stats(&Ctx::open(g)?),
        Command::Dsp => dsp(&Ctx::open(g)?),
        Command::Train {
            epochs,
            batch_size,
            learning_rate,
            anomaly_clusters,
        } => {
            let mut ctx = Ctx::open(g)?;
            if let Some(b) = batch_size {
                ctx.impulse.batch_size = *b;
            }
            if learning_rate.is_some() {
                ctx.impulse.learning_rate = *learning_rate;
            }
            train_cmd(&ctx, *epochs, *anomaly_clusters)
        }
        Command::Eval { dtype } => eval(&Ctx::open(g)?, *dtype),
        Command::Quantize { samples } => quantize(&Ctx::open(g)?, *samples),
        Command::Build {
            dtype,
            prefix,
            trace_hooks,
        } => build(&Ctx::open(g)?, *dtype, prefix, *trace_hooks),
        Command::Estimate { dtype } => estimate_cmd(&Ctx::open(g)?, *dtype),
        Command::Tune {
            trials,
            constraints,
            objective,
            space,
            epochs,
            select,
        } => {
            let mut ctx = Ctx::open(g)?;
            match select {
                Some(id) => select_trial(&mut ctx, *id),
                None => tune_cmd(&ctx, *trials, constraints, *objective, *space, *epochs),
            }
        }
        Command::Calibrate {
            positive,
            duration,
            rate,
            noise_db,
            hop,
            tolerance,
            population,
            generations,
            dtype,
        } => calibrate(
            &Ctx::open(g)?,
            CalibrateArgs {
                positive: positive.clone(),
                duration: *duration,
                rate: *rate,
                noise_db: *noise_db,
                hop: *hop,
                tolerance: *tolerance,
                population: *population,
                generations: *generations,
                dtype: *dtype,
            },
        ),
        Command::Run {
            input,
            features,
            output,
            dtype,
        } => run(&Ctx::open(g)?, input.as_deref(), features.as_deref(), output.as_deref(), *dtype),
    }
}

fn init(g: &Global, kind: Kind, synthetic: bool, per_class: usize) -> Result<Outcome> {
    let kind = match kind {
        Kind::Audio => DataKind::Audio,
        Kind::Timeseries => DataKind::Timeseries,
    };
    if synthetic && kind != DataKind::Audio {
        bail!(Error::Config("--synthetic generates audio; use --kind audio".into()));
    }
    let proj = ProjectDir::new(&g.project);
    std::fs::create_dir_all(proj.root()).with_context(|| format!("creating {}", proj.root().display()))?;
    let _lock = ProjectLock::acquire(proj.root())?;
    let fresh = !proj.is_initialized();
    proj.init(g.seed.unwrap_or(0))?;
    if !proj.path("impulse.json").exists() {
        let mut imp = ImpulseConfig::preset(kind);
        if let Some(p) = &g.profile {
            imp.profile = p.clone();
        }
        proj.save_impulse(&imp)?;
    }
    let mut meta = proj.load_meta()?;
    let mut stored = 0;
    if synthetic {
        if per_class < 2 {
            bail!(Error::Config("--per-class must be at least 2".into()));
        }
        let ds = tone_dataset(per_class, meta.seed)?;
        for s in &ds.samples {
            proj.store_sample(s)?;
        }
        stored = ds.samples.len();
        for c in ds.classes {
            if !meta.classes.contains(&c) {
                meta.classes.push(c);
            }
        }
        proj.save_meta(&meta)?;
    }
    let human = format!(
        "{} project at {}\n{}",
        if fresh { "initialized" } else { "updated" },
        proj.root().display(),
        if synthetic {
            format!("stored {stored} synthetic samples ({})\n", meta.classes.join(", "))
        } else {
            String::new()
        }
    );
    Ok(Outcome {
        json: json!({ "project": proj.root(), "created": fresh, "synthetic_samples": stored, "classes": meta.classes }),
        human,
    })
}

fn ingest_files(ctx: &Ctx, files: &[PathBuf], label: Option<&str>, split: &str, format: Option<&str>) -> Result<Outcome> {
    let split: Split = split.parse()?;
    let mut meta = ctx.meta.clone();
    let mut out = Vec::new();
    for f in files {
        let fmt = match format {
            Some(s) => s.parse::<Format>()?,
            None => Format::from_path(f)?,
        };
        let label = match label {
            Some(l) => l.to_string(),
            None => f
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.split('.').next())
                .filter(|n| !n.is_empty())
                .ok_or_else(|| Error::InvalidInput(format!("cannot infer a label from {}; pass --label", f.display())))?
                .to_string(),
        };
        let sample = ingest(f, fmt, &label, split).with_context(|| format!("ingesting {}", f.display()))?;
        let path = ctx.proj.store_sample(&sample)?;
        if !meta.classes.contains(&label) {
            meta.classes.push(label.clone());
        }
        out.push(json!({ "file": f, "id": sample.id, "label": label, "split": split, "stored": path }));
    }
    ctx.proj.save_meta(&meta)?;
    Ok(Outcome {
        human: format!("ingested {} file(s) into {split}\n", out.len()),
        json: json!({ "samples": out }),
    })
}

fn stats_outcome(s: &DatasetStats, classes: &[String]) -> Outcome {
    let rows: Vec<Vec<String>> = classes
        .iter()
        .map(|c| {
            let n = s.count(c);
            vec![c.clone(), n.train.to_string(), n.test.to_string(), n.total.to_string()]
        })
        .collect();
    let mut human = table(&["class", "train", "test", "total"], &rows);
    let _ = writeln!(
        human,
        "{} samples, {:.1} s, train fraction {:.2}",
        s.total_samples, s.total_duration_s, s.train_fraction
    );
    Outcome {
        json: serde_json::to_value(s).expect("stats serialize"),
        human,
    }
}

fn split(ctx: &Ctx, test_fraction: f64) -> Result<Outcome> {
    let ds = ctx.proj.load_dataset()?;
    let out = split_dataset(&ds, test_fraction, ctx.seed)?;
    ctx.proj.store_dataset(&out)?;
    Ok(stats_outcome(&dataset_stats(&out), &out.classes))
}

fn stats(ctx: &Ctx) -> Result<Outcome> {
    let ds = ctx.proj.load_dataset()?;
    Ok(stats_outcome(&dataset_stats(&ds), &ds.classes))
}

fn dsp(ctx: &Ctx) -> Result<Outcome> {
    let ds = ctx.proj.load_dataset()?;
    let cfg = &ctx.impulse.dsp;
    let sr = sample_rate(&ds)?;
    cfg.validate(sr)?;
    let channels = ds.samples[0].channels;
    let (train_x, train_y) = featurize(&ds, cfg, Split::Train)?;
    let (test_x, test_y) = featurize(&ds, cfg, Split::Test)?;
    let refs = |split: Split, labels: &[usize]| -> Vec<SampleRef> {
        ds.split(split)
            .zip(labels)
            .map(|(s, &label)| SampleRef { id: s.id.clone(), label })
            .collect()
    };
    let index = FeatureIndex {
        dsp: cfg.clone(),
        sample_rate_hz: sr,
        channels,
        shape: cfg.feature_shape(sr, channels),
        classes: ds.classes.clone(),
        train: refs(Split::Train, &train_y),
        test: refs(Split::Test, &test_y),
    };
    std::fs::create_dir_all(ctx.proj.artifacts())?;
    std::fs::write(ctx.proj.path(FEATURES_TRAIN), encode_fvf(&train_x)?)?;
    std::fs::write(ctx.proj.path(FEATURES_TEST), encode_fvf(&test_x)?)?;
    write_json(&ctx.proj.path(FEATURES_INDEX), &index)?;
    Ok(Outcome {
        human: format!(
            "{} train / {} test feature matrices of {}×{} written to artifacts/\n",
            train_x.len(),
            test_x.len(),
            index.shape.0,
            index.shape.1
        ),
        json: json!({
            "shape": index.shape,
            "train": train_x.len(),
            "test": test_x.len(),
            "files": [FEATURES_TRAIN, FEATURES_TEST, FEATURES_INDEX],
        }),
    })
}

fn train_cmd(ctx: &Ctx, epochs: Option<usize>, anomaly_clusters: Option<usize>) -> Result<Outcome> {
    let f = load_features(ctx)?;
    let classes = f.index.classes.len();
    let g = build_model(&ctx.impulse.model.0, f.index.shape, classes, ctx.seed)?;
    let cfg = ctx.train_config(epochs);
    let (trained, history) = train(&g, &f.train_x, &f.train_y, &cfg)?;
    save_model(&trained, &ctx.proj.path(MODEL_F32))?;
    write_json(&ctx.proj.reports().join("train.json"), &history)?;
    let mut human = format!(
        "model {} · learning rate {:.3e} · best epoch {} · validation accuracy {:.3}\n",
        ctx.impulse.model.0, history.learning_rate, history.best_epoch, history.best_val_accuracy
    );
    let mut anomaly = serde_json::Value::Null;
    if let Some(k) = anomaly_clusters {
        let km = kmeans_fit(&f.train_x, k, ctx.seed)?;
        save_model(&kmeans_graph(f.index.shape, &km)?, &ctx.proj.path(ANOMALY))?;
        let _ = writeln!(human, "k-means anomaly model with {k} clusters after {} iterations", km.iterations);
        anomaly = json!({ "clusters": k, "iterations": km.iterations, "file": ANOMALY });
    }
    Ok(Outcome {
        json: json!({ "model": MODEL_F32, "history": history, "anomaly": anomaly }),
        human,
    })
}

fn eval_outcome(r: &EvalReport, classes: &[String]) -> String {
    let mut header = vec!["true \\ pred"];
    header.extend(classes.iter().map(String::as_str));
    header.push("F1");
    let rows: Vec<Vec<String>> = r
        .confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut cells = vec![classes.get(i).cloned().unwrap_or_else(|| i.to_string())];
            cells.extend(row.iter().map(usize::to_string));
            cells.push(format!("{:.3}", r.per_class_f1[i]));
            cells
        })
        .collect();
    let mut s = table(&header, &rows);
    let _ = writeln!(s, "accuracy {:.4} on {} samples", r.accuracy, r.total());
    s
}

fn eval(ctx: &Ctx, dtype: Precision) -> Result<Outcome> {
    let f = load_features(ctx)?;
    if f.test_x.is_empty() {
        bail!(Error::InvalidInput("no test samples; run `tinyforge split` first".into()));
    }
    let g = ctx.load_model(dtype)?;
    let report = evaluate(&g, &f.test_x, &f.test_y)?;
    let doc = json!({ "dtype": dtype_of(dtype), "classes": f.index.classes, "report": report });
    write_json(&ctx.proj.reports().join("eval.json"), &doc)?;
    Ok(Outcome {
        human: eval_outcome(&report, &f.index.classes),
        json: doc,
    })
}

fn quantize(ctx: &Ctx, samples: usize) -> Result<Outcome> {
    if samples == 0 {
        bail!(Error::Config("--samples must be at least 1".into()));
    }
    let f = load_features(ctx)?;
    let g = ctx.load_model(Precision::F32)?;
    let n = samples.min(f.train_x.len());
    let q = quantize_with(&g, &f.train_x[..n])?;
    save_model(&q.graph, &ctx.proj.path(MODEL_I8))?;
    let doc = json!({ "model": MODEL_I8, "representative_samples": n, "warnings": q.warnings });
    write_json(&ctx.proj.reports().join("quantize.json"), &doc)?;
    let mut human = format!("int8 model written to {MODEL_I8} ({n} representative samples)\n");
    for w in &q.warnings {
        let _ = writeln!(human, "warning: {w}");
    }
    Ok(Outcome { json: doc, human })
}

fn build(ctx: &Ctx, dtype: Precision, prefix: &str, trace_hooks: bool) -> Result<Outcome> {
    let g = ctx.load_model(dtype)?;
    let plan = plan_arena(&g)?;
    let opts = CodegenOptions {
        symbol_prefix: prefix.to_string(),
        dtype: dtype_of(dtype),
        emit_trace_hooks: trace_hooks,
    };
    let code = emit_c(&g, &plan, &opts)?;
    let dir = ctx.proj.deploy();
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(&code.header_name), &code.header)?;
    std::fs::write(dir.join(&code.source_name), &code.source)?;
    let profile = ctx.profile()?;
    let report = flash_ram_report(&g, &plan, &profile)?;
    let doc = json!({
        "files": [format!("deploy/{}", code.header_name), format!("deploy/{}", code.source_name)],
        "dtype": dtype_of(dtype),
        "arena_bytes": plan.peak_bytes,
        "profile": profile.name,
        "footprint": report,
    });
    write_json(&ctx.proj.reports().join("build.json"), &doc)?;
    let rows = vec![
        vec![
            "generated".into(),
            kib(report.generated.flash_bytes),
            kib(report.generated.ram_bytes),
        ],
        vec![
            "interpreter".into(),
            kib(report.interpreter_baseline.flash_bytes),
            kib(report.interpreter_baseline.ram_bytes),
        ],
    ];
    let mut human = format!("wrote deploy/{} and deploy/{}\n", code.header_name, code.source_name);
    human += &table(&["build", "flash", "ram"], &rows);
    Ok(Outcome { json: doc, human })
}

/// The model to size: the trained one if present, else the impulse template.
fn sizing_graph(ctx: &Ctx, dtype: Precision) -> Result<(ModelGraph, u32, &'static str)> {
    let (sr, shape, classes) = match read_json::<FeatureIndex>(&ctx.proj.path(FEATURES_INDEX), "") {
        Ok(ix) if ix.dsp == ctx.impulse.dsp => (ix.sample_rate_hz, ix.shape, ix.classes.len()),
        _ => {
            let ds = ctx.proj.load_dataset()?;
            let sr = sample_rate(&ds)?;
            (sr, ctx.impulse.dsp.feature_shape(sr, ds.samples[0].channels), ds.classes.len())
        }
    };
    let path = ctx.model_path(dtype);
    if path.exists() {
        return Ok((load_model(&path)?, sr, "trained"));
    }
    let f32_path = ctx.model_path(Precision::F32);
    let (g, source) = if f32_path.exists() {
        (load_model(&f32_path)?, "trained (int8 sizing)")
    } else {
        (build_model(&ctx.impulse.model.0, shape, classes.max(2), ctx.seed)?, "template")
    };
    Ok(match dtype {
        Precision::F32 => (g, sr, source),
        Precision::I8 => (as_int8_shapes(&g), sr, source),
    })
}

fn estimate_cmd(ctx: &Ctx, dtype: Precision) -> Result<Outcome> {
    let (g, sr, source) = sizing_graph(ctx, dtype)?;
    let profile = ctx.profile()?;
    let est = estimate(&g, &ctx.impulse.dsp, sr, &profile, BuildMode::Generated)?;
    let fit = fits_device(&est, &profile);
    let violations = ctx.impulse.constraints.violations(&est);
    let fits = fit.fits && violations.is_empty();
    let mut human = format!(
        "{} on {} ({source} model)\nlatency {:.2} ms (dsp {:.2} + nn {:.2}) · ram {} · flash {}\n",
        dtype_of(dtype),
        profile.name,
        est.total_latency_ms,
        est.dsp_latency_ms,
        est.nn_latency_ms,
        kib(est.ram_bytes),
        kib(est.flash_bytes)
    );
    for v in fit.violations.iter().chain(&violations) {
        let _ = writeln!(human, "exceeds {}: {} > {}", v.resource, v.used, v.limit);
    }
    human += if fits { "fits\n" } else { "does not fit\n" };
    Ok(Outcome {
        json: json!({
            "profile": profile.name,
            "dtype": dtype_of(dtype),
            "source": source,
            "estimate": est,
            "fits": fits,
            "violations": fit.violations.iter().chain(&violations).collect::<Vec<_>>(),
        }),
        human,
    })
}

fn tune_cmd(
    ctx: &Ctx,
    trials: usize,
    constraint_flags: &[String],
    objective: ObjectiveChoice,
    space: SpaceChoice,
    epochs: Option<usize>,
) -> Result<Outcome> {
    let ds = ctx.proj.load_dataset()?;
    if ds.split(Split::Test).next().is_none() {
        bail!(Error::InvalidInput("no test samples; run `tinyforge split` first".into()));
    }
    let profile = ctx.profile()?;
    let mut constraints: Constraints = ctx.impulse.constraints.clone();
    for c in constraint_flags {
        constraints.apply(c)?;
    }
    let space = match space {
        SpaceChoice::Kws => SearchSpace::kws(),
        SpaceChoice::Extended => SearchSpace::extended(),
    };
    let objective = match objective {
        ObjectiveChoice::Accuracy => Objective::Accuracy,
        ObjectiveChoice::Latency => Objective::Latency,
        ObjectiveChoice::Ram => Objective::Ram,
        ObjectiveChoice::Flash => Objective::Flash,
    };
    let train_cfg = ctx.train_config(epochs);
    let report = tune(
        &ds,
        &TuneRequest {
            space: &space,
            trials,
            seed: ctx.seed,
            profile: &profile,
            constraints: &constraints,
            train: &train_cfg,
            objective,
        },
    )?;
    let md = report_markdown(&report.ranking, &format!("Tuner results ({})", profile.name));
    write_json(&ctx.proj.reports().join("tuner.json"), &report)?;
    std::fs::write(ctx.proj.reports().join("tuner.md"), &md)?;
    let mut human = md;
    for w in &report.warnings {
        let _ = writeln!(human, "warning: {w}");
    }
    let _ = writeln!(
        human,
        "\n{} trained, {} filtered; apply one with `tinyforge tune --select <trial>`",
        report.ranking.len(),
        report.trials.len() - report.ranking.len()
    );
    Ok(Outcome {
        json: json!({ "report": "reports/tuner.json", "ranking": report.ranking, "warnings": report.warnings }),
        human,
    })
}

fn select_trial(ctx: &mut Ctx, id: usize) -> Result<Outcome> {
    let report: TunerReport = read_json(&ctx.proj.reports().join("tuner.json"), "run `tinyforge tune` first")?;
    let trial = report
        .trials
        .iter()
        .find(|t| t.trial_id == id)
        .ok_or_else(|| Error::InvalidInput(format!("no trial {id} in reports/tuner.json")))?;
    ctx.impulse.dsp = trial.config.dsp.clone();
    ctx.impulse.model.0 = trial.config.model.clone();
    ctx.proj.save_impulse(&ctx.impulse)?;
    Ok(Outcome {
        human: format!(
            "impulse.json now uses trial {id}: {} + {} ({}); rerun dsp and train\n",
            serde_json::to_string(&trial.config.dsp.block)?.trim_matches('"'),
            trial.config.model,
            trial.config.dtype
        ),
        json: json!({ "trial": id, "config": trial.config }),
    })
}

struct CalibrateArgs {
    positive: Option<String>,
    duration: f64,
    rate: f64,
    noise_db: f64,
    hop: f64,
    tolerance: usize,
    population: usize,
    generations: usize,
    dtype: Precision,
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> Result<Outcome> {
    let ds = ctx.proj.load_dataset()?;
    let g = ctx.load_model(a.dtype)?;
    let positive = match a.positive {
        Some(p) => p,
        None => ds
            .classes
            .iter()
            .find(|c| !BACKGROUND_LABELS.contains(&c.as_str()))
            .cloned()
            .ok_or_else(|| Error::InvalidInput("dataset has only background classes".into()))?,
    };
    let positive_idx = ds
        .class_index(&positive)
        .ok_or_else(|| Error::InvalidInput(format!("class `{positive}` is not in the dataset")))?;
    let spec = StreamSpec {
        duration_s: a.duration,
        event_rate_per_min: a.rate,
        noise_db: Some(a.noise_db),
        positive_class: positive.clone(),
        hop_s: a.hop,
    };
    let stream = synth_stream(&ds, &ctx.impulse.dsp, &spec, ctx.seed)?;
    let probs = stream_probabilities(&stream, &g, &ctx.impulse.dsp)?;
    let problem = CalibrationProblem {
        probs,
        positive: positive_idx,
        intervals: stream.intervals.clone(),
        tolerance_frames: a.tolerance,
    };
    let params = GaParams {
        population: a.population,
        generations: a.generations,
        seed: ctx.seed,
        ..GaParams::default()
    };
    let report = ga_search(&problem, &SearchBounds::default(), &params, &[])?;
    let doc = json!({
        "positive_class": positive,
        "dtype": dtype_of(a.dtype),
        "stream": {
            "spec": spec,
            "frames": stream.num_frames(),
            "events": stream.intervals.len(),
        },
        "report": report,
    });
    write_json(&ctx.proj.reports().join("calibration.json"), &doc)?;
    let rows: Vec<Vec<String>> = report
        .front
        .iter()
        .map(|r| {
            vec![
                r.config.averaging_window_frames.to_string(),
                format!("{:.2}", r.config.threshold),
                r.config.suppression_frames.to_string(),
                format!("{:.4}", r.far),
                format!("{:.4}", r.frr),
            ]
        })
        .collect();
    let mut human = format!(
        "{} events over {} frames; {} configurations evaluated\n",
        stream.intervals.len(),
        stream.num_frames(),
        report.evaluated.len()
    );
    human += &table(&["window", "threshold", "suppression", "FAR", "FRR"], &rows);
    Ok(Outcome { json: doc, human })
}

fn run(ctx: &Ctx, input: Option<&Path>, features: Option<&Path>, output: Option<&Path>, dtype: Precision) -> Result<Outcome> {
    let g = ctx.load_model(dtype)?;
    if let Some(fvf) = features {
        let out = output.ok_or_else(|| anyhow!("--features needs --output"))?;
        let vectors = decode_fvf(&std::fs::read(fvf).with_context(|| format!("reading {}", fvf.display()))?)?;
        let results = vectors.iter().map(|x| run_flat(&g, x)).collect::<tinyforge::Result<Vec<_>>>()?;
        std::fs::write(out, encode_fvf(&results)?)?;
        return Ok(Outcome {
            human: format!("{} vectors → {}\n", results.len(), out.display()),
            json: json!({ "vectors": results.len(), "output": out }),
        });
    }
    let path = input.ok_or_else(|| anyhow!("an input file or --features is required"))?;
    let sample = ingest(path, Format::from_path(path)?, "input", Split::Test)?;
    let pipeline = DspPipeline::new(&ctx.impulse.dsp, sample.sample_rate_hz)?;
    let probs = run_graph(&g, &pipeline.process(&sample)?)?;
    let classes = &ctx.meta.classes;
    let best = tinyforge::trainer::argmax(&probs);
    let label = classes.get(best).cloned().unwrap_or_else(|| best.to_string());
    let rows: Vec<Vec<String>> = probs
        .iter()
        .enumerate()
        .map(|(i, p)| vec![classes.get(i).cloned().unwrap_or_else(|| i.to_string()), format!("{p:.4}")])
        .collect();
    let mut human = table(&["class", "score"], &rows);
    let _ = writeln!(human, "prediction: {label}");
    Ok(Outcome {
        json: json!({ "input": path, "scores": probs, "classes": classes, "prediction": label }),
        human,
    })
}
