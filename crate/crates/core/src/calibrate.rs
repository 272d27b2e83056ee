//! Streaming post-processing: smoothing, thresholding, suppression, FAR/FRR
//! scoring and a genetic search over the post-processing parameters.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom as _;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{DspConfig, DspPipeline};
use crate::error::{Error, Result};
use crate::interp::run_graph;
use crate::ir::ModelGraph;
use crate::project::Dataset;
use crate::rng::{seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcessConfig {
    pub averaging_window_frames: usize,
    pub threshold: f64,
    pub suppression_frames: usize,
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.averaging_window_frames == 0 {
            return Err(Error::Config("averaging window must be ≥ 1 frame".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} is outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    fn key(&self) -> (usize, u64, usize) {
        (self.averaging_window_frames, self.threshold.to_bits(), self.suppression_frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub config: PostProcessConfig,
    pub far: f64,
    pub frr: f64,
}

impl CalibrationResult {
    pub fn dominates(&self, other: &CalibrationResult) -> bool {
        self.far <= other.far && self.frr <= other.frr && (self.far < other.far || self.frr < other.frr)
    }
}

/// Ground-truth event. Sample bounds are half-open; frame bounds inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub class: usize,
    pub start_sample: usize,
    pub end_sample: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledStream {
    pub sample_rate_hz: u32,
    pub signal: Vec<f32>,
    pub window_samples: usize,
    pub hop_samples: usize,
    pub intervals: Vec<Interval>,
}

impl LabeledStream {
    pub fn num_frames(&self) -> usize {
        if self.signal.len() < self.window_samples || self.hop_samples == 0 {
            0
        } else {
            (self.signal.len() - self.window_samples) / self.hop_samples + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop_samples == 0 || self.window_samples == 0 {
            return Err(Error::invalid("stream window and hop must be ≥ 1 sample"));
        }
        for w in self.intervals.windows(2) {
            if w[1].start_sample < w[0].end_sample {
                return Err(Error::invalid("stream intervals overlap or are unsorted"));
            }
        }
        Ok(())
    }
}

/// Parameters for [`synth_stream`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub duration_s: f64,
    pub event_rate_per_min: f64,
    /// White-noise bed level in dBFS. Without it the dataset must contain a
    /// background class.
    pub noise_db: Option<f64>,
    pub positive_class: String,
    pub hop_s: f64,
}

pub const BACKGROUND_LABELS: [&str; 3] = ["noise", "background", "_noise"];

const PLACEMENT_ATTEMPTS: usize = 200;

fn frame_of(sample: usize, hop: usize) -> usize {
    sample / hop
}

/// Places randomly chosen positive samples at Poisson-distributed positions
/// over a noise bed.
pub fn synth_stream(ds: &Dataset, cfg: &DspConfig, spec: &StreamSpec, seed: u64) -> Result<LabeledStream> {
    let positive = ds
        .class_index(&spec.positive_class)
        .ok_or_else(|| Error::invalid(format!("class `{}` is not in the dataset", spec.positive_class)))?;
    let events: Vec<&crate::project::Sample> = ds.samples.iter().filter(|s| s.label == spec.positive_class).collect();
    let first = events
        .first()
        .ok_or_else(|| Error::invalid(format!("no samples of class `{}`", spec.positive_class)))?;
    let sr = first.sample_rate_hz;
    if spec.duration_s <= 0.0 || spec.event_rate_per_min < 0.0 || spec.hop_s <= 0.0 {
        return Err(Error::Config("stream duration and hop must be > 0 and rate ≥ 0".into()));
    }
    let n = (spec.duration_s * f64::from(sr)).round() as usize;
    let hop = ((spec.hop_s * f64::from(sr)).round() as usize).max(1);
    let window = cfg.window_samples(sr);
    let mut rng = seeded(seed);

    let background: Vec<&crate::project::Sample> = ds
        .samples
        .iter()
        .filter(|s| BACKGROUND_LABELS.contains(&s.label.as_str()) && s.sample_rate_hz == sr)
        .collect();
    let mut signal = match (spec.noise_db, background.is_empty()) {
        (Some(db), _) => {
            let d = Normal::new(0.0, 10f64.powf(db / 20.0)).map_err(|e| Error::Config(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng) as f32).collect::<Vec<_>>()
        }
        (None, false) => {
            let mut bed = Vec::with_capacity(n);
            while bed.len() < n {
                let s = background.choose(&mut rng).expect("non-empty");
                bed.extend(s.channel(0).into_iter().map(|v| v as f32).take(n - bed.len()));
            }
            bed
        }
        (None, true) => {
            return Err(Error::invalid("dataset has no background class; pass a noise level"));
        }
    };

    let mean = spec.event_rate_per_min * spec.duration_s / 60.0;
    let count = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize
    } else {
        0
    };
    let mut placed: Vec<(usize, usize, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        let s = events.choose(&mut rng).expect("non-empty");
        let len = s.num_frames();
        if len > n {
            return Err(Error::invalid("event sample is longer than the stream"));
        }
        let mut done = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let start = rng.random_range(0..=n - len);
            let end = start + len;
            if placed.iter().all(|&(a, b, _)| end <= a || start >= b) {
                let idx = ds.samples.iter().position(|x| std::ptr::eq(x, *s)).expect("from dataset");
                placed.push((start, end, idx));
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::invalid(format!(
                "could not place {count} non-overlapping events in {} s",
                spec.duration_s
            )));
        }
    }
    placed.sort_unstable();
    let mut intervals = Vec::with_capacity(placed.len());
    for &(start, end, idx) in &placed {
        let data = ds.samples[idx].channel(0);
        for (o, v) in signal[start..end].iter_mut().zip(data) {
            *o = (f64::from(*o) + v).clamp(-1.0, 1.0) as f32;
        }
        intervals.push(Interval {
            class: positive,
            start_sample: start,
            end_sample: end,
            start_frame: frame_of(start.saturating_sub(window.saturating_sub(1)), hop),
            end_frame: frame_of(end - 1, hop),
        });
    }
    Ok(LabeledStream {
        sample_rate_hz: sr,
        signal,
        window_samples: window,
        hop_samples: hop,
        intervals,
    })
}

/// Model posteriors for every analysis window of the stream.
pub fn stream_probabilities(stream: &LabeledStream, g: &ModelGraph, cfg: &DspConfig) -> Result<Vec<Vec<f32>>> {
    let p = DspPipeline::new(cfg, stream.sample_rate_hz)?;
    (0..stream.num_frames())
        .into_par_iter()
        .map(|f| {
            let a = f * stream.hop_samples;
            let window: Vec<f64> = stream.signal[a..a + stream.window_samples].iter().map(|&v| f64::from(v)).collect();
            run_graph(g, &p.process_signal(&window)?)
        })
        .collect()
}

/// Two-class posteriors that are high inside events and low elsewhere,
/// with Gaussian jitter and `spurious` random short bumps.
pub fn synthetic_posteriors(
    intervals: &[(usize, usize)],
    frames: usize,
    noise_std: f64,
    spurious: usize,
    seed: u64,
) -> Vec<Vec<f32>> {
    let mut rng: Rng = seeded(seed);
    let jitter = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let mut p = vec![0.1f64; frames];
    for &(a, b) in intervals {
        for v in p.iter_mut().take(b.min(frames.saturating_sub(1)) + 1).skip(a) {
            *v = 0.85;
        }
    }
    for _ in 0..spurious {
        if frames == 0 {
            break;
        }
        let at = rng.random_range(0..frames);
        let len = rng.random_range(1..=3);
        let h = rng.random_range(0.4..0.9);
        for v in p.iter_mut().skip(at).take(len) {
            *v = v.max(h);
        }
    }
    p.into_iter()
        .map(|v| {
            let v = (v + jitter.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            vec![1.0 - v, v]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub frame: usize,
}

/// Trailing moving average over full windows; a detection fires when the
/// average rises to or above the threshold, then nothing fires for
/// `suppression_frames` frames.
pub fn apply_postprocess(probs: &[Vec<f32>], positive: usize, cfg: &PostProcessConfig) -> Vec<Detection> {
    let w = cfg.averaging_window_frames.max(1);
    let mut out = Vec::new();
    let mut sum = 0.0f64;
    let mut below = true;
    let mut quiet_until: Option<usize> = None;
    for (t, row) in probs.iter().enumerate() {
        sum += f64::from(row.get(positive).copied().unwrap_or(0.0));
        if t >= w {
            sum -= f64::from(probs[t - w].get(positive).copied().unwrap_or(0.0));
        }
        if t + 1 < w {
            continue;
        }
        let avg = sum / w as f64;
        let above = avg >= cfg.threshold;
        let suppressed = quiet_until.is_some_and(|q| t <= q);
        if above && below && !suppressed {
            out.push(Detection { class: positive, frame: t });
            quiet_until = Some(t + cfg.suppression_frames);
        }
        below = !above;
    }
    out
}

/// FRR over truth intervals and FAR over decision windows
/// (`frames / window`), each clamped to `[0, 1]`.
pub fn score_far_frr(
    detections: &[Detection],
    intervals: &[Interval],
    total_frames: usize,
    averaging_window_frames: usize,
    tolerance_frames: usize,
) -> (f64, f64) {
    let hit_range = |iv: &Interval| (iv.start_frame.saturating_sub(tolerance_frames), iv.end_frame + tolerance_frames);
    let mut hit = vec![false; intervals.len()];
    let mut false_accepts = 0usize;
    for d in detections {
        let mut matched = false;
        for (i, iv) in intervals.iter().enumerate() {
            let (a, b) = hit_range(iv);
            if d.frame >= a && d.frame <= b {
                hit[i] = true;
                matched = true;
            }
        }
        if !matched {
            false_accepts += 1;
        }
    }
    let frr = if intervals.is_empty() {
        0.0
    } else {
        hit.iter().filter(|h| !**h).count() as f64 / intervals.len() as f64
    };
    let windows = (total_frames as f64 / averaging_window_frames.max(1) as f64).max(1.0);
    let far = (false_accepts as f64 / windows).min(1.0);
    (far, frr)
}

/// Everything needed to score a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub probs: Vec<Vec<f32>>,
    pub positive: usize,
    pub intervals: Vec<Interval>,
    pub tolerance_frames: usize,
}

impl CalibrationProblem {
    pub fn evaluate(&self, cfg: &PostProcessConfig) -> CalibrationResult {
        let d = apply_postprocess(&self.probs, self.positive, cfg);
        let (far, frr) = score_far_frr(&d, &self.intervals, self.probs.len(), cfg.averaging_window_frames, self.tolerance_frames);
        CalibrationResult { config: *cfg, far, frr }
    }
}

/// Gene ranges. A `threshold_step` snaps thresholds to
/// `threshold_min + k·step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub window: (usize, usize),
    pub threshold: (f64, f64),
    pub threshold_step: Option<f64>,
    pub suppression: (usize, usize),
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            window: (1, 10),
            threshold: (0.3, 0.95),
            threshold_step: Some(0.05),
            suppression: (0, 20),
        }
    }
}

impl SearchBounds {
    pub fn validate(&self) -> Result<()> {
        if self.window.0 == 0 || self.window.0 > self.window.1 {
            return Err(Error::Config("window bounds must satisfy 1 ≤ min ≤ max".into()));
        }
        let (lo, hi) = self.threshold;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(Error::Config("threshold bounds must lie in (0, 1) with min ≤ max".into()));
        }
        if self.suppression.0 > self.suppression.1 {
            return Err(Error::Config("suppression bounds must satisfy min ≤ max".into()));
        }
        if self.threshold_step.is_some_and(|s| s.is_nan() || s <= 0.0) {
            return Err(Error::Config("threshold step must be > 0".into()));
        }
        Ok(())
    }

    pub fn threshold_levels(&self) -> Option<usize> {
        self.threshold_step
            .map(|s| ((self.threshold.1 - self.threshold.0) / s + 1e-9).floor() as usize + 1)
    }

    pub fn snap_threshold(&self, t: f64) -> f64 {
        let (lo, hi) = self.threshold;
        let t = t.clamp(lo, hi);
        match (self.threshold_step, self.threshold_levels()) {
            (Some(s), Some(levels)) => {
                let k = ((t - lo) / s).round().clamp(0.0, (levels - 1) as f64);
                lo + k * s
            }
            _ => t,
        }
    }

    fn is_degenerate(&self) -> bool {
        self.window.0 == self.window.1 && self.threshold.0 == self.threshold.1 && self.suppression.0 == self.suppression.1
    }

    fn random(&self, rng: &mut Rng) -> PostProcessConfig {
        PostProcessConfig {
            averaging_window_frames: rng.random_range(self.window.0..=self.window.1),
            threshold: self.snap_threshold(if self.threshold.0 < self.threshold.1 {
                rng.random_range(self.threshold.0..=self.threshold.1)
            } else {
                self.threshold.0
            }),
            suppression_frames: rng.random_range(self.suppression.0..=self.suppression.1),
        }
    }

    fn clamp(&self, c: PostProcessConfig) -> PostProcessConfig {
        PostProcessConfig {
            averaging_window_frames: c.averaging_window_frames.clamp(self.window.0, self.window.1),
            threshold: self.snap_threshold(c.threshold),
            suppression_frames: c.suppression_frames.clamp(self.suppression.0, self.suppression.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 24,
            generations: 30,
            crossover_rate: 0.9,
            mutation_rate: 0.3,
            seed: 0,
        }
    }
}

impl GaParams {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Config("population must be ≥ 4".into()));
        }
        for (name, r) in [("crossover", self.crossover_rate), ("mutation", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} rate {r} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Non-dominated sorting: rank 0 is the Pareto front.
pub fn pareto_ranks(results: &[CalibrationResult]) -> Vec<usize> {
    let n = results.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && results[i].dominates(&results[j]) {
                dominates[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut rank = vec![usize::MAX; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut r = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            rank[i] = r;
            for &j in &dominates[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        current = next;
        r += 1;
    }
    rank
}

/// Non-dominated subset, one entry per configuration, sorted by FAR then FRR.
pub fn pareto_front(results: &[CalibrationResult]) -> Vec<CalibrationResult> {
    let ranks = pareto_ranks(results);
    let mut front: Vec<CalibrationResult> = results.iter().zip(&ranks).filter(|(_, &r)| r == 0).map(|(c, _)| *c).collect();
    front.sort_by(|a, b| {
        a.far
            .total_cmp(&b.far)
            .then(a.frr.total_cmp(&b.frr))
            .then(a.config.key().cmp(&b.config.key()))
    });
    front.dedup_by_key(|c| c.config.key());
    front
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ga_params: GaParams,
    pub bounds: SearchBounds,
    pub tolerance_frames: usize,
    pub evaluated: Vec<CalibrationResult>,
    pub front: Vec<CalibrationResult>,
}

impl CalibrationReport {
    /// Front member with the lowest `far + frr`.
    pub fn best_sum(&self) -> Option<&CalibrationResult> {
        self.front.iter().min_by(|a, b| (a.far + a.frr).total_cmp(&(b.far + b.frr)))
    }
}

struct Archive<'a> {
    problem: &'a CalibrationProblem,
    seen: BTreeMap<(usize, u64, usize), CalibrationResult>,
}

impl Archive<'_> {
    fn evaluate_all(&mut self, pop: &[PostProcessConfig]) -> Vec<CalibrationResult> {
        let missing: Vec<PostProcessConfig> = {
            let mut m: Vec<PostProcessConfig> = pop.iter().filter(|c| !self.seen.contains_key(&c.key())).copied().collect();
            m.sort_by_key(PostProcessConfig::key);
            m.dedup_by_key(|c| c.key());
            m
        };
        let problem = self.problem;
        let fresh: Vec<CalibrationResult> = missing.par_iter().map(|c| problem.evaluate(c)).collect();
        for r in fresh {
            self.seen.insert(r.config.key(), r);
        }
        pop.iter().map(|c| self.seen[&c.key()]).collect()
    }
}

fn tournament(rng: &mut Rng, ranks: &[usize], sums: &[f64]) -> usize {
    let a = rng.random_range(0..ranks.len());
    let b = rng.random_range(0..ranks.len());
    let better = |x: usize, y: usize| (ranks[x], sums[x].to_bits()) <= (ranks[y], sums[y].to_bits());
    if better(a, b) {
        a
    } else {
        b
    }
}

fn crossover(rng: &mut Rng, a: &PostProcessConfig, b: &PostProcessConfig) -> PostProcessConfig {
    PostProcessConfig {
        averaging_window_frames: if rng.random_bool(0.5) { a.averaging_window_frames } else { b.averaging_window_frames },
        threshold: if rng.random_bool(0.5) { a.threshold } else { b.threshold },
        suppression_frames: if rng.random_bool(0.5) { a.suppression_frames } else { b.suppression_frames },
    }
}

fn int_step(rng: &mut Rng, v: usize, span: usize) -> usize {
    let step = (span / 4).max(1) as i64;
    let delta = rng.random_range(-step..=step);
    (v as i64 + delta).max(0) as usize
}

fn mutate(rng: &mut Rng, c: PostProcessConfig, bounds: &SearchBounds, rate: f64) -> PostProcessConfig {
    let mut c = c;
    if rng.random_bool(rate) {
        c.averaging_window_frames = int_step(rng, c.averaging_window_frames, bounds.window.1 - bounds.window.0);
    }
    if rng.random_bool(rate) {
        let span = bounds.threshold.1 - bounds.threshold.0;
        let sigma = bounds.threshold_step.unwrap_or(span / 10.0).max(span / 10.0);
        if sigma > 0.0 {
            c.threshold += Normal::new(0.0, sigma).expect("positive sigma").sample(rng);
        }
    }
    if rng.random_bool(rate) {
        c.suppression_frames = int_step(rng, c.suppression_frames, bounds.suppression.1 - bounds.suppression.0);
    }
    bounds.clamp(c)
}

/// NSGA-style search over (window, threshold, suppression). `seeds` are
/// placed in the initial population. Returns every evaluated point and the
/// final non-dominated set.
pub fn ga_search(
    problem: &CalibrationProblem,
    bounds: &SearchBounds,
    params: &GaParams,
    seeds: &[PostProcessConfig],
) -> Result<CalibrationReport> {
    bounds.validate()?;
    params.validate()?;
    let mut archive = Archive {
        problem,
        seen: BTreeMap::new(),
    };
    let mut rng = seeded(params.seed);
    let finish = |archive: Archive| {
        let evaluated: Vec<CalibrationResult> = archive.seen.into_values().collect();
        let front = pareto_front(&evaluated);
        CalibrationReport {
            ga_params: *params,
            bounds: *bounds,
            tolerance_frames: problem.tolerance_frames,
            evaluated,
            front,
        }
    };
    if bounds.is_degenerate() {
        let only = bounds.clamp(PostProcessConfig {
            averaging_window_frames: bounds.window.0,
            threshold: bounds.threshold.0,
            suppression_frames: bounds.suppression.0,
        });
        archive.evaluate_all(&[only]);
        return Ok(finish(archive));
    }

    let mut pop: Vec<PostProcessConfig> = seeds.iter().map(|s| bounds.clamp(*s)).take(params.population).collect();
    while pop.len() < params.population {
        pop.push(bounds.random(&mut rng));
    }
    for _ in 0..params.generations {
        let scored = archive.evaluate_all(&pop);
        let ranks = pareto_ranks(&scored);
        let sums: Vec<f64> = scored.iter().map(|r| r.far + r.frr).collect();

        // Elites: the current non-dominated set of the whole archive.
        let all: Vec<CalibrationResult> = archive.seen.values().copied().collect();
        let mut next: Vec<PostProcessConfig> = pareto_front(&all).into_iter().map(|r| r.config).collect();
        next.truncate(params.population / 2);

        while next.len() < params.population {
            let a = pop[tournament(&mut rng, &ranks, &sums)];
            let b = pop[tournament(&mut rng, &ranks, &sums)];
            let child = if rng.random_bool(params.crossover_rate) {
                crossover(&mut rng, &a, &b)
            } else {
                a
            };
            next.push(mutate(&mut rng, child, bounds, params.mutation_rate));
        }
        pop = next;
    }
    archive.evaluate_all(&pop);
    Ok(finish(archive))
}
