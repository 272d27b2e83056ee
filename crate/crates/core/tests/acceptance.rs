//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng as _;
use tinyforge::calibrate::{
    apply_postprocess, ga_search, score_far_frr, synthetic_posteriors, CalibrationProblem, GaParams, Interval,
    PostProcessConfig, SearchBounds,
};
use tinyforge::codegen::{emit_c, flash_ram_report, CodegenOptions};
use tinyforge::dsp::{dsp_process, DspConfig, RealFft};
use tinyforge::estimate::{Constraints, DeviceProfile};
use tinyforge::interp::{live_lower_bound, plan_arena, plan_lifetimes, run_flat, run_flat_traced, run_in_arena, Lifetime, ARENA_ALIGNMENT};
use tinyforge::ir::{DType, GraphBuilder, ModelGraph, OpKind};
use tinyforge::project::{split_dataset, Sample, Split};
use tinyforge::quant::quantize_with;
use tinyforge::rng::seeded;
use tinyforge::synth::tone_dataset;
use tinyforge::trainer::{build_model, evaluate, kmeans_fit, kmeans_graph, preset_descriptor, train, DataKind, Network, Params, TrainConfig};
use tinyforge::tuner::{featurize, tune, Objective, SearchSpace, TrialStatus, TuneRequest};

use common::{inputs_for, max_rel_diff, quantized, random_graph, uniform};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

fn kws_model(seed: u64) -> (DspConfig, ModelGraph) {
    let dsp = DspConfig::mfe(0.02, 0.02, 32);
    let shape = dsp.feature_shape(16_000, 1);
    let g = build_model(&"2x conv1d (32 to 64)".parse().unwrap(), shape, 4, seed).unwrap();
    (dsp, g)
}

fn kws_inputs(g: &ModelGraph, n: usize, seed: u64) -> Vec<Vec<f32>> {
    let len = g.input_spec().unwrap().elements();
    let mut rng = seeded(seed);
    (0..n).map(|_| uniform(&mut rng, len, -52.0, 0.0)).collect()
}

const KERNEL_SYMBOLS: [(OpKind, &str); 6] = [
    (OpKind::Dense, "k_dense_"),
    (OpKind::Conv1d, "k_conv1d_"),
    (OpKind::MaxPool1d, "k_maxpool1d_"),
    (OpKind::Softmax, "k_softmax_"),
    (OpKind::KmeansDistance, "k_kmeans_distance_"),
    (OpKind::Relu, "k_relu_"),
];

fn codegen_conformance() -> Outcome {
    let mut cases: Vec<(String, ModelGraph, Vec<Vec<f32>>)> = Vec::new();
    for seed in 0..24u64 {
        let g = random_graph(seed);
        let xs = inputs_for(&g, 100, 1000 + seed);
        cases.push((format!("random {seed} f32"), g.clone(), xs.clone()));
        cases.push((format!("random {seed} i8"), quantized(&g, seed), xs));
    }
    let (_, kws) = kws_model(7);
    let xs = kws_inputs(&kws, 100, 8);
    let kws_i8 = quantize_with(&kws, &xs[..32]).unwrap().graph;
    cases.push(("kws f32".into(), kws, xs.clone()));
    cases.push(("kws i8".into(), kws_i8, xs));

    let mut vectors = 0;
    for (name, g, xs) in &cases {
        let plan = plan_arena(g).map_err(|e| format!("{name}: {e}"))?;
        let mut arena = vec![0u8; plan.peak_bytes];
        for x in xs {
            let want = run_flat(g, x).map_err(|e| format!("{name}: {e}"))?;
            arena.iter_mut().for_each(|b| *b = 0xA5);
            let got = run_in_arena(g, &plan, x, &mut arena, |_, _| {}).map_err(|e| format!("{name}: {e}"))?;
            match g.dtype() {
                DType::I8 => check!(
                    want.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits()),
                    "{name}: int8 arena output differs from interpreter"
                ),
                _ => check!(max_rel_diff(&want, &got) <= 1e-5, "{name}: float outputs differ"),
            }
            vectors += 1;
        }
        let opts = CodegenOptions {
            dtype: g.dtype(),
            ..CodegenOptions::default()
        };
        let c = emit_c(g, &plan, &opts).map_err(|e| format!("{name}: {e}"))?;
        let used = g.op_kinds();
        for (kind, sym) in KERNEL_SYMBOLS {
            check!(
                c.source.contains(sym) == used.contains(&kind),
                "{name}: kernel `{sym}` presence does not match graph ops"
            );
        }
        check!(!c.source.contains("malloc") && !c.source.contains("free("), "{name}: heap use in generated code");
    }
    Ok(format!("{} models, {vectors} vectors", cases.len()))
}

fn memory_reduction() -> Outcome {
    let profile = DeviceProfile::load("nano33", None).unwrap();
    let mut models: Vec<(String, ModelGraph)> = Vec::new();
    let (_, kws) = kws_model(1);
    let xs = kws_inputs(&kws, 16, 2);
    models.push(("kws i8".into(), quantize_with(&kws, &xs).unwrap().graph));
    models.push(("kws f32".into(), kws));
    let mlp = build_model(&preset_descriptor(DataKind::Timeseries), (1, 33), 3, 3).unwrap();
    models.push(("mlp i8".into(), quantized(&mlp, 4)));
    models.push(("mlp f32".into(), mlp));
    let feats: Vec<Vec<f32>> = inputs_for(&random_graph(10), 40, 5).into_iter().map(|v| v[..2].to_vec()).collect();
    let km = kmeans_fit(&feats, 3, 1).unwrap();
    models.push(("kmeans".into(), kmeans_graph((1, 2), &km).unwrap()));
    for s in 0..10 {
        models.push((format!("random {s}"), random_graph(100 + s)));
    }
    let all: std::collections::BTreeSet<OpKind> = OpKind::ALL.iter().copied().collect();
    let mut lines = Vec::new();
    for (name, g) in &models {
        check!(g.op_kinds().len() < all.len(), "{name}: graph uses every kernel");
        let plan = plan_arena(g).unwrap();
        let r = flash_ram_report(g, &plan, &profile).unwrap();
        let (gen, base) = (&r.generated, &r.interpreter_baseline);
        check!(gen.flash_bytes < base.flash_bytes, "{name}: flash {} ≥ baseline {}", gen.flash_bytes, base.flash_bytes);
        check!(
            gen.ram_scaffold_bytes < base.ram_scaffold_bytes && gen.ram_bytes < base.ram_bytes,
            "{name}: RAM {} ≥ baseline {}",
            gen.ram_bytes,
            base.ram_bytes
        );
        if name.starts_with("kws") {
            lines.push(format!("{name} flash {}→{} B", base.flash_bytes, gen.flash_bytes));
        }
    }
    Ok(lines.join(", "))
}

fn quant_fidelity() -> Outcome {
    let ds = split_dataset(&tone_dataset(40, 11).unwrap(), 0.25, 11).unwrap();
    let dsp = DspConfig::mfe(0.02, 0.02, 32);
    let (tx, ty) = featurize(&ds, &dsp, Split::Train).unwrap();
    let (vx, vy) = featurize(&ds, &dsp, Split::Test).unwrap();
    let g = build_model(&preset_descriptor(DataKind::Audio), dsp.feature_shape(16_000, 1), 3, 11).unwrap();
    let cfg = TrainConfig {
        seed: 11,
        ..TrainConfig::default()
    };
    let (trained, _) = train(&g, &tx, &ty, &cfg).unwrap();
    let f32_acc = evaluate(&trained, &vx, &vy).unwrap().accuracy;
    let q = quantize_with(&trained, &tx[..50.min(tx.len())]).unwrap().graph;
    let i8_acc = evaluate(&q, &vx, &vy).unwrap().accuracy;
    check!(f32_acc >= 0.85, "f32 accuracy {:.1}% < 85%", f32_acc * 100.0);
    check!(
        (f32_acc - i8_acc).abs() <= 0.03 + 1e-12,
        "int8 {:.1}% vs f32 {:.1}%",
        i8_acc * 100.0,
        f32_acc * 100.0
    );
    Ok(format!("f32 {:.1}%, int8 {:.1}% on {} test samples", f32_acc * 100.0, i8_acc * 100.0, vy.len()))
}

fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * (k * t % n) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

fn oracle_mfcc(x: &[f64], sr: f64, frame: usize, stride: usize, fft: usize, filters: usize, coeffs: usize, floor_db: f64) -> Vec<Vec<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (lo, hi) = (mel(0.0), mel(sr / 2.0));
    let edges: Vec<f64> = (0..filters + 2).map(|i| inv(lo + (hi - lo) * i as f64 / (filters + 1) as f64)).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + frame <= x.len() {
        let mut buf = vec![0.0; fft];
        for i in 0..frame {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (frame - 1) as f64).cos();
            buf[i] = x[start + i] * w;
        }
        let power: Vec<f64> = naive_dft(&buf).iter().map(|(r, i)| (r * r + i * i) / fft as f64).collect();
        let logmel: Vec<f64> = (0..filters)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                let e: f64 = power
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let f = k as f64 * sr / fft as f64;
                        let w = if f > l && f < c {
                            (f - l) / (c - l)
                        } else if f >= c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        };
                        w * p
                    })
                    .sum();
                10.0 * e.max(10f64.powf(floor_db / 10.0)).log10()
            })
            .collect();
        let n = filters as f64;
        out.push(
            (0..coeffs)
                .map(|k| {
                    let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    s * logmel
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                        .sum::<f64>()
                })
                .collect(),
        );
        start += stride;
    }
    out
}

fn dsp_correctness() -> Outcome {
    let mut rng = seeded(5);
    let mut worst_fft = 0.0f64;
    let mut n = 4;
    while n <= 512 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = RealFft::new(n).unwrap().transform(&x);
        let want = naive_dft(&x);
        let scale = want.iter().map(|(r, i)| r.hypot(*i)).fold(0.0, f64::max);
        for (g, (r, i)) in got.iter().zip(&want) {
            worst_fft = worst_fft.max((g.re - r).hypot(g.im - i) / scale);
        }
        n *= 2;
    }
    check!(worst_fft <= 1e-9, "FFT relative error {worst_fft:e}");

    let sr = 16_000u32;
    let mut cfg = DspConfig::mfcc(0.02, 0.01, 40, 13);
    cfg.window_size_s = 0.25;
    let n = cfg.window_samples(sr);
    let signal: Vec<f32> = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(sr);
            (0.4 * (2.0 * PI * 440.0 * t).sin() + 0.2 * (2.0 * PI * 2500.0 * t).sin() + 0.05 * rng.random_range(-1.0..1.0)) as f32
        })
        .collect();
    let sample = Sample::from_values("x", Split::Train, sr, 1, signal.clone()).unwrap();
    let got = dsp_process(&sample, &cfg).unwrap();
    let x: Vec<f64> = signal.iter().map(|&v| f64::from(v)).collect();
    let want = oracle_mfcc(&x, f64::from(sr), 320, 160, 512, 40, 13, cfg.noise_floor_db);
    check!(got.rows == want.len(), "MFCC frames {} vs oracle {}", got.rows, want.len());
    let mut worst_mfcc = 0.0f64;
    for (r, row) in want.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            let g = f64::from(got.row(r)[c]);
            worst_mfcc = worst_mfcc.max((g - w).abs() / w.abs().max(1.0));
        }
    }
    check!(worst_mfcc <= 1e-6, "MFCC relative error {worst_mfcc:e}");

    for (frame, stride) in [(0.02, 0.01), (0.02, 0.02), (0.05, 0.025), (0.032, 0.016)] {
        let c = DspConfig::mfe(frame, stride, 32);
        let (f, s) = ((frame * 16_000.0f64).round() as usize, (stride * 16_000.0f64).round() as usize);
        let mut expected = 0;
        let mut start = 0;
        while start + f <= 16_000 {
            expected += 1;
            start += s;
        }
        check!(c.num_frames(sr) == expected, "frame count for ({frame}, {stride})");
        let one_second = Sample::from_values("x", Split::Train, sr, 1, vec![0.1; 16_000]).unwrap();
        check!(dsp_process(&one_second, &c).unwrap().rows == expected, "processed rows for ({frame}, {stride})");
    }
    Ok(format!("fft {worst_fft:.1e}, mfcc {worst_mfcc:.1e}"))
}

fn perturbed(p: &Params, layer: usize, which: usize, j: usize, delta: f64) -> Params {
    let mut q = p.clone();
    let (w, b) = q.layers[layer].as_mut().unwrap();
    if which == 0 {
        w[j] += delta;
    } else {
        b[j] += delta;
    }
    q
}

/// Norm-wise relative error between backprop and central differences of
/// `L = Σ c·y` for parameters and input.
fn gradient_error(g: &ModelGraph, seed: u64) -> f64 {
    let net = Network::new(g).unwrap();
    let params = Params::from_graph(g).unwrap();
    let mut rng = seeded(seed);
    let x: Vec<f64> = (0..g.input_spec().unwrap().elements()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = g.nodes.len();
    let acts = net.forward(&params, &x);
    let c: Vec<f64> = (0..acts[n].len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |p: &Params, x: &[f64]| -> f64 { net.forward(p, x)[n].iter().zip(&c).map(|(a, b)| a * b).sum() };
    let (grads, dx) = net.backward(&params, &acts, c.clone(), n);
    let h = 1e-6;
    let (mut diff, mut norm) = (0.0, 0.0);
    let mut acc = |analytic: f64, numeric: f64| {
        diff += (analytic - numeric).powi(2);
        norm += analytic.powi(2).max(numeric.powi(2));
    };
    for li in 0..params.layers.len() {
        let Some((w, b)) = &params.layers[li] else { continue };
        for (k, len) in [(0usize, w.len()), (1, b.len())] {
            for j in 0..len {
                let plus = perturbed(&params, li, k, j, h);
                let minus = perturbed(&params, li, k, j, -h);
                let numeric = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                let (gw, gb) = grads.layers[li].as_ref().unwrap();
                acc(if k == 0 { gw[j] } else { gb[j] }, numeric);
            }
        }
    }
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        acc(dx[j], (loss(&params, &xp) - loss(&params, &xm)) / (2.0 * h));
    }
    (diff / norm.max(1e-30)).sqrt()
}

fn gradient_checks() -> Outcome {
    let mut rng = seeded(9);
    let mut graphs: Vec<(&str, ModelGraph)> = Vec::new();
    let mut b = GraphBuilder::new(&[10, 3]);
    b.conv1d_with(4, 3, 1, uniform(&mut rng, 36, -0.5, 0.5), uniform(&mut rng, 4, -0.1, 0.1)).unwrap();
    b.relu().unwrap();
    b.maxpool1d(2, 2).unwrap();
    b.flatten().unwrap();
    b.dense_with(3, uniform(&mut rng, 48, -0.5, 0.5), uniform(&mut rng, 3, -0.1, 0.1)).unwrap();
    b.softmax().unwrap();
    graphs.push(("conv stack", b.finish().unwrap()));
    let mut b = GraphBuilder::new(&[1, 6]);
    b.dense_with(5, uniform(&mut rng, 30, -0.5, 0.5), uniform(&mut rng, 5, 0.05, 0.2)).unwrap();
    b.relu().unwrap();
    b.dense_with(3, uniform(&mut rng, 15, -0.5, 0.5), uniform(&mut rng, 3, -0.1, 0.1)).unwrap();
    b.softmax().unwrap();
    graphs.push(("fused mlp", tinyforge::ir::fuse_activations(&b.finish().unwrap())));
    let mut b = GraphBuilder::new(&[1, 4]);
    b.kmeans_distance(3, uniform(&mut rng, 12, -1.0, 1.0)).unwrap();
    graphs.push(("kmeans", b.finish().unwrap()));

    let mut covered = std::collections::BTreeSet::new();
    let mut worst = 0.0f64;
    for (name, g) in &graphs {
        for s in 0..3 {
            let e = gradient_error(g, s);
            check!(e <= 1e-4, "{name}: relative gradient error {e:e}");
            worst = worst.max(e);
        }
        covered.extend(g.op_kinds());
    }
    check!(covered.len() == OpKind::ALL.len(), "op kinds covered: {covered:?}");
    Ok(format!("{} op kinds, worst {worst:.1e}", covered.len()))
}

fn brute_force_peak(lts: &[Lifetime], upper: usize) -> usize {
    fn go(i: usize, order: &[usize], lts: &[Lifetime], offs: &mut Vec<Option<usize>>, end: usize, best: &mut usize, lb: usize) {
        if *best <= lb || end >= *best {
            return;
        }
        if i == order.len() {
            *best = end;
            return;
        }
        let t = order[i];
        let size = lts[t].size;
        let mut off = 0;
        while off + size < *best {
            let clash = (0..lts.len()).any(|u| {
                offs[u].is_some_and(|o| lts[u].overlaps(&lts[t]) && off < o + lts[u].size && o < off + size)
            });
            if !clash {
                offs[t] = Some(off);
                go(i + 1, order, lts, offs, end.max(off + size), best, lb);
                offs[t] = None;
            }
            off += ARENA_ALIGNMENT;
        }
    }
    let mut order: Vec<usize> = (0..lts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(lts[i].size));
    let mut best = upper;
    let mut offs = vec![None; lts.len()];
    go(0, &order, lts, &mut offs, 0, &mut best, live_lower_bound(lts));
    best
}

fn check_plan(lts: &[Lifetime], worst: &mut f64) -> Result<(), String> {
    let (offs, peak) = plan_lifetimes(lts, ARENA_ALIGNMENT);
    let lb = live_lower_bound(lts);
    check!(peak >= lb, "peak {peak} below lower bound {lb} for {lts:?}");
    for i in 0..lts.len() {
        check!(offs[i] % ARENA_ALIGNMENT == 0, "unaligned offset");
        for j in i + 1..lts.len() {
            if lts[i].overlaps(&lts[j]) {
                check!(
                    offs[i] + lts[i].size <= offs[j] || offs[j] + lts[j].size <= offs[i],
                    "live tensors {i} and {j} overlap in {lts:?}"
                );
            }
        }
    }
    if peak > lb {
        let opt = brute_force_peak(lts, peak);
        check!(peak as f64 <= 1.5 * opt as f64, "peak {peak} > 1.5 × optimum {opt} for {lts:?}");
        *worst = worst.max(peak as f64 / opt as f64);
    }
    Ok(())
}

fn arena_planner() -> Outcome {
    let sizes = [10usize, 16, 40, 64];
    let steps = 3;
    let intervals: Vec<(usize, usize)> = (0..steps).flat_map(|a| (a..steps).map(move |b| (a, b))).collect();
    let options: Vec<Lifetime> = intervals
        .iter()
        .flat_map(|&(first, last)| sizes.iter().map(move |&size| Lifetime { size, first, last }))
        .collect();
    let mut worst = 1.0f64;
    let mut sets = 0usize;
    // Every multiset of up to 4 lifetimes over 3 steps.
    fn rec(start: usize, depth: usize, cur: &mut Vec<Lifetime>, options: &[Lifetime], f: &mut dyn FnMut(&[Lifetime]) -> Result<(), String>) -> Result<(), String> {
        if !cur.is_empty() {
            f(cur)?;
        }
        if depth == 0 {
            return Ok(());
        }
        for i in start..options.len() {
            cur.push(options[i]);
            rec(i, depth - 1, cur, options, f)?;
            cur.pop();
        }
        Ok(())
    }
    rec(0, 4, &mut Vec::new(), &options, &mut |lts| {
        sets += 1;
        check_plan(lts, &mut worst)
    })?;
    // Every chain graph with up to 6 tensors and sizes from the set.
    for n in 1..=6usize {
        let total = sizes.len().pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let lts: Vec<Lifetime> = (0..n)
                .map(|i| {
                    let size = sizes[c % sizes.len()];
                    c /= sizes.len();
                    let steps = n.saturating_sub(1).max(1);
                    let first = i.saturating_sub(1);
                    let last = if i + 1 == n { steps - 1 } else { i.min(steps - 1) };
                    Lifetime { size, first, last }
                })
                .collect();
            sets += 1;
            check_plan(&lts, &mut worst)?;
        }
    }

    // Canary: every live tensor keeps its bytes until its last use.
    let mut vectors = 0;
    for seed in 0..200u64 {
        let f = random_graph(5000 + seed);
        let g = if seed % 2 == 0 { f } else { quantized(&f, seed) };
        let plan = plan_arena(&g).unwrap();
        let x = &inputs_for(&g, 1, seed)[0];
        let (want, trace) = run_flat_traced(&g, x).unwrap();
        let expected: BTreeMap<&str, Vec<u8>> = trace.entries.iter().map(|e| (e.tensor_id.as_str(), e.data.to_le_bytes())).collect();
        let tail = 64;
        let mut arena = vec![0xA5u8; plan.peak_bytes + tail];
        let mut err: Option<String> = None;
        let got = run_in_arena(&g, &plan, x, &mut arena, |step, bytes| {
            for (id, lt) in &plan.lifetimes {
                if lt.first <= step && step <= lt.last {
                    let off = plan.offsets[id];
                    let e = &expected[id.as_str()];
                    if &bytes[off..off + e.len()] != e.as_slice() && err.is_none() {
                        err = Some(format!("graph {seed}: tensor {id} corrupted after step {step}"));
                    }
                }
            }
            if bytes[plan.peak_bytes..].iter().any(|&b| b != 0xA5) && err.is_none() {
                err = Some(format!("graph {seed}: write past the arena end"));
            }
        })
        .unwrap();
        if let Some(e) = err {
            return Err(e);
        }
        check!(
            got.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()),
            "graph {seed}: arena result differs"
        );
        vectors += 1;
    }
    Ok(format!("{sets} lifetime sets, worst ratio {worst:.3}, {vectors} canary graphs"))
}

fn tuner_table() -> Outcome {
    let ds = split_dataset(&tone_dataset(20, 21).unwrap(), 0.25, 21).unwrap();
    let profile = DeviceProfile::load("esp-eye", None).unwrap();
    let mut constraints = Constraints::default();
    constraints.apply("ram=256k").unwrap();
    let train_cfg = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };
    let space = SearchSpace::kws();
    let report = tune(
        &ds,
        &TuneRequest {
            space: &space,
            trials: 8,
            seed: 21,
            profile: &profile,
            constraints: &constraints,
            train: &train_cfg,
            objective: Objective::Accuracy,
        },
    )
    .map_err(|e| e.to_string())?;
    check!(report.trials.len() == 8, "{} trials reported", report.trials.len());
    check!(!report.ranking.is_empty(), "no trial was trained");
    for t in &report.trials {
        if t.status == TrialStatus::Trained {
            let e = t.estimate.as_ref().unwrap();
            check!(e.ram_bytes <= 256 * 1024, "trial {} uses {} B RAM", t.trial_id, e.ram_bytes);
            check!(e.ram_bytes == e.dsp_ram_bytes + e.nn_ram_bytes, "trial {} RAM total", t.trial_id);
            check!((e.total_latency_ms - (e.dsp_latency_ms + e.nn_latency_ms)).abs() < 1e-9, "trial {} latency total", t.trial_id);
        }
    }
    for r in &report.ranking {
        check!(r.ram_total == r.ram_dsp + r.ram_nn, "row {} RAM total", r.trial_id);
        check!(r.ram_total <= 256 * 1024, "row {} exceeds RAM", r.trial_id);
        check!(
            (r.latency_total_ms - (r.latency_dsp_ms + r.latency_nn_ms)).abs() < 0.0051,
            "row {} latency total",
            r.trial_id
        );
    }
    check!(
        report.ranking.windows(2).all(|w| w[0].accuracy >= w[1].accuracy),
        "rows are not in descending accuracy"
    );
    let filtered = report.trials.iter().filter(|t| t.status == TrialStatus::Filtered).count();
    Ok(format!("{} ranked, {filtered} filtered, best {:.1}%", report.ranking.len(), report.ranking[0].accuracy * 100.0))
}

fn calibration_ga() -> Outcome {
    let truth: Vec<(usize, usize)> = (0..12).map(|i| (30 + i * 60, 40 + i * 60)).collect();
    let frames = 760;
    let problem = CalibrationProblem {
        probs: synthetic_posteriors(&truth, frames, 0.3, 60, 77),
        positive: 1,
        intervals: truth
            .iter()
            .map(|&(a, b)| Interval {
                class: 1,
                start_sample: a,
                end_sample: b + 1,
                start_frame: a,
                end_frame: b,
            })
            .collect(),
        tolerance_frames: 2,
    };
    let bounds = SearchBounds {
        window: (1, 5),
        threshold: (0.3, 0.9),
        threshold_step: Some(0.05),
        suppression: (0, 6),
    };
    let levels = bounds.threshold_levels().unwrap();
    let cells = 5 * levels * 7;
    check!(cells <= 500, "grid has {cells} cells");
    let mut optimum = f64::INFINITY;
    for w in 1..=5usize {
        for k in 0..levels {
            for s in 0..=6usize {
                let cfg = PostProcessConfig {
                    averaging_window_frames: w,
                    threshold: 0.3 + k as f64 * 0.05,
                    suppression_frames: s,
                };
                let d = apply_postprocess(&problem.probs, 1, &cfg);
                let (far, frr) = score_far_frr(&d, &problem.intervals, frames, w, 2);
                optimum = optimum.min(far + frr);
            }
        }
    }
    let params = GaParams {
        population: 16,
        generations: 12,
        seed: 4,
        ..GaParams::default()
    };
    let report = ga_search(&problem, &bounds, &params, &[]).map_err(|e| e.to_string())?;
    let best = report.best_sum().ok_or("empty front")?;
    let got = best.far + best.frr;
    check!(got <= optimum + 0.05, "GA best {got:.4} vs grid optimum {optimum:.4}");
    for a in &report.front {
        for b in &report.front {
            check!(!a.dominates(b), "front contains a dominated configuration");
        }
    }
    Ok(format!(
        "GA {got:.4} vs grid {optimum:.4} over {cells} cells, {} evaluations, front of {}",
        report.evaluated.len(),
        report.front.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("codegen conformance", codegen_conformance),
        ("memory reduction", memory_reduction),
        ("quantization fidelity", quant_fidelity),
        ("dsp correctness", dsp_correctness),
        ("gradient checks", gradient_checks),
        ("arena planner", arena_planner),
        ("tuner", tuner_table),
        ("calibration ga", calibration_ga),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({detail}; {secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
