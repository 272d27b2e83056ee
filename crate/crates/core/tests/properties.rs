mod common;

use proptest::prelude::*;
use tinyforge::calibrate::{apply_postprocess, score_far_frr, Detection, PostProcessConfig};
use tinyforge::dsp::{decode_fvf, encode_fvf, fft_power_spectrum};
use tinyforge::interp::{
    dequantize_value, live_lower_bound, plan_arena, plan_lifetimes, quantize_value, run_flat, run_flat_traced, Lifetime, Trace,
    ARENA_ALIGNMENT,
};
use tinyforge::ir::{decode_model, encode_model};
use tinyforge::quant::{activation_quant, quantize_symmetric, weight_scale};

use common::{inputs_for, quantized, random_graph};

fn lifetimes() -> impl Strategy<Value = Vec<Lifetime>> {
    prop::collection::vec((1usize..300, 0usize..8, 0usize..4), 1..12).prop_map(|v| {
        v.into_iter()
            .map(|(size, first, len)| Lifetime {
                size,
                first,
                last: first + len,
            })
            .collect()
    })
}

/// Unimodal bumps separated by silence.
fn bump_stream() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec((1usize..8, 0.05f32..1.0, 1usize..6), 1..10).prop_map(|bumps| {
        let mut p = Vec::new();
        for (half, peak, gap) in bumps {
            for i in 0..half {
                p.push(peak * (i + 1) as f32 / half as f32);
            }
            for i in (0..half).rev() {
                p.push(peak * i as f32 / half as f32);
            }
            p.extend(std::iter::repeat_n(0.0, gap));
        }
        p
    })
}

fn two_class(p: &[f32]) -> Vec<Vec<f32>> {
    p.iter().map(|&v| vec![1.0 - v, v]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn plan_never_overlaps_live_tensors(lts in lifetimes()) {
        let (offs, peak) = plan_lifetimes(&lts, ARENA_ALIGNMENT);
        prop_assert!(peak >= live_lower_bound(&lts));
        for i in 0..lts.len() {
            prop_assert_eq!(offs[i] % ARENA_ALIGNMENT, 0);
            prop_assert!(offs[i] + lts[i].size <= peak);
            for j in i + 1..lts.len() {
                if lts[i].overlaps(&lts[j]) {
                    prop_assert!(offs[i] + lts[i].size <= offs[j] || offs[j] + lts[j].size <= offs[i]);
                }
            }
        }
    }

    #[test]
    fn activation_params_cover_range(lo in -50.0f32..50.0, width in 0.001f32..100.0) {
        let hi = lo + width;
        let (q, warn) = activation_quant(lo, hi);
        prop_assert!(warn.is_none());
        prop_assert!((-128..=127).contains(&q.zero_point));
        let s = q.scale(0);
        // zero is exactly representable
        prop_assert_eq!(dequantize_value(quantize_value(0.0, &q), &q), 0.0);
        for x in [lo.min(0.0), hi.max(0.0), (lo + hi) / 2.0] {
            let back = dequantize_value(quantize_value(x, &q), &q);
            prop_assert!((f64::from(back) - f64::from(x)).abs() <= s / 2.0 + 1e-5 * f64::from(x.abs()).max(1.0));
        }
    }

    #[test]
    fn symmetric_weights_round_trip(w in prop::collection::vec(-3.0f32..3.0, 1..64)) {
        let (mn, mx) = w.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let s = weight_scale(mn, mx);
        for &x in &w {
            let q = quantize_symmetric(x, s);
            prop_assert!((-127..=127).contains(&q));
            prop_assert!((f64::from(q) * s - f64::from(x)).abs() <= s / 2.0 + 1e-9);
        }
    }

    #[test]
    fn parseval_without_window(x in prop::collection::vec(-1.0f64..1.0, 1..=64)) {
        let n = 64;
        let p = fft_power_spectrum(&x, n, false).unwrap();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral = p[0] + p[n / 2] + 2.0 * p[1..n / 2].iter().sum::<f64>();
        prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1e-12) + 1e-12);
    }

    #[test]
    fn fvf_preserves_bits(rows in 0usize..5, cols in 0usize..7, seed in any::<u64>()) {
        let mut s = seed;
        let v: Vec<Vec<f32>> = (0..rows)
            .map(|_| (0..cols).map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); f32::from_bits((s >> 32) as u32) }).collect())
            .collect();
        let back = decode_fvf(&encode_fvf(&v).unwrap()).unwrap();
        let bits = |m: &Vec<Vec<f32>>| m.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&v));
        prop_assert_eq!(back.len(), rows);
    }

    #[test]
    fn higher_threshold_never_fires_more(p in bump_stream(), w in 1usize..4, s in 0usize..6, t in 0.05f64..0.9, dt in 0.0f64..0.5) {
        let probs = two_class(&p);
        let lo = apply_postprocess(&probs, 1, &PostProcessConfig { averaging_window_frames: w, threshold: t, suppression_frames: s });
        let hi = apply_postprocess(&probs, 1, &PostProcessConfig { averaging_window_frames: w, threshold: (t + dt).min(0.99), suppression_frames: s });
        prop_assert!(hi.len() <= lo.len());
        let (far_lo, _) = score_far_frr(&lo, &[], p.len(), w, 0);
        let (far_hi, _) = score_far_frr(&hi, &[], p.len(), w, 0);
        prop_assert!(far_hi <= far_lo);
    }

    #[test]
    fn rescaling_with_threshold_keeps_detections(p in prop::collection::vec(0.0f32..1.0, 1..80), w in 1usize..5, s in 0usize..5, t in 0.05f64..0.95) {
        let cfg = PostProcessConfig { averaging_window_frames: w, threshold: t, suppression_frames: s };
        let half: Vec<f32> = p.iter().map(|v| v * 0.5).collect();
        let a = apply_postprocess(&two_class(&p), 1, &cfg);
        let b = apply_postprocess(&two_class(&half), 1, &PostProcessConfig { threshold: t * 0.5, ..cfg });
        prop_assert_eq!(a, b);
    }

    #[test]
    fn suppression_gap_holds(p in prop::collection::vec(0.0f32..1.0, 1..120), s in 0usize..10) {
        let d: Vec<Detection> = apply_postprocess(&two_class(&p), 1, &PostProcessConfig { averaging_window_frames: 1, threshold: 0.5, suppression_frames: s });
        for pair in d.windows(2) {
            prop_assert!(pair[1].frame > pair[0].frame + s);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_file_round_trip(seed in 0u64..10_000, int8 in any::<bool>()) {
        let f = random_graph(seed);
        let g = if int8 { quantized(&f, seed) } else { f };
        let back = decode_model(&encode_model(&g).unwrap()).unwrap();
        prop_assert_eq!(&back, &g);
        let x = &inputs_for(&g, 1, seed)[0];
        let a = run_flat(&g, x).unwrap();
        let b = run_flat(&back, x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn trace_covers_every_activation(seed in 0u64..10_000) {
        let g = quantized(&random_graph(seed), seed);
        let (_, trace) = run_flat_traced(&g, &inputs_for(&g, 1, seed)[0]).unwrap();
        let plan = plan_arena(&g).unwrap();
        prop_assert_eq!(trace.entries.len(), plan.offsets.len());
        let back = Trace::decode(&trace.encode()).unwrap();
        prop_assert_eq!(back, trace);
    }
}
