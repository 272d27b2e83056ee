use tinyforge::calibrate::{
    ga_search, pareto_front, synth_stream, synthetic_posteriors, CalibrationProblem, GaParams, Interval, SearchBounds,
    StreamSpec,
};
use tinyforge::dsp::DspConfig;
use tinyforge::synth::tone_dataset;

fn intervals(spans: &[(usize, usize)], hop: usize) -> Vec<Interval> {
    spans
        .iter()
        .map(|&(a, b)| Interval {
            class: 1,
            start_sample: a * hop,
            end_sample: (b + 1) * hop,
            start_frame: a,
            end_frame: b,
        })
        .collect()
}

fn spec(rate: f64) -> StreamSpec {
    StreamSpec {
        duration_s: 6.0,
        event_rate_per_min: rate,
        noise_db: Some(-40.0),
        positive_class: "high".into(),
        hop_s: 0.02,
    }
}

#[test]
fn clean_posteriors_calibrate_perfectly() {
    let spans = [(20, 30), (80, 95), (150, 160), (210, 222)];
    let probs = synthetic_posteriors(&spans, 260, 0.0, 0, 1);
    let problem = CalibrationProblem {
        probs,
        positive: 1,
        intervals: intervals(&spans, 320),
        tolerance_frames: 2,
    };
    let params = GaParams {
        population: 12,
        generations: 8,
        seed: 3,
        ..GaParams::default()
    };
    let report = ga_search(&problem, &SearchBounds::default(), &params, &[]).unwrap();
    let best = report.best_sum().unwrap();
    assert_eq!((best.far, best.frr), (0.0, 0.0), "{best:?}");
    assert_eq!(report.front.len(), pareto_front(&report.front).len());
}

#[test]
fn streams_are_reproducible() {
    let ds = tone_dataset(4, 2).unwrap();
    let cfg = DspConfig::mfe(0.02, 0.02, 16);
    let a = synth_stream(&ds, &cfg, &spec(20.0), 9).unwrap();
    let b = synth_stream(&ds, &cfg, &spec(20.0), 9).unwrap();
    assert_eq!(a.signal, b.signal);
    assert_eq!(a.intervals, b.intervals);
    assert!(!a.intervals.is_empty());
    a.validate().unwrap();
    for w in a.intervals.windows(2) {
        assert!(w[0].end_sample <= w[1].start_sample);
    }
    for iv in &a.intervals {
        assert!(iv.end_sample <= a.signal.len());
        assert!(iv.start_frame <= iv.end_frame && iv.end_frame < a.num_frames());
    }
    let c = synth_stream(&ds, &cfg, &spec(20.0), 10).unwrap();
    assert_ne!(a.signal, c.signal);
}

#[test]
fn silent_stream_has_no_events() {
    let ds = tone_dataset(2, 2).unwrap();
    let s = synth_stream(&ds, &DspConfig::mfe(0.02, 0.02, 16), &spec(0.0), 1).unwrap();
    assert!(s.intervals.is_empty());
    assert!(s.num_frames() > 0);
}

#[test]
fn unknown_positive_class_is_rejected() {
    let ds = tone_dataset(2, 2).unwrap();
    let mut sp = spec(10.0);
    sp.positive_class = "nope".into();
    assert!(synth_stream(&ds, &DspConfig::mfe(0.02, 0.02, 16), &sp, 1).is_err());
}
