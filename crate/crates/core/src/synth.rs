//! Synthetic tone dataset: each class is a band of dominant frequencies.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::project::{Dataset, Sample, Split};
use crate::rng::{derive_seed, seeded, Rng};

pub const TONE_SAMPLE_RATE: u32 = 16_000;

/// `(label, low Hz, high Hz)` of each class band.
pub const TONE_BANDS: [(&str, f64, f64); 3] = [
    ("low", 300.0, 700.0),
    ("mid", 1200.0, 2000.0),
    ("high", 3000.0, 5000.0),
];

/// `n` samples of a sine at `freq_hz` with random phase plus white noise
/// of standard deviation `noise_std`.
pub fn tone(rng: &mut Rng, freq_hz: f64, amplitude: f64, noise_std: f64, sample_rate_hz: u32, n: usize) -> Vec<f32> {
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let w = std::f64::consts::TAU * freq_hz / f64::from(sample_rate_hz);
    (0..n)
        .map(|i| {
            let v = amplitude * (w * i as f64 + phase).sin() + noise.sample(rng);
            v.clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// White noise with standard deviation `std`.
pub fn noise(rng: &mut Rng, std: f64, n: usize) -> Vec<f32> {
    let d = Normal::new(0.0, std.max(0.0)).expect("finite std");
    (0..n).map(|_| (d.sample(rng)).clamp(-1.0, 1.0) as f32).collect()
}

/// One tone sample of class `class` (index into [`TONE_BANDS`]).
pub fn tone_sample(class: usize, index: usize, duration_s: f64, seed: u64) -> Result<Sample> {
    let (label, lo, hi) = TONE_BANDS[class];
    let mut rng = seeded(derive_seed(derive_seed(seed, class as u64), index as u64));
    let freq = rng.random_range(lo..hi);
    let amp = rng.random_range(0.3..0.8);
    let n = (duration_s * f64::from(TONE_SAMPLE_RATE)).round() as usize;
    let data = tone(&mut rng, freq, amp, 0.05, TONE_SAMPLE_RATE, n);
    Sample::from_values(label, Split::Train, TONE_SAMPLE_RATE, 1, data)
}

/// `per_class` one-second samples for each band, all in the train split.
pub fn tone_dataset(per_class: usize, seed: u64) -> Result<Dataset> {
    tone_dataset_with(per_class, 1.0, seed)
}

pub fn tone_dataset_with(per_class: usize, duration_s: f64, seed: u64) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(per_class * TONE_BANDS.len());
    for class in 0..TONE_BANDS.len() {
        for i in 0..per_class {
            samples.push(tone_sample(class, i, duration_s, seed)?);
        }
    }
    Dataset::new(
        samples,
        TONE_BANDS.iter().map(|b| b.0.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft_power_spectrum;

    #[test]
    fn deterministic_per_seed() {
        let a = tone_dataset_with(3, 0.1, 7).unwrap();
        let b = tone_dataset_with(3, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = tone_dataset_with(3, 0.1, 8).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.samples.len(), 9);
    }

    #[test]
    fn dominant_frequency_in_band() {
        for class in 0..3 {
            let s = tone_sample(class, 0, 0.128, 1).unwrap();
            let x: Vec<f64> = s.data.iter().map(|&v| f64::from(v)).collect();
            let p = fft_power_spectrum(&x, 2048, true).unwrap();
            let k = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            let hz = k as f64 * f64::from(TONE_SAMPLE_RATE) / 2048.0;
            let (_, lo, hi) = TONE_BANDS[class];
            assert!(hz >= lo - 10.0 && hz <= hi + 10.0, "class {class}: {hz} Hz");
        }
    }
}
