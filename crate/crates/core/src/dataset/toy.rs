use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::signal::{write_wav, Waveform, SAMPLE_RATE};

/// Peak level of clean clips written by [`write_toy_sources`], low enough
/// that mixing at −20 dB stays inside the 16-bit range.
pub const TOY_CLEAN_PEAK: f64 = 0.03;

/// Synthetic stand-ins for speech and noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyKind {
    /// Harmonic complex on fundamental `f0` Hz with 1/k harmonic decay and
    /// a slow amplitude modulation.
    Tone { f0: f64 },
    /// Linear frequency sweep with two overtones.
    Chirp,
    /// Gaussian noise restricted to a random frequency band.
    NoiseBand,
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Deterministic 16 kHz waveform of `duration` seconds. Tones and chirps
/// peak at 0.5; noise bands have RMS 0.1. Non-positive durations give an
/// empty waveform.
pub fn synth_toy_audio(kind: ToyKind, seed: u64, duration: f64) -> Waveform {
    let fs = SAMPLE_RATE as f64;
    let n = if duration > 0.0 { (duration * fs).round() as usize } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = |i: usize| i as f64 / fs;
    let mut x = match kind {
        ToyKind::Tone { f0 } => {
            let harmonics = ((7000.0 / f0).floor() as usize).clamp(1, 20);
            let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let fm = rng.random_range(2.0..5.0);
            let phm = rng.random_range(0.0..2.0 * PI);
            let mut x: Vec<f64> = (0..n)
                .map(|i| {
                    let env = 0.7 + 0.3 * (2.0 * PI * fm * t(i) + phm).sin();
                    let s: f64 = phases
                        .iter()
                        .enumerate()
                        .map(|(k, ph)| (2.0 * PI * f0 * (k + 1) as f64 * t(i) + ph).sin() / (k + 1) as f64)
                        .sum();
                    env * s
                })
                .collect();
            normalize_peak(&mut x, 0.5);
            x
        }
        ToyKind::Chirp => {
            let f_start = rng.random_range(200.0..600.0);
            let f_end = rng.random_range(800.0..2000.0);
            let span = duration.max(f64::MIN_POSITIVE);
            let mut x: Vec<f64> = (0..n)
                .map(|i| {
                    let tt = t(i);
                    let phase = 2.0 * PI * (f_start * tt + (f_end - f_start) * tt * tt / (2.0 * span));
                    phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin()
                })
                .collect();
            normalize_peak(&mut x, 0.5);
            x
        }
        ToyKind::NoiseBand => {
            let lo = rng.random_range(100.0..1000.0);
            let hi = lo + rng.random_range(500.0..3000.0);
            let mut spec: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
                .collect();
            if n > 0 {
                let mut planner = FftPlanner::new();
                planner.plan_fft_forward(n).process(&mut spec);
                for (k, c) in spec.iter_mut().enumerate() {
                    let f = k.min(n - k) as f64 * fs / n as f64;
                    if f < lo || f > hi {
                        *c = Complex::new(0.0, 0.0);
                    }
                }
                planner.plan_fft_inverse(n).process(&mut spec);
            }
            let mut x: Vec<f64> = spec.iter().map(|c| c.re).collect();
            let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
            if rms > 0.0 {
                x.iter_mut().for_each(|v| *v *= 0.1 / rms);
            }
            x
        }
    };
    x.shrink_to_fit();
    Waveform::new(x, SAMPLE_RATE)
}

/// Writes the source tree used by the toy synthesis preset under `root`:
/// `clean_train/` (four 1.024 s clips), `clean_test/` (two clips),
/// `noise_seen/` and `noise_unseen/` (one 4 s noise each).
pub fn write_toy_sources(root: &Path, seed: u64) -> Result<(), DatasetError> {
    let clip = 1.024;
    let clean_train = [
        ToyKind::Tone { f0: 140.0 },
        ToyKind::Tone { f0: 220.0 },
        ToyKind::Chirp,
        ToyKind::Tone { f0: 310.0 },
    ];
    let clean_test = [ToyKind::Tone { f0: 180.0 }, ToyKind::Chirp];
    let mut jobs: Vec<(String, ToyKind, f64, Option<f64>)> = Vec::new();
    for (i, k) in clean_train.iter().enumerate() {
        jobs.push((format!("clean_train/utt{i}.wav"), *k, clip, Some(TOY_CLEAN_PEAK)));
    }
    for (i, k) in clean_test.iter().enumerate() {
        jobs.push((format!("clean_test/utt{i}.wav"), *k, clip, Some(TOY_CLEAN_PEAK)));
    }
    jobs.push(("noise_seen/band_a.wav".into(), ToyKind::NoiseBand, 4.0, None));
    jobs.push(("noise_unseen/band_b.wav".into(), ToyKind::NoiseBand, 4.0, None));

    for (n, (rel, kind, dur, peak)) in jobs.into_iter().enumerate() {
        let path = root.join(rel);
        let dir = path.parent().expect("relative path has a parent");
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        let mut w = synth_toy_audio(kind, seed.wrapping_mul(1000).wrapping_add(n as u64), dur);
        if let Some(p) = peak {
            normalize_peak(&mut w.samples, p);
        }
        write_wav(&path, &w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_maps_to_sample_count() {
        assert_eq!(synth_toy_audio(ToyKind::Chirp, 0, 1.024).len(), 16384);
        assert_eq!(synth_toy_audio(ToyKind::NoiseBand, 0, 0.5).len(), 8000);
        assert!(synth_toy_audio(ToyKind::Chirp, 0, 0.0).is_empty());
    }

    #[test]
    fn deterministic_per_seed() {
        for kind in [ToyKind::Tone { f0: 200.0 }, ToyKind::Chirp, ToyKind::NoiseBand] {
            let a = synth_toy_audio(kind, 3, 0.25);
            assert_eq!(a, synth_toy_audio(kind, 3, 0.25));
            assert_ne!(a, synth_toy_audio(kind, 4, 0.25));
        }
    }

    #[test]
    fn levels() {
        let tone = synth_toy_audio(ToyKind::Tone { f0: 300.0 }, 1, 0.5);
        let peak = tone.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
        let noise = synth_toy_audio(ToyKind::NoiseBand, 1, 0.5);
        assert!((noise.power().sqrt() - 0.1).abs() < 1e-12);
    }
}
