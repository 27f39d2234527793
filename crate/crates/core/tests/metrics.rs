use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use snrd::dataset::{synth_toy_audio, ToyKind};
use snrd::metrics::{
    aggregate, resample_16k_to_10k, si_sdr, si_sdr_unclamped, stoi, stoi_at_rate, Condition, MetricError,
    MetricRecord,
};
use snrd::signal::{mix_at_snr, read_wav_with_rate};

#[derive(Deserialize)]
struct Case {
    name: String,
    rate: u32,
    stoi: f64,
}

#[derive(Deserialize)]
struct Probe {
    input: Vec<f64>,
    output: Vec<f64>,
}

#[derive(Deserialize)]
struct Expected {
    cases: Vec<Case>,
    resample_probe: Probe,
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/stoi")
}

fn expected() -> Expected {
    serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("expected.json")).unwrap()).unwrap()
}

#[test]
fn stoi_matches_reference_fixtures() {
    let exp = expected();
    assert!(exp.cases.len() >= 5);
    for c in &exp.cases {
        let load = |suffix: &str| {
            read_wav_with_rate(fixture_dir().join(format!("{}_{suffix}.wav", c.name)), Some(c.rate))
                .unwrap()
                .samples
        };
        let (clean, est) = (load("clean"), load("est"));
        let got = stoi_at_rate(&est, &clean, c.rate).unwrap();
        assert!(
            (got - c.stoi).abs() <= 1e-4,
            "{}: got {got}, reference {} (diff {:.3e})",
            c.name,
            c.stoi,
            (got - c.stoi).abs()
        );
    }
}

#[test]
fn resampler_matches_reference() {
    let p = expected().resample_probe;
    let got = resample_16k_to_10k(&p.input);
    assert_eq!(got.len(), p.output.len());
    for (i, (a, b)) in got.iter().zip(&p.output).enumerate() {
        assert!((a - b).abs() < 1e-12, "sample {i}: {a} vs {b}");
    }
}

#[test]
fn stoi_of_identical_signals_is_one() {
    for (seed, kind) in [(1, ToyKind::Tone { f0: 150.0 }), (2, ToyKind::Chirp), (3, ToyKind::NoiseBand)] {
        let x = synth_toy_audio(kind, seed, 1.2).samples;
        let s = stoi(&x, &x).unwrap();
        assert!((s - 1.0).abs() <= 1e-6, "{kind:?}: {s}");
    }
}

#[test]
fn stoi_prefers_higher_snr() {
    let (mut hi, mut lo) = (0.0, 0.0);
    for seed in 0..100u64 {
        let clean = synth_toy_audio(ToyKind::Tone { f0: 120.0 + seed as f64 }, seed, 1.0);
        let noise = synth_toy_audio(ToyKind::NoiseBand, 1000 + seed, 2.0);
        let at = |snr| mix_at_snr(&clean, &noise, snr, seed).unwrap().noisy.samples;
        hi += stoi(&at(10.0), &clean.samples).unwrap();
        lo += stoi(&at(-10.0), &clean.samples).unwrap();
    }
    assert!(hi / 100.0 > lo / 100.0, "mean stoi at +10 dB {} vs -10 dB {}", hi / 100.0, lo / 100.0);
}

#[test]
fn stoi_errors() {
    let short = vec![0.1; 3000];
    assert!(matches!(stoi(&short, &short), Err(MetricError::TooShort { .. })));
    let silent = vec![0.0; 20000];
    assert_eq!(stoi(&short[..1].repeat(20000), &silent), Err(MetricError::Silent));
    assert!(matches!(stoi(&[0.0; 10], &[0.0; 11]), Err(MetricError::LengthMismatch(10, 11))));
    assert!(matches!(stoi_at_rate(&short, &short, 8000), Err(MetricError::SampleRate(8000))));
}

#[test]
fn si_sdr_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noisy: Vec<f64> = x.iter().map(|v| v + 0.1 * rng.random_range(-1.0..1.0)).collect();
    let base = si_sdr_unclamped(&noisy, &x).unwrap();
    for alpha in [0.1, 0.5, 2.0, 10.0] {
        let scaled: Vec<f64> = noisy.iter().map(|v| alpha * v).collect();
        let v = si_sdr_unclamped(&scaled, &x).unwrap();
        assert!((v - base).abs() <= 1e-9, "alpha {alpha}: {v} vs {base}");
        let copy: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        assert_eq!(si_sdr(&copy, &x).unwrap(), si_sdr(&x, &x).unwrap());
    }
}

#[test]
fn si_sdr_orthogonal_twenty_db() {
    let x: Vec<f64> = [3.0, -3.0, 3.0, -3.0].repeat(100);
    let n: Vec<f64> = [0.3, 0.3, -0.3, -0.3].repeat(100);
    let est: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
    assert!((si_sdr(&est, &x).unwrap() - 20.0).abs() <= 1e-9);
}

fn record() -> impl Strategy<Value = MetricRecord> {
    (0usize..3, -2i32..=2, any::<bool>(), -1.0f64..1.0, -30.0f64..30.0).prop_map(|(n, s, e, stoi, sisdr)| {
        MetricRecord {
            noise: format!("n{n}"),
            snr_db: 5.0 * s as f64,
            condition: if e { Condition::Enhanced } else { Condition::Noisy },
            stoi,
            sisdr,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregate_is_permutation_invariant(records in prop::collection::vec(record(), 1..40), seed in any::<u64>()) {
        let mut shuffled = records.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(aggregate(&records).unwrap(), aggregate(&shuffled).unwrap());
    }

    #[test]
    fn stoi_is_bounded(seed in any::<u64>(), snr in -20.0f64..20.0) {
        let clean = synth_toy_audio(ToyKind::Chirp, seed, 0.8);
        let noise = synth_toy_audio(ToyKind::NoiseBand, seed ^ 1, 0.8);
        let noisy = mix_at_snr(&clean, &noise, snr, seed).unwrap().noisy.samples;
        let s = stoi(&noisy, &clean.samples).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s), "{}", s);
    }
}
