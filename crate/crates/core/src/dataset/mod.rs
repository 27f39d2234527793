//! Corpus synthesis: manifests of noisy/clean pairs at prescribed SNRs,
//! rendering to WAV, and a synthetic audio generator for desk-scale runs.
//!
//! Per-record seeds are derived from the corpus `master_seed` and the
//! record id with [`record_seed`]: the 64-bit FNV-1a hash of the id's UTF-8
//! bytes is XORed with `splitmix64(master_seed)` and passed through
//! `splitmix64` once more.

mod build;
mod manifest;
mod render;
mod toy;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SignalError;

pub use build::{build_corpus, build_student_corpus, build_teacher_corpora, build_test_corpus, list_wavs, BandCheck};
pub use manifest::{Manifest, Split, UtteranceRecord};
pub use render::{render, rendered_path, RenderEntry, RenderLog};
pub use toy::{synth_toy_audio, write_toy_sources, ToyKind, TOY_CLEAN_PEAK};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid corpus config `{corpus}`: {field}: {reason}")]
    Config {
        corpus: String,
        field: &'static str,
        reason: String,
    },
    #[error("teacher corpora `{first}` {first_band:?} and `{second}` {second_band:?} overlap")]
    BandOverlap {
        first: String,
        first_band: [f64; 2],
        second: String,
        second_band: [f64; 2],
    },
    #[error("corpus `{corpus}` has no WAV files under {field}")]
    EmptySources { corpus: String, field: &'static str },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}`: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("manifest line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("record `{id}`: {source}")]
    Render {
        id: String,
        #[source]
        source: SignalError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation failures (as opposed to I/O or audio-format problems).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Config { .. }
                | Self::BandOverlap { .. }
                | Self::EmptySources { .. }
                | Self::DuplicateId(_)
                | Self::InvalidRecord { .. }
        )
    }
}

/// How a corpus pairs clean utterances with noises and SNRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum Pairing {
    /// Every (clean, noise, snr) combination, `repeats` times with
    /// independent noise offsets.
    Grid { repeats: usize },
    /// `total_count` records with clean, noise and SNR drawn uniformly.
    Sampled { total_count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const TEST_ONLY: Self = Self {
        train: 0.0,
        val: 0.0,
        test: 1.0,
    };

    /// Fractions reproducing exact `train`/`val` counts out of `total`.
    pub fn from_counts(train: usize, val: usize, total: usize) -> Self {
        let n = total as f64;
        let (tr, va) = (train as f64 / n, val as f64 / n);
        Self {
            train: tr,
            val: va,
            test: 1.0 - tr - va,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub name: String,
    pub clean_dirs: Vec<PathBuf>,
    pub noise_dirs: Vec<PathBuf>,
    pub snr_set: Vec<f64>,
    pub pairing: Pairing,
    pub split: SplitFractions,
    pub master_seed: u64,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |field, reason: String| {
            Err(DatasetError::Config {
                corpus: self.name.clone(),
                field,
                reason,
            })
        };
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name", format!("must be a non-empty file name, got {:?}", self.name));
        }
        if self.snr_set.is_empty() {
            return bad("snr_set", "must not be empty".into());
        }
        if let Some(v) = self.snr_set.iter().find(|v| !v.is_finite()) {
            return bad("snr_set", format!("contains non-finite value {v}"));
        }
        let SplitFractions { train, val, test } = self.split;
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("split", "fractions must lie in [0, 1]".into());
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return bad("split", format!("fractions sum to {}, expected 1", train + val + test));
        }
        match self.pairing {
            Pairing::Grid { repeats: 0 } => bad("pairing.repeats", "must be at least 1".into()),
            Pairing::Sampled { total_count: 0 } => bad("pairing.total_count", "must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// `[min, max]` of the SNR set.
    pub fn snr_hull(&self) -> [f64; 2] {
        let lo = self.snr_set.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.snr_set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [lo, hi]
    }
}

/// Everything `synth` builds: one corpus per teacher, the student corpus,
/// and the test corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub teachers: Vec<CorpusConfig>,
    #[serde(default)]
    pub band_check: BandCheck,
    pub student: CorpusConfig,
    pub test: CorpusConfig,
}

impl SynthConfig {
    /// Full-size recipe over a source tree with `clean_train/`,
    /// `clean_test/`, `noise_seen/` (five noises) and `noise_unseen/`
    /// (four noises) under `root`.
    ///
    /// Teacher SNR sets interleave at the edges ({−10, …, 1} and {0, …, 9}),
    /// so this preset validates set disjointness rather than hulls.
    pub fn paper(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let clean_train = vec![root.join("clean_train")];
        let seen = vec![root.join("noise_seen")];
        let teacher_sets: [&[f64]; 4] = [
            &[-20.0, -17.0, -13.0, -11.0],
            &[-10.0, -7.0, -3.0, 1.0],
            &[0.0, 3.0, 7.0, 9.0],
            &[10.0, 13.0, 17.0, 20.0],
        ];
        let teachers = teacher_sets
            .iter()
            .enumerate()
            .map(|(i, set)| CorpusConfig {
                name: format!("teacher{}", i + 1),
                clean_dirs: clean_train.clone(),
                noise_dirs: seen.clone(),
                snr_set: set.to_vec(),
                pairing: Pairing::Grid { repeats: 1 },
                split: SplitFractions::from_counts(18_000, 1_000, 19_000),
                master_seed: 101 + i as u64,
            })
            .collect();
        Self {
            teachers,
            band_check: BandCheck::SetDisjoint,
            student: CorpusConfig {
                name: "student".into(),
                clean_dirs: clean_train,
                noise_dirs: seen.clone(),
                snr_set: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
                pairing: Pairing::Grid { repeats: 1 },
                split: SplitFractions::from_counts(22_000, 1_750, 23_750),
                master_seed: 201,
            },
            test: CorpusConfig {
                name: "test".into(),
                clean_dirs: vec![root.join("clean_test")],
                noise_dirs: vec![root.join("noise_seen"), root.join("noise_unseen")],
                snr_set: (-4..=4).map(|k| 5.0 * k as f64).collect(),
                pairing: Pairing::Grid { repeats: 1 },
                split: SplitFractions::TEST_ONLY,
                master_seed: 301,
            },
        }
    }

    /// CI-sized recipe over the tree written by [`write_toy_sources`]:
    /// two teachers at {−10, −5} and {5, 10} dB with 16 utterances each,
    /// a 20-utterance student corpus and a 36-utterance test corpus.
    pub fn toy(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let clean_train = vec![root.join("clean_train")];
        let seen = vec![root.join("noise_seen")];
        let teacher = |i: usize, set: &[f64]| CorpusConfig {
            name: format!("teacher{i}"),
            clean_dirs: clean_train.clone(),
            noise_dirs: seen.clone(),
            snr_set: set.to_vec(),
            pairing: Pairing::Grid { repeats: 2 },
            split: SplitFractions::from_counts(12, 4, 16),
            master_seed: 11 + i as u64,
        };
        Self {
            teachers: vec![teacher(1, &[-10.0, -5.0]), teacher(2, &[5.0, 10.0])],
            band_check: BandCheck::Hull,
            student: CorpusConfig {
                name: "student".into(),
                clean_dirs: clean_train.clone(),
                noise_dirs: seen.clone(),
                snr_set: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
                pairing: Pairing::Grid { repeats: 1 },
                split: SplitFractions::from_counts(15, 5, 20),
                master_seed: 21,
            },
            test: CorpusConfig {
                name: "test".into(),
                clean_dirs: vec![root.join("clean_test")],
                noise_dirs: vec![root.join("noise_seen"), root.join("noise_unseen")],
                snr_set: (-4..=4).map(|k| 5.0 * k as f64).collect(),
                pairing: Pairing::Grid { repeats: 1 },
                split: SplitFractions::TEST_ONLY,
                master_seed: 31,
            },
        }
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for the record `id` of a corpus with `master_seed`.
pub fn record_seed(id: &str, master_seed: u64) -> u64 {
    splitmix64(fnv1a64(id.as_bytes()) ^ splitmix64(master_seed))
}
