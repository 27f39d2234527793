use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{record_seed, splitmix64, CorpusConfig, DatasetError, Manifest, Pairing, Split, UtteranceRecord};

/// Separation rule enforced between teacher SNR bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandCheck {
    /// `[min, max]` intervals of the SNR sets must not intersect.
    #[default]
    Hull,
    /// The SNR sets must share no value; hulls may interleave.
    SetDisjoint,
}

const SPLIT_SALT: u64 = 0x5EED_5B11_7000_0001;

/// All `*.wav` files under `dir`, recursively, sorted by path.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| DatasetError::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| DatasetError::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn sources(cfg: &CorpusConfig, dirs: &[PathBuf], field: &'static str) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files = Vec::new();
    for d in dirs {
        files.extend(list_wavs(d)?);
    }
    if files.is_empty() {
        return Err(DatasetError::EmptySources {
            corpus: cfg.name.clone(),
            field,
        });
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Assigns exactly `round(n·train)` records to train and `round(n·val)` to
/// val, ranking records by a hash of `(id, master_seed)`. For a fixed
/// corpus configuration the assignment never changes between runs and
/// does not depend on record order.
fn assign_splits(records: &mut [UtteranceRecord], cfg: &CorpusConfig) {
    let n = records.len();
    let n_train = ((n as f64 * cfg.split.train).round() as usize).min(n);
    let n_val = ((n as f64 * cfg.split.val).round() as usize).min(n - n_train);
    let mut order: Vec<(u64, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (splitmix64(record_seed(&r.id, cfg.master_seed) ^ SPLIT_SALT), i))
        .collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| records[a.1].id.cmp(&records[b.1].id)));
    for (rank, &(_, i)) in order.iter().enumerate() {
        records[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
}

/// Builds the manifest for one corpus.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<Manifest, DatasetError> {
    cfg.validate()?;
    let clean = sources(cfg, &cfg.clean_dirs, "clean_dirs")?;
    let noise = sources(cfg, &cfg.noise_dirs, "noise_dirs")?;
    let record = |id: String, c: &PathBuf, nz: &PathBuf, snr: f64| UtteranceRecord {
        noise_offset_seed: record_seed(&id, cfg.master_seed),
        id,
        clean_path: c.clone(),
        noise_path: nz.clone(),
        snr_db: snr,
        split: Split::Test,
    };
    let mut records = Vec::new();
    match cfg.pairing {
        Pairing::Grid { repeats } => {
            for c in &clean {
                for nz in &noise {
                    for &snr in &cfg.snr_set {
                        for r in 0..repeats {
                            let mut id = format!("{}_{}_{}dB", stem(c), stem(nz), snr);
                            if repeats > 1 {
                                id.push_str(&format!("_r{r}"));
                            }
                            records.push(record(id, c, nz, snr));
                        }
                    }
                }
            }
        }
        Pairing::Sampled { total_count } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
            for k in 0..total_count {
                let c = &clean[rng.random_range(0..clean.len())];
                let nz = &noise[rng.random_range(0..noise.len())];
                let snr = cfg.snr_set[rng.random_range(0..cfg.snr_set.len())];
                let id = format!("s{k:06}_{}_{}_{}dB", stem(c), stem(nz), snr);
                records.push(record(id, c, nz, snr));
            }
        }
    }
    let mut manifest = Manifest::new(records)?;
    assign_splits(&mut manifest.records, cfg);
    Ok(manifest)
}

fn bands_conflict(a: &CorpusConfig, b: &CorpusConfig, check: BandCheck) -> bool {
    match check {
        BandCheck::Hull => {
            let ([alo, ahi], [blo, bhi]) = (a.snr_hull(), b.snr_hull());
            alo <= bhi && blo <= ahi
        }
        BandCheck::SetDisjoint => a.snr_set.iter().any(|x| b.snr_set.contains(x)),
    }
}

/// One manifest per teacher, after checking every pair of SNR bands
/// against `check`.
pub fn build_teacher_corpora(configs: &[CorpusConfig], check: BandCheck) -> Result<Vec<Manifest>, DatasetError> {
    for c in configs {
        c.validate()?;
    }
    for (i, a) in configs.iter().enumerate() {
        for b in &configs[i + 1..] {
            if bands_conflict(a, b, check) {
                return Err(DatasetError::BandOverlap {
                    first: a.name.clone(),
                    first_band: a.snr_hull(),
                    second: b.name.clone(),
                    second_band: b.snr_hull(),
                });
            }
        }
    }
    configs.iter().map(build_corpus).collect()
}

pub fn build_student_corpus(cfg: &CorpusConfig) -> Result<Manifest, DatasetError> {
    build_corpus(cfg)
}

/// Grid over clean × noise × SNR with every record in the test split.
pub fn build_test_corpus(cfg: &CorpusConfig) -> Result<Manifest, DatasetError> {
    let mut m = build_corpus(cfg)?;
    for r in &mut m.records {
        r.split = Split::Test;
    }
    Ok(m)
}
