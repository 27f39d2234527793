use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DistillError, TieBreak};
use crate::dataset::BandCheck;
use crate::tensor::Real;
use crate::unet::{load_checkpoint, Model};

/// Name of the sidecar describing a trained teacher inside its run
/// directory.
pub const TEACHER_META_FILE: &str = "teacher.json";

/// Teacher sidecar: identity, training SNR set, and checkpoint location
/// relative to the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherMeta {
    pub id: String,
    pub snr_set: Vec<f64>,
    pub checkpoint: PathBuf,
}

/// SNR coverage of one teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub snr_set: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(snr_set: Vec<f64>) -> Self {
        let lo = snr_set.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = snr_set.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { snr_set, lo, hi }
    }

    pub fn contains(&self, snr: f64) -> bool {
        self.lo <= snr && snr <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Index of the band responsible for `snr` among `bands` sorted by `lo`:
/// a band whose training set contains `snr` exactly; otherwise the single
/// band whose `[lo, hi]` contains it; otherwise the band with the nearest
/// midpoint, equal distances resolved by `tie`.
pub fn route(bands: &[Band], snr: f64, tie: TieBreak) -> Option<usize> {
    if bands.is_empty() || !snr.is_finite() {
        return None;
    }
    if let Some(i) = bands.iter().position(|b| b.snr_set.contains(&snr)) {
        return Some(i);
    }
    let mut inside = bands.iter().enumerate().filter(|(_, b)| b.contains(snr));
    if let (Some((i, _)), None) = (inside.next(), inside.next()) {
        return Some(i);
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, b) in bands.iter().enumerate() {
        let d = (snr - b.midpoint()).abs();
        let better = match tie {
            TieBreak::LowerSnr => d < best_d,
            TieBreak::HigherSnr => d <= best_d,
        };
        if better {
            best = i;
            best_d = d;
        }
    }
    Some(best)
}

pub struct TeacherEntry<F> {
    pub id: String,
    pub checkpoint: PathBuf,
    pub model: Model<F>,
    pub band: Band,
}

/// Frozen teachers sorted by the low edge of their SNR band.
pub struct TeacherBank<F> {
    entries: Vec<TeacherEntry<F>>,
    bands: Vec<Band>,
    tie: TieBreak,
}

impl<F: Real> TeacherBank<F> {
    /// Freezes every model, sorts by band, and checks band separation.
    pub fn new(mut entries: Vec<TeacherEntry<F>>, check: BandCheck, tie: TieBreak) -> Result<Self, DistillError> {
        if entries.is_empty() {
            return Err(DistillError::EmptyBank);
        }
        for e in &mut entries {
            if e.band.snr_set.is_empty() || e.band.snr_set.iter().any(|v| !v.is_finite()) {
                return Err(DistillError::Teacher {
                    teacher: e.id.clone(),
                    reason: "SNR set must be non-empty and finite".into(),
                });
            }
            e.model.freeze();
        }
        entries.sort_by(|a, b| a.band.lo.total_cmp(&b.band.lo).then_with(|| a.id.cmp(&b.id)));
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                let clash = match check {
                    BandCheck::Hull => a.band.lo <= b.band.hi && b.band.lo <= a.band.hi,
                    BandCheck::SetDisjoint => a.band.snr_set.iter().any(|v| b.band.snr_set.contains(v)),
                };
                if clash {
                    return Err(DistillError::Teacher {
                        teacher: b.id.clone(),
                        reason: format!(
                            "band [{}, {}] overlaps teacher `{}` [{}, {}]",
                            b.band.lo, b.band.hi, a.id, a.band.lo, a.band.hi
                        ),
                    });
                }
            }
        }
        let bands = entries.iter().map(|e| e.band.clone()).collect();
        Ok(Self { entries, bands, tie })
    }

    /// Loads every teacher whose sidecar sits in `dir` or one of its
    /// immediate subdirectories.
    pub fn load_dir(dir: &Path, check: BandCheck, tie: TieBreak) -> Result<Self, DistillError> {
        let mut metas = Vec::new();
        if dir.join(TEACHER_META_FILE).is_file() {
            metas.push(dir.join(TEACHER_META_FILE));
        }
        let listing = fs::read_dir(dir).map_err(|e| DistillError::io(dir, e))?;
        let mut subdirs: Vec<PathBuf> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        metas.extend(
            subdirs
                .iter()
                .map(|d| d.join(TEACHER_META_FILE))
                .filter(|p| p.is_file()),
        );
        let mut entries = Vec::with_capacity(metas.len());
        for path in metas {
            let text = fs::read_to_string(&path).map_err(|e| DistillError::io(&path, e))?;
            let meta: TeacherMeta = serde_json::from_str(&text).map_err(|e| DistillError::Teacher {
                teacher: path.display().to_string(),
                reason: format!("bad {TEACHER_META_FILE}: {e}"),
            })?;
            let base = path.parent().expect("sidecar has a parent");
            let checkpoint = base.join(&meta.checkpoint);
            let model = load_checkpoint(&checkpoint)?;
            entries.push(TeacherEntry {
                id: meta.id,
                checkpoint,
                model,
                band: Band::new(meta.snr_set),
            });
        }
        Self::new(entries, check, tie)
    }

    pub fn entries(&self) -> &[TeacherEntry<F>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie
    }
}

/// Index (into [`TeacherBank::entries`]) of the teacher supervising an
/// example at `snr_db`.
pub fn select_teacher<F: Real>(bank: &TeacherBank<F>, snr_db: f64) -> Result<usize, DistillError> {
    if !snr_db.is_finite() {
        return Err(DistillError::Config {
            field: "snr_db",
            reason: format!("must be finite, got {snr_db}"),
        });
    }
    route(&bank.bands, snr_db, bank.tie).ok_or(DistillError::EmptyBank)
}
