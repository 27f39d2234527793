use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::{DatasetError, Manifest};
use crate::signal::{mix_at_snr, read_wav, write_wav, SignalError, Waveform};

/// Mixing outcome for one rendered record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderEntry {
    pub id: String,
    pub gain: f64,
    pub noise_offset: usize,
    /// SNR of the unquantized mixture.
    pub measured_snr_db: f64,
    /// Samples saturated by 16-bit quantization.
    pub clipped_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RenderLog {
    pub entries: Vec<RenderEntry>,
}

impl RenderLog {
    pub fn clipped_records(&self) -> usize {
        self.entries.iter().filter(|e| e.clipped_samples > 0).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).expect("render entries serialize");
        }
        let bytes = w.into_inner().expect("in-memory writer");
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| DatasetError::io(path, e))
    }
}

/// Location of the noisy mixture for record `id`.
pub fn rendered_path(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join(format!("{id}.wav"))
}

fn saturates(v: f64) -> bool {
    let q = (v * 32768.0).round();
    !(-32768.0..=32767.0).contains(&q)
}

/// Writes every record's noisy mixture to `out_dir/<id>.wav`.
///
/// Each distinct source file is decoded once. Output bytes depend only on
/// the manifest and the sources, so rendering twice yields identical files.
pub fn render(manifest: &Manifest, out_dir: &Path) -> Result<RenderLog, DatasetError> {
    manifest.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| DatasetError::io(out_dir, e))?;

    let paths: BTreeSet<&Path> = manifest
        .records
        .iter()
        .flat_map(|r| [r.clean_path.as_path(), r.noise_path.as_path()])
        .collect();
    let loaded: Vec<(&Path, Result<Waveform, SignalError>)> =
        paths.into_par_iter().map(|p| (p, read_wav(p))).collect();
    let mut audio = HashMap::with_capacity(loaded.len());
    let mut failed = HashMap::new();
    for (p, r) in loaded {
        match r {
            Ok(w) => {
                audio.insert(p, w);
            }
            Err(e) => {
                failed.insert(p, e);
            }
        }
    }
    if !failed.is_empty() {
        let r = manifest
            .records
            .iter()
            .find(|r| failed.contains_key(r.clean_path.as_path()) || failed.contains_key(r.noise_path.as_path()))
            .expect("every source belongs to a record");
        let key = if failed.contains_key(r.clean_path.as_path()) {
            r.clean_path.as_path()
        } else {
            r.noise_path.as_path()
        };
        return Err(DatasetError::Render {
            id: r.id.clone(),
            source: failed.remove(key).expect("present"),
        });
    }

    let results: Vec<Result<RenderEntry, DatasetError>> = manifest
        .records
        .par_iter()
        .map(|r| {
            let err = |source| DatasetError::Render {
                id: r.id.clone(),
                source,
            };
            let clean = &audio[r.clean_path.as_path()];
            let noise = &audio[r.noise_path.as_path()];
            let mix = mix_at_snr(clean, noise, r.snr_db, r.noise_offset_seed).map_err(err)?;
            let clipped_samples = mix.noisy.samples.iter().filter(|&&v| saturates(v)).count();
            write_wav(rendered_path(out_dir, &r.id), &mix.noisy).map_err(err)?;
            Ok(RenderEntry {
                id: r.id.clone(),
                gain: mix.gain,
                noise_offset: mix.noise_offset,
                measured_snr_db: mix.measured_snr_db(clean),
                clipped_samples,
            })
        })
        .collect();
    let entries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let log = RenderLog { entries };
    if log.clipped_records() > 0 {
        log::warn!(
            "{} of {} rendered mixtures saturated 16-bit range",
            log.clipped_records(),
            log.entries.len()
        );
    }
    Ok(log)
}
