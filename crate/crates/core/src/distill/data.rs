use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::DistillError;
use crate::dataset::{rendered_path, DatasetError, Manifest, Split};
use crate::signal::{read_wav, SignalError};

/// One aligned (noisy, clean) pair from a rendered corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub noisy: Vec<f64>,
    pub clean: Arc<Vec<f64>>,
    pub snr_db: f64,
    /// File stem of the noise source.
    pub noise: String,
}

impl Example {
    pub fn len(&self) -> usize {
        self.noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSet {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl TrainSet {
    /// Train and validation splits of a rendered corpus.
    pub fn load(manifest: &Manifest, render_dir: &Path) -> Result<Self, DistillError> {
        Ok(Self {
            train: load_examples(manifest, render_dir, Split::Train)?,
            val: load_examples(manifest, render_dir, Split::Val)?,
        })
    }

    /// Every distinct SNR in the training split.
    pub fn train_snrs(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.train.iter().map(|e| e.snr_db).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

pub(crate) fn noise_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads the rendered mixtures of `split` from `render_dir` together with
/// their clean sources, in manifest order.
pub fn load_examples(manifest: &Manifest, render_dir: &Path, split: Split) -> Result<Vec<Example>, DistillError> {
    let records: Vec<_> = manifest.split(split).collect();
    let mut clean_paths: Vec<&PathBuf> = records.iter().map(|r| &r.clean_path).collect();
    clean_paths.sort();
    clean_paths.dedup();
    let cleans: HashMap<&PathBuf, Arc<Vec<f64>>> = clean_paths
        .par_iter()
        .map(|p| read_wav(p).map(|w| (*p, Arc::new(w.samples))))
        .collect::<Result<_, SignalError>>()?;
    records
        .par_iter()
        .map(|r| {
            let noisy = read_wav(rendered_path(render_dir, &r.id)).map_err(|source| DatasetError::Render {
                id: r.id.clone(),
                source,
            })?;
            let clean = Arc::clone(&cleans[&r.clean_path]);
            if clean.len() != noisy.len() {
                return Err(DistillError::Config {
                    field: "render_dir",
                    reason: format!(
                        "record `{}`: rendered length {} differs from clean length {}",
                        r.id,
                        noisy.len(),
                        clean.len()
                    ),
                });
            }
            Ok(Example {
                id: r.id.clone(),
                noisy: noisy.samples,
                clean,
                snr_db: r.snr_db,
                noise: noise_name(&r.noise_path),
            })
        })
        .collect()
}
