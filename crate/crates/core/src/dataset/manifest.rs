use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DatasetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// One noisy/clean pair: `clean_path` mixed with a segment of
/// `noise_path` at `snr_db`, the segment chosen by `noise_offset_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub snr_db: f64,
    pub noise_offset_seed: u64,
    pub split: Split,
}

/// Ordered record set, stored as JSON Lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self, DatasetError> {
        let m = Self { records };
        m.validate()?;
        Ok(m)
    }

    /// Ids unique and non-empty, SNRs finite.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if r.id.is_empty() || r.id.contains(['/', '\\']) {
                return Err(DatasetError::InvalidRecord {
                    id: r.id.clone(),
                    reason: "id must be a non-empty file name".into(),
                });
            }
            if !r.snr_db.is_finite() {
                return Err(DatasetError::InvalidRecord {
                    id: r.id.clone(),
                    reason: format!("snr_db must be finite, got {}", r.snr_db),
                });
            }
            if !seen.insert(r.id.as_str()) {
                return Err(DatasetError::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Distinct SNRs in ascending order.
    pub fn snrs(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.records.iter().map(|r| r.snr_db).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DatasetError> {
        Self::from_lines(text.lines().map(|l| Ok::<_, std::io::Error>(l.to_owned())), Path::new("<string>"))
    }

    fn from_lines<I>(lines: I, path: &Path) -> Result<Self, DatasetError>
    where
        I: Iterator<Item = Result<String, std::io::Error>>,
    {
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| DatasetError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let f = File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_lines(BufReader::new(f).lines(), path)
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| DatasetError::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| DatasetError::io(path, e))
    }
}
