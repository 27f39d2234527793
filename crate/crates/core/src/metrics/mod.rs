//! Objective quality metrics: STOI for intelligibility and SI-SDR for
//! fidelity, plus per-condition aggregation into report tables.

mod stoi;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stoi::{resample_16k_to_10k, stoi, stoi_at_rate, third_octave_bands, STOI_RATE};

/// SI-SDR values are clamped to `±SISDR_CLAMP_DB`.
pub const SISDR_CLAMP_DB: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("signals differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference signal is all zeros")]
    ZeroReference,
    #[error("signal is silent after removing frames more than 40 dB below the loudest")]
    Silent,
    #[error("only {frames} frames remain after silence removal; STOI needs at least {needed}")]
    TooShort { frames: usize, needed: usize },
    #[error("unsupported sample rate {0} Hz")]
    SampleRate(u32),
    #[error("nothing to aggregate")]
    Empty,
    #[error("report I/O: {0}")]
    Io(String),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// SI-SDR in dB before clamping; `+inf` for a zero residual.
pub fn si_sdr_unclamped(est: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    if est.len() != reference.len() {
        return Err(MetricError::LengthMismatch(est.len(), reference.len()));
    }
    let rr = dot(reference, reference);
    if rr == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    let scale = dot(est, reference) / rr;
    let (mut target, mut residual) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let s = scale * r;
        target += s * s;
        residual += (e - s) * (e - s);
    }
    Ok(10.0 * (target / residual).log10())
}

/// Scale-invariant signal-to-distortion ratio of `est` against
/// `reference`, clamped to `[−60, 60]` dB.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    let v = si_sdr_unclamped(est, reference)?;
    Ok(if v.is_nan() {
        -SISDR_CLAMP_DB
    } else {
        v.clamp(-SISDR_CLAMP_DB, SISDR_CLAMP_DB)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Noisy,
    Enhanced,
}

/// Scores of one evaluated utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub noise: String,
    pub snr_db: f64,
    pub condition: Condition,
    pub stoi: f64,
    pub sisdr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Seen {
    Seen,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub noise: String,
    pub snr_db: f64,
    pub condition: Condition,
    pub mean_stoi: f64,
    pub mean_sisdr: f64,
    pub count: usize,
    pub snr_tag: Option<Seen>,
    pub noise_tag: Option<Seen>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverallRow {
    pub condition: Condition,
    pub mean_stoi: f64,
    pub mean_sisdr: f64,
    pub count: usize,
}

/// Per-(noise, SNR, condition) means in Table-1 order, plus overall
/// means per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub overall: Vec<OverallRow>,
}

/// Mean that does not depend on input order: values are summed in
/// ascending order.
fn ordered_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct GroupKey {
    noise: String,
    snr: OrdF64,
    condition: Condition,
}

struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Groups records by (noise, SNR, condition) and averages each group.
/// Rows are ordered by noise, then SNR, with noisy before enhanced.
pub fn aggregate(records: &[MetricRecord]) -> Result<MetricReport, MetricError> {
    if records.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut groups: BTreeMap<GroupKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut by_condition: BTreeMap<Condition, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups
            .entry(GroupKey {
                noise: r.noise.clone(),
                snr: OrdF64(r.snr_db),
                condition: r.condition,
            })
            .or_default();
        g.0.push(r.stoi);
        g.1.push(r.sisdr);
        let c = by_condition.entry(r.condition).or_default();
        c.0.push(r.stoi);
        c.1.push(r.sisdr);
    }
    let rows = groups
        .into_iter()
        .map(|(k, (stoi, sisdr))| MetricRow {
            noise: k.noise,
            snr_db: k.snr.0,
            condition: k.condition,
            count: stoi.len(),
            mean_stoi: ordered_mean(stoi),
            mean_sisdr: ordered_mean(sisdr),
            snr_tag: None,
            noise_tag: None,
        })
        .collect();
    let overall = by_condition
        .into_iter()
        .map(|(condition, (stoi, sisdr))| OverallRow {
            condition,
            count: stoi.len(),
            mean_stoi: ordered_mean(stoi),
            mean_sisdr: ordered_mean(sisdr),
        })
        .collect();
    Ok(MetricReport { rows, overall })
}

impl MetricReport {
    /// Marks each row's SNR and noise as seen or unseen in training.
    pub fn tag(&mut self, train_snrs: &[f64], train_noises: &[String]) {
        let tag = |seen: bool| if seen { Seen::Seen } else { Seen::Unseen };
        for r in &mut self.rows {
            r.snr_tag = Some(tag(train_snrs.contains(&r.snr_db)));
            r.noise_tag = Some(tag(train_noises.contains(&r.noise)));
        }
    }

    pub fn overall(&self, condition: Condition) -> Option<&OverallRow> {
        self.overall.iter().find(|o| o.condition == condition)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("rows serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is UTF-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MetricError> {
        std::fs::write(path, self.to_csv()).map_err(|e| MetricError::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(noise: &str, snr: f64, condition: Condition, stoi: f64) -> MetricRecord {
        MetricRecord {
            noise: noise.into(),
            snr_db: snr,
            condition,
            stoi,
            sisdr: 10.0 * stoi,
        }
    }

    #[test]
    fn si_sdr_identity_and_scaled_copy_clamp() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(si_sdr(&x, &x).unwrap(), 60.0);
        let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        assert_eq!(si_sdr(&half, &x).unwrap(), 60.0);
    }

    #[test]
    fn si_sdr_orthogonal_noise() {
        // x·n = 0 exactly and ‖x‖²/‖n‖² = 100
        let x: Vec<f64> = [10.0, 10.0].repeat(8);
        let n: Vec<f64> = [1.0, -1.0].repeat(8);
        let est: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert!((si_sdr(&est, &x).unwrap() - 20.0).abs() <= 1e-9);
    }

    #[test]
    fn si_sdr_errors() {
        assert_eq!(si_sdr(&[1.0], &[0.0]), Err(MetricError::ZeroReference));
        assert_eq!(si_sdr(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1)));
        assert_eq!(si_sdr(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), -60.0);
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[rec("babble", 0.0, Condition::Noisy, 0.7)]).unwrap();
        assert_eq!(one.rows.len(), 1);
        assert_eq!(one.rows[0].mean_stoi, 0.7);
        assert_eq!(one.rows[0].count, 1);

        let two = aggregate(&[
            rec("babble", 0.0, Condition::Noisy, 0.4),
            rec("babble", 0.0, Condition::Noisy, 0.6),
        ])
        .unwrap();
        assert_eq!(two.rows.len(), 1);
        assert!((two.rows[0].mean_stoi - 0.5).abs() < 1e-15);
        assert_eq!(two.rows[0].count, 2);

        let mut grid = Vec::new();
        for noise in ["b", "a"] {
            for snr in [5.0, -5.0, 0.0] {
                for c in [Condition::Enhanced, Condition::Noisy] {
                    grid.push(rec(noise, snr, c, 0.5));
                }
            }
        }
        let r = aggregate(&grid).unwrap();
        assert_eq!(r.rows.len(), 12);
        assert_eq!((r.rows[0].noise.as_str(), r.rows[0].snr_db, r.rows[0].condition), ("a", -5.0, Condition::Noisy));
        assert_eq!(r.rows[1].condition, Condition::Enhanced);
        assert_eq!(r.rows[11].noise, "b");
        assert_eq!(r.overall(Condition::Noisy).unwrap().count, 6);
        assert_eq!(aggregate(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn csv_layout_and_tags() {
        let mut r = aggregate(&[
            rec("cafe", -15.0, Condition::Noisy, 0.25),
            rec("cafe", -10.0, Condition::Enhanced, 0.5),
        ])
        .unwrap();
        r.tag(&[-10.0, 0.0], &["babble".to_string()]);
        assert_eq!(
            r.to_csv(),
            "noise,snr_db,condition,mean_stoi,mean_sisdr,count,snr_tag,noise_tag\n\
             cafe,-15.0,noisy,0.25,2.5,1,unseen,unseen\n\
             cafe,-10.0,enhanced,0.5,5.0,1,seen,unseen\n"
        );
    }
}
