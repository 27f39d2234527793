use rayon::prelude::*;

use super::{DistillError, Example};
use crate::metrics::{aggregate, si_sdr, stoi, Condition, MetricRecord, MetricReport};
use crate::signal::Waveform;
use crate::tensor::{Real, Tensor};
use crate::unet::Model;

/// Windows enhanced per forward pass.
const WINDOW_BATCH: usize = 8;

/// What produces the enhanced signal during evaluation.
#[derive(Clone, Copy)]
pub enum Enhancer<'a, F> {
    Model(&'a Model<F>),
    /// Pass-through: the noisy input is reported as the enhanced output.
    Identity,
}

/// Enhances `samples` in non-overlapping windows of `window` samples. The
/// last window is zero-padded and the output truncated to the input length.
pub fn enhance_samples<F: Real>(model: &Model<F>, samples: &[f64], window: usize) -> Result<Vec<f64>, DistillError> {
    let divisor = model.arch().time_divisor();
    if window == 0 || !window.is_multiple_of(divisor) {
        return Err(DistillError::Config {
            field: "window",
            reason: format!("{window} is not a positive multiple of {divisor}"),
        });
    }
    let n_windows = samples.len().div_ceil(window);
    let mut out = Vec::with_capacity(n_windows * window);
    for first in (0..n_windows).step_by(WINDOW_BATCH) {
        let count = WINDOW_BATCH.min(n_windows - first);
        let mut data = vec![F::zero(); count * window];
        let start = first * window;
        let end = samples.len().min(start + count * window);
        for (d, &s) in data.iter_mut().zip(&samples[start..end]) {
            *d = F::of(s);
        }
        let x = Tensor::from_vec(vec![count, 1, window], data)?;
        let y = model.infer(&x)?;
        out.extend(y.data().iter().map(|v| v.as_f64()));
    }
    out.truncate(samples.len());
    Ok(out)
}

/// Enhances a whole waveform; no SNR information is used.
pub fn enhance<F: Real>(model: &Model<F>, input: &Waveform, window: usize) -> Result<Waveform, DistillError> {
    Ok(Waveform::new(
        enhance_samples(model, &input.samples, window)?,
        input.sample_rate,
    ))
}

/// Noisy and enhanced STOI / SI-SDR for every example, aggregated per
/// (noise, SNR) and tagged against the training SNR and noise sets.
pub fn evaluate<F: Real>(
    enhancer: Enhancer<'_, F>,
    examples: &[Example],
    window: usize,
    train_snrs: &[f64],
    train_noises: &[String],
) -> Result<MetricReport, DistillError> {
    if examples.is_empty() {
        return Err(crate::metrics::MetricError::Empty.into());
    }
    let per_example: Vec<[MetricRecord; 2]> = examples
        .par_iter()
        .map(|ex| {
            let enhanced = match enhancer {
                Enhancer::Model(m) => enhance_samples(m, &ex.noisy, window)?,
                Enhancer::Identity => ex.noisy.clone(),
            };
            let record = |condition, est: &[f64]| -> Result<MetricRecord, DistillError> {
                Ok(MetricRecord {
                    noise: ex.noise.clone(),
                    snr_db: ex.snr_db,
                    condition,
                    stoi: stoi(est, &ex.clean)?,
                    sisdr: si_sdr(est, &ex.clean)?,
                })
            };
            Ok([
                record(Condition::Noisy, &ex.noisy)?,
                record(Condition::Enhanced, &enhanced)?,
            ])
        })
        .collect::<Result<_, DistillError>>()?;
    let records: Vec<MetricRecord> = per_example.into_iter().flatten().collect();
    let mut report = aggregate(&records)?;
    report.tag(train_snrs, train_noises);
    Ok(report)
}
