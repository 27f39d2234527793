//! Short-time objective intelligibility.
//!
//! Numerically follows the widely used `pystoi` reference: an
//! Octave-compatible Kaiser-windowed polyphase resampler to 10 kHz,
//! silent-frame removal with overlap-add reconstruction, 512-point spectra
//! of 256-sample Hann frames at 50 % overlap, 15 one-third-octave bands
//! from 150 Hz, and clipped normalized correlations over sliding
//! 30-frame segments.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::MetricError;

/// Internal analysis rate.
pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Resampling filter for `up/down = 5/8`: the Octave `resample` design
/// (60 dB Kaiser window, cutoff `1/(2·max(up, down))`, roll-off a tenth of
/// that), normalized to unit sum and scaled by `up`.
fn resample_filter() -> &'static [f64] {
    static FILTER: OnceLock<Vec<f64>> = OnceLock::new();
    FILTER.get_or_init(|| {
        let (up, down) = (5.0f64, 8.0f64);
        let cutoff = 1.0 / (2.0 * up.max(down));
        let roll_off = cutoff / 10.0;
        let rejection_db = 60.0;
        let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
        let beta = 0.1102 * (rejection_db - 8.7);
        let m = (2 * half + 1) as f64;
        let i0_beta = bessel_i0(beta);
        let h: Vec<f64> = (-half..=half)
            .enumerate()
            .map(|(n, t)| {
                let r = 2.0 * n as f64 / (m - 1.0) - 1.0;
                let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                kaiser * 2.0 * up * cutoff * sinc(2.0 * cutoff * t as f64)
            })
            .collect();
        let sum: f64 = h.iter().sum();
        h.iter().map(|v| v / sum * up).collect()
    })
}

/// Polyphase 16 kHz → 10 kHz conversion with output length
/// `ceil(5·n/8)`, aligned like `scipy.signal.resample_poly`.
pub fn resample_16k_to_10k(x: &[f64]) -> Vec<f64> {
    let (up, down) = (5usize, 8usize);
    let h = resample_filter();
    let half_len = (h.len() - 1) / 2;
    let pre_pad = down - half_len % down;
    let pre_remove = (half_len + pre_pad) / down;
    let n_out = (x.len() * up).div_ceil(down);
    (0..n_out)
        .map(|m| {
            // padded-filter index of input i is pos - i·up
            let pos = (m + pre_remove) * down;
            let mut acc = 0.0;
            let mut i = pos.saturating_sub(pre_pad + h.len() - 1).div_ceil(up);
            while i < x.len() && i * up <= pos {
                let k = pos - i * up;
                if k >= pre_pad && k - pre_pad < h.len() {
                    acc += x[i] * h[k - pre_pad];
                }
                i += 1;
            }
            acc
        })
        .collect()
}

/// `np.hanning(n + 2)[1:-1]`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i + 1) as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames of both signals whose clean-signal energy is more than
/// 40 dB below the loudest clean frame, then overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    if starts.is_empty() {
        return Err(MetricError::TooShort {
            frames: 0,
            needed: SEGMENT,
        });
    }
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let norm = x[s..s + FRAME].iter().zip(w).map(|(v, wi)| (v * wi) * (v * wi)).sum::<f64>().sqrt();
            20.0 * (norm + EPS).log10()
        })
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energy)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return Err(MetricError::Silent);
    }
    let out_len = (kept.len() - 1) * HOP + FRAME;
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (k, &s) in kept.iter().enumerate() {
        let o = k * HOP;
        for j in 0..FRAME {
            xs[o + j] += w[j] * x[s + j];
            ys[o + j] += w[j] * y[s + j];
        }
    }
    Ok((xs, ys))
}

/// Band edges `[lo, hi)` as FFT bin indices for the 15 one-third-octave
/// bands at 10 kHz with a 512-point transform.
pub fn third_octave_bands() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2)
        .map(|k| k as f64 * STOI_RATE as f64 / NFFT as f64)
        .collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, f) in freqs.iter().enumerate() {
            if (f - target).powi(2) < (freqs[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Third-octave band magnitudes, `[band][frame]`.
fn band_envelopes(x: &[f64], w: &[f64], fft: &Arc<dyn Fft<f64>>, bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); BANDS];
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for s in frame_starts(x.len()) {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if j < FRAME { w[j] * x[s + j] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (band, &(lo, hi)) in out.iter_mut().zip(bands) {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            band.push(e.sqrt());
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// STOI of a processed signal `est` against the clean `reference`, both
/// at 16 kHz.
pub fn stoi(est: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    stoi_at_rate(est, reference, crate::signal::SAMPLE_RATE)
}

/// STOI for inputs at 16 kHz or at the native 10 kHz analysis rate.
pub fn stoi_at_rate(est: &[f64], reference: &[f64], rate: u32) -> Result<f64, MetricError> {
    if est.len() != reference.len() {
        return Err(MetricError::LengthMismatch(est.len(), reference.len()));
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(MetricError::Silent);
    }
    let (x, y) = match rate {
        STOI_RATE => (reference.to_vec(), est.to_vec()),
        16_000 => (resample_16k_to_10k(reference), resample_16k_to_10k(est)),
        other => return Err(MetricError::SampleRate(other)),
    };
    let w = hann(FRAME);
    let (x, y) = remove_silent_frames(&x, &y, &w)?;

    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let bands = third_octave_bands();
    let xb = band_envelopes(&x, &w, &fft, &bands);
    let yb = band_envelopes(&y, &w, &fft, &bands);
    let frames = xb[0].len();
    if frames < SEGMENT {
        return Err(MetricError::TooShort {
            frames,
            needed: SEGMENT,
        });
    }

    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let segments = frames - SEGMENT + 1;
    let mut total = 0.0;
    let mut xs = [0.0; SEGMENT];
    let mut ys = [0.0; SEGMENT];
    for m in 0..segments {
        for (xband, yband) in xb.iter().zip(&yb) {
            xs.copy_from_slice(&xband[m..m + SEGMENT]);
            ys.copy_from_slice(&yband[m..m + SEGMENT]);
            let alpha = norm(&xs) / (norm(&ys) + EPS);
            for (yv, xv) in ys.iter_mut().zip(&xs) {
                *yv = (*yv * alpha).min(xv * clip);
            }
            let ym = ys.iter().sum::<f64>() / SEGMENT as f64;
            let xm = xs.iter().sum::<f64>() / SEGMENT as f64;
            ys.iter_mut().for_each(|v| *v -= ym);
            xs.iter_mut().for_each(|v| *v -= xm);
            let (yn, xn) = (norm(&ys) + EPS, norm(&xs) + EPS);
            total += ys.iter().zip(&xs).map(|(a, b)| (a / yn) * (b / xn)).sum::<f64>();
        }
    }
    Ok(total / (segments * BANDS) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_design() {
        let h = resample_filter();
        assert_eq!(h.len(), 581);
        assert!((h.iter().sum::<f64>() - 5.0).abs() < 1e-12);
        // symmetric, peak at centre
        assert!((h[0] - h[580]).abs() < 1e-18);
        assert!(h.iter().all(|&v| v <= h[290]));
    }

    #[test]
    fn resampled_length() {
        assert_eq!(resample_16k_to_10k(&vec![0.0; 16000]).len(), 10000);
        assert_eq!(resample_16k_to_10k(&[0.0; 17]).len(), 11);
    }

    #[test]
    fn dc_survives_resampling() {
        let y = resample_16k_to_10k(&vec![1.0; 4000]);
        // away from the edges the unit-gain filter keeps DC
        for v in &y[400..2100] {
            assert!((v - 1.0).abs() < 2e-3, "{v}");
        }
    }

    #[test]
    fn bands_are_increasing() {
        let b = third_octave_bands();
        assert_eq!(b.len(), 15);
        assert_eq!(b[0], (7, 9));
        for w in b.windows(2) {
            assert!(w[0].1 <= w[1].0 + 1 && w[0].0 < w[1].0);
        }
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-16);
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-15);
        assert!((bessel_i0(5.0) - 27.239871823604442).abs() < 1e-12);
    }
}
