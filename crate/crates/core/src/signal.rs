//! WAV I/O, SNR-controlled mixing and fixed-length segment extraction.
//!
//! Only RIFF/WAVE files with PCM format tag 1, 16-bit samples, one channel
//! and (for pipeline audio) a 16 kHz rate are accepted. Integer sample `s`
//! maps to `s / 32768`; writing maps `r` to `clamp(round(r·32768))`.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Sample rate of all pipeline audio.
pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("{path}: unsupported WAV {field}: found {found}, expected {expected}")]
    Format {
        path: String,
        field: &'static str,
        found: String,
        expected: String,
    },
    #[error("{path}: malformed WAV: {reason}")]
    Malformed { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

impl SignalError {
    /// True for errors caused by the content of an input file.
    pub fn is_format(&self) -> bool {
        matches!(self, SignalError::Format { .. } | SignalError::Malformed { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn format_err(path: &str, field: &'static str, found: impl ToString, expected: impl ToString) -> SignalError {
    SignalError::Format {
        path: path.to_string(),
        field,
        found: found.to_string(),
        expected: expected.to_string(),
    }
}

fn malformed(path: &str, reason: impl Into<String>) -> SignalError {
    SignalError::Malformed {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a 16-bit mono PCM WAV image. `expected_rate` of `None` accepts
/// any sample rate.
pub fn decode_wav(bytes: &[u8], expected_rate: Option<u32>, path: &str) -> Result<Waveform, SignalError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(format_err(path, "container", "non-RIFF/WAVE data", "RIFF/WAVE"));
    }
    let mut fmt: Option<&[u8]> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body_start = at + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        let body = match (body_end, id) {
            (Some(end), _) => &bytes[body_start..end],
            // Tolerate a data chunk whose size overruns a truncated file.
            (None, b"data") => &bytes[body_start..],
            (None, _) => return Err(malformed(path, format!("chunk {:?} overruns file", String::from_utf8_lossy(id)))),
        };
        match id {
            b"fmt " => fmt = Some(body),
            b"data" => data = Some(body),
            _ => {}
        }
        at = body_start + size + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| malformed(path, "missing fmt chunk"))?;
    if fmt.len() < 16 {
        return Err(malformed(path, "fmt chunk shorter than 16 bytes"));
    }
    let format_tag = u16_at(fmt, 0);
    let channels = u16_at(fmt, 2);
    let rate = u32_at(fmt, 4);
    let bits = u16_at(fmt, 14);
    if format_tag != 1 {
        return Err(format_err(path, "format tag", format_tag, "1 (PCM)"));
    }
    if channels != 1 {
        return Err(format_err(path, "channel count", channels, 1));
    }
    if bits != 16 {
        return Err(format_err(path, "bit depth", bits, 16));
    }
    if let Some(expected) = expected_rate {
        if rate != expected {
            return Err(format_err(path, "sample rate", rate, expected));
        }
    }
    let data = data.ok_or_else(|| malformed(path, "missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(malformed(path, "data chunk has odd byte length"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, rate))
}

/// Reads a pipeline WAV (16-bit PCM, mono, 16 kHz).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, SignalError> {
    read_wav_with_rate(path, Some(SAMPLE_RATE))
}

/// Like [`read_wav`] but with a caller-chosen rate check.
pub fn read_wav_with_rate(path: impl AsRef<Path>, expected_rate: Option<u32>) -> Result<Waveform, SignalError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| SignalError::Io {
        path: shown.clone(),
        source,
    })?;
    decode_wav(&bytes, expected_rate, &shown)
}

/// Maps a real sample onto the 16-bit lattice.
pub fn quantize(r: f64) -> i16 {
    (r * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(w: &Waveform) -> Result<Vec<u8>, SignalError> {
    if let Some(i) = w.samples.iter().position(|v| !v.is_finite()) {
        return Err(SignalError::NonFinite(i));
    }
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    Ok(out)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<(), SignalError> {
    let path = path.as_ref();
    let bytes = encode_wav(w)?;
    fs::write(path, bytes).map_err(|source| SignalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Start offset of a `length`-sample window in a `total`-sample signal:
/// uniform over `[0, total − length]` when the signal is long enough,
/// otherwise 0 (the window is then filled cyclically).
pub fn segment_offset(total: usize, length: usize, seed: u64) -> usize {
    if total <= length {
        return 0;
    }
    ChaCha8Rng::seed_from_u64(seed).random_range(0..=total - length)
}

/// `length` samples starting at `offset`, wrapping around the end of `x`.
/// An empty `x` yields silence.
pub fn extract_cyclic(x: &[f64], offset: usize, length: usize) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; length];
    }
    (0..length).map(|i| x[(offset + i) % x.len()]).collect()
}

/// Seeded random window; shorter signals are repeated cyclically.
pub fn sample_segment(w: &Waveform, length: usize, seed: u64) -> Waveform {
    let offset = segment_offset(w.len(), length, seed);
    Waveform::new(extract_cyclic(&w.samples, offset, length), w.sample_rate)
}

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone)]
pub struct Mixture {
    pub noisy: Waveform,
    /// Factor applied to the noise segment.
    pub gain: f64,
    pub noise_offset: usize,
    /// The noise exactly as added to the clean signal.
    pub scaled_noise: Waveform,
}

impl Mixture {
    /// `10·log10(P_clean / P_scaled_noise)`.
    pub fn measured_snr_db(&self, clean: &Waveform) -> f64 {
        10.0 * (clean.power() / self.scaled_noise.power()).log10()
    }
}

/// Adds noise to `clean` at the requested SNR.
///
/// A clean-length noise segment is cut at a seeded offset (cyclically
/// repeated when the noise is shorter) and scaled by
/// `g = sqrt(P_clean / (P_segment · 10^(snr/10)))`, with `P` the mean
/// square over the whole segment. The result is not clipped or normalized.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture, SignalError> {
    if clean.sample_rate != noise.sample_rate {
        return Err(SignalError::RateMismatch(clean.sample_rate, noise.sample_rate));
    }
    if !snr_db.is_finite() {
        return Err(SignalError::Degenerate(format!("snr_db must be finite, got {snr_db}")));
    }
    let p_clean = clean.power();
    if !(p_clean > 0.0) {
        return Err(SignalError::Degenerate("clean signal has zero power".into()));
    }
    if !(noise.power() > 0.0) {
        return Err(SignalError::Degenerate("noise signal has zero power".into()));
    }
    let offset = segment_offset(noise.len(), clean.len(), seed);
    let segment = extract_cyclic(&noise.samples, offset, clean.len());
    let p_noise = power(&segment);
    if !(p_noise > 0.0) {
        return Err(SignalError::Degenerate(format!(
            "noise segment at offset {offset} has zero power"
        )));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = segment.iter().map(|v| gain * v).collect();
    let noisy = clean.samples.iter().zip(&scaled).map(|(c, n)| c + n).collect();
    Ok(Mixture {
        noisy: Waveform::new(noisy, clean.sample_rate),
        gain,
        noise_offset: offset,
        scaled_noise: Waveform::new(scaled, clean.sample_rate),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, SAMPLE_RATE)
    }

    #[test]
    fn sample_mapping() {
        let bytes = encode_wav(&wave(vec![0.5])).unwrap();
        assert_eq!(&bytes[44..], &16384i16.to_le_bytes());
        let back = decode_wav(&bytes, Some(SAMPLE_RATE), "mem").unwrap();
        assert_eq!(back.samples, vec![0.5]);
        assert_eq!(quantize(1.0), 32767);
        assert_eq!(quantize(-1.0), -32768);
        assert_eq!(quantize(0.5), 16384);
        assert_eq!(quantize(3.7), 32767);
    }

    #[test]
    fn header_fields() {
        let bytes = encode_wav(&wave(vec![0.0; 10])).unwrap();
        assert_eq!(bytes.len(), 64);
        assert_eq!(u16_at(&bytes, 20), 1);
        assert_eq!(u16_at(&bytes, 22), 1);
        assert_eq!(u32_at(&bytes, 24), 16000);
        assert_eq!(u16_at(&bytes, 34), 16);
    }

    fn with_fmt(patch: impl Fn(&mut Vec<u8>)) -> Vec<u8> {
        let mut b = encode_wav(&wave(vec![0.1, -0.1])).unwrap();
        patch(&mut b);
        b
    }

    #[test]
    fn rejects_each_bad_field_by_name() {
        let stereo = with_fmt(|b| b[22] = 2);
        match decode_wav(&stereo, Some(SAMPLE_RATE), "x.wav") {
            Err(SignalError::Format { field, .. }) => assert_eq!(field, "channel count"),
            other => panic!("{other:?}"),
        }
        let float = with_fmt(|b| b[20] = 3);
        assert!(matches!(
            decode_wav(&float, Some(SAMPLE_RATE), "x"),
            Err(SignalError::Format { field: "format tag", .. })
        ));
        let rate = with_fmt(|b| b[24..28].copy_from_slice(&44100u32.to_le_bytes()));
        assert!(matches!(
            decode_wav(&rate, Some(SAMPLE_RATE), "x"),
            Err(SignalError::Format { field: "sample rate", .. })
        ));
        assert!(decode_wav(&rate, None, "x").is_ok());
        let bits = with_fmt(|b| b[34] = 24);
        assert!(matches!(
            decode_wav(&bits, Some(SAMPLE_RATE), "x"),
            Err(SignalError::Format { field: "bit depth", .. })
        ));
        assert!(matches!(
            decode_wav(b"not a wav file at all", None, "x"),
            Err(SignalError::Format { field: "container", .. })
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let plain = encode_wav(&wave(vec![0.25, -0.5])).unwrap();
        let mut b = plain[..12].to_vec();
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[1, 2, 3, 0]); // odd size plus pad byte
        b.extend_from_slice(&plain[12..]);
        let w = decode_wav(&b, Some(SAMPLE_RATE), "x").unwrap();
        assert_eq!(w.samples, vec![0.25, -0.5]);
    }

    #[test]
    fn mix_gain_examples() {
        let clean = wave(vec![1.0, -1.0, 1.0, -1.0]);
        let noise = wave(vec![-1.0, 1.0, 1.0, -1.0]);
        let m = mix_at_snr(&clean, &noise, 0.0, 7).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-15);
        let m = mix_at_snr(&clean, &noise, 10.0, 7).unwrap();
        assert!((m.gain - 0.316227766).abs() < 1e-9);
        assert!((m.measured_snr_db(&clean) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn mix_rejects_silence() {
        let clean = wave(vec![0.5; 8]);
        assert!(matches!(
            mix_at_snr(&clean, &wave(vec![0.0; 8]), 0.0, 1),
            Err(SignalError::Degenerate(_))
        ));
        assert!(matches!(
            mix_at_snr(&wave(vec![0.0; 8]), &clean, 0.0, 1),
            Err(SignalError::Degenerate(_))
        ));
    }

    #[test]
    fn mix_is_deterministic_and_wraps_short_noise() {
        let clean = wave((0..100).map(|i| (i as f64 * 0.3).sin()).collect());
        let noise = wave(vec![0.2, -0.1, 0.4]);
        let a = mix_at_snr(&clean, &noise, -5.0, 99).unwrap();
        let b = mix_at_snr(&clean, &noise, -5.0, 99).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert_eq!(a.noise_offset, 0);
        assert_eq!(a.scaled_noise.samples[3], a.scaled_noise.samples[0]);
    }

    #[test]
    fn segment_rules() {
        let w = wave((0..16384).map(|i| i as f64).collect());
        assert_eq!(sample_segment(&w, 16384, 3), w);

        for seed in 0..50 {
            let off = segment_offset(20000, 16384, seed);
            assert!(off <= 3616);
        }

        let short = wave((0..10000).map(|i| i as f64).collect());
        let seg = sample_segment(&short, 16384, 5);
        assert_eq!(seg.len(), 16384);
        assert_eq!(&seg.samples[..10000], &short.samples[..]);
        assert_eq!(&seg.samples[10000..], &short.samples[..6384]);

        // by hand: [1,2,3] cyclically to 7 → [1,2,3,1,2,3,1]
        assert_eq!(extract_cyclic(&[1.0, 2.0, 3.0], 0, 7), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
    }
}
