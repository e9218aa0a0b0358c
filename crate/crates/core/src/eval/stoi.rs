//! Short-time objective intelligibility.
//!
//! Signals are resampled to 10 kHz, frames more than 40 dB below the
//! loudest clean frame are dropped from both signals, and one-third-octave
//! envelopes over 384 ms windows are correlated after normalization and
//! clipping of the degraded envelope.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;
/// Filter taps contributing to each output sample of the resampler.
pub const RESAMPLER_TAPS: usize = 64;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rational-ratio polyphase resampler with a Blackman-windowed sinc
/// low-pass at the lower of the two Nyquist frequencies.
pub fn resample(x: &[f64], from_hz: u32, to_hz: u32) -> Result<Vec<f64>> {
    if from_hz == 0 || to_hz == 0 {
        return Err(Error::Argument("sample rates must be positive".into()));
    }
    if from_hz == to_hz {
        return Ok(x.to_vec());
    }
    let g = gcd(from_hz as u64, to_hz as u64);
    let up = (to_hz as u64 / g) as usize;
    let down = (from_hz as u64 / g) as usize;
    let len = RESAMPLER_TAPS * up + 1;
    let delay = (len - 1) / 2;
    let cutoff = 0.5 * from_hz.min(to_hz) as f64 / (from_hz as f64 * up as f64);
    let h: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - delay as f64;
            let sinc = if t == 0.0 { 1.0 } else { (2.0 * PI * cutoff * t).sin() / (PI * t) / (2.0 * cutoff) };
            let w = 0.42 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
                + 0.08 * (4.0 * PI * n as f64 / (len - 1) as f64).cos();
            2.0 * cutoff * sinc * w * up as f64
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    let mut y = vec![0.0; out_len];
    for (m, out) in y.iter_mut().enumerate() {
        let j = (m * down + delay) as i64;
        let lo = ((j - (len as i64 - 1)).max(0) as usize).div_ceil(up);
        let hi = ((j / up as i64) as usize).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        for (n, xv) in x.iter().enumerate().take(hi + 1).skip(lo) {
            acc += h[(j - (n * up) as i64) as usize] * xv;
        }
        *out = acc;
    }
    Ok(y)
}

/// Symmetric Hann window without its zero end points.
fn hann(n: usize) -> Vec<f64> {
    (1..=n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / (n + 1) as f64).cos()).collect()
}

fn frame_starts(len: usize) -> Vec<usize> {
    if len < FRAME {
        return Vec::new();
    }
    (0..=(len - FRAME) / HOP).map(|i| i * HOP).collect()
}

/// Drops frames of `x` more than 40 dB below its loudest frame, and the
/// same frames of `y`, then overlap-adds what remains.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let starts = frame_starts(x.len());
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..FRAME).map(|k| (w[k] * x[s + k]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts.iter().zip(&energy).filter(|(_, e)| **e > max - DYN_RANGE_DB).map(|(s, _)| *s).collect();
    let out_len = if keep.is_empty() { 0 } else { (keep.len() - 1) * HOP + FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (i, &s) in keep.iter().enumerate() {
        for k in 0..FRAME {
            xs[i * HOP + k] += w[k] * x[s + k];
            ys[i * HOP + k] += w[k] * y[s + k];
        }
    }
    (xs, ys)
}

/// Magnitude-squared spectra, `frames x (NFFT/2 + 1)`.
fn power_spectra(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann(FRAME);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    frame_starts(x.len())
        .into_iter()
        .map(|s| {
            let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
            for k in 0..FRAME {
                buf[k].re = w[k] * x[s + k];
            }
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Bin ranges `[lo, hi)` of the one-third-octave bands.
fn band_ranges() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * STOI_RATE as f64 / NFFT as f64).collect();
    let nearest = |f: f64| {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f).abs().partial_cmp(&(b.1 - f).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    };
    (0..BANDS)
        .map(|i| {
            let center = MIN_FREQ * 2f64.powf(i as f64 / 3.0);
            (nearest(center * 2f64.powf(-1.0 / 6.0)), nearest(center * 2f64.powf(1.0 / 6.0)))
        })
        .collect()
}

/// Band envelopes, `BANDS x frames`.
fn band_envelopes(spectra: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands.iter().map(|&(lo, hi)| spectra.iter().map(|s| s[lo..hi].iter().sum::<f64>().sqrt()).collect()).collect()
}

fn centered_unit(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() + EPS;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// STOI of `test` against `reference`; both must share length and rate.
pub fn stoi(reference: &Waveform, test: &Waveform) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::Argument(format!(
            "reference has {} samples, test {}",
            reference.len(),
            test.len()
        )));
    }
    if reference.sample_rate_hz != test.sample_rate_hz {
        return Err(Error::Argument("reference and test sample rates differ".into()));
    }
    let x = resample(&reference.samples, reference.sample_rate_hz, STOI_RATE)?;
    let y = resample(&test.samples, test.sample_rate_hz, STOI_RATE)?;
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = band_ranges();
    let xb = band_envelopes(&power_spectra(&x), &bands);
    let yb = band_envelopes(&power_spectra(&y), &bands);
    let frames = xb[0].len();
    if frames < SEGMENT {
        return Err(Error::Argument(format!(
            "{frames} speech-active frames after silence removal; at least {SEGMENT} (384 ms) are needed"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let (mut total, mut count) = (0.0, 0usize);
    for m in SEGMENT..=frames {
        for band in 0..BANDS {
            let xs = &xb[band][m - SEGMENT..m];
            let ys = &yb[band][m - SEGMENT..m];
            let alpha = xs.iter().map(|v| v * v).sum::<f64>().sqrt() / (ys.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS);
            let mut xv = xs.to_vec();
            let mut yv: Vec<f64> = ys.iter().zip(xs).map(|(yv, xv)| (alpha * yv).min(xv * clip)).collect();
            centered_unit(&mut xv);
            centered_unit(&mut yv);
            total += xv.iter().zip(&yv).map(|(a, b)| a * b).sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{mix_at_snr, synth_noise, synth_speech_like, NoiseKind};

    #[test]
    fn resampler_preserves_low_tones_and_length() {
        let f = 440.0;
        let x: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * f * n as f64 / 16_000.0).sin()).collect();
        let y = resample(&x, 16_000, 10_000).unwrap();
        assert_eq!(y.len(), 10_000);
        for n in 200..9_800 {
            let expected = (2.0 * PI * f * n as f64 / 10_000.0).sin();
            assert!((y[n] - expected).abs() < 1e-3, "{n}: {} vs {expected}", y[n]);
        }
    }

    #[test]
    fn resampler_rejects_content_above_new_nyquist() {
        let x: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 6_500.0 * n as f64 / 16_000.0).sin()).collect();
        let y = resample(&x, 16_000, 10_000).unwrap();
        let rms = (y[500..9_500].iter().map(|v| v * v).sum::<f64>() / 9_000.0).sqrt();
        assert!(rms < 1e-3, "{rms}");
    }

    #[test]
    fn band_edges() {
        let b = band_ranges();
        assert_eq!(b.len(), 15);
        assert_eq!(b[0], (7, 9));
        assert!(b.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(b[14].1 <= NFFT / 2 + 1);
    }

    #[test]
    fn identity_and_scale_invariance() {
        let x = synth_speech_like(2.0, 5, 16_000).unwrap();
        assert!((stoi(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        let half = Waveform::new(x.samples.iter().map(|v| v * 0.5).collect(), 16_000);
        assert!((stoi(&x, &half).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn falls_with_mixing_snr() {
        let clean = synth_speech_like(2.0, 12, 16_000).unwrap();
        let noise = synth_noise(NoiseKind::Pink, 2.5, 13, 16_000).unwrap();
        let score = |snr: f64| stoi(&clean, &mix_at_snr(&clean, &noise, snr, 2).unwrap().noisy).unwrap();
        let (hi, mid, lo) = (score(20.0), score(5.0), score(-5.0));
        assert!(hi > mid && mid > lo, "{hi} {mid} {lo}");
        assert!((-1.0..=1.0).contains(&lo));
    }

    #[test]
    fn too_short_is_rejected() {
        let x = synth_speech_like(0.5, 1, 16_000).unwrap();
        let short = Waveform::new(x.samples[..4_000].to_vec(), 16_000);
        assert!(matches!(stoi(&short, &short), Err(Error::Argument(_))));
    }
}
