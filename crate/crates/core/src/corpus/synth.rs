//! Seeded generators standing in for recorded speech and noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const MIN_SPEECH_S: f64 = 0.5;
pub const MAX_SPEECH_S: f64 = 30.0;

/// Synthesis recipe behind a noise class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    LowBand,
    HighBand,
    Cry,
    Babble,
}

impl NoiseKind {
    pub fn is_stationary(self) -> bool {
        !matches!(self, NoiseKind::Cry | NoiseKind::Babble)
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
            NoiseKind::LowBand => "low_band",
            NoiseKind::HighBand => "high_band",
            NoiseKind::Cry => "cry",
            NoiseKind::Babble => "babble",
        }
    }
}

fn sample_count(duration_s: f64, sample_rate_hz: u32) -> usize {
    (duration_s * sample_rate_hz as f64).round() as usize
}

/// Two-pole resonator with unity peak gain.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn process(&mut self, x: f64, freq_hz: f64, bandwidth_hz: f64, fs: f64) -> f64 {
        let r = (-PI * bandwidth_hz / fs).exp();
        let theta = 2.0 * PI * freq_hz / fs;
        let y = (1.0 - r) * x + 2.0 * r * theta.cos() * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// RBJ biquad.
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn new(b: [f64; 3], a0: f64, a: [f64; 2]) -> Self {
        Self { b: b.map(|v| v / a0), a: a.map(|v| v / a0), x: [0.0; 2], y: [0.0; 2] }
    }

    fn lowpass(cutoff_hz: f64, fs: f64) -> Self {
        let w = 2.0 * PI * cutoff_hz / fs;
        let alpha = w.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let c = w.cos();
        Self::new([(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0], 1.0 + alpha, [-2.0 * c, 1.0 - alpha])
    }

    fn highpass(cutoff_hz: f64, fs: f64) -> Self {
        let w = 2.0 * PI * cutoff_hz / fs;
        let alpha = w.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        let c = w.cos();
        Self::new(
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
            1.0 + alpha,
            [-2.0 * c, 1.0 - alpha],
        )
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

fn peak_normalize(samples: &mut [f64], target: f64) {
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|x| *x *= target / peak);
    }
}

/// Vowel-like formant targets (F1, F2, F3) in Hz.
fn random_formants(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.random_range(300.0..800.0),
        rng.random_range(900.0..2300.0),
        rng.random_range(2400.0..3200.0),
    ]
}

/// Speech-like test signal: a glottal pulse train with a drifting
/// fundamental, shaped by three slowly moving formant resonators and gated
/// into syllables (~4 Hz) separated by silent gaps. Peak-normalized to 0.5.
pub fn synth_speech_like(duration_s: f64, seed: u64, sample_rate_hz: u32) -> Result<Waveform> {
    if !(MIN_SPEECH_S..=MAX_SPEECH_S).contains(&duration_s) {
        return Err(Error::Argument(format!(
            "speech duration {duration_s} s outside [{MIN_SPEECH_S}, {MAX_SPEECH_S}]"
        )));
    }
    let fs = sample_rate_hz as f64;
    let n = sample_count(duration_s, sample_rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // syllable gate: 1 inside a voiced syllable, 0 in gaps
    let mut envelope = vec![0.0; n];
    let mut syllable_formants = Vec::new();
    let mut syllable_of = vec![usize::MAX; n];
    let mut pos = sample_count(rng.random_range(0.05..0.15), sample_rate_hz);
    while pos < n {
        let len = sample_count(rng.random_range(0.14..0.28), sample_rate_hz);
        let end = (pos + len).min(n);
        let idx = syllable_formants.len();
        syllable_formants.push(random_formants(&mut rng));
        for (k, i) in (pos..end).enumerate() {
            envelope[i] = (PI * k as f64 / len as f64).sin().powf(0.6);
            syllable_of[i] = idx;
        }
        let gap = if rng.random_bool(0.2) {
            rng.random_range(0.15..0.35)
        } else {
            rng.random_range(0.03..0.10)
        };
        pos = end + sample_count(gap, sample_rate_hz);
    }
    if syllable_formants.is_empty() {
        syllable_formants.push(random_formants(&mut rng));
    }

    let mut f0 = rng.random_range(110.0..180.0);
    let mut f0_velocity = 0.0;
    let mut phase = 0.0;
    let mut formants = syllable_formants[0];
    let bandwidths = [90.0, 120.0, 170.0];
    let gains = [1.0, 0.6, 0.3];
    let mut resonators: [Resonator; 3] = Default::default();
    let mut out = vec![0.0; n];
    let smoothing = 1.0 - (-1.0 / (0.03 * fs)).exp();

    for i in 0..n {
        // drifting fundamental, kept within 90..220 Hz
        f0_velocity = 0.999 * f0_velocity + 0.02 * rng.sample::<f64, _>(StandardNormal);
        f0 = (f0 + f0_velocity / fs * 50.0).clamp(90.0, 220.0);
        if f0 <= 90.0 || f0 >= 220.0 {
            f0_velocity = -f0_velocity;
        }
        phase += f0 / fs;
        let mut excitation = 0.0;
        if phase >= 1.0 {
            phase -= 1.0;
            excitation = 1.0;
        }
        excitation += 0.01 * rng.sample::<f64, _>(StandardNormal);

        if syllable_of[i] != usize::MAX {
            let target = syllable_formants[syllable_of[i]];
            for (f, t) in formants.iter_mut().zip(target) {
                *f += smoothing * (t - *f);
            }
        }
        let mut y = 0.0;
        for k in 0..3 {
            y += gains[k] * resonators[k].process(excitation, formants[k], bandwidths[k], fs);
        }
        out[i] = y * envelope[i];
    }
    peak_normalize(&mut out, 0.5);
    Ok(Waveform::new(out, sample_rate_hz))
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Voss–McCartney pink noise: 16 octave-spaced random rows, row `k`
/// refreshed every `2^k` samples, plus a per-sample white term.
fn voss_mccartney(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    const ROWS: usize = 16;
    let mut rows: Vec<f64> = (0..ROWS).map(|_| rng.sample(StandardNormal)).collect();
    let mut sum: f64 = rows.iter().sum();
    (0..n)
        .map(|i| {
            let counter = i + 1;
            let k = counter.trailing_zeros() as usize;
            if k < ROWS {
                let fresh: f64 = rng.sample(StandardNormal);
                sum += fresh - rows[k];
                rows[k] = fresh;
            }
            sum + rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

fn cry_bursts(rng: &mut ChaCha8Rng, n: usize, fs: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut pos = sample_count(rng.random_range(0.0..0.3), fs as u32);
    while pos < n {
        let len = sample_count(rng.random_range(0.3..0.9), fs as u32);
        let end = (pos + len).min(n);
        let base = rng.random_range(380.0..560.0);
        let glide = rng.random_range(-0.25..0.25);
        let vibrato_rate = rng.random_range(5.0..9.0);
        let mut phase = 0.0;
        for (k, i) in (pos..end).enumerate() {
            let u = k as f64 / len as f64;
            let f0 = base
                * (1.0 + glide * (u - 0.5))
                * (1.0 + 0.03 * (2.0 * PI * vibrato_rate * k as f64 / fs).sin());
            phase += 2.0 * PI * f0 / fs;
            let env = (PI * u).sin().powf(0.5);
            let tone: f64 = (1..=8).map(|h| (h as f64 * phase).sin() / h as f64).sum();
            out[i] = env * tone;
        }
        pos = end + sample_count(rng.random_range(0.2..0.7), fs as u32);
    }
    // faint floor so gaps are not digitally silent
    for x in out.iter_mut() {
        *x += 1e-3 * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// Noise of the requested kind, peak-normalized to 0.5.
///
/// Stationary kinds (white, pink, brown, two band-passed whites) have
/// near-constant short-time power; `Cry` (bursty harmonic tones) and
/// `Babble` (several overlapping pseudo-talkers) do not.
pub fn synth_noise(kind: NoiseKind, duration_s: f64, seed: u64, sample_rate_hz: u32) -> Result<Waveform> {
    if !(duration_s > 0.0) {
        return Err(Error::Argument(format!("noise duration must be positive, got {duration_s}")));
    }
    let fs = sample_rate_hz as f64;
    let n = sample_count(duration_s, sample_rate_hz).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = match kind {
        NoiseKind::White => gaussian(&mut rng, n),
        NoiseKind::Pink => voss_mccartney(&mut rng, n),
        NoiseKind::Brown => {
            // leaky integration: -6 dB/octave above ~400 Hz
            let mut hp = Biquad::highpass(40.0, fs);
            let mut acc = 0.0;
            gaussian(&mut rng, n)
                .into_iter()
                .map(|w| {
                    acc = 0.85 * acc + w;
                    hp.process(acc)
                })
                .collect()
        }
        NoiseKind::LowBand | NoiseKind::HighBand => {
            let (lo, hi) = if kind == NoiseKind::LowBand { (100.0, 1500.0) } else { (1000.0, 5000.0) };
            let mut filters =
                [Biquad::highpass(lo, fs), Biquad::highpass(lo, fs), Biquad::lowpass(hi, fs), Biquad::lowpass(hi, fs)];
            gaussian(&mut rng, n)
                .into_iter()
                .map(|w| filters.iter_mut().fold(w, |v, f| f.process(v)))
                .collect()
        }
        NoiseKind::Cry => cry_bursts(&mut rng, n, fs),
        NoiseKind::Babble => {
            // each talker speaks in phrases separated by pauses
            let talkers = 2;
            let mut sum = vec![0.0; n];
            for t in 0..talkers {
                let level = if t == 0 { 1.0 } else { rng.random_range(0.3..0.7) };
                let mut at = sample_count(rng.random_range(0.0..0.4), sample_rate_hz);
                while at < n {
                    let phrase_s = rng.random_range(MIN_SPEECH_S..1.5);
                    let phrase = synth_speech_like(phrase_s, rng.random(), sample_rate_hz)?;
                    let take = (n - at).min(phrase.len());
                    for (s, v) in sum[at..at + take].iter_mut().zip(&phrase.samples) {
                        *s += level * v;
                    }
                    at += take + sample_count(rng.random_range(0.1..0.5), sample_rate_hz);
                }
            }
            sum
        }
    };
    peak_normalize(&mut x, 0.5);
    Ok(Waveform::new(x, sample_rate_hz))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use num_complex::Complex64;
    use rustfft::FftPlanner;

    const FS: u32 = 16_000;

    /// Welch PSD with a periodic Hann window, 50% overlap.
    pub(crate) fn welch_psd(x: &[f64], nfft: usize) -> Vec<f64> {
        let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
        let win: Vec<f64> =
            (0..nfft).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nfft as f64).cos()).collect();
        let mut psd = vec![0.0; nfft / 2 + 1];
        let mut count = 0;
        let mut start = 0;
        while start + nfft <= x.len() {
            let mut buf: Vec<Complex64> =
                (0..nfft).map(|i| Complex64::new(x[start + i] * win[i], 0.0)).collect();
            fft.process(&mut buf);
            for (p, c) in psd.iter_mut().zip(&buf) {
                *p += c.norm_sqr();
            }
            count += 1;
            start += nfft / 2;
        }
        psd.iter_mut().for_each(|p| *p /= count as f64);
        psd
    }

    pub(crate) fn frame_rms_cv(x: &[f64], frame: usize) -> f64 {
        let rms: Vec<f64> = x
            .chunks_exact(frame)
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / frame as f64).sqrt())
            .collect();
        let mean = rms.iter().sum::<f64>() / rms.len() as f64;
        let var = rms.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rms.len() as f64;
        var.sqrt() / mean
    }

    fn bin_hz(k: usize, nfft: usize) -> f64 {
        k as f64 * FS as f64 / nfft as f64
    }

    #[test]
    fn speech_is_deterministic_and_sized() {
        let a = synth_speech_like(2.0, 42, FS).unwrap();
        let b = synth_speech_like(2.0, 42, FS).unwrap();
        assert_eq!(a.len(), 32_000);
        assert_eq!(a, b);
        assert!((a.peak() - 0.5).abs() < 1e-12);
        assert_ne!(a, synth_speech_like(2.0, 43, FS).unwrap());
        assert!(synth_speech_like(0.4, 1, FS).is_err());
        assert!(synth_speech_like(31.0, 1, FS).is_err());
    }

    #[test]
    fn speech_centroid_in_voice_band() {
        for seed in 0..5 {
            let w = synth_speech_like(3.0, seed, FS).unwrap();
            let psd = welch_psd(&w.samples, 1024);
            let (num, den) = psd
                .iter()
                .enumerate()
                .fold((0.0, 0.0), |(n, d), (k, p)| (n + bin_hz(k, 1024) * p, d + p));
            let centroid = num / den;
            assert!((100.0..3000.0).contains(&centroid), "centroid {centroid}");
        }
    }

    #[test]
    fn speech_has_silent_gaps() {
        let w = synth_speech_like(3.0, 5, FS).unwrap();
        let silent = w.samples.chunks_exact(160).filter(|c| c.iter().all(|&x| x == 0.0)).count();
        assert!(silent > 10);
    }

    /// Least-squares slope of PSD in dB against log2 frequency.
    fn slope_db_per_octave(psd: &[f64], nfft: usize, lo: f64, hi: f64) -> f64 {
        let pts: Vec<(f64, f64)> = psd
            .iter()
            .enumerate()
            .filter(|(k, _)| (lo..=hi).contains(&bin_hz(*k, nfft)))
            .map(|(k, p)| (bin_hz(k, nfft).log2(), 10.0 * p.log10()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn pink_slope_is_minus_three_db_per_octave() {
        let w = synth_noise(NoiseKind::Pink, 20.0, 3, FS).unwrap();
        let psd = welch_psd(&w.samples, 2048);
        let slope = slope_db_per_octave(&psd, 2048, 100.0, 4000.0);
        assert!((slope + 3.0).abs() <= 1.0, "slope {slope}");
    }

    #[test]
    fn white_is_flat() {
        let w = synth_noise(NoiseKind::White, 10.0, 4, FS).unwrap();
        let psd = welch_psd(&w.samples, 1024);
        let band: Vec<f64> = psd
            .iter()
            .enumerate()
            .filter(|(k, _)| (100.0..=6000.0).contains(&bin_hz(*k, 1024)))
            .map(|(_, p)| 10.0 * p.log10())
            .collect();
        let mean = band.iter().sum::<f64>() / band.len() as f64;
        assert!(band.iter().all(|d| (d - mean).abs() <= 2.0));
    }

    #[test]
    fn stationarity_contrast() {
        for kind in [
            NoiseKind::White,
            NoiseKind::Pink,
            NoiseKind::Brown,
            NoiseKind::LowBand,
            NoiseKind::HighBand,
        ] {
            let w = synth_noise(kind, 5.0, 9, FS).unwrap();
            let cv = frame_rms_cv(&w.samples, 512);
            assert!(cv < 0.25, "{kind:?} cv {cv}");
            assert!(kind.is_stationary());
        }
        for kind in [NoiseKind::Cry, NoiseKind::Babble] {
            let w = synth_noise(kind, 5.0, 9, FS).unwrap();
            let cv = frame_rms_cv(&w.samples, 512);
            assert!(cv > 0.5, "{kind:?} cv {cv}");
            assert!(!kind.is_stationary());
        }
    }

    #[test]
    fn noise_is_deterministic() {
        for kind in [NoiseKind::Pink, NoiseKind::Cry, NoiseKind::Babble] {
            assert_eq!(
                synth_noise(kind, 1.0, 77, FS).unwrap(),
                synth_noise(kind, 1.0, 77, FS).unwrap()
            );
        }
    }
}
