use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{StftConfig, Waveform};
use crate::error::{Error, Result};

/// One-sided complex spectrogram, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex64>,
    pub config: StftConfig,
    pub sample_rate_hz: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(n_frames: usize, config: StftConfig, sample_rate_hz: u32) -> Self {
        let n_bins = config.n_bins();
        Self {
            n_frames,
            n_bins,
            data: vec![Complex64::new(0.0, 0.0); n_frames * n_bins],
            config,
            sample_rate_hz,
        }
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    w.check_processable()?;

    let window = cfg.window();
    let n_frames = cfg.frame_count(w.len());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut out = ComplexSpectrogram::zeros(n_frames, *cfg, w.sample_rate_hz);
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];

    for t in 0..n_frames {
        let start = t * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (n, coeff) in window.iter().enumerate() {
            if let Some(&x) = w.samples.get(start + n) {
                buf[n].re = x * coeff;
            }
        }
        fft.process(&mut buf);
        out.frame_mut(t).copy_from_slice(&buf[..cfg.n_bins()]);
    }
    Ok(out)
}

/// Weighted overlap-add inverse. The synthesis window equals the analysis
/// window and the sum is divided by the accumulated squared-window envelope.
pub fn istft(s: &ComplexSpectrogram, out_len: usize) -> Result<Waveform> {
    const ENVELOPE_FLOOR: f64 = 1e-8;

    if out_len == 0 {
        return Err(Error::Argument("output length must be positive".into()));
    }
    if s.n_frames == 0 {
        return Err(Error::Argument("spectrogram has no frames".into()));
    }
    let cfg = s.config;
    cfg.validate()?;
    if s.n_bins != cfg.n_bins() {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins, config implies {}",
            s.n_bins,
            cfg.n_bins()
        )));
    }

    let n = cfg.fft_size;
    let window = cfg.window();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let full_len = (s.n_frames - 1) * cfg.hop + cfg.win_len;
    let mut acc = vec![0.0; full_len.max(out_len)];
    let mut env = vec![0.0; acc.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    for t in 0..s.n_frames {
        let frame = s.frame(t);
        buf[0] = Complex64::new(frame[0].re, 0.0);
        buf[n / 2] = Complex64::new(frame[n / 2].re, 0.0);
        for k in 1..n / 2 {
            buf[k] = frame[k];
            buf[n - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for (i, w) in window.iter().enumerate() {
            acc[start + i] += buf[i].re / n as f64 * w;
            env[start + i] += w * w;
        }
    }

    let samples = acc
        .iter()
        .zip(&env)
        .take(out_len)
        .map(|(a, e)| a / e.max(ENVELOPE_FLOOR))
        .collect();
    Ok(Waveform::new(samples, s.sample_rate_hz))
}
