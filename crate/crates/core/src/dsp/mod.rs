//! Time/frequency front end: STFT analysis, weighted overlap-add synthesis,
//! log-power spectra, fixed-length segmentation and 16-bit WAV I/O.
//!
//! All signal math here is done in `f64`.

mod features;
mod stft;
pub mod wav;

pub use features::{desegment, from_lps, segment, to_lps, FeatureSegment, LpsFeatures};
pub use stft::{istft, stft, ComplexSpectrogram};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_POWER_FLOOR: f64 = 1e-10;
pub const DEFAULT_SEGMENT_FRAMES: usize = 32;

/// Mono PCM signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self { samples, sample_rate_hz }
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean square of the samples; zero for an empty signal.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub(crate) fn check_processable(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Argument("waveform is empty".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hamming,
}

impl WindowKind {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hamming => (0..len)
                .map(|n| {
                    0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_len: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms hamming window, 16 ms hop, 512-point transform at 16 kHz.
    fn default() -> Self {
        Self { fft_size: 512, win_len: 512, hop: 256, window: WindowKind::Hamming }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        if self.hop > self.win_len {
            return Err(Error::Config(format!(
                "hop ({}) exceeds window length ({})",
                self.hop, self.win_len
            )));
        }
        if self.win_len > self.fft_size {
            return Err(Error::Config(format!(
                "window length ({}) exceeds fft size ({})",
                self.win_len, self.fft_size
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(Error::Config("fft size must be even".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of analysis frames for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.win_len {
            1
        } else {
            (len - self.win_len) / self.hop + 1
        }
    }

    pub fn window(&self) -> Vec<f64> {
        self.window.coefficients(self.win_len)
    }
}

/// Analysis settings shared by training, enhancement and export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub fft_size: usize,
    pub win_len: usize,
    pub hop: usize,
    pub power_floor: f64,
    pub segment_frames: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let s = StftConfig::default();
        Self {
            fft_size: s.fft_size,
            win_len: s.win_len,
            hop: s.hop,
            power_floor: DEFAULT_POWER_FLOOR,
            segment_frames: DEFAULT_SEGMENT_FRAMES,
        }
    }
}

impl FeatureConfig {
    pub fn stft(&self) -> StftConfig {
        StftConfig { fft_size: self.fft_size, win_len: self.win_len, hop: self.hop, window: WindowKind::Hamming }
    }

    pub fn n_bins(&self) -> usize {
        self.stft().n_bins()
    }

    pub fn validate(&self) -> Result<()> {
        self.stft().validate()?;
        if !(self.power_floor > 0.0) {
            return Err(Error::Config(format!("power floor must be positive, got {}", self.power_floor)));
        }
        if self.segment_frames == 0 {
            return Err(Error::Config("segment length must be positive".into()));
        }
        Ok(())
    }

    /// Spectrum and log-power spectra of `w`.
    pub fn analyze(&self, w: &Waveform) -> Result<(ComplexSpectrogram, LpsFeatures)> {
        let spec = stft(w, &self.stft())?;
        let lps = to_lps(&spec, self.power_floor)?;
        Ok((spec, lps))
    }
}
