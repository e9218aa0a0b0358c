//! 16-bit little-endian mono PCM RIFF files.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let reject = |reason: String| Error::AudioFormat { path: path.to_path_buf(), reason };
    if spec.channels != 1 {
        return Err(reject(format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(reject(format!(
            "expected 16-bit integer PCM, found {:?} with {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Quantizes to 16 bits, saturating anything outside the representable range.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &x in &w.samples {
        let q = (x * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64);
        writer.write_sample(q as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// If any sample across `signals` exceeds ±1, scales all of them by one
/// common factor so the joint peak becomes 0.99. Returns the factor applied.
pub fn normalize_jointly(signals: &mut [&mut Waveform]) -> f64 {
    let peak = signals.iter().map(|w| w.peak()).fold(0.0, f64::max);
    if peak <= 1.0 {
        return 1.0;
    }
    let g = 0.99 / peak;
    for w in signals.iter_mut() {
        w.samples.iter_mut().for_each(|x| *x *= g);
    }
    g
}
