use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{mean_square, Waveform};
use crate::error::{Error, Result};

/// Result of adding scaled noise to a clean signal.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub noisy: Waveform,
    /// Start of the noise slice that was used.
    pub noise_offset: usize,
    /// Gain applied to the noise slice.
    pub gain: f64,
}

/// Adds a seeded random slice of `noise` to `clean` at exactly `snr_db`
/// (power ratio over the whole utterance). No clipping is applied.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture> {
    if noise.len() < clean.len() {
        return Err(Error::Argument(format!(
            "noise has {} samples, clean needs {}",
            noise.len(),
            clean.len()
        )));
    }
    if clean.is_empty() {
        return Err(Error::Argument("clean signal is empty".into()));
    }
    let clean_power = clean.power();
    if clean_power == 0.0 {
        return Err(Error::Degenerate("clean signal has zero power".into()));
    }
    let slack = noise.len() - clean.len();
    let noise_offset =
        if slack == 0 { 0 } else { ChaCha8Rng::seed_from_u64(seed).random_range(0..=slack) };
    let slice = &noise.samples[noise_offset..noise_offset + clean.len()];
    let slice_power = mean_square(slice);
    if slice_power == 0.0 {
        return Err(Error::Degenerate(format!("noise slice at offset {noise_offset} is silent")));
    }
    let gain = (clean_power / slice_power).sqrt() / 10f64.powf(snr_db / 20.0);
    let samples = clean.samples.iter().zip(slice).map(|(c, n)| c + gain * n).collect();
    Ok(Mixture { noisy: Waveform::new(samples, clean.sample_rate_hz), noise_offset, gain })
}

/// `10 log10(P_clean / P_noise)` measured from the clean reference and the
/// noise component `noisy - clean`.
pub fn measured_snr_db(clean: &Waveform, noisy: &Waveform) -> f64 {
    let noise: Vec<f64> = noisy.samples.iter().zip(&clean.samples).map(|(y, x)| y - x).collect();
    10.0 * (clean.power() / mean_square(&noise)).log10()
}
