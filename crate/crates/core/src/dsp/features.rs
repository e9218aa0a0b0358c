use num_complex::Complex64;

use super::{ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};

/// Frame-major log-power matrix (`n_frames` rows of `n_bins`).
#[derive(Debug, Clone, PartialEq)]
pub struct LpsFeatures {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<f64>,
    pub config: StftConfig,
}

impl LpsFeatures {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// A fixed-length window of feature frames. Rows are frames.
///
/// The trailing `pad_frames` rows are zero padding added to fill the last
/// segment of an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSegment {
    pub n_bins: usize,
    pub seg_len: usize,
    pub data: Vec<f64>,
    pub source_frame_offset: usize,
    pub pad_frames: usize,
}

impl FeatureSegment {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn valid_frames(&self) -> usize {
        self.seg_len - self.pad_frames
    }
}

/// `ln(max(|bin|^2, power_floor))`.
pub fn to_lps(s: &ComplexSpectrogram, power_floor: f64) -> Result<LpsFeatures> {
    if !(power_floor > 0.0) {
        return Err(Error::Argument(format!("power floor must be positive, got {power_floor}")));
    }
    Ok(LpsFeatures {
        n_frames: s.n_frames,
        n_bins: s.n_bins,
        data: s.data.iter().map(|c| c.norm_sqr().max(power_floor).ln()).collect(),
        config: s.config,
    })
}

/// Rebuilds complex bins from log-power magnitudes and the phase of `phase`.
/// Bins where `phase` has zero magnitude take angle 0.
pub fn from_lps(lps: &LpsFeatures, phase: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if lps.n_frames != phase.n_frames || lps.n_bins != phase.n_bins {
        return Err(Error::Argument(format!(
            "lps is {}x{} but phase spectrogram is {}x{}",
            lps.n_frames, lps.n_bins, phase.n_frames, phase.n_bins
        )));
    }
    let data = lps
        .data
        .iter()
        .zip(&phase.data)
        .map(|(&l, p)| {
            let mag = (l / 2.0).exp();
            let r = p.norm();
            if r > 0.0 {
                p * (mag / r)
            } else {
                Complex64::new(mag, 0.0)
            }
        })
        .collect();
    Ok(ComplexSpectrogram { data, ..phase.clone() })
}

/// Splits `lps` into `ceil(T / seg_len)` segments, zero-padding the last.
pub fn segment(lps: &LpsFeatures, seg_len: usize) -> Result<Vec<FeatureSegment>> {
    if seg_len == 0 {
        return Err(Error::Argument("segment length must be positive".into()));
    }
    let n_bins = lps.n_bins;
    let count = lps.n_frames.div_ceil(seg_len);
    Ok((0..count)
        .map(|s| {
            let start = s * seg_len;
            let end = (start + seg_len).min(lps.n_frames);
            let mut data = vec![0.0; seg_len * n_bins];
            data[..(end - start) * n_bins]
                .copy_from_slice(&lps.data[start * n_bins..end * n_bins]);
            FeatureSegment {
                n_bins,
                seg_len,
                data,
                source_frame_offset: start,
                pad_frames: seg_len - (end - start),
            }
        })
        .collect())
}

/// Concatenates segments in order and truncates to `total_frames`.
pub fn desegment(
    segs: &[FeatureSegment],
    total_frames: usize,
    config: StftConfig,
) -> Result<LpsFeatures> {
    let available: usize = segs.iter().map(|s| s.seg_len).sum();
    if total_frames > available {
        return Err(Error::Argument(format!(
            "requested {total_frames} frames but segments hold only {available}"
        )));
    }
    let n_bins = segs.first().map_or(config.n_bins(), |s| s.n_bins);
    if segs.iter().any(|s| s.n_bins != n_bins) {
        return Err(Error::Shape("segments disagree on bin count".into()));
    }
    let mut data: Vec<f64> = segs.iter().flat_map(|s| s.data.iter().copied()).collect();
    data.truncate(total_frames * n_bins);
    Ok(LpsFeatures { n_frames: total_frames, n_bins, data, config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_with(bins: Vec<Complex64>) -> ComplexSpectrogram {
        let cfg = StftConfig { fft_size: 4, win_len: 4, hop: 2, ..StftConfig::default() };
        let n_frames = bins.len() / 3;
        ComplexSpectrogram { n_frames, n_bins: 3, data: bins, config: cfg, sample_rate_hz: 16_000 }
    }

    fn lps_of(n_frames: usize, n_bins: usize, f: impl Fn(usize) -> f64) -> LpsFeatures {
        LpsFeatures {
            n_frames,
            n_bins,
            data: (0..n_frames * n_bins).map(f).collect(),
            config: StftConfig::default(),
        }
    }

    #[test]
    fn lps_closed_forms() {
        let e = std::f64::consts::E;
        let s = spec_with(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, e),
        ]);
        let l = to_lps(&s, 1e-10).unwrap();
        assert_eq!(l.data[0], 0.0);
        assert!((l.data[1] - (-23.025_850_929_940_457)).abs() < 1e-9);
        assert!((l.data[2] - 2.0).abs() < 1e-12);
        assert!(to_lps(&s, 0.0).is_err());
    }

    #[test]
    fn from_lps_closed_forms() {
        let phase = spec_with(vec![
            Complex64::new(0.0, 3.0),
            Complex64::new(5.0, 0.0),
            Complex64::new(0.0, 0.0),
        ]);
        let l = LpsFeatures { n_frames: 1, n_bins: 3, data: vec![0.0, 2.0, 0.0], config: phase.config };
        let s = from_lps(&l, &phase).unwrap();
        assert!((s.data[0] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((s.data[1] - Complex64::new(std::f64::consts::E, 0.0)).norm() < 1e-15);
        assert_eq!(s.data[2], Complex64::new(1.0, 0.0));

        let wrong = LpsFeatures { n_frames: 2, ..l };
        assert!(matches!(from_lps(&wrong, &phase), Err(Error::Argument(_))));
    }

    #[test]
    fn from_lps_inverts_to_lps_above_floor() {
        let bins: Vec<Complex64> = (0..30)
            .map(|i| Complex64::from_polar(if i % 7 == 0 { 0.0 } else { 0.1 * i as f64 }, i as f64))
            .collect();
        let s = spec_with(bins);
        let floor = 1e-10;
        let back = from_lps(&to_lps(&s, floor).unwrap(), &s).unwrap();
        for (a, b) in s.data.iter().zip(&back.data) {
            let expected = a.norm().max(floor.sqrt());
            assert!((b.norm() - expected).abs() <= 1e-9 * expected);
        }
    }

    #[test]
    fn lps_is_monotone_in_magnitude() {
        let mags = [1e-6, 1e-3, 0.5, 1.0, 2.0, 100.0];
        let s = spec_with(
            mags.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
        );
        let l = to_lps(&s, 1e-10).unwrap();
        assert!(l.data.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn segment_counts_and_padding() {
        let l = lps_of(64, 257, |i| i as f64);
        let segs = segment(&l, 32).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.pad_frames == 0));

        let l = lps_of(40, 257, |i| i as f64);
        let segs = segment(&l, 32).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].pad_frames, 24);
        assert_eq!(segs[1].source_frame_offset, 32);
        assert!(segs[1].data[8 * 257..].iter().all(|&x| x == 0.0));
        assert!(segment(&l, 0).is_err());
    }

    #[test]
    fn desegment_truncates_and_validates() {
        let l = lps_of(64, 5, |i| i as f64 * 0.5);
        let segs = segment(&l, 32).unwrap();
        assert_eq!(desegment(&segs, 64, l.config).unwrap(), l);
        let first = desegment(&segs[..1], 10, l.config).unwrap();
        assert_eq!(first.data, l.data[..50]);
        assert!(matches!(desegment(&segs, 65, l.config), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn segment_round_trip_is_exact(t in 1usize..=100, seed in any::<u64>()) {
            let l = lps_of(t, 7, |i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 - 500.25);
            let segs = segment(&l, 32).unwrap();
            prop_assert_eq!(segs.len(), t.div_ceil(32));
            prop_assert_eq!(desegment(&segs, t, l.config).unwrap(), l);
        }
    }
}
