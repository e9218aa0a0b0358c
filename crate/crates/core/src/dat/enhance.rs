use crate::dsp::{desegment, from_lps, istft, segment, FeatureConfig, LpsFeatures, Waveform};
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Maps noisy log-power spectra to enhanced ones segment by segment.
pub fn enhance_lps(model: &ModelParams<f32>, noisy: &LpsFeatures, segment_frames: usize) -> Result<LpsFeatures> {
    if noisy.n_bins != model.config.feature_dim {
        return Err(Error::Shape(format!(
            "features have {} bins, model expects {}",
            noisy.n_bins, model.config.feature_dim
        )));
    }
    let mut normed = noisy.clone();
    model.input_norm.normalize(&mut normed.data);
    let mut segs = segment(&normed, segment_frames)?;
    for seg in &mut segs {
        let x: Vec<f32> = seg.data.iter().map(|v| *v as f32).collect();
        let y = model.predict(&x, seg.seg_len)?;
        seg.data = y.iter().map(|v| *v as f64).collect();
        model.output_norm.denormalize(&mut seg.data);
    }
    desegment(&segs, noisy.n_frames, noisy.config)
}

/// Enhances a waveform: analysis, per-segment network pass, resynthesis
/// with the noisy phase. The output has the input's length.
pub fn enhance(model: &ModelParams<f32>, noisy: &Waveform, cfg: &FeatureConfig) -> Result<Waveform> {
    cfg.validate()?;
    if noisy.len() < cfg.win_len {
        return Err(Error::Argument(format!(
            "audio has {} samples, shorter than one {}-sample frame",
            noisy.len(),
            cfg.win_len
        )));
    }
    let (spec, lps) = cfg.analyze(noisy)?;
    let enhanced = enhance_lps(model, &lps, cfg.segment_frames)?;
    let out = istft(&from_lps(&enhanced, &spec)?, noisy.len())?;
    Ok(out)
}
