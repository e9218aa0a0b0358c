use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainMode;
use crate::corpus::{derive_seed, CorpusExample};
use crate::dsp::{segment, FeatureConfig, LpsFeatures};
use crate::error::{Error, Result};
use crate::nn::FeatureNorm;
use crate::parallel::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// Log-power spectra of one corpus example.
#[derive(Debug, Clone)]
pub struct ExampleFeatures {
    pub utterance_id: String,
    pub domain: Domain,
    pub label: u32,
    pub noisy: LpsFeatures,
    pub clean: Option<LpsFeatures>,
}

/// Analyzes every example; order follows `examples`.
pub fn extract_features(
    examples: &[CorpusExample],
    domain: Domain,
    cfg: &FeatureConfig,
    exec: Exec,
) -> Result<Vec<ExampleFeatures>> {
    cfg.validate()?;
    exec.map(examples, |ex| -> Result<ExampleFeatures> {
        let (_, noisy) = cfg.analyze(&ex.noisy)?;
        let clean = ex.clean.as_ref().map(|c| cfg.analyze(c).map(|(_, l)| l)).transpose()?;
        Ok(ExampleFeatures {
            utterance_id: ex.utterance_id.clone(),
            domain,
            label: ex.noise_class,
            noisy,
            clean,
        })
    })
    .into_iter()
    .collect()
}

/// Input normalizer from noisy source spectra and output normalizer from
/// clean source spectra.
pub fn fit_norms(source: &[ExampleFeatures]) -> Result<(FeatureNorm, FeatureNorm)> {
    let dim = source.first().ok_or_else(|| Error::Degenerate("no source examples".into()))?.noisy.n_bins;
    let input = FeatureNorm::fit(dim, source.iter().map(|e| e.noisy.data.as_slice()))?;
    let clean: Vec<&[f64]> = source.iter().filter_map(|e| e.clean.as_ref()).map(|c| c.data.as_slice()).collect();
    if clean.len() != source.len() {
        return Err(Error::Config("every source example needs a clean reference".into()));
    }
    let output = FeatureNorm::fit(dim, clean)?;
    Ok((input, output))
}

/// One normalized training segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRow {
    /// `frames x n_bins` normalized noisy features.
    pub input: Vec<f32>,
    /// Normalized clean features; present exactly for supervised rows.
    pub target: Option<Vec<f32>>,
    /// One-based noise class.
    pub label: u32,
    pub domain: Domain,
}

/// All training segments of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPool {
    pub rows: Vec<PoolRow>,
    pub frames: usize,
    pub n_bins: usize,
}

fn normalized_segments(lps: &LpsFeatures, norm: &FeatureNorm, frames: usize) -> Result<Vec<Vec<f32>>> {
    let mut normed = lps.clone();
    norm.normalize(&mut normed.data);
    Ok(segment(&normed, frames)?.into_iter().map(|s| s.data.iter().map(|v| *v as f32).collect()).collect())
}

impl SegmentPool {
    /// Segments the source and target examples that `mode` trains on.
    ///
    /// Baseline keeps source rows only; DAT adds target rows without
    /// targets; oracle adds target rows with their clean references.
    pub fn build(
        source: &[ExampleFeatures],
        target: &[ExampleFeatures],
        mode: TrainMode,
        input_norm: &FeatureNorm,
        output_norm: &FeatureNorm,
        frames: usize,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Argument("segment length must be positive".into()));
        }
        let n_bins = input_norm.dim();
        let mut rows = Vec::new();
        let target_rows: &[ExampleFeatures] = if mode == TrainMode::Baseline { &[] } else { target };
        for ex in source.iter().chain(target_rows) {
            if ex.noisy.n_bins != n_bins {
                return Err(Error::Shape(format!("{} has {} bins, expected {n_bins}", ex.utterance_id, ex.noisy.n_bins)));
            }
            let supervised = ex.domain == Domain::Source || mode == TrainMode::Oracle;
            let inputs = normalized_segments(&ex.noisy, input_norm, frames)?;
            let targets = if supervised {
                let clean = ex.clean.as_ref().ok_or_else(|| {
                    Error::Config(format!("{} has no clean reference (needed in {} mode)", ex.utterance_id, mode.as_str()))
                })?;
                normalized_segments(clean, output_norm, frames)?.into_iter().map(Some).collect()
            } else {
                vec![None; inputs.len()]
            };
            for (input, target) in inputs.into_iter().zip(targets) {
                rows.push(PoolRow { input, target, label: ex.label, domain: ex.domain });
            }
        }
        if rows.is_empty() {
            return Err(Error::Degenerate("no training segments".into()));
        }
        Ok(Self { rows, frames, n_bins })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.rows.iter().filter(|r| r.domain == domain).count()
    }
}

/// Rows of one optimization step.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub rows: Vec<&'a PoolRow>,
    pub frames: usize,
}

impl<'a> Batch<'a> {
    pub fn new(rows: Vec<&'a PoolRow>, frames: usize) -> Self {
        Self { rows, frames }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows that carry a clean target.
    pub fn supervised_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.target.is_some()).count()
    }

    pub fn domain_mask(&self) -> Vec<Domain> {
        self.rows.iter().map(|r| r.domain).collect()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.label).collect()
    }
}

/// Shuffles the pool with a stream derived from `(seed, epoch)` and cuts it
/// into batches of `batch_size`; the last batch may be smaller.
pub fn make_batches(pool: &SegmentPool, batch_size: usize, seed: u64, epoch: usize) -> Vec<Batch<'_>> {
    let mut order: Vec<usize> = (0..pool.rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xBA7C, epoch as u64]));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size.max(1))
        .map(|idx| Batch::new(idx.iter().map(|&i| &pool.rows[i]).collect(), pool.frames))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lps(frames: usize, bins: usize, base: f64) -> LpsFeatures {
        LpsFeatures {
            n_frames: frames,
            n_bins: bins,
            data: (0..frames * bins).map(|i| base + i as f64 * 0.01).collect(),
            config: FeatureConfig::default().stft(),
        }
    }

    fn example(id: usize, domain: Domain, label: u32, frames: usize, clean: bool) -> ExampleFeatures {
        ExampleFeatures {
            utterance_id: format!("u{id}"),
            domain,
            label,
            noisy: lps(frames, 3, id as f64),
            clean: clean.then(|| lps(frames, 3, -(id as f64))),
        }
    }

    fn pool(n_src: usize, n_tgt: usize, mode: TrainMode) -> SegmentPool {
        let src: Vec<_> = (0..n_src).map(|i| example(i, Domain::Source, 1 + (i % 3) as u32, 4, true)).collect();
        let tgt: Vec<_> = (0..n_tgt).map(|i| example(100 + i, Domain::Target, 4, 4, true)).collect();
        let norm = FeatureNorm::identity(3);
        SegmentPool::build(&src, &tgt, mode, &norm, &norm, 4).unwrap()
    }

    #[test]
    fn modes_select_rows() {
        let b = pool(5, 3, TrainMode::Baseline);
        assert_eq!((b.count(Domain::Source), b.count(Domain::Target)), (5, 0));
        let d = pool(5, 3, TrainMode::Dat);
        assert_eq!(d.count(Domain::Target), 3);
        assert!(d.rows.iter().all(|r| r.target.is_some() == (r.domain == Domain::Source)));
        let o = pool(5, 3, TrainMode::Oracle);
        assert!(o.rows.iter().all(|r| r.target.is_some()));
    }

    #[test]
    fn oracle_needs_target_references() {
        let src = vec![example(0, Domain::Source, 1, 4, true)];
        let tgt = vec![example(1, Domain::Target, 2, 4, false)];
        let norm = FeatureNorm::identity(3);
        let err = SegmentPool::build(&src, &tgt, TrainMode::Oracle, &norm, &norm, 4).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(SegmentPool::build(&src, &tgt, TrainMode::Dat, &norm, &norm, 4).is_ok());
    }

    #[test]
    fn long_examples_split_into_padded_segments() {
        let src = vec![example(0, Domain::Source, 1, 10, true)];
        let norm = FeatureNorm::identity(3);
        let p = SegmentPool::build(&src, &[], TrainMode::Baseline, &norm, &norm, 4).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.rows[2].input[2 * 3..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn epoch_is_a_permutation() {
        let p = pool(37, 11, TrainMode::Dat);
        let batches = make_batches(&p, 16, 9, 0);
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[2].len(), 16);
        let mut seen: Vec<*const PoolRow> = batches.iter().flat_map(|b| b.rows.iter().map(|r| *r as *const _)).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 48);
    }

    #[test]
    fn shuffle_depends_on_seed_and_epoch_only() {
        let p = pool(20, 5, TrainMode::Dat);
        let ids = |b: &[Batch]| -> Vec<Vec<u32>> { b.iter().map(|x| x.labels()).collect() };
        let key = |b: &[Batch]| -> Vec<*const PoolRow> { b.iter().flat_map(|x| x.rows.iter().map(|r| *r as *const _)).collect() };
        let a = make_batches(&p, 4, 1, 0);
        assert_eq!(key(&a), key(&make_batches(&p, 4, 1, 0)));
        assert_ne!(key(&a), key(&make_batches(&p, 4, 1, 1)));
        assert_ne!(key(&a), key(&make_batches(&p, 4, 2, 0)));
        assert_eq!(ids(&a).len(), 7);
    }

    #[test]
    fn no_target_means_pure_source_batches() {
        let p = pool(30, 0, TrainMode::Dat);
        for b in make_batches(&p, 16, 3, 0) {
            assert!(b.domain_mask().iter().all(|d| *d == Domain::Source));
        }
    }

    #[test]
    fn target_fraction_tracks_pool_share() {
        let p = pool(300, 60, TrainMode::Dat);
        let expected = 60.0 / 360.0;
        let (mut tgt, mut total, mut batches, mut epoch) = (0usize, 0usize, 0usize, 0usize);
        while batches < 500 {
            for b in make_batches(&p, 16, 5, epoch) {
                if batches == 500 {
                    break;
                }
                tgt += b.domain_mask().iter().filter(|d| **d == Domain::Target).count();
                total += b.len();
                batches += 1;
            }
            epoch += 1;
        }
        let frac = tgt as f64 / total as f64;
        assert!((frac - expected).abs() < 0.02, "{frac} vs {expected}");
    }
}
