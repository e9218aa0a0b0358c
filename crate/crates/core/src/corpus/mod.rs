//! Source- and target-domain datasets.
//!
//! The source domain pairs noisy speech with its clean reference under
//! stationary noises; the target domain holds only noisy speech under a
//! non-stationary noise. A held-out test split keeps clean references for
//! evaluation. Speech and noise come from seeded synthetic generators, and
//! datasets are exchanged on disk as a JSON-lines manifest plus WAV files.

mod mix;
mod synth;

pub use mix::{measured_snr_db, mix_at_snr, Mixture};
pub use synth::{synth_noise, synth_speech_like, NoiseKind, MAX_SPEECH_S, MIN_SPEECH_S};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::{normalize_jointly, read_wav, write_wav};
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::parallel::Exec;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CLASSES_FILE: &str = "classes.json";

/// Extra noise appended beyond the utterance so the mixer has offsets to draw from.
const NOISE_SLACK_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseClass {
    pub id: u32,
    pub name: String,
    pub stationary: bool,
    pub kind: NoiseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Source,
    Target,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Source => "source",
            Split::Target => "target",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Source => 1,
            Split::Target => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusExample {
    pub utterance_id: String,
    pub split: Split,
    pub noisy: Waveform,
    pub clean: Option<Waveform>,
    pub noise_class: u32,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub source: Vec<CorpusExample>,
    pub target: Vec<CorpusExample>,
    pub test: Vec<CorpusExample>,
    /// Classes the discriminator predicts, ids `1..=C`.
    pub classes: Vec<NoiseClass>,
    /// Test-only noise types, ids above `C`.
    pub unseen_classes: Vec<NoiseClass>,
    pub seed: u64,
}

impl Corpus {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Checks the domain and roster invariants.
    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i + 1 {
                return Err(Error::Config(format!(
                    "class ids must be contiguous from 1, found {} at position {}",
                    c.id,
                    i + 1
                )));
            }
        }
        let known = |id: u32| {
            self.classes.iter().chain(&self.unseen_classes).any(|c| c.id == id)
        };
        for ex in self.source.iter().chain(&self.target).chain(&self.test) {
            if !known(ex.noise_class) {
                return Err(Error::Config(format!(
                    "{} references unknown noise class {}",
                    ex.utterance_id, ex.noise_class
                )));
            }
            if let Some(clean) = &ex.clean {
                if clean.len() != ex.noisy.len() {
                    return Err(Error::Shape(format!(
                        "{}: clean has {} samples, noisy {}",
                        ex.utterance_id,
                        clean.len(),
                        ex.noisy.len()
                    )));
                }
            }
        }
        for ex in self.source.iter().chain(&self.test) {
            if ex.clean.is_none() {
                return Err(Error::Config(format!("{} is missing its clean reference", ex.utterance_id)));
            }
            if ex.noise_class as usize > self.classes.len() && ex.split == Split::Source {
                return Err(Error::Config(format!("{} uses a test-only class", ex.utterance_id)));
            }
        }
        if self.target.iter().any(|e| e.noise_class as usize > self.classes.len()) {
            return Err(Error::Config("target examples must use a trained class".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub kind: NoiseKind,
}

impl ClassSpec {
    fn of(kind: NoiseKind) -> Self {
        Self { name: kind.name().to_string(), kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub sample_rate_hz: u32,
    pub source_utterances: usize,
    pub target_utterances: usize,
    pub test_utterances: usize,
    pub source_snrs_db: Vec<f64>,
    pub adaptation_snr_db: f64,
    pub test_snrs_db: Vec<f64>,
    pub min_utterance_s: f64,
    pub max_utterance_s: f64,
    /// Training roster. Stationary kinds form the source domain, the
    /// non-stationary ones the target domain.
    pub classes: Vec<ClassSpec>,
    pub test_noises: Vec<NoiseKind>,
    /// Store clean references for target examples too. Adaptation never
    /// reads them; only the supervised upper-bound model does.
    pub target_clean_refs: bool,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        use NoiseKind::*;
        Self {
            sample_rate_hz: crate::dsp::DEFAULT_SAMPLE_RATE,
            source_utterances: 40,
            target_utterances: 40,
            test_utterances: 12,
            source_snrs_db: vec![-5.0, 5.0, 15.0],
            adaptation_snr_db: 0.0,
            test_snrs_db: vec![-3.0, 3.0, 6.0, 9.0, 12.0],
            min_utterance_s: 1.0,
            max_utterance_s: 1.5,
            classes: [White, Pink, Brown, LowBand, HighBand, Cry].map(ClassSpec::of).to_vec(),
            test_noises: vec![Cry, Babble],
            target_clean_refs: true,
            seed: 1234,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("class roster is empty".into()));
        }
        if self.source_snrs_db.is_empty() {
            return Err(Error::Config("source SNR grid is empty".into()));
        }
        if self.test_utterances > 0 && self.test_snrs_db.is_empty() {
            return Err(Error::Config("test SNR grid is empty".into()));
        }
        if !self.classes.iter().any(|c| c.kind.is_stationary()) {
            return Err(Error::Config("roster has no stationary (source) class".into()));
        }
        if self.target_utterances > 0 && !self.classes.iter().any(|c| !c.kind.is_stationary()) {
            return Err(Error::Config("roster has no non-stationary (target) class".into()));
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("class names must be unique".into()));
        }
        if !(MIN_SPEECH_S..=MAX_SPEECH_S).contains(&self.min_utterance_s)
            || !(self.min_utterance_s..=MAX_SPEECH_S).contains(&self.max_utterance_s)
        {
            return Err(Error::Config(format!(
                "utterance duration range [{}, {}] must lie within [{MIN_SPEECH_S}, {MAX_SPEECH_S}]",
                self.min_utterance_s, self.max_utterance_s
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    /// `(N, M)`: source and target example counts this config produces.
    pub fn planned_sizes(&self) -> (usize, usize) {
        let stationary = self.classes.iter().filter(|c| c.kind.is_stationary()).count();
        (self.source_utterances * stationary * self.source_snrs_db.len(), self.target_utterances)
    }

    pub fn roster(&self) -> Vec<NoiseClass> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| NoiseClass {
                id: i as u32 + 1,
                name: c.name.clone(),
                stationary: c.kind.is_stationary(),
                kind: c.kind,
            })
            .collect()
    }
}

/// SplitMix64-style seed derivation so every example has its own stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

struct MixJob<'a> {
    split: Split,
    utterance: usize,
    class: &'a NoiseClass,
    snr_index: usize,
    snr_db: f64,
    keep_clean: bool,
}

fn utterance_id(split: Split, index: usize) -> String {
    let prefix = match split {
        Split::Source => 's',
        Split::Target => 't',
        Split::Test => 'e',
    };
    format!("{prefix}{index:04}")
}

/// Synthesizes all three splits. Output order is (utterance, class, SNR)
/// within each split regardless of `exec`.
pub fn build_corpus(cfg: &CorpusConfig, exec: Exec) -> Result<Corpus> {
    cfg.validate()?;
    let classes = cfg.roster();
    let stationary: Vec<&NoiseClass> = classes.iter().filter(|c| c.stationary).collect();
    let targets: Vec<&NoiseClass> = classes.iter().filter(|c| !c.stationary).collect();

    let mut unseen_classes = Vec::new();
    let mut test_classes = Vec::new();
    for &kind in &cfg.test_noises {
        match classes.iter().find(|c| c.kind == kind) {
            Some(c) => test_classes.push(c.clone()),
            None => {
                let c = NoiseClass {
                    id: (classes.len() + unseen_classes.len() + 1) as u32,
                    name: kind.name().to_string(),
                    stationary: kind.is_stationary(),
                    kind,
                };
                unseen_classes.push(c.clone());
                test_classes.push(c);
            }
        }
    }

    let speech = |split: Split, count: usize| -> Result<Vec<Waveform>> {
        exec.map_range(count, |i| {
            let seed = derive_seed(cfg.seed, &[split.tag(), i as u64]);
            let duration = ChaCha8Rng::seed_from_u64(seed)
                .random_range(cfg.min_utterance_s..=cfg.max_utterance_s);
            synth_speech_like(duration, seed, cfg.sample_rate_hz)
        })
        .into_iter()
        .collect()
    };
    let source_speech = speech(Split::Source, cfg.source_utterances)?;
    let target_speech = speech(Split::Target, cfg.target_utterances)?;
    let test_speech = speech(Split::Test, cfg.test_utterances)?;

    let mut jobs = Vec::new();
    for u in 0..cfg.source_utterances {
        for class in &stationary {
            for (k, &snr) in cfg.source_snrs_db.iter().enumerate() {
                jobs.push(MixJob { split: Split::Source, utterance: u, class, snr_index: k, snr_db: snr, keep_clean: true });
            }
        }
    }
    for u in 0..cfg.target_utterances {
        let class = targets[u % targets.len()];
        jobs.push(MixJob {
            split: Split::Target,
            utterance: u,
            class,
            snr_index: 0,
            snr_db: cfg.adaptation_snr_db,
            keep_clean: cfg.target_clean_refs,
        });
    }
    for u in 0..cfg.test_utterances {
        for class in &test_classes {
            for (k, &snr) in cfg.test_snrs_db.iter().enumerate() {
                jobs.push(MixJob { split: Split::Test, utterance: u, class, snr_index: k, snr_db: snr, keep_clean: true });
            }
        }
    }

    let examples: Vec<CorpusExample> = exec
        .map(&jobs, |job| -> Result<CorpusExample> {
            let clean = match job.split {
                Split::Source => &source_speech[job.utterance],
                Split::Target => &target_speech[job.utterance],
                Split::Test => &test_speech[job.utterance],
            };
            let seed = derive_seed(
                cfg.seed,
                &[job.split.tag(), job.utterance as u64, job.class.id as u64, job.snr_index as u64],
            );
            let noise = synth_noise(
                job.class.kind,
                clean.duration_s() + NOISE_SLACK_S,
                seed,
                cfg.sample_rate_hz,
            )?;
            let mix = mix_at_snr(clean, &noise, job.snr_db, seed.rotate_left(17))?;
            Ok(CorpusExample {
                utterance_id: utterance_id(job.split, job.utterance),
                split: job.split,
                noisy: mix.noisy,
                clean: job.keep_clean.then(|| clean.clone()),
                noise_class: job.class.id,
                snr_db: job.snr_db,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut corpus = Corpus {
        source: Vec::new(),
        target: Vec::new(),
        test: Vec::new(),
        classes,
        unseen_classes,
        seed: cfg.seed,
    };
    for ex in examples {
        match ex.split {
            Split::Source => corpus.source.push(ex),
            Split::Target => corpus.target.push(ex),
            Split::Test => corpus.test.push(ex),
        }
    }
    if corpus.target.len() >= corpus.source.len() && !corpus.target.is_empty() {
        log::warn!(
            "target set (M = {}) is not smaller than source set (N = {})",
            corpus.target.len(),
            corpus.source.len()
        );
    }
    corpus.validate()?;
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub split: Split,
    pub noisy_path: String,
    pub clean_path: Option<String>,
    pub noise_class: u32,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassRoster {
    classes: Vec<NoiseClass>,
    unseen_classes: Vec<NoiseClass>,
    seed: u64,
}

fn snr_tag(snr_db: f64) -> String {
    let sign = if snr_db < 0.0 { 'm' } else { 'p' };
    format!("{sign}{}", snr_db.abs()).replace('.', "_")
}

fn class_name(corpus: &Corpus, id: u32) -> &str {
    corpus
        .classes
        .iter()
        .chain(&corpus.unseen_classes)
        .find(|c| c.id == id)
        .map_or("unknown", |c| c.name.as_str())
}

/// Writes WAVs, `manifest.jsonl` and `classes.json` under `dir`; returns the
/// manifest path. Noisy/clean pairs that exceed full scale are rescaled
/// together so their SNR is unchanged.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    let mut lines = String::new();
    for ex in corpus.source.iter().chain(&corpus.target).chain(&corpus.test) {
        let sub = Path::new("wav").join(ex.split.as_str());
        fs::create_dir_all(dir.join(&sub))?;
        let stem = format!(
            "{}_{}_{}",
            ex.utterance_id,
            class_name(corpus, ex.noise_class),
            snr_tag(ex.snr_db)
        );
        let mut noisy = ex.noisy.clone();
        let mut clean = ex.clean.clone();
        match clean.as_mut() {
            Some(c) => normalize_jointly(&mut [&mut noisy, c]),
            None => normalize_jointly(&mut [&mut noisy]),
        };
        let noisy_rel = sub.join(format!("{stem}.wav"));
        write_wav(&dir.join(&noisy_rel), &noisy)?;
        let clean_rel = match &clean {
            Some(c) => {
                let rel = sub.join(format!("{stem}_clean.wav"));
                write_wav(&dir.join(&rel), c)?;
                Some(rel)
            }
            None => None,
        };
        let rec = ManifestRecord {
            utterance_id: ex.utterance_id.clone(),
            split: ex.split,
            noisy_path: path_string(&noisy_rel),
            clean_path: clean_rel.as_deref().map(path_string),
            noise_class: ex.noise_class,
            snr_db: ex.snr_db,
        };
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, lines)?;
    let roster = ClassRoster {
        classes: corpus.classes.clone(),
        unseen_classes: corpus.unseen_classes.clone(),
        seed: corpus.seed,
    };
    let mut f = fs::File::create(dir.join(CLASSES_FILE))?;
    f.write_all(serde_json::to_string_pretty(&roster)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

fn path_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Parses a JSON-lines manifest. Blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads a manifest and its audio. When `classes.json` is absent the roster
/// is inferred from the ids used by source and target rows.
pub fn load_corpus(manifest: &Path, exec: Exec) -> Result<Corpus> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let records = read_manifest(manifest)?;
    let roster_path = dir.join(CLASSES_FILE);
    let roster = if roster_path.exists() {
        serde_json::from_str::<ClassRoster>(&fs::read_to_string(&roster_path)?)?
    } else {
        let mut ids: BTreeMap<u32, bool> = BTreeMap::new();
        for r in records.iter().filter(|r| r.split != Split::Test) {
            ids.insert(r.noise_class, r.split == Split::Source);
        }
        let max = ids.keys().next_back().copied().unwrap_or(0);
        ClassRoster {
            classes: (1..=max)
                .map(|id| NoiseClass {
                    id,
                    name: format!("class{id}"),
                    stationary: ids.get(&id).copied().unwrap_or(true),
                    kind: NoiseKind::White,
                })
                .collect(),
            unseen_classes: Vec::new(),
            seed: 0,
        }
    };

    let loaded: Vec<CorpusExample> = exec
        .map(&records, |r| -> Result<CorpusExample> {
            Ok(CorpusExample {
                utterance_id: r.utterance_id.clone(),
                split: r.split,
                noisy: read_wav(&dir.join(&r.noisy_path))?,
                clean: r.clean_path.as_ref().map(|p| read_wav(&dir.join(p))).transpose()?,
                noise_class: r.noise_class,
                snr_db: r.snr_db,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut corpus = Corpus {
        source: Vec::new(),
        target: Vec::new(),
        test: Vec::new(),
        classes: roster.classes,
        unseen_classes: roster.unseen_classes,
        seed: roster.seed,
    };
    for ex in loaded {
        match ex.split {
            Split::Source => corpus.source.push(ex),
            Split::Target => corpus.target.push(ex),
            Split::Test => corpus.test.push(ex),
        }
    }
    corpus.validate()?;
    Ok(corpus)
}
