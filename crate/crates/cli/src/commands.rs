//! The four subcommands. Each validates its configuration before creating
//! any output.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use datse_core::corpus::{build_corpus, load_corpus, read_manifest, write_corpus, Corpus, ManifestRecord, Split};
use datse_core::dat::{enhance, extract_features, fit_norms, Domain, SegmentPool, TrainMode, Trainer};
use datse_core::dsp::wav::{read_wav, write_wav};
use datse_core::dsp::FeatureConfig;
use datse_core::eval::{
    evaluate, gap_table, ingest_external_scores, read_rows_csv, EvalItem, GapCoverage, MetricReport,
};
use datse_core::nn::{load_checkpoint, save_checkpoint, write_checkpoint, ModelParams};
use datse_core::{Error, Exec, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const TEST_PAIRS_FILE: &str = "test_pairs.jsonl";
pub const EVAL_PAIRS_FILE: &str = "eval_pairs.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INITIAL_CHECKPOINT: &str = "initial.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const ABORT_CHECKPOINT: &str = "abort.ckpt";
pub const REPORT_STEM: &str = "report";
pub const ERRORS_FILE: &str = "errors.txt";

/// One reference/test pair for `eval`. Relative paths are resolved against
/// the directory holding the pairs file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub utterance_id: String,
    pub noise_class: String,
    pub snr_db: f64,
    pub reference_path: String,
    pub test_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunSummary {
    pub mode: TrainMode,
    pub steps: u64,
    pub epochs: usize,
    pub source_rows: usize,
    pub target_rows: usize,
    pub final_l_regress: Option<f64>,
    pub final_l_dat: Option<f64>,
    pub initial_checkpoint_sha256: String,
}

pub struct Context {
    pub workdir: PathBuf,
    pub exec: Exec,
}

impl Context {
    pub fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn class_names(corpus: &Corpus) -> BTreeMap<u32, String> {
    corpus.classes.iter().chain(&corpus.unseen_classes).map(|c| (c.id, c.name.clone())).collect()
}

fn file_stem(path: &str) -> String {
    Path::new(path).file_stem().map_or_else(|| path.to_string(), |s| s.to_string_lossy().into_owned())
}

/// Pairs of test-split clean references with `test_path(record)`.
fn test_pairs(
    records: &[ManifestRecord],
    names: &BTreeMap<u32, String>,
    reference_dir: &Path,
    test_path: impl Fn(&ManifestRecord) -> String,
) -> Vec<PairRecord> {
    records
        .iter()
        .filter(|r| r.split == Split::Test)
        .filter_map(|r| {
            let clean = r.clean_path.as_ref()?;
            Some(PairRecord {
                utterance_id: file_stem(&r.noisy_path),
                noise_class: names.get(&r.noise_class).cloned().unwrap_or_else(|| format!("class{}", r.noise_class)),
                snr_db: r.snr_db,
                reference_path: reference_dir.join(clean).to_string_lossy().into_owned(),
                test_path: test_path(r),
            })
        })
        .collect()
}

pub fn synth(ctx: &Context, cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let corpus = build_corpus(&cfg.corpus, ctx.exec)?;
    let dir = ctx.path(out);
    fs::create_dir_all(&dir)?;
    let manifest = write_corpus(&corpus, &dir)?;
    cfg.write_resolved(&dir)?;
    let records = read_manifest(&manifest)?;
    let pairs = test_pairs(&records, &class_names(&corpus), Path::new(""), |r| r.noisy_path.clone());
    write_jsonl(&dir.join(TEST_PAIRS_FILE), &pairs)?;

    println!("source examples (N): {}", corpus.source.len());
    println!("target examples (M): {}", corpus.target.len());
    println!("test examples: {}", corpus.test.len());
    println!("classes:");
    for c in &corpus.classes {
        let domain = if c.stationary { "source" } else { "target" };
        println!("  {} {} ({domain})", c.id, c.name);
    }
    for c in &corpus.unseen_classes {
        println!("  {} {} (test only)", c.id, c.name);
    }
    println!("manifest: {} sha256 {}", manifest.display(), sha256_hex(&fs::read(&manifest)?));
    Ok(())
}

pub fn train(ctx: &Context, cfg: &mut RunConfig, manifest: &Path, out: &Path) -> Result<TrainRunSummary> {
    cfg.validate()?;
    let manifest = ctx.path(manifest);
    if !manifest.is_file() {
        return Err(Error::Config(format!("manifest {} does not exist", manifest.display())));
    }
    let corpus = load_corpus(&manifest, ctx.exec)?;
    let model_cfg = cfg.model_config(corpus.num_classes())?;
    cfg.model.num_classes = Some(model_cfg.num_classes);
    cfg.train.num_classes = model_cfg.num_classes;
    let mode = cfg.train.mode;

    let source = extract_features(&corpus.source, Domain::Source, &cfg.dsp, ctx.exec)?;
    let target = match mode {
        TrainMode::Baseline => Vec::new(),
        _ => extract_features(&corpus.target, Domain::Target, &cfg.dsp, ctx.exec)?,
    };
    let (input_norm, output_norm) = fit_norms(&source)?;
    let pool = SegmentPool::build(&source, &target, mode, &input_norm, &output_norm, cfg.dsp.segment_frames)?;
    let mut model = ModelParams::<f32>::init(model_cfg, cfg.train.seed)?;
    model.input_norm = input_norm;
    model.output_norm = output_norm;

    let dir = ctx.path(out);
    fs::create_dir_all(&dir)?;
    cfg.write_resolved(&dir)?;
    let mut initial = Vec::new();
    write_checkpoint(&model, &mut initial)?;
    fs::write(dir.join(INITIAL_CHECKPOINT), &initial)?;
    let initial_sha = sha256_hex(&initial);

    let every = cfg.train.checkpoint_every;
    let mut log = BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    let mut trainer = Trainer::new(model, cfg.train.clone(), ctx.exec)?;
    let fitted = trainer.fit(
        &pool,
        |m| {
            serde_json::to_writer(&mut log, m)?;
            log.write_all(b"\n")?;
            Ok(())
        },
        |epoch, model| {
            if every > 0 && epoch % every == 0 {
                save_checkpoint(model, &dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            }
            Ok(())
        },
    );
    log.flush()?;
    let summary = match fitted {
        Ok(s) => s,
        Err(e @ Error::NumericAbort(_)) => {
            save_checkpoint(&trainer.model, &dir.join(ABORT_CHECKPOINT))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    save_checkpoint(&trainer.model, &dir.join(FINAL_CHECKPOINT))?;
    let run = TrainRunSummary {
        mode,
        steps: summary.steps,
        epochs: summary.epochs,
        source_rows: pool.count(Domain::Source),
        target_rows: pool.count(Domain::Target),
        final_l_regress: summary.final_l_regress,
        final_l_dat: summary.final_l_dat,
        initial_checkpoint_sha256: initial_sha,
    };
    write_json(&dir.join(SUMMARY_FILE), &run)?;
    println!(
        "{} training: {} steps over {} epochs ({} source / {} target segments)",
        mode.as_str(),
        run.steps,
        run.epochs,
        run.source_rows,
        run.target_rows
    );
    println!("initial checkpoint sha256 {}", run.initial_checkpoint_sha256);
    Ok(run)
}

/// What `enhance` reads.
pub enum EnhanceInput {
    /// A WAV file or a directory of WAV files.
    Audio(PathBuf),
    /// The test split of a corpus manifest.
    Manifest(PathBuf),
}

fn wav_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::Argument(format!("{} is neither a file nor a directory", path.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn check_dims(cfg: &FeatureConfig, model: &ModelParams<f32>) -> Result<()> {
    if cfg.n_bins() != model.config.feature_dim {
        return Err(Error::Config(format!(
            "dsp settings give {} bins but the checkpoint expects {}",
            cfg.n_bins(),
            model.config.feature_dim
        )));
    }
    Ok(())
}

/// Enhances every input into `out`, keeping file names. Returns the
/// written paths.
pub fn enhance_cmd(ctx: &Context, cfg: &RunConfig, checkpoint: &Path, input: &EnhanceInput, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.dsp.validate()?;
    let model = load_checkpoint(&ctx.path(checkpoint))?;
    check_dims(&cfg.dsp, &model)?;
    let (files, pairs) = match input {
        EnhanceInput::Audio(p) => (wav_files(&ctx.path(p))?, None),
        EnhanceInput::Manifest(m) => {
            let manifest = ctx.path(m);
            let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
            let corpus_dir = fs::canonicalize(&base)?;
            let records = read_manifest(&manifest)?;
            let names = read_class_names(&base)?;
            let files = records.iter().filter(|r| r.split == Split::Test).map(|r| base.join(&r.noisy_path)).collect();
            let pairs = test_pairs(&records, &names, &corpus_dir, |r| file_name(&r.noisy_path));
            (files, Some(pairs))
        }
    };
    let dir = ctx.path(out);
    fs::create_dir_all(&dir)?;
    let written: Vec<PathBuf> = ctx
        .exec
        .map(&files, |f| -> Result<PathBuf> {
            let noisy = read_wav(f)?;
            let enhanced = enhance(&model, &noisy, &cfg.dsp)?;
            let target = dir.join(f.file_name().unwrap_or_default());
            write_wav(&target, &enhanced)?;
            Ok(target)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    if let Some(pairs) = pairs {
        write_jsonl(&dir.join(EVAL_PAIRS_FILE), &pairs)?;
    }
    println!("enhanced {} files into {}", written.len(), dir.display());
    Ok(written)
}

fn file_name(p: &str) -> String {
    Path::new(p).file_name().map_or_else(|| p.to_string(), |s| s.to_string_lossy().into_owned())
}

fn read_class_names(corpus_dir: &Path) -> Result<BTreeMap<u32, String>> {
    #[derive(Deserialize)]
    struct Roster {
        classes: Vec<datse_core::corpus::NoiseClass>,
        unseen_classes: Vec<datse_core::corpus::NoiseClass>,
    }
    let path = corpus_dir.join(datse_core::corpus::CLASSES_FILE);
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let roster: Roster = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(roster.classes.into_iter().chain(roster.unseen_classes).map(|c| (c.id, c.name)).collect())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}

pub struct EvalRequest<'a> {
    pub pairs: Option<&'a Path>,
    pub out: &'a Path,
    pub external_scores: Option<&'a Path>,
    pub gap: Option<[&'a Path; 3]>,
}

pub fn eval_cmd(ctx: &Context, cfg: &RunConfig, req: &EvalRequest<'_>) -> Result<Option<MetricReport>> {
    cfg.eval.validate()?;
    if req.pairs.is_none() && req.gap.is_none() {
        return Err(Error::Usage("eval needs --pairs, --gap or both".into()));
    }
    let dir = ctx.path(req.out);
    let mut report = None;
    if let Some(pairs_path) = req.pairs {
        let pairs_path = ctx.path(pairs_path);
        let base = pairs_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let pairs = read_pairs(&pairs_path)?;
        let external = req.external_scores.map(|p| ingest_external_scores(&ctx.path(p))).transpose()?;
        let loaded = ctx.exec.map(&pairs, |p| -> std::result::Result<EvalItem, String> {
            let load = |rel: &str| read_wav(&base.join(rel)).map_err(|e| format!("{}: {e}", p.utterance_id));
            let (reference, test) = (load(&p.reference_path), load(&p.test_path));
            match (reference, test) {
                (Ok(reference), Ok(test)) => Ok(EvalItem {
                    utterance_id: p.utterance_id.clone(),
                    noise_class: p.noise_class.clone(),
                    snr_db: p.snr_db,
                    reference,
                    test,
                }),
                (Err(a), Err(b)) => Err(format!("{a}\n{b}")),
                (Err(e), _) | (_, Err(e)) => Err(e),
            }
        });
        let mut items = Vec::new();
        let mut errors = Vec::new();
        for r in loaded {
            match r {
                Ok(item) => items.push(item),
                Err(e) => errors.push(e),
            }
        }
        fs::create_dir_all(&dir)?;
        if !errors.is_empty() {
            let text = errors.join("\n") + "\n";
            fs::write(dir.join(ERRORS_FILE), &text)?;
            eprint!("{text}");
            return Err(Error::Argument(format!("{} evaluation inputs could not be read", errors.len())));
        }
        let rows = evaluate(&items, &cfg.eval, ctx.exec)?;
        let mut r = MetricReport::new(rows, serde_json::to_value(&cfg.eval)?);
        if let Some(scores) = external {
            r.merge_external(&scores)?;
        }
        r.write_all(&dir, REPORT_STEM)?;
        println!("evaluated {} pairs into {}", r.rows.len(), dir.display());
        for a in &r.aggregates {
            let snr = a.snr_db.map_or_else(|| "avg".to_string(), |s| format!("{s} dB"));
            let means: Vec<String> = a.means.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
            println!("  {} {snr}: {}", a.noise_class, means.join(", "));
        }
        report = Some(r);
    }
    if let Some([b, a, o]) = req.gap {
        let table = gap_table(&read_rows_csv(&ctx.path(b))?, &read_rows_csv(&ctx.path(a))?, &read_rows_csv(&ctx.path(o))?)?;
        fs::create_dir_all(&dir)?;
        write_gap(&dir, &table)?;
        for (metric, g) in &table {
            println!("{metric}: adapted covers {:.1}% of the gap ({} -> {} of {})", g.coverage_pct, g.baseline, g.adapted, g.oracle);
        }
    }
    Ok(report)
}

fn write_gap(dir: &Path, table: &BTreeMap<String, GapCoverage>) -> Result<()> {
    let mut text = String::from("metric,baseline,adapted,oracle,coverage_pct\n");
    for (m, g) in table {
        text.push_str(&format!("{m},{},{},{},{}\n", g.baseline, g.adapted, g.oracle, g.coverage_pct));
    }
    fs::write(dir.join("gap.csv"), text)?;
    write_json(&dir.join("gap.json"), table)
}
