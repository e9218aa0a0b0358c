use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[corpus]
source_utterances = 2
target_utterances = 2
test_utterances = 1
min_utterance_s = 1.0
max_utterance_s = 1.0
test_snrs_db = [0.0, 6.0]
test_noises = ["cry"]
seed = 5

[model]
encoder_hidden = 4
decoder_hidden = 4
discriminator_hidden = 4

[train]
epochs = 2
batch_size = 8
lr_se = 0.001
lr_disc = 0.001
checkpoint_every = 1
"#;

fn datse(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_datse"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env_remove("DATSE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), format!("{SMALL}\n{extra}")).unwrap();
    ok(&datse(dir.path(), &["--config", "run.toml", "synth", "--out", "corpus"]));
    dir
}

fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn default_synth_sizes_and_seed_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&datse(dir.path(), &["synth", "--out", "a"]));
    assert!(stdout.contains("source examples (N): 600"), "{stdout}");
    assert!(stdout.contains("target examples (M): 40"), "{stdout}");
    let rows = jsonl(&dir.path().join("a/manifest.jsonl"));
    assert_eq!(rows.iter().filter(|r| r["split"] == "source").count(), 600);
    assert_eq!(rows.iter().filter(|r| r["split"] == "target").count(), 40);
    assert!(dir.path().join("a/config.resolved.toml").is_file());

    fs::write(dir.path().join("s.toml"), SMALL).unwrap();
    for out in ["b", "c"] {
        ok(&datse(dir.path(), &["--config", "s.toml", "synth", "--out", out]));
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("b/manifest.jsonl"), read("c/manifest.jsonl"));
    assert_eq!(read("b/wav/source/s0000_white_m5.wav"), read("c/wav/source/s0000_white_m5.wav"));

    let reseeded = Command::new(env!("CARGO_BIN_EXE_datse"))
        .args(["--workdir", dir.path().to_str().unwrap(), "--config", "s.toml", "synth", "--out", "d"])
        .env("DATSE_SEED", "99")
        .output()
        .unwrap();
    ok(&reseeded);
    assert_ne!(read("b/wav/source/s0000_white_m5.wav"), read("d/wav/source/s0000_white_m5.wav"));
    assert!(String::from_utf8(read("d/config.resolved.toml")).unwrap().contains("seed = 99"));
}

#[test]
fn config_errors_exit_two_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[train]\nlamda = 0.1\n").unwrap();
    let out = datse(dir.path(), &["--config", "bad.toml", "synth", "--out", "x"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("x").exists());

    fs::write(dir.path().join("neg.toml"), "[train]\nlambda = -1.0\n").unwrap();
    let out = datse(dir.path(), &["--config", "neg.toml", "synth", "--out", "y"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("y").exists());

    let out = datse(dir.path(), &["--config", "missing.toml", "synth", "--out", "z"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_modes_share_initial_weights() {
    let dir = setup("");
    let w = dir.path();
    for mode in ["baseline", "dat", "oracle"] {
        ok(&datse(w, &["--config", "run.toml", "train", "--manifest", "corpus/manifest.jsonl", "--out", mode, "--mode", mode]));
    }
    let read = |p: &str| fs::read(w.join(p)).unwrap();
    assert_eq!(read("baseline/initial.ckpt"), read("dat/initial.ckpt"));
    assert_eq!(read("baseline/initial.ckpt"), read("oracle/initial.ckpt"));
    assert_ne!(read("baseline/final.ckpt"), read("dat/final.ckpt"));
    for mode in ["baseline", "dat", "oracle"] {
        assert!(w.join(mode).join("epoch_001.ckpt").is_file());
        assert!(w.join(mode).join("epoch_002.ckpt").is_file());
        assert!(w.join(mode).join("config.resolved.toml").is_file());
    }

    let base = json(&w.join("baseline/summary.json"));
    let dat = json(&w.join("dat/summary.json"));
    assert_eq!(base["initial_checkpoint_sha256"], dat["initial_checkpoint_sha256"]);
    assert_eq!(base["target_rows"], 0);
    let source_rows = base["source_rows"].as_u64().unwrap();
    assert_eq!(base["steps"].as_u64().unwrap(), 2 * source_rows.div_ceil(8));
    assert!(dat["target_rows"].as_u64().unwrap() > 0);

    let base_log = jsonl(&w.join("baseline/metrics.jsonl"));
    let dat_log = jsonl(&w.join("dat/metrics.jsonl"));
    assert_eq!(base_log.len() as u64, base["steps"].as_u64().unwrap());
    assert!(base_log.iter().all(|m| m.get("l_dat").is_none() && m.get("l_regress").is_some()));
    assert!(dat_log.iter().all(|m| m.get("l_dat").is_some()));
}

#[test]
fn oracle_without_target_references_is_a_config_error() {
    let dir = setup("");
    let w = dir.path();
    fs::write(w.join("norefs.toml"), SMALL.replace("seed = 5", "seed = 5\ntarget_clean_refs = false")).unwrap();
    ok(&datse(w, &["--config", "norefs.toml", "synth", "--out", "c2"]));
    let out = datse(w, &["--config", "norefs.toml", "train", "--manifest", "c2/manifest.jsonl", "--out", "o", "--mode", "oracle"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let out = datse(w, &["--config", "norefs.toml", "train", "--manifest", "c2/manifest.jsonl", "--out", "d", "--mode", "dat"]);
    ok(&out);
    let out = datse(w, &["train", "--manifest", "nope.jsonl", "--out", "x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn numeric_blowup_exits_four_with_snapshot() {
    let dir = setup("");
    let w = dir.path();
    fs::write(w.join("hot.toml"), SMALL.replace("lr_se = 0.001", "lr_se = 1e38")).unwrap();
    let out = datse(w, &["--config", "hot.toml", "train", "--manifest", "corpus/manifest.jsonl", "--out", "hot", "--mode", "baseline"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(w.join("hot/abort.ckpt").is_file());
    assert!(!w.join("hot/final.ckpt").exists());
}

#[test]
fn enhance_files_and_directories() {
    let dir = setup("");
    let w = dir.path();
    ok(&datse(w, &["--config", "run.toml", "train", "--manifest", "corpus/manifest.jsonl", "--out", "m", "--epochs", "1"]));
    let test_dir = w.join("corpus/wav/test");
    let inputs: Vec<_> = fs::read_dir(&test_dir).unwrap().map(|e| e.unwrap().path()).collect();
    let k = inputs.len();
    assert!(k >= 4);
    for out in ["e1", "e2"] {
        ok(&datse(w, &["--config", "run.toml", "enhance", "--checkpoint", "m/final.ckpt", "--input", "corpus/wav/test", "--out", out]));
    }
    let outputs: Vec<_> = fs::read_dir(w.join("e1")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(outputs.len(), k);
    for input in &inputs {
        let name = input.file_name().unwrap();
        let a = hound::WavReader::open(input).unwrap();
        let b = hound::WavReader::open(w.join("e1").join(name)).unwrap();
        assert_eq!(a.duration(), b.duration());
        assert_eq!(b.spec().bits_per_sample, 16);
        assert_eq!(fs::read(w.join("e1").join(name)).unwrap(), fs::read(w.join("e2").join(name)).unwrap());
    }

    let single = inputs[0].strip_prefix(w).unwrap().to_str().unwrap().to_string();
    ok(&datse(w, &["--config", "run.toml", "enhance", "--checkpoint", "m/final.ckpt", "--input", &single, "--out", "e3"]));
    assert_eq!(fs::read_dir(w.join("e3")).unwrap().count(), 1);

    fs::write(w.join("broken.ckpt"), b"DATSE1\x05\x00\x00\x00{}").unwrap();
    let out = datse(w, &["enhance", "--checkpoint", "broken.ckpt", "--input", "corpus/wav/test", "--out", "e4"]);
    assert_eq!(code(&out), 3);
}

fn write_pairs(w: &Path, name: &str, pairs: &[(&str, &str, &str)]) {
    let text: String = pairs
        .iter()
        .map(|(id, r, t)| {
            format!(
                "{{\"utterance_id\":\"{id}\",\"noise_class\":\"cry\",\"snr_db\":0.0,\"reference_path\":\"{r}\",\"test_path\":\"{t}\"}}\n"
            )
        })
        .collect();
    fs::write(w.join(name), text).unwrap();
}

#[test]
fn eval_reports_and_errors() {
    let dir = setup("");
    let w = dir.path();
    let clean = "corpus/wav/test/e0000_cry_p0_clean.wav";
    write_pairs(w, "same.jsonl", &[("a", clean, clean)]);
    ok(&datse(w, &["eval", "--pairs", "same.jsonl", "--out", "r1"]));
    let rows = fs::read_to_string(w.join("r1/report.csv")).unwrap();
    let row: Vec<&str> = rows.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3], "35");
    assert!((row[4].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(json(&w.join("r1/report.json"))["notes"]["pesq"], "external");

    fs::write(w.join("empty.jsonl"), "").unwrap();
    ok(&datse(w, &["eval", "--pairs", "empty.jsonl", "--out", "r2"]));
    assert_eq!(fs::read_to_string(w.join("r2/report.csv")).unwrap().lines().count(), 1);

    write_pairs(w, "missing.jsonl", &[("a", clean, clean), ("b", "gone.wav", clean), ("c", clean, "also_gone.wav")]);
    let out = datse(w, &["eval", "--pairs", "missing.jsonl", "--out", "r3"]);
    assert_ne!(code(&out), 0);
    let errors = fs::read_to_string(w.join("r3/errors.txt")).unwrap();
    assert!(errors.contains("b:") && errors.contains("c:") && !errors.contains("a:"), "{errors}");

    fs::write(w.join("pesq.csv"), "utterance_id,metric,value\na,pesq,2.5\na,pesq,3.5\n").unwrap();
    ok(&datse(w, &["eval", "--pairs", "same.jsonl", "--out", "r4", "--external-scores", "pesq.csv"]));
    let header = fs::read_to_string(w.join("r4/report.csv")).unwrap();
    assert!(header.starts_with("utterance_id,noise_class,snr_db,ssnr_db,stoi,pesq\n"));
    assert!(header.contains(",3.5"));

    fs::write(w.join("bad.csv"), "utterance_id,metric,value\na,pesq\n").unwrap();
    let out = datse(w, &["eval", "--pairs", "same.jsonl", "--out", "r5", "--external-scores", "bad.csv"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn gap_mode_on_reference_averages() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    for (name, ssnr, stoi, pesq) in
        [("b.csv", 0.522, 0.859, 2.329), ("a.csv", 3.047, 0.879, 2.508), ("o.csv", 6.954, 0.933, 3.272)]
    {
        fs::write(w.join(name), format!("utterance_id,noise_class,snr_db,ssnr_db,stoi,pesq\navg,cry,0,{ssnr},{stoi},{pesq}\n"))
            .unwrap();
    }
    let stdout = ok(&datse(w, &["eval", "--gap", "b.csv", "a.csv", "o.csv", "--out", "g"]));
    assert!(stdout.contains("pesq: adapted covers 19.0%"), "{stdout}");
    assert!(stdout.contains("ssnr_db: adapted covers 39.3%"), "{stdout}");
    assert!(stdout.contains("stoi: adapted covers 27.0%"), "{stdout}");
    let gap = json(&w.join("g/gap.json"));
    assert!((gap["pesq"]["coverage_pct"].as_f64().unwrap() - 18.98).abs() < 0.01);

    let out = datse(w, &["eval", "--gap", "b.csv", "b.csv", "b.csv", "--out", "g2"]);
    assert_eq!(code(&out), 3);
    let out = datse(w, &["eval", "--out", "g3"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn pipeline_is_deterministic() {
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = setup("");
        let w = dir.path();
        ok(&datse(w, &["--config", "run.toml", "train", "--manifest", "corpus/manifest.jsonl", "--out", "m"]));
        ok(&datse(w, &["--config", "run.toml", "enhance", "--checkpoint", "m/final.ckpt", "--manifest", "corpus/manifest.jsonl", "--out", "enh"]));
        ok(&datse(w, &["--config", "run.toml", "eval", "--pairs", "enh/eval_pairs.jsonl", "--out", "rep"]));
        ok(&datse(w, &["--config", "run.toml", "eval", "--pairs", "corpus/test_pairs.jsonl", "--out", "noisy"]));
        let r: Vec<Vec<u8>> = ["rep/report.csv", "rep/report.json", "rep/report_summary.csv", "noisy/report.csv"]
            .iter()
            .map(|p| fs::read(w.join(p)).unwrap())
            .collect();
        let summary = String::from_utf8(r[2].clone()).unwrap();
        assert!(summary.contains("cry,0,") && summary.contains("cry,avg,"), "{summary}");
        reports.push(r);
    }
    assert_eq!(reports[0], reports[1]);
}
