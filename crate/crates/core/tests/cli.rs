use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use sinomap::format::{self, Kind};
use sinomap::net::{AdamConfig, AdamState, NetSpec, NetworkParams};
use sinomap::pipeline;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.ini")
}

fn sinomap(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinomap"))
        .args(args)
        .arg("--config")
        .arg(smoke_config())
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .env("SINOMAP_THREADS", "2")
        .output()
        .expect("running sinomap")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn run_ok(args: &[&str], out: &Path) {
    let o = sinomap(args, out);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn files(root: &Path, acc: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            files(&p, acc);
        } else {
            acc.push(p);
        }
    }
}

/// Digests of every deterministic artifact (timings and report excluded).
fn digests(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut all = Vec::new();
    files(root, &mut all);
    all.into_iter()
        .filter(|p| {
            p.file_name().unwrap() != "timing.tsv" && !p.starts_with(root.join("report"))
        })
        .map(|p| {
            let d = Sha256::digest(fs::read(&p).unwrap()).to_vec();
            (p.strip_prefix(root).unwrap().to_path_buf(), d)
        })
        .collect()
}

const STAGES: [&str; 4] = ["simulate", "train", "enhance", "evaluate"];

#[test]
fn smoke_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let start = Instant::now();
    for stage in STAGES {
        run_ok(&[stage], out);
    }
    let report = sinomap(&["report"], out);
    assert_eq!(code(&report), 0);
    assert!(start.elapsed() < Duration::from_secs(300));

    let md = fs::read_to_string(out.join("report/report.md")).unwrap();
    for row in ["| FBP |", "| sup-CNN |", "| unsup-CNN |", "| semi-CNN |"] {
        assert!(md.contains(row), "missing row {row}");
    }
    assert!(!md.contains("n/a"));
    assert!(md.contains("Time (s)"));
    for m in ["sup", "unsup", "semi"] {
        let model = out.join(format!("models/dose_10/{m}"));
        assert!(model.join("model.netp").exists());
        assert!(model.join("model_e0002.netp").exists());
        let log = fs::read_to_string(model.join("train.log")).unwrap();
        assert!(log.starts_with("epoch\tstep\tmode\tdata_term\tprior_term\tsup_term\ttotal\n"));
        let timing = fs::read_to_string(out.join(format!("enhanced/dose_10/{m}/timing.tsv"))).unwrap();
        assert_eq!(timing.lines().count(), 3);
    }
    for stage_dir in ["data", "models", "enhanced", "metrics", "report"] {
        assert!(out.join(stage_dir).join("manifest.txt").exists(), "{stage_dir}");
    }
    assert!(out.join("images/dose_10/fbp/000.pgm").exists());

    // Rerunning every stage rewrites identical bytes.
    let before = digests(out);
    for stage in STAGES {
        run_ok(&[stage], out);
    }
    assert_eq!(before, digests(out));

    // A seed override conflicts with the existing manifests.
    let o = sinomap(&["simulate", "--seed", "99"], out);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    // Zero-initialized residual network leaves the inputs untouched.
    let ckpt = out.join("zero.netp");
    let params = NetworkParams::zeros(NetSpec::default()).unwrap();
    pipeline::save_checkpoint(&ckpt, &params, &AdamState::new(AdamConfig::default(), params.len())).unwrap();
    let input = out.join("data/dose_10/test");
    let o = Command::new(env!("CARGO_BIN_EXE_sinomap"))
        .args(["enhance", "--quiet", "--config"])
        .arg(smoke_config())
        .arg("--out")
        .arg(out)
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--input")
        .arg(&input)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["000.sino", "001.sino"] {
        let a = fs::read(input.join(name)).unwrap();
        let b = fs::read(out.join("enhanced/custom").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }

    // Dropping one method's metrics yields n/a cells and a warning status.
    fs::remove_file(out.join("metrics/dose_12.5/sup.tsv")).unwrap();
    let o = sinomap(&["report"], out);
    assert_eq!(code(&o), 4);
    assert!(fs::read_to_string(out.join("report/report.md")).unwrap().contains("n/a"));
}

#[test]
fn dump_writes_text_previews() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["simulate", "--dump"], dir.path());
    let preview = fs::read_to_string(dir.path().join("data/dose_10/test/000.sino.txt")).unwrap();
    assert!(preview.starts_with("kind Log, 64 angles x 90 detectors"));
    assert!(dir.path().join("data/dose_10/test/000.counts.txt").exists());
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_sinomap");
    let usage = Command::new(bin).arg("simulate").output().unwrap();
    assert_eq!(code(&usage), 1);
    let unknown = Command::new(bin).arg("bogus").output().unwrap();
    assert_eq!(code(&unknown), 1);

    let bad_cfg = dir.path().join("bad.ini");
    fs::write(&bad_cfg, "[experiment]\nseed = 1\n[phantom]\nsize = 64\n[geometry]\nn_angles = 8\nn_detectors = 90\n[scan]\nsigma = -1\n").unwrap();
    let invalid = Command::new(bin).args(["simulate", "--config"]).arg(&bad_cfg).output().unwrap();
    assert_eq!(code(&invalid), 2);

    let missing = sinomap(&["train"], dir.path());
    assert_eq!(code(&missing), 3);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing input"));

    let threads = Command::new(bin)
        .args(["simulate", "--config"])
        .arg(smoke_config())
        .env("SINOMAP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 1);
}

#[test]
fn sinogram_files_round_trip_and_reject_damage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.sino");
    let values = ndarray::Array2::from_shape_fn((90, 128), |(i, j)| ((i * 131 + j * 7) as f64).sin() * 1e3);
    format::write_sinogram(&path, Kind::Log, &values).unwrap();
    assert_eq!(format::read_sinogram(&path).unwrap().into_log().unwrap(), values);

    let mut bytes = fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(b"XINO");
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(format::read_sinogram(&path), Err(sinomap::Error::BadMagic { .. })));
    bytes[..4].copy_from_slice(b"SINO");
    bytes.truncate(bytes.len() - 8);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(format::read_sinogram(&path), Err(sinomap::Error::Truncated { .. })));
}
