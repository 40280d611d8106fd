//! Experiment stages behind the CLI: simulate, train, enhance, evaluate, report.
//!
//! Output tree under `out_dir`:
//!
//! ```text
//! data/clean/test/NNN.sino            noise-free test sinograms
//! data/high/{train_sup,test}/NNN.sino high-dose references
//! data/dose_M/{train_unsup,train_sup,test}/NNN.{sino,counts}
//! models/dose_M/{sup,unsup,semi}/     model.netp, train.log, sweeps.tsv
//! enhanced/dose_M/METHOD/             NNN.sino, timing.tsv
//! metrics/dose_M/METHOD.tsv           per-sample PSNR/SSIM by domain
//! images/dose_M/METHOD/NNN.pgm        FBP reconstructions
//! report/report.{md,tsv}
//! ```
//!
//! Each stage directory carries `manifest.txt` and `config.txt`; a stage run
//! against a directory produced under a different config fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{dose_name, ExperimentConfig};
use crate::error::{Error, Result};
use crate::format::{self, Kind, Window};
use crate::geometry::{fbp_reconstruct, forward_project, make_phantom};
use crate::metrics::{Domain, MetricReport};
use crate::net::{self, AdamState, NetworkParams};
use crate::noise::{sample_low_dose, PhotonData};
use crate::rng::{derive_seed, label};
use crate::trainer::{self, Event, Mode, TrainState};
use crate::Sinogram;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output switches shared by all stages.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ctx {
    pub quiet: bool,
    /// Write a text preview next to every sinogram file.
    pub dump: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn write_sino(&self, path: &Path, kind: Kind, values: &Sinogram) -> Result<()> {
        format::write_sinogram(path, kind, values)?;
        if self.dump {
            format::write_atomic(&path.with_extension(match kind {
                Kind::Log => "sino.txt",
                Kind::Counts => "counts.txt",
            }), preview(kind, values).as_bytes())?;
        }
        Ok(())
    }
}

fn preview(kind: Kind, values: &Sinogram) -> String {
    let (na, nd) = values.dim();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = format!("kind {kind:?}, {na} angles x {nd} detectors, min {lo:.6e}, max {hi:.6e}\n");
    for row in values.rows().into_iter().take(4) {
        let cells: Vec<String> = row.iter().take(8).map(|v| format!("{v:.5e}")).collect();
        let _ = writeln!(s, "{}{}", cells.join(" "), if nd > 8 { " ..." } else { "" });
    }
    if na > 4 {
        s.push_str("...\n");
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Set {
    TrainUnsup,
    TrainSup,
    Test,
}

impl Set {
    pub const ALL: [Set; 3] = [Set::TrainUnsup, Set::TrainSup, Set::Test];

    pub fn name(self) -> &'static str {
        match self {
            Set::TrainUnsup => "train_unsup",
            Set::TrainSup => "train_sup",
            Set::Test => "test",
        }
    }

    fn id(self) -> u64 {
        self as u64
    }

    pub fn count(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Set::TrainUnsup => cfg.n_train_unsup,
            Set::TrainSup => cfg.n_train_sup,
            Set::Test => cfg.n_test,
        }
    }
}

/// Paths of every artifact under one output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

fn sample_file(i: usize, ext: &str) -> String {
    format!("{i:03}.{ext}")
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn clean(&self, i: usize) -> PathBuf {
        self.data_dir().join("clean/test").join(sample_file(i, "sino"))
    }
    pub fn high(&self, set: Set, i: usize) -> PathBuf {
        self.data_dir().join("high").join(set.name()).join(sample_file(i, "sino"))
    }
    pub fn low(&self, mas: f64, set: Set, i: usize) -> PathBuf {
        self.data_dir().join(dose_name(mas)).join(set.name()).join(sample_file(i, "sino"))
    }
    pub fn counts(&self, mas: f64, set: Set, i: usize) -> PathBuf {
        self.data_dir().join(dose_name(mas)).join(set.name()).join(sample_file(i, "counts"))
    }
    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn model_dir(&self, mas: f64, mode: Mode) -> PathBuf {
        self.models_dir().join(dose_name(mas)).join(mode.as_str())
    }
    pub fn enhanced_root(&self) -> PathBuf {
        self.root.join("enhanced")
    }
    pub fn enhanced_dir(&self, mas: f64, method: &str) -> PathBuf {
        self.enhanced_root().join(dose_name(mas)).join(method)
    }
    pub fn metrics_dir(&self) -> PathBuf {
        self.root.join("metrics")
    }
    pub fn metrics(&self, mas: f64, method: &str) -> PathBuf {
        self.metrics_dir().join(dose_name(mas)).join(format!("{method}.tsv"))
    }
    pub fn images_dir(&self, mas: f64, method: &str) -> PathBuf {
        self.root.join("images").join(dose_name(mas)).join(method)
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// SHA-256 of the normalized config, ignoring the output directory.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    Sha256::digest(c.to_text().as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn manifest_text(cfg: &ExperimentConfig) -> String {
    format!(
        "sinomap_version = {VERSION}\nconfig_sha256 = {}\nseed = {}\n",
        config_hash(cfg),
        cfg.seed
    )
}

fn manifest_field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == key)
        .map(|(_, v)| v.trim())
}

/// Create the stage manifest, or check an existing one against `cfg`.
pub fn ensure_manifest(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join("manifest.txt");
    let want = manifest_text(cfg);
    if path.exists() {
        let have = fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if have == want {
            return Ok(());
        }
        let conflict = |message: String| Error::ManifestConflict {
            dir: dir.to_path_buf(),
            message,
        };
        let old_seed = manifest_field(&have, "seed").unwrap_or("?");
        if old_seed != cfg.seed.to_string() {
            return Err(conflict(format!(
                "outputs were produced with seed {old_seed}, config has seed {}",
                cfg.seed
            )));
        }
        return Err(conflict(format!(
            "outputs were produced under config {}, current config is {}",
            manifest_field(&have, "config_sha256").unwrap_or("?"),
            config_hash(cfg)
        )));
    }
    format::write_atomic(&path, want.as_bytes())?;
    format::write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())
}

fn stage_seed(cfg: &ExperimentConfig, tag: &str, parts: &[u64]) -> u64 {
    let mut tags = vec![label(tag)];
    tags.extend_from_slice(parts);
    derive_seed(cfg.seed, &tags)
}

pub fn cmd_simulate(cfg: &ExperimentConfig, ctx: Ctx) -> Result<()> {
    let lay = Layout::new(&cfg.out_dir);
    ensure_manifest(&lay.data_dir(), cfg)?;
    let geom = cfg.geometry()?;
    let spec = cfg.phantom_spec();
    let high = cfg.high_scan()?;
    let doses: Vec<_> = cfg
        .scan
        .dose_mas
        .iter()
        .map(|&m| cfg.scan_for(m).map(|s| (m, s)))
        .collect::<Result<_>>()?;
    for set in Set::ALL {
        let n = set.count(cfg);
        for i in 0..n {
            let idx = i as u64;
            let img = make_phantom(&spec, stage_seed(cfg, "phantom", &[set.id(), idx]))?;
            let y = forward_project(&img, &geom)?;
            if set == Set::Test {
                ctx.write_sino(&lay.clean(i), Kind::Log, &y)?;
            }
            if set != Set::TrainUnsup {
                let (_, yh) = sample_low_dose(&y, &high, stage_seed(cfg, "high", &[set.id(), idx]))?;
                ctx.write_sino(&lay.high(set, i), Kind::Log, &yh)?;
            }
            for (mas, scan) in &doses {
                let seed = stage_seed(cfg, "dose", &[mas.to_bits(), set.id(), idx]);
                let (pd, x) = sample_low_dose(&y, scan, seed)?;
                ctx.write_sino(&lay.low(*mas, set, i), Kind::Log, &x)?;
                if set != Set::TrainSup {
                    ctx.write_sino(&lay.counts(*mas, set, i), Kind::Counts, &pd.measured)?;
                }
            }
        }
        ctx.note(format!("simulate: {n} {} phantoms", set.name()));
    }
    Ok(())
}

fn read_log(path: &Path) -> Result<Sinogram> {
    format::read_sinogram(path)?.into_log()
}

fn read_counts(path: &Path) -> Result<PhotonData> {
    format::read_sinogram(path)?.into_counts()
}

pub fn save_checkpoint(path: &Path, params: &NetworkParams, adam: &AdamState) -> Result<()> {
    let mut bytes = Vec::new();
    net::write_checkpoint(&mut bytes, params, adam)
        .map_err(|e| Error::io("encoding checkpoint", e))?;
    format::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkParams, AdamState)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    net::read_checkpoint(std::io::BufReader::new(file))
}

fn train_log(state: &TrainState) -> String {
    let mut s = String::from("epoch\tstep\tmode\tdata_term\tprior_term\tsup_term\ttotal\n");
    for r in &state.history {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.12e}\t{:.12e}\t{:.12e}\t{:.12e}",
            r.epoch, r.step, r.mode, r.data_term, r.prior_term, r.sup_term, r.total
        );
    }
    s
}

fn sweep_log(state: &TrainState) -> String {
    let mut s = String::from("epoch\tbefore_total\tafter_total\n");
    for r in &state.sweeps {
        let _ = writeln!(s, "{}\t{:.12e}\t{:.12e}", r.epoch, r.before.total, r.after.total);
    }
    s
}

pub fn cmd_train(cfg: &ExperimentConfig, ctx: Ctx) -> Result<()> {
    let lay = Layout::new(&cfg.out_dir);
    ensure_manifest(&lay.models_dir(), cfg)?;
    let needs_unsup = cfg.methods.iter().any(|m| *m != Mode::Supervised);
    let needs_sup = cfg.methods.iter().any(|m| *m != Mode::Unsupervised);
    for &mas in &cfg.scan.dose_mas {
        let mut samples = Vec::new();
        if needs_unsup {
            for i in 0..cfg.n_train_unsup {
                let x = read_log(&lay.low(mas, Set::TrainUnsup, i))?;
                let pd = read_counts(&lay.counts(mas, Set::TrainUnsup, i))?;
                samples.push((x, pd));
            }
        }
        let mut pairs = Vec::new();
        if needs_sup {
            for i in 0..cfg.n_train_sup {
                let x = read_log(&lay.low(mas, Set::TrainSup, i))?;
                let yh = read_log(&lay.high(Set::TrainSup, i))?;
                pairs.push((x, yh));
            }
        }
        for &mode in &cfg.methods {
            let dir = lay.model_dir(mas, mode);
            let tcfg = cfg.train_config(mode, cfg.scan_for(mas)?)?;
            let every = cfg.train.checkpoint_every;
            let mut save_err = None;
            let state = trainer::train(&pairs, &samples, &tcfg, |ev| {
                if let Event::EpochEnd { epoch, params, adam } = ev {
                    if every > 0 && (epoch + 1) % every == 0 && save_err.is_none() {
                        let path = dir.join(format!("model_e{:04}.netp", epoch + 1));
                        save_err = save_checkpoint(&path, params, adam).err();
                    }
                }
            })?;
            if let Some(e) = save_err {
                return Err(e);
            }
            save_checkpoint(&dir.join("model.netp"), &state.params, &state.adam)?;
            format::write_atomic(&dir.join("train.log"), train_log(&state).as_bytes())?;
            format::write_atomic(&dir.join("sweeps.tsv"), sweep_log(&state).as_bytes())?;
            ctx.note(format!(
                "train {} {mode}: {} epochs{}, final epoch loss {:.6e}",
                dose_name(mas),
                state.epoch,
                if state.converged { " (early stop)" } else { "" },
                state.epoch_losses.last().copied().unwrap_or(f64::NAN)
            ));
        }
    }
    Ok(())
}

/// Explicit overrides for the enhance stage.
#[derive(Clone, Debug, Default)]
pub struct EnhanceRequest {
    pub checkpoint: Option<PathBuf>,
    /// A `.sino` file or a directory of them.
    pub input: Option<PathBuf>,
    /// Output directory for explicit inputs.
    pub out: Option<PathBuf>,
}

fn enhance_files(
    params: &NetworkParams,
    inputs: &[(String, PathBuf)],
    out_dir: &Path,
    ctx: Ctx,
) -> Result<()> {
    let mut timing = String::from("sample\tseconds\n");
    for (name, path) in inputs {
        let x = read_log(path)?;
        let (f, dt) = trainer::enhance(params, &x)?;
        ctx.write_sino(&out_dir.join(name), Kind::Log, &f)?;
        let _ = writeln!(timing, "{name}\t{:.6e}", dt.as_secs_f64());
    }
    format::write_atomic(&out_dir.join("timing.tsv"), timing.as_bytes())
}

fn list_inputs(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !input.exists() {
        return Err(Error::MissingInput(input.to_path_buf()));
    }
    let name = |p: &Path| p.file_name().unwrap_or_default().to_string_lossy().into_owned();
    if input.is_file() {
        return Ok(vec![(name(input), input.to_path_buf())]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(format!("listing {}", input.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sino"))
        .collect();
    files.sort();
    Ok(files.into_iter().map(|p| (name(&p), p)).collect())
}

pub fn cmd_enhance(cfg: &ExperimentConfig, req: &EnhanceRequest, ctx: Ctx) -> Result<()> {
    let lay = Layout::new(&cfg.out_dir);
    if let Some(input) = &req.input {
        let ckpt = req.checkpoint.as_ref().ok_or_else(|| {
            Error::InvalidParameter("an explicit input needs an explicit checkpoint".into())
        })?;
        let (params, _) = load_checkpoint(ckpt)?;
        let out = req
            .out
            .clone()
            .unwrap_or_else(|| lay.enhanced_root().join("custom"));
        ensure_manifest(&out, cfg)?;
        let inputs = list_inputs(input)?;
        enhance_files(&params, &inputs, &out, ctx)?;
        ctx.note(format!("enhance: {} sinograms into {}", inputs.len(), out.display()));
        return Ok(());
    }
    ensure_manifest(&lay.enhanced_root(), cfg)?;
    let explicit = match &req.checkpoint {
        Some(p) => Some(load_checkpoint(p)?.0),
        None => None,
    };
    for &mas in &cfg.scan.dose_mas {
        let inputs: Vec<(String, PathBuf)> = (0..cfg.n_test)
            .map(|i| (sample_file(i, "sino"), lay.low(mas, Set::Test, i)))
            .collect();
        let runs: Vec<(String, NetworkParams)> = match &explicit {
            Some(p) => vec![("custom".to_string(), p.clone())],
            None => cfg
                .methods
                .iter()
                .map(|m| {
                    let (p, _) = load_checkpoint(&lay.model_dir(mas, *m).join("model.netp"))?;
                    Ok((m.as_str().to_string(), p))
                })
                .collect::<Result<_>>()?,
        };
        for (method, params) in runs {
            enhance_files(&params, &inputs, &lay.enhanced_dir(mas, &method), ctx)?;
            ctx.note(format!("enhance {} {method}: {} sinograms", dose_name(mas), inputs.len()));
        }
    }
    Ok(())
}

/// Name used for the unprocessed low-dose input in metrics and reports.
pub const BASELINE: &str = "fbp";

pub fn cmd_evaluate(cfg: &ExperimentConfig, ctx: Ctx) -> Result<()> {
    let lay = Layout::new(&cfg.out_dir);
    ensure_manifest(&lay.metrics_dir(), cfg)?;
    let geom = cfg.geometry()?;
    let clean: Vec<Sinogram> = (0..cfg.n_test).map(|i| read_log(&lay.clean(i))).collect::<Result<_>>()?;
    let ref_images = clean
        .iter()
        .map(|y| fbp_reconstruct(y, &geom))
        .collect::<Result<Vec<_>>>()?;
    for &mas in &cfg.scan.dose_mas {
        for (i, img) in ref_images.iter().enumerate() {
            let path = lay.images_dir(mas, "reference").join(sample_file(i, "pgm"));
            format::write_pgm(&path, img, Window::fit(img))?;
        }
        let mut methods: Vec<(String, Vec<PathBuf>)> = vec![(
            BASELINE.to_string(),
            (0..cfg.n_test).map(|i| lay.low(mas, Set::Test, i)).collect(),
        )];
        for m in &cfg.methods {
            let dir = lay.enhanced_dir(mas, m.as_str());
            if dir.exists() {
                methods.push((
                    m.as_str().to_string(),
                    (0..cfg.n_test).map(|i| dir.join(sample_file(i, "sino"))).collect(),
                ));
            } else {
                ctx.note(format!("evaluate {}: no enhanced outputs for {m}", dose_name(mas)));
            }
        }
        for (method, paths) in methods {
            let mut sino = MetricReport::new(Domain::Sinogram);
            let mut image = MetricReport::new(Domain::Image);
            for (i, path) in paths.iter().enumerate() {
                let est = read_log(path)?;
                sino.push(&est, &clean[i])?;
                let rec = fbp_reconstruct(&est, &geom)?;
                image.push(&rec, &ref_images[i])?;
                let pgm = lay.images_dir(mas, &method).join(sample_file(i, "pgm"));
                format::write_pgm(&pgm, &rec, Window::fit(&ref_images[i]))?;
            }
            let mut tsv = String::from("sample\tdomain\tpsnr\tssim\n");
            for rep in [&sino, &image] {
                for (i, s) in rep.samples.iter().enumerate() {
                    let _ = writeln!(tsv, "{i}\t{}\t{:.6}\t{:.6}", rep.domain, s.psnr, s.ssim);
                }
            }
            format::write_atomic(&lay.metrics(mas, &method), tsv.as_bytes())?;
            ctx.note(format!(
                "evaluate {} {method}: sinogram {:.2} dB / {:.4}, image {:.2} dB / {:.4}",
                dose_name(mas),
                sino.mean_psnr(),
                sino.mean_ssim(),
                image.mean_psnr(),
                image.mean_ssim()
            ));
        }
    }
    Ok(())
}

/// Mean PSNR and SSIM per domain read back from a metrics file.
fn read_metrics(path: &Path) -> Result<Option<[(f64, f64); 2]>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut acc = [(0.0, 0.0, 0usize); 2];
    for (n, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Config {
            line: n + 1,
            message: format!("malformed metrics row in {}", path.display()),
        };
        if cols.len() != 4 {
            return Err(bad());
        }
        let slot = match cols[1] {
            "sinogram" => 0,
            "image" => 1,
            _ => return Err(bad()),
        };
        let p: f64 = cols[2].parse().map_err(|_| bad())?;
        let s: f64 = cols[3].parse().map_err(|_| bad())?;
        acc[slot].0 += p;
        acc[slot].1 += s;
        acc[slot].2 += 1;
    }
    if acc.iter().any(|a| a.2 == 0) {
        return Ok(None);
    }
    Ok(Some(acc.map(|(p, s, n)| (p / n as f64, s / n as f64))))
}

/// Mean seconds per sinogram over every timing file found for `method`.
fn read_timing(lay: &Layout, cfg: &ExperimentConfig, method: &str) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for &mas in &cfg.scan.dose_mas {
        let Ok(text) = fs::read_to_string(lay.enhanced_dir(mas, method).join("timing.tsv")) else {
            continue;
        };
        for line in text.lines().skip(1) {
            if let Some(v) = line.split('\t').nth(1).and_then(|v| v.parse::<f64>().ok()) {
                total += v;
                n += 1;
            }
        }
    }
    (n > 0).then(|| total / n as f64)
}

#[derive(Clone, Debug)]
pub struct ReportOutcome {
    pub markdown: String,
    /// `dose/method` cells that had no metrics.
    pub missing: Vec<String>,
}

pub const REPORT_ROWS: [(&str, &str); 4] = [
    ("FBP", BASELINE),
    ("sup-CNN", "sup"),
    ("unsup-CNN", "unsup"),
    ("semi-CNN", "semi"),
];

pub fn cmd_report(cfg: &ExperimentConfig, ctx: Ctx) -> Result<ReportOutcome> {
    let lay = Layout::new(&cfg.out_dir);
    ensure_manifest(&lay.report_dir(), cfg)?;
    let mut md = String::from("| Method |");
    let mut rule = String::from("|---|");
    for &mas in &cfg.scan.dose_mas {
        for col in ["sino PSNR", "sino SSIM", "image PSNR", "image SSIM"] {
            let _ = write!(md, " {mas} mAs {col} |");
            rule.push_str("---|");
        }
    }
    md.push_str(" Time (s) |\n");
    rule.push_str("---|\n");
    md.push_str(&rule);
    let mut tsv = String::from("method\tdose_mas\tdomain\tpsnr\tssim\n");
    let mut missing = Vec::new();
    for (title, method) in REPORT_ROWS {
        let _ = write!(md, "| {title} |");
        for &mas in &cfg.scan.dose_mas {
            match read_metrics(&lay.metrics(mas, method))? {
                Some(means) => {
                    for (domain, (p, s)) in ["sinogram", "image"].iter().zip(means) {
                        let _ = write!(md, " {p:.2} | {s:.4} |");
                        let _ = writeln!(tsv, "{method}\t{mas}\t{domain}\t{p:.6}\t{s:.6}");
                    }
                }
                None => {
                    md.push_str(" n/a | n/a | n/a | n/a |");
                    missing.push(format!("{}/{method}", dose_name(mas)));
                }
            }
        }
        let time = if method == BASELINE {
            "-".to_string()
        } else {
            match read_timing(&lay, cfg, method) {
                Some(t) => format!("{t:.4}"),
                None => "n/a".to_string(),
            }
        };
        let _ = writeln!(md, " {time} |");
    }
    format::write_atomic(&lay.report_dir().join("report.md"), md.as_bytes())?;
    format::write_atomic(&lay.report_dir().join("report.tsv"), tsv.as_bytes())?;
    if !missing.is_empty() {
        ctx.note(format!("report: missing results for {}", missing.join(", ")));
    }
    Ok(ReportOutcome {
        markdown: md,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, out: &Path) -> ExperimentConfig {
        let text = format!(
            "[experiment]\nseed = {seed}\nout_dir = {}\ntrain_unsup = 2\ntrain_sup = 1\ntest = 1\n\
             [phantom]\nsize = 32\n[geometry]\nn_angles = 16\nn_detectors = 48\n",
            out.display()
        );
        ExperimentConfig::parse(&text).unwrap()
    }

    #[test]
    fn manifest_conflict_names_the_seed() {
        let dir = tempfile::tempdir().unwrap();
        ensure_manifest(dir.path(), &cfg(1, dir.path())).unwrap();
        ensure_manifest(dir.path(), &cfg(1, dir.path())).unwrap();
        match ensure_manifest(dir.path(), &cfg(2, dir.path())) {
            Err(Error::ManifestConflict { message, .. }) => assert!(message.contains("seed 1")),
            other => panic!("expected conflict, got {other:?}"),
        }
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = cfg(1, Path::new("a"));
        let b = cfg(1, Path::new("b"));
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&cfg(2, Path::new("a"))));
    }

    #[test]
    fn report_marks_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(1, dir.path());
        let out = cmd_report(&c, Ctx { quiet: true, dump: false }).unwrap();
        assert_eq!(out.missing.len(), 4 * c.scan.dose_mas.len());
        assert!(out.markdown.contains("| n/a |"));
    }
}
