//! Experiment configuration: `[section]` headers and `key = value` lines.
//!
//! Unknown sections or keys and duplicate keys are errors. `#` starts a
//! comment. Lists are comma separated.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, Jitter, PhantomSpec};
use crate::map_model::PriorConfig;
use crate::net::{AdamConfig, NetSpec};
use crate::noise::{dose_fluence, ScanConfig};
use crate::trainer::{Mode, TrainConfig};

const SCHEMA: &[(&str, &[&str])] = &[
    ("experiment", &["seed", "out_dir", "train_unsup", "train_sup", "test", "methods"]),
    ("phantom", &["preset", "size", "scale", "jitter", "rotate", "blobs"]),
    ("geometry", &["n_angles", "n_detectors", "detector_spacing"]),
    ("scan", &["i0_high", "high_mas", "dose_mas", "sigma"]),
    ("prior", &["k", "eps"]),
    ("net", &["layers", "channels", "residual"]),
    (
        "train",
        &[
            "lambda",
            "epochs",
            "batch_size",
            "g_update_period",
            "learning_rate",
            "beta1",
            "beta2",
            "adam_eps",
            "early_stop_tol",
            "early_stop_window",
            "checkpoint_every",
        ],
    ),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Head,
    Disc,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "head" => Ok(Preset::Head),
            "disc" => Ok(Preset::Disc),
            other => Err(format!("unknown phantom preset {other:?} (expected head or disc)")),
        }
    }
}

impl Preset {
    fn as_str(self) -> &'static str {
        match self {
            Preset::Head => "head",
            Preset::Disc => "disc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub preset: Preset,
    pub size: usize,
    pub scale: f64,
    pub jitter: Jitter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryConfig {
    pub n_angles: usize,
    pub n_detectors: usize,
    /// `None` picks the spacing automatically.
    pub detector_spacing: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSection {
    pub i0_high: f64,
    pub high_mas: f64,
    pub dose_mas: Vec<f64>,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub g_update_period: usize,
    pub adam: AdamConfig,
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
    /// Epochs between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub n_train_unsup: usize,
    pub n_train_sup: usize,
    pub n_test: usize,
    pub methods: Vec<Mode>,
    pub phantom: PhantomConfig,
    pub geometry: GeometryConfig,
    pub scan: ScanSection,
    pub prior: PriorConfig,
    pub net: NetSpec,
    pub train: TrainSection,
}

struct Entry {
    value: String,
    line: usize,
}

struct Table {
    entries: HashMap<(String, String), Entry>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut entries: HashMap<(String, String), Entry> = HashMap::new();
        let mut section: Option<&'static str> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line, message };
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("malformed section header {s:?}")))?
                    .trim();
                let known = SCHEMA
                    .iter()
                    .find(|(sec, _)| *sec == name)
                    .ok_or_else(|| err(format!("unknown section [{name}]")))?;
                section = Some(known.0);
                continue;
            }
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {s:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| err(format!("key {key:?} outside any section")))?;
            let keys = SCHEMA.iter().find(|(n, _)| *n == sec).unwrap().1;
            if !keys.contains(&key) {
                return Err(err(format!("unknown key {key:?} in [{sec}]")));
            }
            if value.is_empty() {
                return Err(err(format!("empty value for {key:?}")));
            }
            let slot = (sec.to_string(), key.to_string());
            if let Some(prev) = entries.get(&slot) {
                return Err(err(format!(
                    "duplicate key {key:?} in [{sec}] (first set on line {})",
                    prev.line
                )));
            }
            entries.insert(
                slot,
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
        Ok(Self { entries })
    }

    fn raw(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(sec.to_string(), key.to_string()))
    }

    fn get<T: FromStr>(&self, sec: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(sec, key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|err| Error::Config {
                line: e.line,
                message: format!("bad value {:?} for {sec}.{key}: {err}", e.value),
            }),
        }
    }

    fn or<T: FromStr>(&self, sec: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(sec, key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, sec: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(sec, key)?
            .ok_or_else(|| Error::ConfigValidation(format!("missing required key {sec}.{key}")))
    }

    fn list<T: FromStr>(&self, sec: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.raw(sec, key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|item| {
                item.trim().parse::<T>().map_err(|err| Error::Config {
                    line: e.line,
                    message: format!("bad list item {:?} for {sec}.{key}: {err}", item.trim()),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

/// `auto` or a number.
struct Lambda(Option<f64>);

impl FromStr for Lambda {
    type Err = std::num::ParseFloatError;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Lambda(None))
        } else {
            s.parse().map(|v| Lambda(Some(v)))
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let t = Table::parse(text)?;
        let adam_default = AdamConfig::default();
        let net_default = NetSpec::default();
        let cfg = Self {
            seed: t.required("experiment", "seed")?,
            out_dir: PathBuf::from(t.or("experiment", "out_dir", "out".to_string())?),
            n_train_unsup: t.or("experiment", "train_unsup", 50)?,
            n_train_sup: t.or("experiment", "train_sup", 20)?,
            n_test: t.or("experiment", "test", 5)?,
            methods: t
                .list("experiment", "methods")?
                .unwrap_or_else(|| vec![Mode::Supervised, Mode::Unsupervised, Mode::Semi]),
            phantom: PhantomConfig {
                preset: t.or("phantom", "preset", Preset::Head)?,
                size: t.required("phantom", "size")?,
                scale: t.or("phantom", "scale", 0.02)?,
                jitter: Jitter {
                    amount: t.or("phantom", "jitter", 0.05)?,
                    rotate: t.or("phantom", "rotate", true)?,
                    blobs: t.or("phantom", "blobs", 4)?,
                },
            },
            geometry: GeometryConfig {
                n_angles: t.required("geometry", "n_angles")?,
                n_detectors: t.required("geometry", "n_detectors")?,
                detector_spacing: t.get("geometry", "detector_spacing")?,
            },
            scan: ScanSection {
                i0_high: t.or("scan", "i0_high", 2e5)?,
                high_mas: t.or("scan", "high_mas", 200.0)?,
                dose_mas: t.list("scan", "dose_mas")?.unwrap_or_else(|| vec![10.0, 12.5, 20.0]),
                sigma: t.or("scan", "sigma", 10.0)?,
            },
            prior: PriorConfig {
                k: t.or("prior", "k", 0.3)?,
                eps_prior: t.or("prior", "eps", PriorConfig::DEFAULT_EPS)?,
            },
            net: NetSpec {
                n_layers: t.or("net", "layers", net_default.n_layers)?,
                channels: t.or("net", "channels", net_default.channels)?,
                residual: t.or("net", "residual", net_default.residual)?,
            },
            train: TrainSection {
                lambda: t.or("train", "lambda", Lambda(None))?.0,
                epochs: t.or("train", "epochs", 100)?,
                batch_size: t.or("train", "batch_size", 4)?,
                g_update_period: t.or("train", "g_update_period", 1)?,
                adam: AdamConfig {
                    rate: t.or("train", "learning_rate", adam_default.rate)?,
                    beta1: t.or("train", "beta1", adam_default.beta1)?,
                    beta2: t.or("train", "beta2", adam_default.beta2)?,
                    eps: t.or("train", "adam_eps", adam_default.eps)?,
                },
                early_stop_tol: t.or("train", "early_stop_tol", 1e-5)?,
                early_stop_window: t.or("train", "early_stop_window", 5)?,
                checkpoint_every: t.or("train", "checkpoint_every", 0)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigValidation(m));
        let s = &self.scan;
        if !(s.sigma.is_finite() && s.sigma >= 0.0) {
            return bad(format!("scan.sigma must be >= 0, got {}", s.sigma));
        }
        if s.sigma == 0.0 && self.methods.iter().any(|m| *m != Mode::Supervised) {
            return bad("scan.sigma must be positive for unsupervised training".into());
        }
        for (name, v) in [("i0_high", s.i0_high), ("high_mas", s.high_mas)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("scan.{name} must be positive, got {v}"));
            }
        }
        if s.dose_mas.is_empty() || s.dose_mas.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return bad("scan.dose_mas must be a non-empty list of positive values".into());
        }
        let mut names: Vec<String> = s.dose_mas.iter().map(|m| dose_name(*m)).collect();
        names.sort();
        names.dedup();
        if names.len() != s.dose_mas.len() {
            return bad("scan.dose_mas contains duplicate levels".into());
        }
        if self.methods.is_empty() {
            return bad("experiment.methods must not be empty".into());
        }
        if self.n_test == 0 {
            return bad("experiment.test must be at least 1".into());
        }
        let needs_sup = self.methods.iter().any(|m| *m != Mode::Unsupervised);
        let needs_unsup = self.methods.iter().any(|m| *m != Mode::Supervised);
        if needs_sup && self.n_train_sup == 0 {
            return bad("supervised and semi methods need experiment.train_sup > 0".into());
        }
        if needs_unsup && self.n_train_unsup == 0 {
            return bad("unsupervised and semi methods need experiment.train_unsup > 0".into());
        }
        if !(self.phantom.scale.is_finite() && self.phantom.scale >= 0.0) {
            return bad("phantom.scale must be >= 0".into());
        }
        if !(self.phantom.jitter.amount.is_finite() && self.phantom.jitter.amount >= 0.0) {
            return bad("phantom.jitter must be >= 0".into());
        }
        PriorConfig::new(self.prior.k, self.prior.eps_prior)?;
        self.geometry()?;
        for mode in &self.methods {
            self.train_config(*mode, self.scan_for(s.dose_mas[0])?)?.validate()?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let g = &self.geometry;
        match g.detector_spacing {
            Some(sp) => Geometry::with_spacing(g.n_angles, g.n_detectors, self.phantom.size, sp),
            None => Geometry::new(g.n_angles, g.n_detectors, self.phantom.size),
        }
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        let p = &self.phantom;
        let spec = match p.preset {
            Preset::Head => PhantomSpec::head(p.size, p.scale),
            Preset::Disc => PhantomSpec::disc(p.size, 0.6, p.scale),
        };
        if p.jitter.amount > 0.0 || p.jitter.rotate || p.jitter.blobs > 0 {
            spec.with_jitter(p.jitter)
        } else {
            spec
        }
    }

    pub fn high_scan(&self) -> Result<ScanConfig> {
        ScanConfig::uniform(self.scan.i0_high, self.scan.sigma)
    }

    pub fn scan_for(&self, mas: f64) -> Result<ScanConfig> {
        ScanConfig::uniform(
            dose_fluence(self.scan.i0_high, self.scan.high_mas, mas),
            self.scan.sigma,
        )
    }

    pub fn train_config(&self, mode: Mode, scan: ScanConfig) -> Result<TrainConfig> {
        let t = &self.train;
        let mut cfg = TrainConfig::new(mode, scan, self.prior);
        cfg.lambda = t.lambda;
        cfg.epochs = t.epochs;
        cfg.batch_size = t.batch_size;
        cfg.g_update_period = t.g_update_period;
        cfg.seed = self.seed;
        cfg.net = self.net;
        cfg.adam = t.adam;
        cfg.early_stop_tol = t.early_stop_tol;
        cfg.early_stop_window = t.early_stop_window;
        Ok(cfg)
    }

    /// Normalized text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let methods: Vec<&str> = self.methods.iter().map(|m| m.as_str()).collect();
        let mut s = String::new();
        let p = &self.phantom;
        let g = &self.geometry;
        let t = &self.train;
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "train_unsup = {}", self.n_train_unsup);
        let _ = writeln!(s, "train_sup = {}", self.n_train_sup);
        let _ = writeln!(s, "test = {}", self.n_test);
        let _ = writeln!(s, "methods = {}", methods.join(", "));
        let _ = writeln!(s, "\n[phantom]");
        let _ = writeln!(s, "preset = {}", p.preset.as_str());
        let _ = writeln!(s, "size = {}", p.size);
        let _ = writeln!(s, "scale = {:?}", p.scale);
        let _ = writeln!(s, "jitter = {:?}", p.jitter.amount);
        let _ = writeln!(s, "rotate = {}", p.jitter.rotate);
        let _ = writeln!(s, "blobs = {}", p.jitter.blobs);
        let _ = writeln!(s, "\n[geometry]");
        let _ = writeln!(s, "n_angles = {}", g.n_angles);
        let _ = writeln!(s, "n_detectors = {}", g.n_detectors);
        if let Some(sp) = g.detector_spacing {
            let _ = writeln!(s, "detector_spacing = {sp:?}");
        }
        let _ = writeln!(s, "\n[scan]");
        let _ = writeln!(s, "i0_high = {:?}", self.scan.i0_high);
        let _ = writeln!(s, "high_mas = {:?}", self.scan.high_mas);
        let _ = writeln!(s, "dose_mas = {}", list(&self.scan.dose_mas));
        let _ = writeln!(s, "sigma = {:?}", self.scan.sigma);
        let _ = writeln!(s, "\n[prior]");
        let _ = writeln!(s, "k = {:?}", self.prior.k);
        let _ = writeln!(s, "eps = {:?}", self.prior.eps_prior);
        let _ = writeln!(s, "\n[net]");
        let _ = writeln!(s, "layers = {}", self.net.n_layers);
        let _ = writeln!(s, "channels = {}", self.net.channels);
        let _ = writeln!(s, "residual = {}", self.net.residual);
        let _ = writeln!(s, "\n[train]");
        match t.lambda {
            Some(l) => writeln!(s, "lambda = {l:?}"),
            None => writeln!(s, "lambda = auto"),
        }
        .ok();
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "g_update_period = {}", t.g_update_period);
        let _ = writeln!(s, "learning_rate = {:?}", t.adam.rate);
        let _ = writeln!(s, "beta1 = {:?}", t.adam.beta1);
        let _ = writeln!(s, "beta2 = {:?}", t.adam.beta2);
        let _ = writeln!(s, "adam_eps = {:?}", t.adam.eps);
        let _ = writeln!(s, "early_stop_tol = {:?}", t.early_stop_tol);
        let _ = writeln!(s, "early_stop_window = {}", t.early_stop_window);
        let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
        s
    }
}

/// Directory name for a dose level, e.g. `dose_12.5`.
pub fn dose_name(mas: f64) -> String {
    format!("dose_{mas}")
}
