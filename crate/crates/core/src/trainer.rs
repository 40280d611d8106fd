//! Supervised, unsupervised and semi-supervised training loops.
//!
//! The unsupervised objective alternates two steps: an exact per-ray
//! minimization of the latent photon counts with the network fixed, and Adam
//! steps on the network with the counts fixed. The semi-supervised objective
//! adds `λ Σ ‖f(x) − y‖²` over labelled pairs; with `λ = 0` and no pairs it is
//! the unsupervised objective, step for step.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{check_shape, Error, Result};
use crate::map_model::{self, LossBreakdown, PriorConfig};
use crate::net::{self, AdamConfig, AdamState, NetSpec, NetworkParams};
use crate::noise::{PhotonData, ScanConfig};
use crate::rng;
use crate::Sinogram;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Supervised,
    Unsupervised,
    Semi,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Supervised, Mode::Unsupervised, Mode::Semi];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Supervised => "sup",
            Mode::Unsupervised => "unsup",
            Mode::Semi => "semi",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sup" | "supervised" => Ok(Mode::Supervised),
            "unsup" | "unsupervised" => Ok(Mode::Unsupervised),
            "semi" | "semi-supervised" => Ok(Mode::Semi),
            other => Err(Error::InvalidParameter(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight of the supervised term; `None` means `|C₂| / (|C₁| + |C₂|)`.
    pub lambda: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs between latent-count sweeps.
    pub g_update_period: usize,
    pub seed: u64,
    pub scan: ScanConfig,
    pub prior: PriorConfig,
    pub net: NetSpec,
    pub adam: AdamConfig,
    /// Stop once the epoch loss changes by less than this fraction over
    /// `early_stop_window` epochs. Zero disables early stopping.
    pub early_stop_tol: f64,
    pub early_stop_window: usize,
}

impl TrainConfig {
    pub fn new(mode: Mode, scan: ScanConfig, prior: PriorConfig) -> Self {
        Self {
            mode,
            lambda: None,
            epochs: 100,
            batch_size: 4,
            g_update_period: 1,
            seed: 0,
            scan,
            prior,
            net: NetSpec::default(),
            adam: AdamConfig::default(),
            early_stop_tol: 1e-5,
            early_stop_window: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.g_update_period == 0 {
            return Err(Error::InvalidParameter(
                "batch size and G-update period must be positive".into(),
            ));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {l}")));
            }
        }
        if !(self.early_stop_tol.is_finite() && self.early_stop_tol >= 0.0) {
            return Err(Error::InvalidParameter("early-stop tolerance must be >= 0".into()));
        }
        if self.early_stop_window == 0 {
            return Err(Error::InvalidParameter("early-stop window must be positive".into()));
        }
        self.scan.validate()?;
        self.net.validate()?;
        self.adam.validate()
    }
}

/// One optimizer step. Terms are unscaled sums over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub mode: Mode,
    pub data_term: f64,
    pub prior_term: f64,
    pub sup_term: f64,
    pub total: f64,
}

/// Full unsupervised objective at fixed θ before and after a latent sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRecord {
    pub epoch: usize,
    pub before: LossBreakdown,
    pub after: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: NetworkParams,
    pub adam: AdamState,
    /// Measured and latent counts of each unsupervised sample.
    pub photons: Vec<PhotonData>,
    pub lambda: f64,
    pub epoch: usize,
    pub history: Vec<StepRecord>,
    pub sweeps: Vec<SweepRecord>,
    pub epoch_losses: Vec<f64>,
    pub converged: bool,
}

impl TrainState {
    pub fn latent_fields(&self) -> impl Iterator<Item = &Array2<u64>> {
        self.photons.iter().map(|p| &p.latent)
    }
}

/// Progress notifications emitted during training.
pub enum Event<'a> {
    Step(&'a StepRecord),
    Sweep {
        record: &'a SweepRecord,
        params: &'a NetworkParams,
        photons: &'a [PhotonData],
    },
    EpochEnd {
        epoch: usize,
        params: &'a NetworkParams,
        adam: &'a AdamState,
    },
}

#[derive(Clone, Copy, Debug)]
enum Item {
    Unsup(usize),
    Sup(usize),
}

#[derive(Default)]
struct ItemLoss {
    data: f64,
    prior: f64,
    sup: f64,
}

pub fn train_supervised(pairs: &[(Sinogram, Sinogram)], cfg: &TrainConfig) -> Result<TrainState> {
    let cfg = TrainConfig {
        mode: Mode::Supervised,
        ..cfg.clone()
    };
    train(pairs, &[], &cfg, |_| {})
}

pub fn train_unsupervised(
    samples: &[(Sinogram, PhotonData)],
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let cfg = TrainConfig {
        mode: Mode::Unsupervised,
        ..cfg.clone()
    };
    train(&[], samples, &cfg, |_| {})
}

pub fn train_semi(
    pairs: &[(Sinogram, Sinogram)],
    samples: &[(Sinogram, PhotonData)],
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let cfg = TrainConfig {
        mode: Mode::Semi,
        ..cfg.clone()
    };
    train(pairs, samples, &cfg, |_| {})
}

fn resolve_lambda(cfg: &TrainConfig, n_sup: usize, n_unsup: usize) -> Result<f64> {
    match cfg.mode {
        Mode::Supervised => Ok(1.0),
        Mode::Unsupervised => Ok(0.0),
        Mode::Semi => {
            let lambda = cfg
                .lambda
                .unwrap_or(n_sup as f64 / (n_sup + n_unsup).max(1) as f64);
            if lambda < 0.0 {
                return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
            }
            if n_unsup == 0 {
                return Err(Error::EmptyTrainingSet("semi-supervised mode needs unlabeled samples"));
            }
            if lambda > 0.0 && n_sup == 0 {
                return Err(Error::EmptyTrainingSet(
                    "semi-supervised mode with lambda > 0 needs supervised pairs",
                ));
            }
            Ok(lambda)
        }
    }
}

/// Train in `cfg.mode`, reporting progress to `observer`. Supervised mode
/// uses only `pairs`; unsupervised mode only `samples`.
pub fn train(
    pairs: &[(Sinogram, Sinogram)],
    samples: &[(Sinogram, PhotonData)],
    cfg: &TrainConfig,
    mut observer: impl FnMut(Event<'_>),
) -> Result<TrainState> {
    cfg.validate()?;
    let (pairs, samples) = match cfg.mode {
        Mode::Supervised => (pairs, &[][..]),
        Mode::Unsupervised => (&[][..], samples),
        Mode::Semi => (pairs, samples),
    };
    match cfg.mode {
        Mode::Supervised if pairs.is_empty() => {
            return Err(Error::EmptyTrainingSet("supervised mode needs pairs"))
        }
        Mode::Unsupervised if samples.is_empty() => {
            return Err(Error::EmptyTrainingSet("unsupervised mode needs photon data"))
        }
        _ => {}
    }
    let lambda = resolve_lambda(cfg, pairs.len(), samples.len())?;
    for (x, y) in pairs {
        check_shape(x.dim(), y.dim())?;
    }
    for (x, pd) in samples {
        check_shape(x.dim(), pd.dim())?;
        check_shape(x.dim(), pd.latent.dim())?;
    }
    let params = NetworkParams::init(cfg.net, rng::derive_seed(cfg.seed, &[rng::label("init")]))?;
    let adam = AdamState::new(cfg.adam, params.len());
    let mut state = TrainState {
        params,
        adam,
        photons: samples.iter().map(|(_, pd)| pd.clone()).collect(),
        lambda,
        epoch: 0,
        history: Vec::new(),
        sweeps: Vec::new(),
        epoch_losses: Vec::new(),
        converged: false,
    };
    let mut shuffle_rng = rng::seeded(rng::derive_seed(cfg.seed, &[rng::label("shuffle")]));
    let mut items: Vec<Item> = (0..samples.len())
        .map(Item::Unsup)
        .chain((0..pairs.len()).map(Item::Sup))
        .collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        if !samples.is_empty() && epoch % cfg.g_update_period == 0 {
            let record = latent_sweep(&mut state, samples, cfg, epoch)?;
            state.sweeps.push(record);
            observer(Event::Sweep {
                record: &record,
                params: &state.params,
                photons: &state.photons,
            });
        }

        items.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in items.chunks(cfg.batch_size) {
            let grads_and_losses: Vec<(ItemLoss, NetworkParams)> = batch
                .par_iter()
                .map(|&item| item_gradient(&state, pairs, samples, cfg, lambda, item, batch.len()))
                .collect::<Result<_>>()?;
            let mut grads = NetworkParams::zeros(cfg.net)?;
            let mut loss = ItemLoss::default();
            for (l, g) in &grads_and_losses {
                grads.add_scaled(g, 1.0);
                loss.data += l.data;
                loss.prior += l.prior;
                loss.sup += l.sup;
            }
            state.adam.apply(&mut state.params, &grads);
            let record = StepRecord {
                epoch,
                step,
                mode: cfg.mode,
                data_term: loss.data,
                prior_term: loss.prior,
                sup_term: loss.sup,
                total: loss.data + loss.prior + loss.sup,
            };
            epoch_loss += record.total;
            state.history.push(record);
            observer(Event::Step(&record));
            step += 1;
        }
        state.epoch_losses.push(epoch_loss);
        state.epoch = epoch + 1;
        observer(Event::EpochEnd {
            epoch,
            params: &state.params,
            adam: &state.adam,
        });
        if early_stop(&state.epoch_losses, cfg) {
            state.converged = true;
            break;
        }
    }
    Ok(state)
}

fn early_stop(losses: &[f64], cfg: &TrainConfig) -> bool {
    let w = cfg.early_stop_window;
    if cfg.early_stop_tol == 0.0 || losses.len() <= w {
        return false;
    }
    let now = losses[losses.len() - 1];
    let then = losses[losses.len() - 1 - w];
    (now - then).abs() <= cfg.early_stop_tol * then.abs()
}

/// Objective of one unsupervised sample at the current network output.
pub fn sample_objective(
    f: &Sinogram,
    photons: &PhotonData,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(
        map_model::data_energy(f, photons, &cfg.scan)?,
        map_model::prior_energy(f, &cfg.prior),
    ))
}

fn latent_sweep(
    state: &mut TrainState,
    samples: &[(Sinogram, PhotonData)],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<SweepRecord> {
    let params = &state.params;
    let results: Vec<(LossBreakdown, LossBreakdown, PhotonData)> = samples
        .par_iter()
        .zip(state.photons.par_iter())
        .map(|((x, _), photons)| {
            let f = net::infer(params, x)?;
            let before = sample_objective(&f, photons, cfg)?;
            let updated = map_model::update_g(&f, photons, &cfg.scan)?;
            let after = sample_objective(&f, &updated, cfg)?;
            Ok((before, after, updated))
        })
        .collect::<Result<_>>()?;
    let mut before = LossBreakdown::default();
    let mut after = LossBreakdown::default();
    for (slot, (b, a, updated)) in state.photons.iter_mut().zip(results) {
        before = before + b;
        after = after + a;
        *slot = updated;
    }
    Ok(SweepRecord {
        epoch,
        before,
        after,
    })
}

fn item_gradient(
    state: &TrainState,
    pairs: &[(Sinogram, Sinogram)],
    samples: &[(Sinogram, PhotonData)],
    cfg: &TrainConfig,
    lambda: f64,
    item: Item,
    batch_len: usize,
) -> Result<(ItemLoss, NetworkParams)> {
    let x = match item {
        Item::Unsup(i) => &samples[i].0,
        Item::Sup(i) => &pairs[i].0,
    };
    let (f, cache) = net::forward(&state.params, x)?;
    let scale = 1.0 / (batch_len * f.len()) as f64;
    let (loss, mut grad) = match item {
        Item::Unsup(i) => {
            let (b, g) =
                map_model::unsup_loss_and_grad(&f, &state.photons[i], &cfg.scan, &cfg.prior)?;
            (
                ItemLoss {
                    data: b.data_term,
                    prior: b.prior_term,
                    sup: 0.0,
                },
                g,
            )
        }
        Item::Sup(i) => {
            let residual = &f - &pairs[i].1;
            let sq: f64 = residual.iter().map(|r| r * r).sum();
            (
                ItemLoss {
                    sup: lambda * sq,
                    ..ItemLoss::default()
                },
                residual * (2.0 * lambda),
            )
        }
    };
    grad *= scale;
    let grads = net::backward(&state.params, &cache, &grad)?;
    Ok((loss, grads))
}

/// Inference only; returns the enhanced sinogram and the wall time taken.
pub fn enhance(params: &NetworkParams, x: &Sinogram) -> Result<(Sinogram, Duration)> {
    let start = Instant::now();
    let y = net::infer(params, x)?;
    Ok((y, start.elapsed()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::sample_low_dose;

    fn smooth_field(h: usize, w: usize, phase: f64) -> Sinogram {
        Array2::from_shape_fn((h, w), |(i, j)| {
            1.0 + 0.5 * ((i as f64 * 0.3 + phase).sin() * (j as f64 * 0.2).cos())
        })
    }

    fn tiny_cfg(mode: Mode) -> TrainConfig {
        let mut cfg = TrainConfig::new(
            mode,
            ScanConfig::uniform(1e4, 5.0).unwrap(),
            PriorConfig::new(0.05, 1e-3).unwrap(),
        );
        cfg.net = NetSpec {
            n_layers: 2,
            channels: 3,
            residual: true,
        };
        cfg.epochs = 3;
        cfg.batch_size = 2;
        cfg.early_stop_tol = 0.0;
        cfg
    }

    fn unsup_samples(n: usize, cfg: &TrainConfig) -> Vec<(Sinogram, PhotonData)> {
        (0..n)
            .map(|i| {
                let y = smooth_field(10, 12, i as f64);
                let (pd, x) = sample_low_dose(&y, &cfg.scan, 100 + i as u64).unwrap();
                (x, PhotonData::from_measured(pd.measured))
            })
            .collect()
    }

    #[test]
    fn mode_round_trips_through_strings() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("bogus".parse::<Mode>().is_err());
    }

    #[test]
    fn empty_sets_are_rejected() {
        let cfg = tiny_cfg(Mode::Supervised);
        assert!(matches!(train_supervised(&[], &cfg), Err(Error::EmptyTrainingSet(_))));
        assert!(matches!(train_unsupervised(&[], &cfg), Err(Error::EmptyTrainingSet(_))));
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let mut cfg = tiny_cfg(Mode::Semi);
        cfg.lambda = Some(-1.0);
        let s = unsup_samples(2, &cfg);
        assert!(train_semi(&[], &s, &cfg).is_err());
    }

    #[test]
    fn semi_with_positive_lambda_needs_pairs() {
        let mut cfg = tiny_cfg(Mode::Semi);
        cfg.lambda = Some(0.5);
        let s = unsup_samples(2, &cfg);
        assert!(matches!(train_semi(&[], &s, &cfg), Err(Error::EmptyTrainingSet(_))));
    }

    #[test]
    fn identity_pairs_leave_zero_init_identity_net_fixed() {
        let cfg = tiny_cfg(Mode::Supervised);
        let pairs: Vec<_> = (0..3)
            .map(|i| {
                let x = smooth_field(8, 8, i as f64);
                (x.clone(), x)
            })
            .collect();
        let state = train_supervised(&pairs, &cfg).unwrap();
        assert!(state.history.iter().all(|r| r.total == 0.0));
        let init = NetworkParams::init(cfg.net, rng::derive_seed(cfg.seed, &[rng::label("init")]))
            .unwrap();
        assert_eq!(state.params, init);
    }

    #[test]
    fn history_length_equals_steps() {
        let cfg = tiny_cfg(Mode::Unsupervised);
        let s = unsup_samples(5, &cfg);
        let state = train_unsupervised(&s, &cfg).unwrap();
        // 5 samples, batch 2 -> 3 steps per epoch
        assert_eq!(state.history.len(), 9);
        assert_eq!(state.adam.step, 9);
        assert_eq!(state.sweeps.len(), 3);
        assert_eq!(state.photons.len(), 5);
    }

    #[test]
    fn sweeps_never_increase_the_objective() {
        let cfg = tiny_cfg(Mode::Unsupervised);
        let s = unsup_samples(3, &cfg);
        let state = train_unsupervised(&s, &cfg).unwrap();
        for r in &state.sweeps {
            assert!(r.after.total <= r.before.total + 1e-9 * r.before.total.abs());
        }
    }

    #[test]
    fn enhance_zero_net_is_identity() {
        let p = NetworkParams::zeros(NetSpec::default()).unwrap();
        let x = smooth_field(12, 14, 0.3);
        let (y, _) = enhance(&p, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn early_stop_rule() {
        let cfg = tiny_cfg(Mode::Unsupervised);
        let mut cfg = cfg;
        cfg.early_stop_tol = 1e-5;
        cfg.early_stop_window = 2;
        assert!(!early_stop(&[10.0, 9.0], &cfg));
        assert!(!early_stop(&[10.0, 9.0, 8.0], &cfg));
        assert!(early_stop(&[10.0, 9.0, 10.00001], &cfg));
    }
}
