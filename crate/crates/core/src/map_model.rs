//! Posterior energy for a predicted sinogram `f` and latent photon counts `G`.
//!
//! Per ray `j` the negative log-likelihood is
//!
//! ```text
//! (I_j − G_j)² / (2σ²) − G_j ln I0_j + G_j f_j + ln G_j! + I0_j e^{−f_j}
//! ```
//!
//! and the prior adds `k Σ |ln(|D₂f| + ε) − ln ε|` over second differences
//! taken along both sinogram axes. Boundary entries of each axis carry no
//! second difference.

use ndarray::{Array2, ArrayView2, Axis as NdAxis, Zip};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{check_shape, Error, Result};
use crate::noise::{PhotonData, ScanConfig};
use crate::Sinogram;

/// Sinogram axis: rows are projection angles, columns are detector bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Angle,
    Detector,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::Angle, Axis::Detector];

    fn nd(self) -> NdAxis {
        match self {
            Axis::Angle => NdAxis(0),
            Axis::Detector => NdAxis(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorConfig {
    /// Prior weight.
    pub k: f64,
    /// Stabilizer inside the logarithm.
    pub eps_prior: f64,
}

impl PriorConfig {
    pub const DEFAULT_EPS: f64 = 1e-3;

    pub fn new(k: f64, eps_prior: f64) -> Result<Self> {
        // k = 0 is accepted as the degenerate likelihood-only objective
        if !(k.is_finite() && k >= 0.0) {
            return Err(Error::InvalidParameter("prior weight k must be positive".into()));
        }
        if !(eps_prior.is_finite() && eps_prior > 0.0) {
            return Err(Error::InvalidParameter("prior epsilon must be positive".into()));
        }
        Ok(Self { k, eps_prior })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub data_term: f64,
    pub prior_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(data_term: f64, prior_term: f64) -> Self {
        Self {
            data_term,
            prior_term,
            total: data_term + prior_term,
        }
    }
}

impl std::ops::Add for LossBreakdown {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        LossBreakdown::new(self.data_term + rhs.data_term, self.prior_term + rhs.prior_term)
    }
}

/// Second difference `f[j−1] − 2f[j] + f[j+1]` along `axis`; zero on the two
/// boundary lines.
pub fn second_diff(f: &Array2<f64>, axis: Axis) -> Result<Array2<f64>> {
    let len = f.len_of(axis.nd());
    if len < 3 {
        return Err(Error::AxisTooShort { len });
    }
    let mut out = Array2::zeros(f.dim());
    let (rows, cols) = f.dim();
    match axis {
        Axis::Angle => {
            for i in 1..rows - 1 {
                for j in 0..cols {
                    out[(i, j)] = f[(i - 1, j)] - 2.0 * f[(i, j)] + f[(i + 1, j)];
                }
            }
        }
        Axis::Detector => {
            for i in 0..rows {
                for j in 1..cols - 1 {
                    out[(i, j)] = f[(i, j - 1)] - 2.0 * f[(i, j)] + f[(i, j + 1)];
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`second_diff`].
pub fn second_diff_adjoint(g: &Array2<f64>, axis: Axis) -> Result<Array2<f64>> {
    let len = g.len_of(axis.nd());
    if len < 3 {
        return Err(Error::AxisTooShort { len });
    }
    let mut out = Array2::zeros(g.dim());
    let (rows, cols) = g.dim();
    match axis {
        Axis::Angle => {
            for i in 1..rows - 1 {
                for j in 0..cols {
                    let v = g[(i, j)];
                    out[(i - 1, j)] += v;
                    out[(i, j)] -= 2.0 * v;
                    out[(i + 1, j)] += v;
                }
            }
        }
        Axis::Detector => {
            for i in 0..rows {
                for j in 1..cols - 1 {
                    let v = g[(i, j)];
                    out[(i, j - 1)] += v;
                    out[(i, j)] -= 2.0 * v;
                    out[(i, j + 1)] += v;
                }
            }
        }
    }
    Ok(out)
}

fn usable_axes(f: &Array2<f64>) -> impl Iterator<Item = Axis> + '_ {
    Axis::BOTH
        .into_iter()
        .filter(move |a| f.len_of(a.nd()) >= 3)
}

/// `k Σ_axes Σ_j ln(1 + |D₂f|_j / ε)`. Axes shorter than 3 contribute nothing.
pub fn prior_energy(f: &Sinogram, cfg: &PriorConfig) -> f64 {
    let eps = cfg.eps_prior;
    let mut total = 0.0;
    for axis in usable_axes(f) {
        let d = second_diff(f, axis).expect("axis length checked");
        total += d.iter().map(|v| (v.abs() / eps).ln_1p()).sum::<f64>();
    }
    cfg.k * total
}

/// Gradient of [`prior_energy`] with `sign(0) = 0`.
pub fn prior_grad(f: &Sinogram, cfg: &PriorConfig) -> Array2<f64> {
    let eps = cfg.eps_prior;
    let mut grad = Array2::zeros(f.dim());
    for axis in usable_axes(f) {
        let d = second_diff(f, axis).expect("axis length checked");
        let w = d.mapv(|v| {
            if v == 0.0 {
                0.0
            } else {
                v.signum() / (v.abs() + eps)
            }
        });
        grad += &second_diff_adjoint(&w, axis).expect("axis length checked");
    }
    grad *= cfg.k;
    grad
}

const FACTORIALS: [u64; 21] = {
    let mut t = [1u64; 21];
    let mut i = 1;
    while i < 21 {
        t[i] = t[i - 1] * i as u64;
        i += 1;
    }
    t
};

/// `ln n!`, from an exact table for `n ≤ 20` and log-gamma beyond.
pub fn log_factorial(n: i64) -> Result<f64> {
    if n < 0 {
        return Err(Error::NegativeFactorial(n));
    }
    Ok(ln_factorial_u(n as u64))
}

fn ln_factorial_u(n: u64) -> f64 {
    if n <= 20 {
        (FACTORIALS[n as usize] as f64).ln()
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

fn check_model(f: &Sinogram, pd: &PhotonData, scan: &ScanConfig) -> Result<Array2<f64>> {
    check_shape(f.dim(), pd.measured.dim())?;
    check_shape(f.dim(), pd.latent.dim())?;
    if scan.sigma <= 0.0 {
        return Err(Error::ZeroSigma);
    }
    scan.fluence_field(f.dim())
}

/// Per-ray objective of the latent count subproblem:
/// `(I − G)²/(2σ²) − G ln I0 + G f + ln G!`.
pub fn g_objective(g: u64, measured: f64, i0: f64, f: f64, sigma: f64) -> f64 {
    let r = measured - g as f64;
    r * r / (2.0 * sigma * sigma) - g as f64 * i0.ln() + g as f64 * f + ln_factorial_u(g)
}

fn ray_energy(f: f64, g: u64, measured: f64, i0: f64, sigma: f64) -> f64 {
    g_objective(g, measured, i0, f, sigma) + i0 * (-f).exp()
}

/// Negative log-likelihood of the measured and latent counts given `f`.
pub fn data_energy(f: &Sinogram, pd: &PhotonData, scan: &ScanConfig) -> Result<f64> {
    let i0 = check_model(f, pd, scan)?;
    let sigma = scan.sigma;
    let mut total = 0.0;
    Zip::from(f)
        .and(&pd.latent)
        .and(&pd.measured)
        .and(&i0)
        .for_each(|&f, &g, &m, &i0| total += ray_energy(f, g, m, i0, sigma));
    Ok(total)
}

/// `∂ data_energy / ∂f = G − I0 e^{−f}`.
pub fn data_grad_f(f: &Sinogram, pd: &PhotonData, scan: &ScanConfig) -> Result<Array2<f64>> {
    check_shape(f.dim(), pd.latent.dim())?;
    let i0 = scan.fluence_field(f.dim())?;
    Ok(Zip::from(f)
        .and(&pd.latent)
        .and(&i0)
        .map_collect(|&f, &g, &i0| g as f64 - i0 * (-f).exp()))
}

/// Total posterior energy of one sample and its gradient with respect to `f`.
pub fn unsup_loss_and_grad(
    f: &Sinogram,
    pd: &PhotonData,
    scan: &ScanConfig,
    prior: &PriorConfig,
) -> Result<(LossBreakdown, Array2<f64>)> {
    let data = data_energy(f, pd, scan)?;
    let mut grad = data_grad_f(f, pd, scan)?;
    let prior_term = prior_energy(f, prior);
    if prior.k != 0.0 {
        grad += &prior_grad(f, prior);
    }
    Ok((LossBreakdown::new(data, prior_term), grad))
}

/// `h(G+1) − h(G)` in closed form, avoiding cancellation between log-factorials.
fn forward_delta(g: u64, measured: f64, log_i0: f64, f: f64, sigma: f64) -> f64 {
    (2.0 * (g as f64 - measured) + 1.0) / (2.0 * sigma * sigma) + f - log_i0
        + ((g + 1) as f64).ln()
}

/// Unit-step descent on one ray's latent count, starting from `start`.
pub fn update_g_ray(start: u64, measured: f64, i0: f64, f: f64, sigma: f64) -> u64 {
    let log_i0 = i0.ln();
    let mut g = start;
    // h(g) > h(g + 1)
    while forward_delta(g, measured, log_i0, f, sigma) < 0.0 {
        g += 1;
    }
    // h(g) > h(g - 1)
    while g > 0 && forward_delta(g - 1, measured, log_i0, f, sigma) > 0.0 {
        g -= 1;
    }
    g
}

/// Minimize the energy over the latent counts with `f` fixed, warm-started
/// from `pd.latent`. Rays are independent.
pub fn update_g(f: &Sinogram, pd: &PhotonData, scan: &ScanConfig) -> Result<PhotonData> {
    let i0 = check_model(f, pd, scan)?;
    let sigma = scan.sigma;
    let f_s = contiguous(f.view());
    let m_s = contiguous(pd.measured.view());
    let g_s = pd.latent.iter().copied().collect::<Vec<_>>();
    let i0_s = contiguous(i0.view());
    let latent: Vec<u64> = (0..g_s.len())
        .into_par_iter()
        .map(|j| update_g_ray(g_s[j], m_s[j], i0_s[j], f_s[j], sigma))
        .collect();
    Ok(PhotonData {
        measured: pd.measured.clone(),
        latent: Array2::from_shape_vec(f.dim(), latent).expect("shape"),
    })
}

fn contiguous(a: ArrayView2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;

    fn random_field(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::seeded(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn second_diff_of_ramp_is_zero() {
        let f = array![[1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.0], [3.0, 4.0, 5.0, 6.0]];
        for axis in Axis::BOTH {
            assert!(second_diff(&f, axis).unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn second_diff_of_spike() {
        let f = array![[0.0, 1.0, 0.0]];
        let d = second_diff(&f, Axis::Detector).unwrap();
        assert_eq!(d, array![[0.0, -2.0, 0.0]]);
        assert!(matches!(
            second_diff(&f, Axis::Angle),
            Err(Error::AxisTooShort { len: 1 })
        ));
    }

    #[test]
    fn second_diff_adjoint_identity() {
        let f = random_field(8, 8, 1);
        let g = random_field(8, 8, 2);
        for axis in Axis::BOTH {
            let lhs = (&second_diff(&f, axis).unwrap() * &g).sum();
            let rhs = (&f * &second_diff_adjoint(&g, axis).unwrap()).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn prior_vanishes_on_affine_fields() {
        let cfg = PriorConfig::new(1.0, 1e-3).unwrap();
        let c = Array2::from_elem((6, 7), 0.3);
        assert_eq!(prior_energy(&c, &cfg), 0.0);
        assert!(prior_grad(&c, &cfg).iter().all(|&v| v == 0.0));
        let ramp = Array2::from_shape_fn((6, 7), |(i, j)| 0.5 * i as f64 - 0.25 * j as f64);
        assert!(prior_energy(&ramp, &cfg) < 1e-9);
    }

    #[test]
    fn prior_single_term_closed_form() {
        let cfg = PriorConfig::new(1.0, 1e-3).unwrap();
        let mut f = Array2::zeros((3, 1));
        f[(1, 0)] = -0.25;
        // D₂f at the middle entry is 0.5 along angles; the detector axis is too short
        let expected = (1.0f64 + 0.5 / 1e-3).ln();
        assert_relative_eq!(prior_energy(&f, &cfg), expected, epsilon = 1e-12);
    }

    #[test]
    fn prior_grad_matches_finite_differences() {
        let cfg = PriorConfig::new(0.7, 1e-3).unwrap();
        let f = random_field(16, 16, 3);
        let g = prior_grad(&f, &cfg);
        let h = 1e-7;
        for idx in [(0, 0), (3, 5), (8, 8), (15, 2), (10, 15)] {
            let mut p = f.clone();
            p[idx] += h;
            let mut m = f.clone();
            m[idx] -= h;
            let fd = (prior_energy(&p, &cfg) - prior_energy(&m, &cfg)) / (2.0 * h);
            assert!((fd - g[idx]).abs() <= 1e-5 * fd.abs().max(1e-3), "{fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn large_eps_kills_prior_gradient() {
        let f = random_field(8, 8, 4);
        let small = prior_grad(&f, &PriorConfig::new(1.0, 1e-3).unwrap());
        let huge = prior_grad(&f, &PriorConfig::new(1.0, 1e12).unwrap());
        let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&huge) < 1e-10 * norm(&small));
    }

    #[test]
    fn log_factorial_values() {
        assert_eq!(log_factorial(0).unwrap(), 0.0);
        assert_eq!(log_factorial(1).unwrap(), 0.0);
        assert_relative_eq!(log_factorial(5).unwrap(), 120f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(log_factorial(5).unwrap(), 4.787491743, epsilon = 1e-9);
        let direct: f64 = (1..=30).map(|k| (k as f64).ln()).sum();
        assert_relative_eq!(log_factorial(30).unwrap(), direct, max_relative = 1e-13);
        assert!(matches!(log_factorial(-1), Err(Error::NegativeFactorial(-1))));
    }

    fn one_ray(g: u64, i: f64) -> PhotonData {
        PhotonData {
            measured: Array2::from_elem((1, 1), i),
            latent: Array2::from_elem((1, 1), g),
        }
    }

    #[test]
    fn data_energy_single_ray() {
        let scan = ScanConfig::uniform(100.0, 1.0).unwrap();
        let f = Array2::from_elem((1, 1), 2f64.ln());
        let e = data_energy(&f, &one_ray(50, 50.0), &scan).unwrap();
        let expected = -50.0 * 100f64.ln() + 50.0 * 2f64.ln() + ln_gamma(51.0) + 50.0;
        assert_relative_eq!(e, expected, max_relative = 1e-12);
    }

    #[test]
    fn data_energy_rejects_zero_sigma() {
        let scan = ScanConfig::uniform(100.0, 0.0).unwrap();
        let f = Array2::zeros((1, 1));
        assert!(matches!(data_energy(&f, &one_ray(1, 1.0), &scan), Err(Error::ZeroSigma)));
        assert!(matches!(update_g(&f, &one_ray(1, 1.0), &scan), Err(Error::ZeroSigma)));
    }

    #[test]
    fn data_gradient_stationary_point() {
        let scan = ScanConfig::uniform(100.0, 1.0).unwrap();
        let f = Array2::from_elem((1, 1), (100.0f64 / 40.0).ln());
        let g = data_grad_f(&f, &one_ray(40, 40.0), &scan).unwrap();
        assert!(g[(0, 0)].abs() < 1e-12);
        let big = Array2::from_elem((1, 1), 40.0);
        let g0 = data_grad_f(&big, &one_ray(0, 0.0), &scan).unwrap();
        assert!(g0[(0, 0)] < 0.0 && g0[(0, 0)] > -1e-12);
    }

    #[test]
    fn zero_prior_reduces_to_data_term() {
        let scan = ScanConfig::uniform(1e3, 2.0).unwrap();
        let f = random_field(6, 6, 5).mapv(|v| v + 1.5);
        let pd = PhotonData::from_measured(f.mapv(|v| 1e3 * (-v).exp()));
        let prior = PriorConfig::new(0.0, 1e-3).unwrap();
        let (loss, grad) = unsup_loss_and_grad(&f, &pd, &scan, &prior).unwrap();
        assert_eq!(loss.data_term, data_energy(&f, &pd, &scan).unwrap());
        assert_eq!(loss.prior_term, 0.0);
        assert_eq!(grad, data_grad_f(&f, &pd, &scan).unwrap());
    }

    #[test]
    fn update_g_textbook_case() {
        let scan = ScanConfig::uniform(100.0, 1.0).unwrap();
        let f = Array2::from_elem((1, 1), 2f64.ln());
        let out = update_g(&f, &one_ray(0, 50.0), &scan).unwrap();
        assert_eq!(out.latent[(0, 0)], 50);
        // already optimal: unchanged
        let again = update_g(&f, &out, &scan).unwrap();
        assert_eq!(again.latent[(0, 0)], 50);
    }

    #[test]
    fn update_g_huge_sigma_tracks_poisson_mode() {
        let (i0, f, sigma, measured) = (100.0, 0.0, 1e6, 50.0);
        let g = update_g_ray(3, measured, i0, f, sigma);
        let best = (0..=300u64)
            .map(|k| g_objective(k, measured, i0, f, sigma))
            .fold(f64::INFINITY, f64::min);
        assert!(g == 99 || g == 100, "{g}");
        assert!(g_objective(g, measured, i0, f, sigma) <= best + 1e-9);
    }
}
