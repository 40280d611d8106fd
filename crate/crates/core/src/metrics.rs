//! PSNR and SSIM.

use std::fmt;

use ndarray::Array2;

use crate::error::{check_shape, Error, Result};

/// Reported in place of +∞ for identical inputs.
pub const PSNR_IDENTICAL_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_shape(a.dim(), b.dim())?;
    if a.is_empty() {
        return Err(Error::InvalidParameter("empty field".into()));
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(peak² / MSE)`, capped at [`PSNR_IDENTICAL_DB`].
pub fn psnr(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidParameter("PSNR peak must be positive".into()));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_IDENTICAL_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over the valid region.
fn filter_valid(a: &Array2<f64>, win: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = a.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut tmp = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            tmp[(i, j)] = (0..SSIM_WINDOW).map(|k| win[k] * a[(i, j + k)]).sum::<f64>();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[(i, j)] = (0..SSIM_WINDOW).map(|k| win[k] * tmp[(i + k, j)]).sum::<f64>();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim(a: &Array2<f64>, b: &Array2<f64>, peak: f64) -> Result<f64> {
    check_shape(a.dim(), b.dim())?;
    let (h, w) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs fields of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::InvalidParameter("SSIM peak must be positive".into()));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let win = gaussian_window();
    let mu_a = filter_valid(a, &win);
    let mu_b = filter_valid(b, &win);
    let aa = filter_valid(&(a * a), &win);
    let bb = filter_valid(&(b * b), &win);
    let ab = filter_valid(&(a * b), &win);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a.as_slice().unwrap()[i], mu_b.as_slice().unwrap()[i]);
        let va = aa.as_slice().unwrap()[i] - ma * ma;
        let vb = bb.as_slice().unwrap()[i] - mb * mb;
        let cov = ab.as_slice().unwrap()[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Sinogram,
    Image,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Sinogram => "sinogram",
            Domain::Image => "image",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-sample metrics for one method in one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub domain: Domain,
    pub samples: Vec<SampleMetrics>,
}

impl MetricReport {
    pub fn new(domain: Domain) -> Self {
        Self {
            domain,
            samples: Vec::new(),
        }
    }

    /// Score `estimate` against `reference` with peak = max of the reference.
    pub fn push(&mut self, estimate: &Array2<f64>, reference: &Array2<f64>) -> Result<SampleMetrics> {
        let peak = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = SampleMetrics {
            psnr: psnr(estimate, reference, peak)?,
            ssim: ssim(estimate, reference, peak)?,
        };
        self.samples.push(m);
        Ok(m)
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.samples.iter().map(|s| s.ssim))
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return f64::NAN;
    }
    it.sum::<f64>() / n as f64
}
