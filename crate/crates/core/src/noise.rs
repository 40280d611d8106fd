//! Low-dose acquisition model: Beer-Lambert attenuation, Poisson photon
//! statistics, additive Gaussian electronic noise, and the log transform
//! back to line integrals.

use ndarray::{Array2, Zip};
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{check_shape, Error, Result};
use crate::rng;
use crate::Sinogram;

/// Measured counts at or below this value are clamped before the logarithm.
pub const I_FLOOR: f64 = 1.0;

/// Incident photons per ray.
#[derive(Clone, Debug, PartialEq)]
pub enum Fluence {
    Uniform(f64),
    PerRay(Array2<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanConfig {
    pub fluence: Fluence,
    /// Standard deviation of the electronic noise, in photons.
    pub sigma: f64,
}

impl ScanConfig {
    pub fn uniform(i0: f64, sigma: f64) -> Result<Self> {
        let cfg = Self {
            fluence: Fluence::Uniform(i0),
            sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn per_ray(i0: Array2<f64>, sigma: f64) -> Result<Self> {
        let cfg = Self {
            fluence: Fluence::PerRay(i0),
            sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.fluence {
            Fluence::Uniform(v) => v.is_finite() && *v > 0.0,
            Fluence::PerRay(a) => a.iter().all(|v| v.is_finite() && *v > 0.0),
        };
        if !ok {
            return Err(Error::InvalidParameter("fluence I0 must be positive and finite".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter("sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// Fluence expanded to a field of the given shape.
    pub fn fluence_field(&self, shape: (usize, usize)) -> Result<Array2<f64>> {
        match &self.fluence {
            Fluence::Uniform(v) => Ok(Array2::from_elem(shape, *v)),
            Fluence::PerRay(a) => {
                check_shape(a.dim(), shape)?;
                Ok(a.clone())
            }
        }
    }
}

/// Fluence for a dose level, proportional to tube current-time product.
pub fn dose_fluence(i0_reference: f64, reference_mas: f64, mas: f64) -> f64 {
    i0_reference * mas / reference_mas
}

/// Measured counts `I` and latent photon counts `G` (`I = G + ε`).
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonData {
    pub measured: Array2<f64>,
    pub latent: Array2<u64>,
}

impl PhotonData {
    /// Wrap measured counts with the warm-start latent field `round(max(I, 1))`.
    pub fn from_measured(measured: Array2<f64>) -> Self {
        let latent = measured.mapv(warm_start);
        Self { measured, latent }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.measured.dim()
    }
}

pub fn warm_start(i: f64) -> u64 {
    i.max(1.0).round() as u64
}

/// Noise-free expected counts `I0 · exp(−y)`.
pub fn attenuate(y: &Sinogram, scan: &ScanConfig) -> Result<Array2<f64>> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sinogram"));
    }
    let i0 = scan.fluence_field(y.dim())?;
    Ok(Zip::from(&i0).and(y).map_collect(|&i0, &y| i0 * (-y).exp()))
}

/// `ln(I0 / max(I, I_FLOOR))` entrywise.
pub fn log_transform(measured: &Array2<f64>, scan: &ScanConfig) -> Result<Sinogram> {
    let i0 = scan.fluence_field(measured.dim())?;
    Ok(Zip::from(&i0)
        .and(measured)
        .map_collect(|&i0, &i| (i0 / i.max(I_FLOOR)).ln()))
}

/// Draw a low-dose acquisition of the clean sinogram `y`.
///
/// Entry `j` uses its own random stream keyed by `(seed, j)`, so results do
/// not depend on evaluation order.
pub fn sample_low_dose(
    y: &Sinogram,
    scan: &ScanConfig,
    seed: u64,
) -> Result<(PhotonData, Sinogram)> {
    scan.validate()?;
    let expected = attenuate(y, scan)?;
    let normal = Normal::new(0.0, scan.sigma)
        .map_err(|e| Error::InvalidParameter(format!("electronic noise: {e}")))?;
    let n = expected.len();
    let mut latent = Vec::with_capacity(n);
    let mut measured = Vec::with_capacity(n);
    for (j, &mean) in expected.iter().enumerate() {
        let mut rng = rng::entry_rng(seed, j as u64);
        let poisson = Poisson::new(mean)
            .map_err(|e| Error::InvalidParameter(format!("photon mean {mean}: {e}")))?;
        let g: f64 = poisson.sample(&mut rng);
        let eps = if scan.sigma > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        };
        latent.push(g as u64);
        measured.push(g + eps);
    }
    let shape = expected.dim();
    let measured = Array2::from_shape_vec(shape, measured).expect("shape");
    let latent = Array2::from_shape_vec(shape, latent).expect("shape");
    let x = log_transform(&measured, scan)?;
    Ok((PhotonData { measured, latent }, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn attenuate_closed_forms() {
        let scan = ScanConfig::uniform(100.0, 0.0).unwrap();
        let y = Array2::from_shape_vec((1, 3), vec![0.0, 2f64.ln(), 1.0]).unwrap();
        let i = attenuate(&y, &scan).unwrap();
        assert_eq!(i[(0, 0)], 100.0);
        assert_relative_eq!(i[(0, 1)], 50.0, epsilon = 1e-12);
        assert!(i[(0, 2)] < i[(0, 1)]);
    }

    #[test]
    fn attenuate_rejects_non_finite() {
        let scan = ScanConfig::uniform(100.0, 0.0).unwrap();
        let y = Array2::from_elem((2, 2), f64::NAN);
        assert!(matches!(attenuate(&y, &scan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn log_transform_cases() {
        let scan = ScanConfig::uniform(100.0, 0.0).unwrap();
        let i = Array2::from_shape_vec((1, 4), vec![100.0, 50.0, 0.0, -3.0]).unwrap();
        let x = log_transform(&i, &scan).unwrap();
        assert_eq!(x[(0, 0)], 0.0);
        assert_relative_eq!(x[(0, 1)], 2f64.ln(), epsilon = 1e-15);
        assert_eq!(x[(0, 2)], 100f64.ln());
        assert_eq!(x[(0, 3)], 100f64.ln());
    }

    #[test]
    fn scan_validation() {
        assert!(ScanConfig::uniform(0.0, 1.0).is_err());
        assert!(ScanConfig::uniform(10.0, -1.0).is_err());
        assert!(ScanConfig::per_ray(Array2::from_elem((2, 2), -1.0), 1.0).is_err());
    }

    #[test]
    fn per_ray_fluence_shape_is_checked() {
        let scan = ScanConfig::per_ray(Array2::from_elem((2, 3), 10.0), 1.0).unwrap();
        let y = Array2::zeros((3, 2));
        assert!(attenuate(&y, &scan).is_err());
    }

    #[test]
    fn latent_counts_are_integers_and_seeded() {
        let scan = ScanConfig::uniform(50.0, 3.0).unwrap();
        let y = Array2::from_shape_fn((8, 8), |(i, j)| 0.1 * (i + j) as f64);
        let (pd, x) = sample_low_dose(&y, &scan, 5).unwrap();
        let (pd2, x2) = sample_low_dose(&y, &scan, 5).unwrap();
        assert_eq!(pd, pd2);
        assert_eq!(x, x2);
        let (pd3, _) = sample_low_dose(&y, &scan, 6).unwrap();
        assert_ne!(pd.measured, pd3.measured);
    }

    #[test]
    fn warm_start_rounds_and_clamps() {
        let pd = PhotonData::from_measured(
            Array2::from_shape_vec((1, 4), vec![-5.0, 0.2, 7.4, 7.6]).unwrap(),
        );
        assert_eq!(pd.latent.as_slice().unwrap(), &[1, 1, 7, 8]);
    }

    #[test]
    fn dose_scaling_is_proportional() {
        assert_eq!(dose_fluence(2e5, 200.0, 10.0), 1e4);
        assert_eq!(dose_fluence(2e5, 200.0, 12.5), 1.25e4);
    }
}
