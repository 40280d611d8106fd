use ndarray::Array2;
use proptest::prelude::*;

use sinomap::noise::{attenuate, log_transform, sample_low_dose, ScanConfig};

#[test]
fn measured_variance_is_poisson_plus_gaussian() {
    let (i0, sigma) = (1000.0, 10.0);
    let scan = ScanConfig::uniform(i0, sigma).unwrap();
    let y = Array2::zeros((250, 400));
    let (pd, _) = sample_low_dose(&y, &scan, 99).unwrap();
    let n = pd.measured.len() as f64;
    let mean = pd.measured.sum() / n;
    let var = pd.measured.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expected = i0 + sigma * sigma;
    assert!((var - expected).abs() <= 0.05 * expected, "variance {var} vs {expected}");
    assert!((mean - i0).abs() <= 1.0, "mean {mean}");
}

#[test]
fn log_of_exact_counts_converges_with_fluence() {
    let y = Array2::from_shape_fn((20, 30), |(i, j)| 0.05 * (i + j) as f64 / 10.0);
    let errors: Vec<f64> = [1e2, 1e4, 1e6]
        .iter()
        .map(|&i0| {
            let scan = ScanConfig::uniform(i0, 0.0).unwrap();
            // Rounded noise-free counts isolate the discretization error.
            let counts = attenuate(&y, &scan).unwrap().mapv(f64::round);
            let x = log_transform(&counts, &scan).unwrap();
            (&x - &y).iter().fold(0.0f64, |m, d| m.max(d.abs()))
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2] && errors[2] < 1e-5, "{errors:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn latent_counts_match_measured_without_electronic_noise(seed in any::<u64>(), i0 in 1.0f64..1e4) {
        let scan = ScanConfig::uniform(i0, 0.0).unwrap();
        let y = Array2::from_shape_fn((5, 6), |(i, j)| 0.3 * (i * j) as f64);
        let (pd, _) = sample_low_dose(&y, &scan, seed).unwrap();
        for (g, m) in pd.latent.iter().zip(pd.measured.iter()) {
            prop_assert_eq!(*g as f64, *m);
        }
    }
}
