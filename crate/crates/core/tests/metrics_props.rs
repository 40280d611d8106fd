use ndarray::{s, Array2};
use proptest::prelude::*;
use rand::Rng;

use sinomap::metrics::{psnr, ssim};
use sinomap::rng;

fn field(h: usize, w: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((h, w), |_| r.random_range(0.0..1.0))
}

fn roll(a: &Array2<f64>, di: usize, dj: usize) -> Array2<f64> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| a[((i + h - di) % h, (j + w - dj) % w)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_bounded_and_one_only_for_identical(seed in any::<u64>(), i in 0usize..16, j in 0usize..16, bump in 1e-3f64..0.5) {
        let a = field(16, 16, seed);
        let b = field(16, 16, seed ^ 7);
        let v = ssim(&a, &b, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() <= 1e-12);
        let mut c = a.clone();
        c[(i, j)] += bump;
        prop_assert!(ssim(&a, &c, 1.0).unwrap() < 1.0);
    }

    #[test]
    fn metrics_follow_a_shared_shift(seed in any::<u64>(), di in 0usize..4, dj in 0usize..4) {
        let a = field(24, 26, seed);
        let b = &a + &(field(24, 26, seed ^ 3) * 0.1);
        let (ra, rb) = (roll(&a, di, dj), roll(&b, di, dj));
        let crop_shifted = s![di..di + 20, dj..dj + 22];
        let crop = s![0..20, 0..22];
        let sa = ra.slice(crop_shifted).to_owned();
        let sb = rb.slice(crop_shifted).to_owned();
        let oa = a.slice(crop).to_owned();
        let ob = b.slice(crop).to_owned();
        prop_assert!((psnr(&sa, &sb, 1.0).unwrap() - psnr(&oa, &ob, 1.0).unwrap()).abs() <= 1e-12);
        prop_assert!((ssim(&sa, &sb, 1.0).unwrap() - ssim(&oa, &ob, 1.0).unwrap()).abs() <= 1e-12);
    }
}
