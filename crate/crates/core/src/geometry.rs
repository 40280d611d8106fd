//! Ellipse phantoms, parallel-beam projection and filtered backprojection.
//!
//! Images are `height × width` arrays of per-pixel attenuation (μ·Δx, so a
//! line integral is a plain sum of pixel values along the ray in pixel
//! units). Sinograms are `n_angles × n_detectors`, angle-major.
//!
//! Coordinates: the image centre sits at `((size - 1) / 2, (size - 1) / 2)`
//! in pixel-index space; `x` runs along columns and `y` along rows. The ray
//! for angle θ and detector offset `s` is `s·(cos θ, sin θ) + t·(−sin θ, cos θ)`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{check_shape, Error, Result};
use crate::rng;
use crate::{Image, Sinogram};

/// Sample spacing along each ray, in pixels.
const RAY_STEP: f64 = 0.5;

/// One ellipse in normalized canvas coordinates (the canvas spans [-1, 1]²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    /// Counter-clockwise rotation in radians.
    pub rotation: f64,
    /// Additive attenuation per pixel.
    pub value: f64,
}

impl Ellipse {
    pub fn new(center: (f64, f64), axes: (f64, f64), rotation: f64, value: f64) -> Self {
        Self {
            center,
            axes,
            rotation,
            value,
        }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let du = u - self.center.0;
        let dv = v - self.center.1;
        let p = du * c + dv * s;
        let q = -du * s + dv * c;
        (p / self.axes.0).powi(2) + (q / self.axes.1).powi(2) <= 1.0
    }

    fn fits_canvas(&self) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let (a, b) = self.axes;
        let hx = (a * a * c * c + b * b * s * s).sqrt();
        let hy = (a * a * s * s + b * b * c * c).sqrt();
        a > 0.0
            && b > 0.0
            && self.center.0.abs() + hx <= 1.0
            && self.center.1.abs() + hy <= 1.0
    }
}

/// Seeded perturbation applied to a phantom before rasterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    /// Relative perturbation of centres, axes and values.
    pub amount: f64,
    /// Rotate the whole phantom by a uniform random angle.
    pub rotate: bool,
    /// Number of extra random small ellipses.
    pub blobs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    pub ellipses: Vec<Ellipse>,
    pub jitter: Option<Jitter>,
}

const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    // value, a, b, x0, y0, rotation (degrees)
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

impl PhantomSpec {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            ellipses: Vec::new(),
            jitter: None,
        }
    }

    /// Modified Shepp-Logan head phantom with every value multiplied by `scale`.
    pub fn head(size: usize, scale: f64) -> Self {
        let ellipses = SHEPP_LOGAN
            .iter()
            .map(|&(value, a, b, x0, y0, deg)| {
                Ellipse::new((x0, y0), (a, b), deg.to_radians(), value * scale)
            })
            .collect();
        Self {
            size,
            ellipses,
            jitter: None,
        }
    }

    /// Centred disc of `radius` (normalized units) and constant `value`.
    pub fn disc(size: usize, radius: f64, value: f64) -> Self {
        Self {
            size,
            ellipses: vec![Ellipse::new((0.0, 0.0), (radius, radius), 0.0, value)],
            jitter: None,
        }
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = Some(jitter);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::InvalidParameter("phantom size must be positive".into()));
        }
        for (index, e) in self.ellipses.iter().enumerate() {
            if !(e.value.is_finite() && e.rotation.is_finite()) {
                return Err(Error::NonFinite("ellipse"));
            }
            if !e.fits_canvas() {
                return Err(Error::EllipseOutsideCanvas { index });
            }
        }
        Ok(())
    }

    fn perturbed(&self, jitter: &Jitter, seed: u64) -> Vec<Ellipse> {
        let mut rng = rng::seeded(seed);
        let j = jitter.amount;
        let global = if jitter.rotate {
            rng.random_range(0.0..2.0 * PI)
        } else {
            0.0
        };
        let (gs, gc) = global.sin_cos();
        let mut out: Vec<Ellipse> = self
            .ellipses
            .iter()
            .map(|e| {
                let mut e = *e;
                if j > 0.0 {
                    let scale_a = 1.0 + rng.random_range(-j..=j);
                    let scale_b = 1.0 + rng.random_range(-j..=j);
                    e.axes = (e.axes.0 * scale_a, e.axes.1 * scale_b);
                    e.center.0 += rng.random_range(-j..=j) * e.axes.0.min(e.axes.1);
                    e.center.1 += rng.random_range(-j..=j) * e.axes.0.min(e.axes.1);
                    e.rotation += rng.random_range(-j..=j) * PI;
                    e.value *= 1.0 + rng.random_range(-j..=j);
                }
                e
            })
            .collect();
        // blob intensity tracks the inner-structure contrast of the base phantom
        let contrast = self
            .ellipses
            .iter()
            .skip(2)
            .map(|e| e.value.abs())
            .fold(0.0, f64::max)
            .max(1e-3);
        for _ in 0..jitter.blobs {
            let r = 0.5 * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let a = rng.random_range(0.03..0.12);
            let b = rng.random_range(0.03..0.12);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            out.push(Ellipse::new(
                (r * phi.cos(), r * phi.sin()),
                (a, b),
                rng.random_range(0.0..PI),
                sign * contrast * rng.random_range(0.5..1.5),
            ));
        }
        for e in &mut out {
            let (x, y) = e.center;
            e.center = (x * gc - y * gs, x * gs + y * gc);
            e.rotation += global;
        }
        out
    }
}

/// Sub-samples per pixel side used when rasterizing.
const SUPERSAMPLE: usize = 4;

/// Rasterize a phantom. Each pixel averages, over a regular sub-pixel grid,
/// the sum of the values of the ellipses covering each sample point clamped
/// at zero.
pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<Image> {
    spec.validate()?;
    let ellipses = match &spec.jitter {
        Some(j) => {
            let e = spec.perturbed(j, seed);
            if let Some(index) = e.iter().position(|e| !e.fits_canvas()) {
                return Err(Error::EllipseOutsideCanvas { index });
            }
            e
        }
        None => spec.ellipses.clone(),
    };
    let n = spec.size;
    let c = (n as f64 - 1.0) / 2.0;
    let half = n as f64 / 2.0;
    let sub = |k: usize| (k as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
    let weight = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    Ok(Array2::from_shape_fn((n, n), |(row, col)| {
        let mut total = 0.0;
        for a in 0..SUPERSAMPLE {
            let v = (row as f64 + sub(a) - c) / half;
            for b in 0..SUPERSAMPLE {
                let u = (col as f64 + sub(b) - c) / half;
                total += ellipses
                    .iter()
                    .filter(|e| e.contains(u, v))
                    .map(|e| e.value)
                    .sum::<f64>()
                    .max(0.0);
            }
        }
        total * weight
    }))
}

/// Parallel-beam acquisition geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    angles: Vec<f64>,
    n_detectors: usize,
    detector_spacing: f64,
    image_size: usize,
}

impl Geometry {
    /// `n_angles` equispaced angles over [0, π). Detector spacing defaults to
    /// one pixel, widened if needed so the array spans the image diagonal.
    pub fn new(n_angles: usize, n_detectors: usize, image_size: usize) -> Result<Self> {
        let diag = image_size as f64 * std::f64::consts::SQRT_2;
        let spacing = if n_detectors as f64 >= diag {
            1.0
        } else {
            diag / n_detectors.max(1) as f64
        };
        Self::with_spacing(n_angles, n_detectors, image_size, spacing)
    }

    pub fn with_spacing(
        n_angles: usize,
        n_detectors: usize,
        image_size: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        let angles = (0..n_angles)
            .map(|k| PI * k as f64 / n_angles as f64)
            .collect();
        Self::from_angles(angles, n_detectors, image_size, detector_spacing)
    }

    pub fn from_angles(
        angles: Vec<f64>,
        n_detectors: usize,
        image_size: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidParameter("at least one angle required".into()));
        }
        if angles.iter().any(|a| !(0.0..PI).contains(a)) {
            return Err(Error::InvalidParameter("angles must lie in [0, pi)".into()));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("angles must be strictly increasing".into()));
        }
        if image_size == 0 || n_detectors == 0 {
            return Err(Error::InvalidParameter("empty image or detector array".into()));
        }
        if !(detector_spacing.is_finite() && detector_spacing > 0.0) {
            return Err(Error::InvalidParameter("detector spacing must be positive".into()));
        }
        let diag = image_size as f64 * std::f64::consts::SQRT_2;
        if n_detectors as f64 * detector_spacing < diag * (1.0 - 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "detector array ({n_detectors} x {detector_spacing}) does not span the image diagonal {diag:.3}"
            )));
        }
        Ok(Self {
            angles,
            n_detectors,
            detector_spacing,
            image_size,
        })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn detector_spacing(&self) -> f64 {
        self.detector_spacing
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.n_angles(), self.n_detectors)
    }

    fn detector_offset(&self, d: usize) -> f64 {
        (d as f64 - (self.n_detectors as f64 - 1.0) / 2.0) * self.detector_spacing
    }
}

fn bilinear(img: &Image, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    if x0 < -1.0 || y0 < -1.0 || x0 >= w as f64 || y0 >= h as f64 {
        return 0.0;
    }
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as isize, y0 as isize);
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img[(r as usize, c as usize)]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(yi, xi) + fx * at(yi, xi + 1))
        + fy * ((1.0 - fx) * at(yi + 1, xi) + fx * at(yi + 1, xi + 1))
}

/// Line integrals of `img` for a single projection angle (any real θ).
pub fn project_angle(img: &Image, theta: f64, geom: &Geometry) -> Vec<f64> {
    let n = geom.image_size;
    let c = (n as f64 - 1.0) / 2.0;
    let reach = (n as f64) * std::f64::consts::FRAC_1_SQRT_2 + 1.0;
    let n_steps = (2.0 * reach / RAY_STEP).ceil() as usize + 1;
    let mid = (n_steps as f64 - 1.0) / 2.0;
    let (sin, cos) = theta.sin_cos();
    (0..geom.n_detectors)
        .map(|d| {
            let s = geom.detector_offset(d);
            let mut acc = 0.0;
            for k in 0..n_steps {
                let t = (k as f64 - mid) * RAY_STEP;
                let x = s * cos - t * sin;
                let y = s * sin + t * cos;
                acc += bilinear(img, x + c, y + c);
            }
            acc * RAY_STEP
        })
        .collect()
}

/// Parallel-beam forward projection by half-pixel ray sampling.
pub fn forward_project(img: &Image, geom: &Geometry) -> Result<Sinogram> {
    check_shape((geom.image_size, geom.image_size), img.dim())?;
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image"));
    }
    let rows: Vec<Vec<f64>> = geom
        .angles
        .par_iter()
        .map(|&theta| project_angle(img, theta, geom))
        .collect();
    let mut sino = Array2::zeros(geom.sinogram_shape());
    for (mut dst, src) in sino.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&Array1::from(src));
    }
    Ok(sino)
}

/// Spatial Ram-Lak kernel sampled at detector spacing `tau`, wrapped for a
/// circular FFT of length `len`.
fn ramp_kernel_spectrum(len: usize, tau: f64) -> Vec<Complex<f64>> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    for (i, slot) in kernel.iter_mut().enumerate() {
        let n = if i <= len / 2 { i as i64 } else { i as i64 - len as i64 };
        let v = if n == 0 {
            1.0 / (4.0 * tau * tau)
        } else if n % 2 != 0 {
            -1.0 / ((PI * n as f64 * tau).powi(2))
        } else {
            0.0
        };
        *slot = Complex::new(v, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut kernel);
    kernel
}

/// Ram-Lak filter applied per projection in the frequency domain, with zero
/// padding to the next power of two at least twice the detector count.
pub fn ramp_filter(sino: &Sinogram, detector_spacing: f64) -> Sinogram {
    let (n_angles, n_det) = sino.dim();
    let len = (2 * n_det).next_power_of_two();
    let spectrum = ramp_kernel_spectrum(len, detector_spacing);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let norm = detector_spacing / len as f64;
    let mut out = Array2::zeros((n_angles, n_det));
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for (row, mut dst) in sino.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, h) in buf.iter_mut().zip(&spectrum) {
            *b *= h;
        }
        inv.process(&mut buf);
        for (d, b) in dst.iter_mut().zip(&buf) {
            *d = b.re * norm;
        }
    }
    out
}

fn sample_projection(q: ArrayView1<f64>, pos: f64) -> f64 {
    let i0 = pos.floor();
    if i0 < -1.0 || i0 >= q.len() as f64 {
        return 0.0;
    }
    let f = pos - i0;
    let i = i0 as isize;
    let at = |k: isize| {
        if k < 0 || k >= q.len() as isize {
            0.0
        } else {
            q[k as usize]
        }
    };
    (1.0 - f) * at(i) + f * at(i + 1)
}

/// Unfiltered backprojection with linear interpolation across detector bins.
pub fn backproject(sino: &Sinogram, geom: &Geometry) -> Result<Image> {
    check_shape(geom.sinogram_shape(), sino.dim())?;
    let n = geom.image_size;
    let c = (n as f64 - 1.0) / 2.0;
    let det_mid = (geom.n_detectors as f64 - 1.0) / 2.0;
    let trig: Vec<(f64, f64)> = geom.angles.iter().map(|a| a.sin_cos()).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|row| {
            let y = row as f64 - c;
            (0..n)
                .map(|col| {
                    let x = col as f64 - c;
                    trig.iter()
                        .zip(sino.axis_iter(Axis(0)))
                        .map(|(&(sin, cos), q)| {
                            let s = x * cos + y * sin;
                            sample_projection(q, s / geom.detector_spacing + det_mid)
                        })
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let scale = PI / geom.n_angles() as f64;
    Ok(Array2::from_shape_fn((n, n), |(r, c)| rows[r][c] * scale))
}

/// Filtered backprojection: Ram-Lak filtering followed by backprojection.
pub fn fbp_reconstruct(sino: &Sinogram, geom: &Geometry) -> Result<Image> {
    check_shape(geom.sinogram_shape(), sino.dim())?;
    if geom.n_angles() < 2 {
        return Err(Error::InvalidParameter(
            "filtered backprojection needs at least 2 angles".into(),
        ));
    }
    let filtered = ramp_filter(sino, geom.detector_spacing);
    backproject(&filtered, geom)
}

/// Pixels inside the inscribed circle, where reconstruction is determined.
pub fn interior_mask(size: usize) -> Array2<bool> {
    let c = (size as f64 - 1.0) / 2.0;
    let r = size as f64 / 2.0 - 1.0;
    Array2::from_shape_fn((size, size), |(i, j)| {
        let dx = j as f64 - c;
        let dy = i as f64 - c;
        dx * dx + dy * dy <= r * r
    })
}

/// `‖rec − truth‖ / ‖truth‖` restricted to the inscribed circle.
pub fn interior_relative_rmse(rec: &Image, truth: &Image) -> Result<f64> {
    check_shape(truth.dim(), rec.dim())?;
    let mask = interior_mask(truth.nrows());
    let (mut err, mut norm) = (0.0, 0.0);
    for ((&m, &r), &t) in mask.iter().zip(rec.iter()).zip(truth.iter()) {
        if m {
            err += (r - t) * (r - t);
            norm += t * t;
        }
    }
    if norm == 0.0 {
        return Err(Error::InvalidParameter("reference image is zero on the interior".into()));
    }
    Ok((err / norm).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_gives_zero_image() {
        let img = make_phantom(&PhantomSpec::empty(16), 0).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disc_edges_are_area_weighted() {
        let img = make_phantom(&PhantomSpec::disc(32, 0.5, 0.2), 0).unwrap();
        assert!((img[(16, 16)] - 0.2).abs() < 1e-12);
        assert_eq!(img[(0, 0)], 0.0);
        assert!(img.iter().all(|&v| (0.0..=0.2 + 1e-12).contains(&v)));
        assert!(img.iter().any(|&v| v > 0.01 && v < 0.19));
        // Radius 8 pixels.
        let mass = img.sum() / 0.2;
        let area = PI * 64.0;
        assert!((mass - area).abs() < 0.01 * area, "{mass} vs {area}");
    }

    #[test]
    fn ellipse_outside_canvas_is_rejected() {
        let mut spec = PhantomSpec::disc(32, 0.5, 0.2);
        spec.ellipses.push(Ellipse::new((0.8, 0.0), (0.3, 0.1), 0.0, 0.1));
        assert!(matches!(
            make_phantom(&spec, 0),
            Err(Error::EllipseOutsideCanvas { index: 1 })
        ));
    }

    #[test]
    fn jittered_phantom_is_deterministic_and_seed_dependent() {
        let spec = PhantomSpec::head(48, 0.1).with_jitter(Jitter {
            amount: 0.03,
            rotate: true,
            blobs: 3,
        });
        let a = make_phantom(&spec, 11).unwrap();
        let b = make_phantom(&spec, 11).unwrap();
        let c = make_phantom(&spec, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn geometry_must_span_diagonal() {
        assert!(Geometry::with_spacing(10, 20, 32, 1.0).is_err());
        let g = Geometry::new(10, 20, 32).unwrap();
        assert!(g.n_detectors() as f64 * g.detector_spacing() >= 32.0 * 2f64.sqrt() - 1e-9);
        assert!(Geometry::from_angles(vec![0.5, 0.2], 64, 32, 1.0).is_err());
        assert!(Geometry::from_angles(vec![], 64, 32, 1.0).is_err());
    }

    #[test]
    fn projection_rejects_wrong_size() {
        let g = Geometry::new(8, 46, 32).unwrap();
        let img = Array2::zeros((31, 32));
        assert!(matches!(forward_project(&img, &g), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn zero_in_zero_out() {
        let g = Geometry::new(8, 46, 32).unwrap();
        let sino = forward_project(&Array2::zeros((32, 32)), &g).unwrap();
        assert!(sino.iter().all(|&v| v == 0.0));
        let rec = fbp_reconstruct(&sino, &g).unwrap();
        assert!(rec.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fbp_needs_two_angles() {
        let g = Geometry::new(1, 46, 32).unwrap();
        let sino = Array2::zeros((1, 46));
        assert!(fbp_reconstruct(&sino, &g).is_err());
    }

    #[test]
    fn parallel_beam_symmetry() {
        let img = make_phantom(&PhantomSpec::head(32, 0.05), 0).unwrap();
        let g = Geometry::new(4, 46, 32).unwrap();
        for &theta in g.angles() {
            let p = project_angle(&img, theta, &g);
            let q = project_angle(&img, theta + PI, &g);
            for (a, b) in p.iter().zip(q.iter().rev()) {
                assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
            }
        }
    }
}
