//! Training-free stand-in for a segmentation encoder/decoder: a fixed filter
//! bank evaluated at several max-pooled scales, upsampled back to full
//! resolution, concatenated and standardized per channel.
//!
//! Channels per scale, in order: intensity, Gaussian blur, Gaussian
//! x-derivative, Gaussian y-derivative, and one Laplacian-of-Gaussian per
//! entry of [`FeatureConfig::log_sigmas`]. Features are stored scale-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resize_plane, Image};

/// Smallest image side `extract` accepts.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub blur_sigma: f64,
    pub derivative_sigma: f64,
    pub log_sigmas: Vec<f64>,
    pub scales: usize,
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            derivative_sigma: 1.0,
            log_sigmas: vec![1.0, 2.0],
            scales: 3,
            standardize: true,
        }
    }
}

impl FeatureConfig {
    pub fn channels_per_scale(&self) -> usize {
        4 + self.log_sigmas.len()
    }

    pub fn depth(&self) -> usize {
        self.channels_per_scale() * self.scales
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.blur_sigma, self.derivative_sigma].into_iter().chain(self.log_sigmas.iter().copied());
        for s in sigmas {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("filter sigma must be positive, got {s}")));
            }
        }
        if self.scales == 0 {
            return Err(Error::InvalidArgument("feature scale count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel feature vectors, row-major, `depth` values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    width: usize,
    height: usize,
    depth: usize,
    data: Vec<f64>,
}

impl FeatureStack {
    pub fn new(width: usize, height: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * depth {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{depth} features need {} values, got {}",
                width * height * depth,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self { width, height, depth, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector of pixel `p` (row-major index).
    #[inline]
    pub fn vector(&self, p: usize) -> &[f64] {
        &self.data[p * self.depth..(p + 1) * self.depth]
    }

    /// Copy of channel `c` as a plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.depth).copied().collect()
    }
}

/// Squared Euclidean distance between the feature vectors of `a[p]` and `b[q]`.
pub fn feature_distance(a: &FeatureStack, p: usize, b: &FeatureStack, q: usize) -> Result<f64> {
    if a.depth != b.depth {
        return Err(Error::DepthMismatch(a.depth, b.depth));
    }
    Ok(squared_distance(a.vector(p), b.vector(q)))
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn extract(img: &Image, config: &FeatureConfig) -> Result<FeatureStack> {
    config.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::ImageTooSmall { width: w, height: h, min: MIN_SIDE });
    }
    let depth = config.depth();
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(depth);
    let mut level = Plane { w, h, data: img.data().to_vec() };
    for s in 0..config.scales {
        if s > 0 {
            if level.w < 2 || level.h < 2 {
                return Err(Error::ImageTooSmall { width: w, height: h, min: MIN_SIDE });
            }
            level = level.max_pool();
        }
        for response in filter_bank(&level, config) {
            channels.push(if s == 0 {
                response
            } else {
                resize_plane(&response, level.w, level.h, w, h)
            });
        }
    }
    if config.standardize {
        channels.iter_mut().for_each(|c| standardize(c));
    }
    let n = w * h;
    let mut data = Vec::with_capacity(n * depth);
    for p in 0..n {
        data.extend(channels.iter().map(|c| c[p]));
    }
    FeatureStack::new(w, h, depth, data)
}

/// Gaussian smoothing of a `w x h` plane with reflect-101 borders.
pub(crate) fn gaussian_blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    separable(&Plane { w, h, data: data.to_vec() }, &k, &k)
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn max_pool(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let at = |x: usize, y: usize| self.data[y * self.w + x];
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let m = at(2 * x, 2 * y)
                    .max(at(2 * x + 1, 2 * y))
                    .max(at(2 * x, 2 * y + 1))
                    .max(at(2 * x + 1, 2 * y + 1));
                data.push(m);
            }
        }
        Plane { w, h, data }
    }
}

fn filter_bank(level: &Plane, cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let blur = gaussian_kernel(cfg.blur_sigma);
    let dg = gaussian_kernel(cfg.derivative_sigma);
    let d1 = derivative_kernel(cfg.derivative_sigma);
    let mut out = vec![
        level.data.clone(),
        separable(level, &blur, &blur),
        separable(level, &d1, &dg),
        separable(level, &dg, &d1),
    ];
    for &s in &cfg.log_sigmas {
        let g = gaussian_kernel(s);
        let g2 = second_derivative_kernel(s);
        let xx = separable(level, &g2, &g);
        let yy = separable(level, &g, &g2);
        out.push(xx.iter().zip(&yy).map(|(a, b)| a + b).collect());
    }
    out
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// First derivative taps, oriented so that correlation with an increasing
/// ramp is positive.
fn derivative_kernel(sigma: f64) -> Vec<f64> {
    let g = gaussian_kernel(sigma);
    let r = (g.len() / 2) as i64;
    g.iter().zip(-r..=r).map(|(v, i)| v * i as f64 / (sigma * sigma)).collect()
}

/// Second derivative taps, shifted to sum to zero.
fn second_derivative_kernel(sigma: f64) -> Vec<f64> {
    let g = gaussian_kernel(sigma);
    let r = (g.len() / 2) as i64;
    let s2 = sigma * sigma;
    let mut k: Vec<f64> = g
        .iter()
        .zip(-r..=r)
        .map(|(v, i)| v * ((i * i) as f64 / (s2 * s2) - 1.0 / s2))
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

/// Reflect-101 index (`-1 -> 1`, `n -> n-2`), valid for any offset.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m >= n as i64 { period - m } else { m }) as usize
}

/// Correlates rows with `kx`, then columns with `ky`.
fn separable(p: &Plane, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    let (w, h) = (p.w, p.h);
    let rx = (kx.len() / 2) as i64;
    let ry = (ky.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &p.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in kx.iter().enumerate() {
                acc += k * row[reflect(x as i64 + t as i64 - rx, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &k) in ky.iter().enumerate() {
                acc += k * tmp[reflect(y as i64 + t as i64 - ry, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Zero mean, unit variance; a channel with no variance becomes all zeros.
fn standardize(c: &mut [f64]) {
    let n = c.len() as f64;
    let mean = c.iter().sum::<f64>() / n;
    let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < 1e-18 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let inv = 1.0 / var.sqrt();
    c.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random())
    }

    #[test]
    fn default_depth_is_eighteen() {
        let f = extract(&random_image(16, 12, 1), &FeatureConfig::default()).unwrap();
        assert_eq!(f.depth(), 18);
        assert_eq!(f.data().len(), 16 * 12 * 18);
        let big = extract(&random_image(40, 33, 1), &FeatureConfig::default()).unwrap();
        assert_eq!(big.depth(), 18);
    }

    #[test]
    fn too_small_rejected() {
        let err = extract(&Image::constant(7, 16, 0.5), &FeatureConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ImageTooSmall { .. }));
    }

    #[test]
    fn constant_image_channels_are_constant_then_zeroed() {
        let img = Image::constant(12, 10, 0.6);
        let raw = extract(&img, &FeatureConfig { standardize: false, ..Default::default() }).unwrap();
        for c in 0..raw.depth() {
            let ch = raw.channel(c);
            assert!(ch.iter().all(|&v| (v - ch[0]).abs() < 1e-15), "channel {c}");
        }
        let std = extract(&img, &FeatureConfig::default()).unwrap();
        assert!(std.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let img = random_image(20, 18, 7);
        let cfg = FeatureConfig::default();
        assert_eq!(extract(&img, &cfg).unwrap(), extract(&img, &cfg).unwrap());
    }

    #[test]
    fn standardized_channels() {
        let f = extract(&random_image(24, 24, 3), &FeatureConfig::default()).unwrap();
        for c in 0..f.depth() {
            let ch = f.channel(c);
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
        }
    }

    #[test]
    fn isotropic_channels_mirror() {
        let img = random_image(16, 16, 11);
        let cfg = FeatureConfig::default();
        let a = extract(&img, &cfg).unwrap();
        let b = extract(&img.mirrored_x(), &cfg).unwrap();
        let per_scale = cfg.channels_per_scale();
        // intensity, blur, and the LoG channels are symmetric under x -> -x
        let isotropic: Vec<usize> = (0..cfg.scales)
            .flat_map(|s| [0, 1, 4, 5].into_iter().map(move |c| s * per_scale + c))
            .collect();
        for y in 0..16 {
            for x in 0..16 {
                let va = a.vector(y * 16 + x);
                let vb = b.vector(y * 16 + (15 - x));
                for &c in &isotropic {
                    assert!((va[c] - vb[c]).abs() < 1e-12, "c={c} at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn derivative_sign_on_ramp() {
        let img = Image::from_fn(16, 16, |x, _| x as f64 / 15.0);
        let raw = extract(&img, &FeatureConfig { standardize: false, ..Default::default() }).unwrap();
        let gx = raw.vector(8 * 16 + 8)[2];
        assert!((gx - 1.0 / 15.0).abs() < 1e-3, "{gx}");
        assert!(raw.vector(8 * 16 + 8)[3].abs() < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-9, 5), 1);
        assert_eq!(reflect(12, 4), 0);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn distance_cases() {
        let a = FeatureStack::new(2, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(feature_distance(&a, 0, &a, 0).unwrap(), 0.0);
        assert_eq!(feature_distance(&a, 0, &a, 1).unwrap(), 2.0);
        let b = FeatureStack::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(feature_distance(&a, 0, &b, 0), Err(Error::DepthMismatch(2, 3))));
    }

    #[test]
    fn distance_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 18;
        let data: Vec<f64> = (0..4 * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f = FeatureStack::new(2, 2, d, data.clone()).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                let mut naive = 0.0;
                for c in 0..d {
                    let diff = data[p * d + c] - data[q * d + c];
                    naive += diff * diff;
                }
                assert!((feature_distance(&f, p, &f, q).unwrap() - naive).abs() < 1e-12);
            }
        }
    }
}
