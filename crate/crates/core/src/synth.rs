//! Ground-truth generators: smooth elastic fields, deformed pairs with
//! transferred landmarks, planted clusters and piecewise-constant region
//! images.
//!
//! Pairs follow the backward-warp convention of [`crate::warp`]: the
//! reference is the base warped by the true field `t` and the floating image
//! is the (noisy) base, so registering floating onto reference recovers `t`
//! itself and `flt_landmarks = warp_points(ref_landmarks, t)` exactly.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::{LabelMap, SoftLabelMap};
use crate::error::{Error, Result};
use crate::features::gaussian_blur;
use crate::imaging::{save_image, write_atomic, Frame, Image, LandmarkSet, Point};
use crate::warp::{save_field, warp_image, warp_points, warp_soft_labels, DisplacementField};

/// Minimum gap between planted region intensities.
pub const REGION_CONTRAST: f64 = 0.15;
/// Intensity noise added inside planted regions.
pub const REGION_TEXTURE: f64 = 0.02;
/// Most regions whose intensities fit in `[0, 1]` at the required contrast.
pub const MAX_REGIONS: usize = 7;

#[derive(Debug, Clone)]
pub struct SynthPair {
    pub reference: Image,
    pub floating: Image,
    pub true_field: DisplacementField,
    pub ref_landmarks: LandmarkSet,
    pub flt_landmarks: LandmarkSet,
    /// Planted regions in the reference frame (structured pairs only).
    pub ref_regions: Option<LabelMap>,
    /// Planted regions in the floating frame (structured pairs only).
    pub flt_regions: Option<LabelMap>,
}

/// Gaussian-smoothed white noise rescaled to a maximum magnitude of
/// `amplitude` pixels.
pub fn elastic_field(width: usize, height: usize, amplitude: f64, sigma: f64, seed: u64) -> Result<DisplacementField> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("amplitude must be >= 0, got {amplitude}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    if amplitude == 0.0 {
        return Ok(DisplacementField::zeros(width, height));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height;
    let noise = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
    let ux = gaussian_blur(&noise(&mut rng), width, height, sigma);
    let uy = gaussian_blur(&noise(&mut rng), width, height, sigma);
    let peak = ux.iter().zip(&uy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let u = ux.iter().zip(&uy).flat_map(|(a, b)| [a * scale, b * scale]).collect();
    DisplacementField::new(width, height, u)
}

/// Multi-scale smoothed noise normalized to `[0.1, 0.9]`.
pub fn textured_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = width * height;
    let mut acc = vec![0.0; n];
    for (sigma, weight) in [(1.5, 0.5), (3.0, 1.0), (6.0, 1.0)] {
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut layer = gaussian_blur(&noise, width, height, sigma);
        let sd = (layer.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
        layer.iter_mut().for_each(|v| *v *= weight / sd);
        acc.iter_mut().zip(&layer).for_each(|(a, l)| *a += l);
    }
    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    Image::from_fn(width, height, |x, y| 0.1 + 0.8 * (acc[y * width + x] - lo) / span)
}

/// `n` uniformly placed points at least `margin` pixels from the border.
pub fn random_landmarks(width: usize, height: usize, n: usize, margin: f64, seed: u64) -> Result<LandmarkSet> {
    let (xmax, ymax) = (width as f64 - 1.0 - margin, height as f64 - 1.0 - margin);
    if margin < 0.0 || xmax < margin || ymax < margin {
        return Err(Error::InvalidArgument(format!("margin {margin} leaves no room in {width}x{height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| Point::new(rng.random_range(margin..=xmax), rng.random_range(margin..=ymax)))
        .collect();
    Ok(LandmarkSet::new(points, Frame::Reference))
}

/// Deforms `base` by a fresh elastic field and adds intensity noise to the
/// floating side. `landmarks` are reference-frame positions.
pub fn make_pair(
    base: &Image,
    landmarks: &LandmarkSet,
    amplitude: f64,
    sigma: f64,
    noise_std: f64,
    seed: u64,
) -> Result<SynthPair> {
    landmarks.check_within(base.width(), base.height())?;
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let (w, h) = (base.width(), base.height());
    let true_field = elastic_field(w, h, amplitude, sigma, seed)?;
    let reference = warp_image(base, &true_field)?;
    let floating = if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("validated std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03);
        let data = base.data().iter().map(|v| v + normal.sample(&mut rng)).collect::<Vec<_>>();
        Image::from_fn(w, h, |x, y| data[y * w + x])
    } else {
        base.clone()
    };
    let mut ref_landmarks = landmarks.clone();
    ref_landmarks.frame = Frame::Reference;
    let flt_landmarks = warp_points(&ref_landmarks, &true_field)?;
    Ok(SynthPair { reference, floating, true_field, ref_landmarks, flt_landmarks, ref_regions: None, flt_regions: None })
}

/// Like [`make_pair`] on a Voronoi region image; the planted regions are
/// carried into both frames.
#[allow(clippy::too_many_arguments)]
pub fn make_structured_pair(
    width: usize,
    height: usize,
    n_regions: usize,
    n_cells: usize,
    landmarks: &LandmarkSet,
    amplitude: f64,
    sigma: f64,
    noise_std: f64,
    seed: u64,
) -> Result<SynthPair> {
    let (base, regions) = structured_cells(width, height, n_regions, n_cells, seed)?;
    let mut pair = make_pair(&base, landmarks, amplitude, sigma, noise_std, seed)?;
    let soft = SoftLabelMap::from(&regions);
    pair.ref_regions = Some(warp_soft_labels(&soft, &pair.true_field)?.hard());
    pair.flt_regions = Some(regions);
    Ok(pair)
}

/// Voronoi partition of `n_regions` distinct random sites. Region
/// intensities are a shuffled ladder at least [`REGION_CONTRAST`] apart, plus
/// Gaussian texture of std [`REGION_TEXTURE`].
pub fn structured_image(width: usize, height: usize, n_regions: usize, seed: u64) -> Result<(Image, LabelMap)> {
    structured_cells(width, height, n_regions, n_regions, seed)
}

/// Voronoi partition of `n_cells` sites whose cells are spread over
/// `n_regions` region classes; every class owns at least one cell. Intensity
/// and texture follow [`structured_image`], per class. The returned map holds
/// class ids.
pub fn structured_cells(width: usize, height: usize, n_regions: usize, n_cells: usize, seed: u64) -> Result<(Image, LabelMap)> {
    if !(2..=MAX_REGIONS).contains(&n_regions) {
        return Err(Error::InvalidArgument(format!("n_regions must be in 2..={MAX_REGIONS}, got {n_regions}")));
    }
    if n_cells < n_regions {
        return Err(Error::InvalidArgument(format!("need at least as many cells as regions, got {n_cells} < {n_regions}")));
    }
    let n = width * height;
    if n < n_cells {
        return Err(Error::ImageTooSmall { width, height, min: n_cells });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites: Vec<(f64, f64)> = rand::seq::index::sample(&mut rng, n, n_cells)
        .into_iter()
        .map(|i| ((i % width) as f64, (i / width) as f64))
        .collect();
    let class_of: Vec<u32> =
        (0..n_cells).map(|c| if c < n_regions { c as u32 } else { rng.random_range(0..n_regions as u32) }).collect();
    let step = 0.92 / (MAX_REGIONS - 1) as f64;
    let mut levels: Vec<f64> = (0..n_regions).map(|i| 0.04 + step * (i * (MAX_REGIONS - 1) / (n_regions - 1)) as f64).collect();
    for i in (1..levels.len()).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let labels: Vec<u32> = (0..n)
        .map(|p| {
            let (x, y) = ((p % width) as f64, (p / width) as f64);
            let mut best = (0, f64::INFINITY);
            for (j, &(sx, sy)) in sites.iter().enumerate() {
                let d = (x - sx) * (x - sx) + (y - sy) * (y - sy);
                if d < best.1 {
                    best = (j, d);
                }
            }
            class_of[best.0]
        })
        .collect();
    let texture = Normal::new(0.0, REGION_TEXTURE).expect("positive std");
    let data: Vec<f64> = labels.iter().map(|&l| levels[l as usize] + texture.sample(&mut rng)).collect();
    let img = Image::from_fn(width, height, |x, y| data[y * width + x]);
    Ok((img, LabelMap::new(width, height, n_regions, labels)?))
}

/// `n_points` samples from `k` isotropic Gaussian blobs of std `sigma` whose
/// centers are pairwise at least `separation` apart. Point `i` belongs to
/// blob `i % k`; the returned data is row-major `n_points x dim`.
pub fn planted_clusters(n_points: usize, k: usize, dim: usize, separation: f64, sigma: f64, seed: u64) -> (Vec<f64>, Vec<u32>) {
    assert!(k >= 1 && dim >= 1, "need k >= 1 and dim >= 1");
    assert!(separation > 0.0 && sigma >= 0.0, "need separation > 0 and sigma >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut side = separation * (k as f64).powf(1.0 / dim as f64) * 2.0;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0;
    while centers.len() < k {
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
        let ok = centers.iter().all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation);
        if ok {
            centers.push(c);
        } else {
            failures += 1;
            if failures % 1000 == 0 {
                side *= 1.25;
            }
        }
    }
    let normal = Normal::new(0.0, sigma).expect("finite std");
    let mut data = Vec::with_capacity(n_points * dim);
    let mut labels = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let j = i % k;
        data.extend(centers[j].iter().map(|c| c + normal.sample(&mut rng)));
        labels.push(j as u32);
    }
    (data, labels)
}

/// Generation parameters recorded alongside emitted pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub amplitude: f64,
    pub sigma: f64,
    pub noise_std: f64,
    pub landmarks: usize,
    pub landmark_margin: f64,
    /// 0 selects the textured base; otherwise a Voronoi image with this many
    /// regions.
    pub regions: usize,
    /// Voronoi cells shared among the regions; values below `regions` mean
    /// one cell per region.
    pub cells: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            amplitude: 8.0,
            sigma: 8.0,
            noise_std: 0.01,
            landmarks: 50,
            landmark_margin: 4.0,
            regions: 0,
            cells: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn generate(&self) -> Result<SynthPair> {
        let lm = random_landmarks(self.width, self.height, self.landmarks, self.landmark_margin, self.seed ^ 0x5EED)?;
        if self.regions == 0 {
            let base = textured_image(self.width, self.height, self.seed);
            make_pair(&base, &lm, self.amplitude, self.sigma, self.noise_std, self.seed)
        } else {
            make_structured_pair(self.width, self.height, self.regions, self.cells.max(self.regions), &lm, self.amplitude, self.sigma, self.noise_std, self.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub role: String,
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes every artifact of `pair` into `dir` plus a JSON manifest listing
/// them with their sizes.
pub fn write_pair(dir: impl AsRef<Path>, pair: &SynthPair, config: &SynthConfig) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut record = |role: &str, file: &str| -> Result<()> {
        let path = dir.join(file);
        let bytes = fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
        files.push(ManifestEntry { role: role.into(), file: file.into(), bytes });
        Ok(())
    };
    save_image(dir.join("reference.png"), &pair.reference)?;
    record("reference", "reference.png")?;
    save_image(dir.join("floating.png"), &pair.floating)?;
    record("floating", "floating.png")?;
    save_field(dir.join("true_field.srfd"), &pair.true_field)?;
    record("true_field", "true_field.srfd")?;
    write_atomic(dir.join("ref_landmarks.csv"), pair.ref_landmarks.to_csv().as_bytes())?;
    record("ref_landmarks", "ref_landmarks.csv")?;
    write_atomic(dir.join("flt_landmarks.csv"), pair.flt_landmarks.to_csv().as_bytes())?;
    record("flt_landmarks", "flt_landmarks.csv")?;
    if let Some(r) = &pair.ref_regions {
        r.save(dir.join("ref_regions.png"))?;
        record("ref_regions", "ref_regions.png")?;
    }
    if let Some(r) = &pair.flt_regions {
        r.save(dir.join("flt_regions.png"))?;
        record("flt_regions", "flt_regions.png")?;
    }
    let manifest = Manifest { config: config.clone(), files };
    write_atomic(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::loss_smooth;

    #[test]
    fn zero_amplitude_is_zero_field() {
        let f = elastic_field(16, 12, 0.0, 3.0, 1).unwrap();
        assert_eq!(f, DisplacementField::zeros(16, 12));
    }

    #[test]
    fn max_magnitude_matches_amplitude() {
        for seed in 0..5 {
            let f = elastic_field(40, 30, 8.0, 4.0, seed).unwrap();
            assert!((f.max_magnitude() - 8.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_field_parameters() {
        assert!(elastic_field(8, 8, -1.0, 2.0, 0).is_err());
        assert!(elastic_field(8, 8, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn larger_sigma_is_smoother() {
        let per_pixel = |sigma: f64| -> f64 {
            (0..10)
                .map(|seed| loss_smooth(&elastic_field(64, 64, 8.0, sigma, seed).unwrap()).unwrap() / 4096.0)
                .sum::<f64>()
        };
        let (a, b, c) = (per_pixel(2.0), per_pixel(4.0), per_pixel(8.0));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn zero_pair_is_identical() {
        let base = textured_image(32, 32, 4);
        let lm = random_landmarks(32, 32, 10, 2.0, 4).unwrap();
        let pair = make_pair(&base, &lm, 0.0, 4.0, 0.0, 9).unwrap();
        assert_eq!(pair.reference, pair.floating);
        assert_eq!(pair.ref_landmarks.points, pair.flt_landmarks.points);
    }

    #[test]
    fn landmarks_follow_the_true_field() {
        let base = textured_image(64, 64, 1);
        let lm = random_landmarks(64, 64, 20, 3.0, 2).unwrap();
        let pair = make_pair(&base, &lm, 6.0, 6.0, 0.01, 3).unwrap();
        let moved = warp_points(&pair.ref_landmarks, &pair.true_field).unwrap();
        for (a, b) in moved.points.iter().zip(&pair.flt_landmarks.points) {
            assert!(a.distance(b) < 1e-6);
        }
        assert_eq!(pair.flt_landmarks.frame, Frame::Floating);
    }

    #[test]
    fn reference_is_the_warped_clean_floating() {
        let base = textured_image(48, 48, 7);
        let lm = random_landmarks(48, 48, 5, 2.0, 7).unwrap();
        let pair = make_pair(&base, &lm, 5.0, 6.0, 0.0, 7).unwrap();
        assert_eq!(warp_image(&pair.floating, &pair.true_field).unwrap(), pair.reference);
    }

    #[test]
    fn pre_registration_tre_is_bounded_by_amplitude() {
        let base = textured_image(128, 128, 0);
        let lm = random_landmarks(128, 128, 30, 4.0, 0).unwrap();
        let pair = make_pair(&base, &lm, 8.0, 8.0, 0.01, 0).unwrap();
        let mean = pair
            .ref_landmarks
            .points
            .iter()
            .zip(&pair.flt_landmarks.points)
            .map(|(a, b)| a.distance(b))
            .sum::<f64>()
            / 30.0;
        assert!(mean > 0.0 && mean <= 8.0 + 1e-9, "{mean}");
    }

    #[test]
    fn landmarks_outside_are_rejected() {
        let base = textured_image(16, 16, 0);
        let lm = LandmarkSet::new(vec![Point::new(20.0, 1.0)], Frame::Reference);
        assert!(matches!(make_pair(&base, &lm, 1.0, 2.0, 0.0, 0), Err(Error::PointOutOfDomain { .. })));
    }

    #[test]
    fn structured_regions_are_distinct() {
        for n in 2..=MAX_REGIONS {
            let (img, labels) = structured_image(48, 40, n, n as u64).unwrap();
            assert_eq!(labels.histogram().iter().filter(|&&c| c > 0).count(), n);
            let mut means = vec![0.0; n];
            for (v, &l) in img.data().iter().zip(labels.labels()) {
                means[l as usize] += v;
            }
            let hist = labels.histogram();
            for (m, c) in means.iter_mut().zip(&hist) {
                *m /= *c as f64;
            }
            for i in 0..n {
                for j in i + 1..n {
                    assert!((means[i] - means[j]).abs() > REGION_CONTRAST - 0.02);
                }
            }
        }
        assert!(structured_image(16, 16, 1, 0).is_err());
        assert!(structured_cells(16, 16, 3, 2, 0).is_err());
        let (_, many) = structured_cells(64, 64, 3, 40, 5).unwrap();
        assert!(many.histogram().iter().all(|&c| c > 0));
        assert!(structured_image(16, 16, MAX_REGIONS + 1, 0).is_err());
    }

    #[test]
    fn planted_clusters_shape() {
        let (pts, labels) = planted_clusters(101, 1, 3, 5.0, 1.0, 0);
        assert_eq!(pts.len(), 303);
        assert!(labels.iter().all(|&l| l == 0));
        let (pts, labels) = planted_clusters(50, 4, 2, 10.0, 0.0, 1);
        assert_eq!(labels.len(), 50);
        for i in 0..4 {
            for j in i + 1..4 {
                let (a, b) = (&pts[i * 2..i * 2 + 2], &pts[j * 2..j * 2 + 2]);
                assert!(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() >= 10.0);
            }
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = SynthConfig { width: 32, height: 32, regions: 3, landmarks: 8, ..Default::default() };
        let (a, b) = (cfg.generate().unwrap(), cfg.generate().unwrap());
        assert_eq!(a.reference, b.reference);
        assert_eq!(a.floating, b.floating);
        assert_eq!(a.true_field, b.true_field);
        assert_eq!(a.ref_regions, b.ref_regions);
    }

    #[test]
    fn manifest_lists_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { width: 24, height: 24, regions: 2, landmarks: 4, ..Default::default() };
        let pair = cfg.generate().unwrap();
        let m = write_pair(dir.path(), &pair, &cfg).unwrap();
        assert_eq!(m.files.len(), 7);
        for e in &m.files {
            assert_eq!(fs::metadata(dir.path().join(&e.file)).unwrap().len(), e.bytes);
        }
        let back: Manifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
