//! Fine-grained label maps from clustered features: k-means, the decaying
//! k schedule, gap-statistic model selection, and hard/soft label maps built
//! against one codebook shared by both images.

mod gap;
mod kmeans;
mod maps;

pub use gap::{gap_statistic, GapRecord, GapResult};
pub use kmeans::{kmeans, nearest_centroid, KMeansFit};
pub use maps::{candidate_ks, k_schedule, make_label_maps, soft_labels, ClusterConfig, KSchedule, LabelMaps};

use std::path::Path;

use crate::error::{Error, Result};

/// Hard cluster assignment per pixel, labels in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    k: usize,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, k: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "label map {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} not below k = {k}")));
        }
        Ok(Self { width, height, k, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.k];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    /// True when some class in `0..k` has no pixels.
    pub fn is_degenerate(&self) -> bool {
        self.histogram().contains(&0)
    }

    /// Binary membership mask for one class.
    pub fn mask(&self, class_id: u32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class_id).collect()
    }

    /// Writes an 8-bit image with labels spread evenly over `[0, 255]`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let scale = if self.k > 1 { 255.0 / (self.k - 1) as f64 } else { 0.0 };
        let bytes: Vec<u8> = self.labels.iter().map(|&l| (l as f64 * scale).round() as u8).collect();
        crate::imaging::save_gray8(path, self.width, self.height, &bytes)
    }
}

/// Per-class probability planes; every pixel is a point on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMap {
    width: usize,
    height: usize,
    planes: Vec<Vec<f64>>,
}

impl SoftLabelMap {
    /// Validates plane sizes, range, and per-pixel sums (tolerance 1e-6).
    pub fn from_planes(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::InvalidArgument("soft label map needs at least one class".into()));
        }
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(format!("every plane must hold {n} values")));
        }
        for p in 0..n {
            let mut sum = 0.0;
            for plane in &planes {
                let v = plane[p];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!("probability {v} outside [0, 1]")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("pixel {p} probabilities sum to {sum}")));
            }
        }
        Ok(Self { width, height, planes })
    }

    pub(crate) fn from_planes_unchecked(width: usize, height: usize, planes: Vec<Vec<f64>>) -> Self {
        Self { width, height, planes }
    }

    pub fn one_hot(width: usize, height: usize, k: usize, labels: &[u32]) -> Result<Self> {
        let map = LabelMap::new(width, height, k, labels.to_vec())?;
        Ok(Self::from(&map))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, j: usize) -> &[f64] {
        &self.planes[j]
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }

    /// Probability vector of one pixel.
    pub fn pixel(&self, p: usize) -> Vec<f64> {
        self.planes.iter().map(|pl| pl[p]).collect()
    }

    /// Argmax per pixel, ties to the lowest class.
    pub fn hard(&self) -> LabelMap {
        let n = self.width * self.height;
        let labels = (0..n)
            .map(|p| {
                let mut best = 0;
                for j in 1..self.planes.len() {
                    if self.planes[j][p] > self.planes[best][p] {
                        best = j;
                    }
                }
                best as u32
            })
            .collect();
        LabelMap { width: self.width, height: self.height, k: self.planes.len(), labels }
    }

    /// Mean-pooled 2x downsample of every plane, renormalized.
    pub fn downsample_half(&self) -> Result<SoftLabelMap> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::ImageTooSmall { width: self.width, height: self.height, min: 2 });
        }
        let (w, h) = (self.width / 2, self.height / 2);
        let mut planes: Vec<Vec<f64>> = self
            .planes
            .iter()
            .map(|pl| {
                let at = |x: usize, y: usize| pl[y * self.width + x];
                let mut out = Vec::with_capacity(w * h);
                for y in 0..h {
                    for x in 0..w {
                        let s = at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1);
                        out.push(0.25 * s);
                    }
                }
                out
            })
            .collect();
        for p in 0..w * h {
            let sum: f64 = planes.iter().map(|pl| pl[p]).sum();
            planes.iter_mut().for_each(|pl| pl[p] /= sum);
        }
        Ok(SoftLabelMap { width: w, height: h, planes })
    }
}

impl From<&LabelMap> for SoftLabelMap {
    fn from(map: &LabelMap) -> Self {
        let planes = (0..map.k as u32)
            .map(|j| map.labels.iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { width: map.width, height: map.height, planes }
    }
}
