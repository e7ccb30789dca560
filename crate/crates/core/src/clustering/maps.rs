//! Joint labeling of a reference/floating pair against one shared codebook.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gap::{gap_statistic, GapResult};
use super::kmeans::{kmeans, nearest_centroid};
use super::{LabelMap, SoftLabelMap};
use crate::error::{Error, Result};
use crate::features::{squared_distance, FeatureStack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    /// Number of uniform reference sets for the gap statistic.
    pub b: usize,
    /// Pixels drawn (from both images pooled) to fit the codebook.
    pub subsample: usize,
    /// Points drawn from that sample for the gap-statistic search.
    pub gap_subsample: usize,
    /// Bypasses the gap statistic when set.
    pub fixed_k: Option<usize>,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k_min: 2, k_max: 16, b: 20, subsample: 20_000, gap_subsample: 2_000, fixed_k: None, seed: 0 }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_max < self.k_min {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k_min <= k_max, got {}..{}",
                self.k_min, self.k_max
            )));
        }
        if self.b == 0 {
            return Err(Error::InvalidArgument("b must be at least 1".into()));
        }
        if self.subsample == 0 || self.gap_subsample == 0 {
            return Err(Error::InvalidArgument("subsample sizes must be positive".into()));
        }
        if self.fixed_k == Some(0) {
            return Err(Error::InvalidArgument("fixed_k must be positive".into()));
        }
        Ok(())
    }
}

/// Decaying cluster counts: `floor(3N/4)`, then `floor(0.9 k)` while the
/// value stays at or above `k_min`.
#[derive(Debug, Clone)]
pub struct KSchedule {
    next: usize,
    k_min: usize,
}

impl Iterator for KSchedule {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.next < self.k_min || self.next == 0 {
            return None;
        }
        let k = self.next;
        self.next = k * 9 / 10;
        Some(k)
    }
}

pub fn k_schedule(n_pixels: usize, k_min: usize) -> KSchedule {
    KSchedule { next: 3 * n_pixels / 4, k_min: k_min.max(1) }
}

/// Schedule values clipped to `[k_min, k_max]`, deduplicated, ascending.
pub fn candidate_ks(n_pixels: usize, k_min: usize, k_max: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = k_schedule(n_pixels, k_min).map(|k| k.min(k_max)).collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Everything the registration stage needs from clustering.
#[derive(Debug, Clone)]
pub struct LabelMaps {
    pub reference: LabelMap,
    pub floating: LabelMap,
    pub reference_soft: SoftLabelMap,
    pub floating_soft: SoftLabelMap,
    pub gap: GapResult,
    /// Shared codebook, `k * depth` values.
    pub centroids: Vec<f64>,
}

impl LabelMaps {
    pub fn k(&self) -> usize {
        self.reference.classes()
    }
}

/// Clusters the pooled pixels of both images, selects k with the gap
/// statistic, and labels each image against the shared centroids.
pub fn make_label_maps(reference: &FeatureStack, floating: &FeatureStack, cfg: &ClusterConfig) -> Result<LabelMaps> {
    cfg.validate()?;
    if reference.depth() != floating.depth() {
        return Err(Error::DepthMismatch(reference.depth(), floating.depth()));
    }
    let dim = reference.depth();
    let n_ref = reference.pixel_count();
    let total = n_ref + floating.pixel_count();
    let pooled = |i: usize| if i < n_ref { reference.vector(i) } else { floating.vector(i - n_ref) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fit_idx = sample_indices(&mut rng, total, cfg.subsample);
    let fit_points: Vec<f64> = fit_idx.iter().flat_map(|&i| pooled(i).iter().copied()).collect();

    let gap = match cfg.fixed_k {
        Some(k) => GapResult::fixed(k.min(fit_idx.len())),
        None => {
            let gap_pos = sample_indices(&mut rng, fit_idx.len(), cfg.gap_subsample);
            let gap_points: Vec<f64> = gap_pos.iter().flat_map(|&i| pooled(fit_idx[i]).iter().copied()).collect();
            let ks: Vec<usize> = candidate_ks(total, cfg.k_min, cfg.k_max)
                .into_iter()
                .filter(|&k| k <= gap_pos.len())
                .collect();
            if ks.is_empty() {
                return Err(Error::InvalidArgument(format!("no usable k candidates for {total} pixels")));
            }
            gap_statistic(&gap_points, dim, &ks, cfg.b, cfg.seed)?
        }
    };
    let k = gap.chosen_k;
    let fit = kmeans(&fit_points, dim, k, cfg.seed)?;

    let (reference_hard, reference_soft) = label_image(reference, &fit.centroids, k)?;
    let (floating_hard, floating_soft) = label_image(floating, &fit.centroids, k)?;
    Ok(LabelMaps {
        reference: reference_hard,
        floating: floating_hard,
        reference_soft,
        floating_soft,
        gap,
        centroids: fit.centroids,
    })
}

fn sample_indices(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

fn label_image(feats: &FeatureStack, centroids: &[f64], k: usize) -> Result<(LabelMap, SoftLabelMap)> {
    let dim = feats.depth();
    let n = feats.pixel_count();
    let labels: Vec<u32> = (0..n).map(|p| nearest_centroid(feats.vector(p), centroids, dim).0).collect();
    let tau = (0..n).map(|p| nearest_centroid(feats.vector(p), centroids, dim).1).sum::<f64>() / n as f64;
    let hard = LabelMap::new(feats.width(), feats.height(), k, labels)?;
    let soft = soft_labels(feats, centroids, tau)?;
    Ok((hard, soft))
}

/// `p_j ∝ exp(-d²(x, c_j) / tau)`. A non-positive temperature gives the
/// one-hot nearest-centroid map.
pub fn soft_labels(feats: &FeatureStack, centroids: &[f64], tau: f64) -> Result<SoftLabelMap> {
    let dim = feats.depth();
    if centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
        return Err(Error::DepthMismatch(centroids.len(), dim));
    }
    let k = centroids.len() / dim;
    let n = feats.pixel_count();
    let mut planes = vec![vec![0.0; n]; k];
    let mut d2 = vec![0.0; k];
    for p in 0..n {
        let x = feats.vector(p);
        for (j, c) in centroids.chunks_exact(dim).enumerate() {
            d2[j] = squared_distance(x, c);
        }
        let (best, dmin) = nearest_centroid(x, centroids, dim);
        if tau <= 0.0 || !tau.is_finite() {
            planes[best as usize][p] = 1.0;
            continue;
        }
        let mut sum = 0.0;
        for j in 0..k {
            let e = (-(d2[j] - dmin) / tau).exp();
            planes[j][p] = e;
            sum += e;
        }
        for plane in planes.iter_mut() {
            plane[p] /= sum;
        }
    }
    Ok(SoftLabelMap::from_planes_unchecked(feats.width(), feats.height(), planes))
}
