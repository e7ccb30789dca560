//! Lloyd's k-means from a seeded k-means++ start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::squared_distance;

const MAX_ITERATIONS: usize = 100;
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub k: usize,
    pub dim: usize,
    pub assignments: Vec<u32>,
    /// `k * dim` values, centroid-major.
    pub centroids: Vec<f64>,
    /// Within-cluster sum of squared distances to the centroids.
    pub wk: f64,
    /// Dispersion after every Lloyd iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

/// Index of the closest centroid and its squared distance; ties go to the
/// lowest index.
#[inline]
pub fn nearest_centroid(point: &[f64], centroids: &[f64], dim: usize) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j as u32, d);
        }
    }
    best
}

/// Clusters `data` (row-major, `dim` values per point) into `k` groups.
pub fn kmeans(data: &[f64], dim: usize, k: usize, seed: u64) -> Result<KMeansFit> {
    if dim == 0 || data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !data.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch(format!("{} values is not a multiple of dim {dim}", data.len())));
    }
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, dim, k, &mut rng);
    let mut assignments = assign(data, dim, &centroids);
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        centroids = update(data, dim, k, &assignments, &centroids);
        history.push(dispersion(data, dim, &assignments, &centroids));
        let next = assign(data, dim, &centroids);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    // centroids are the means of the final assignment unless the loop ran out
    if iterations == MAX_ITERATIONS {
        centroids = update(data, dim, k, &assignments, &centroids);
    }
    let wk = dispersion(data, dim, &assignments, &centroids);
    Ok(KMeansFit { k, dim, assignments, centroids, wk, history, iterations })
}

fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_distance(point(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(pick));
        let c = centroids[start..].to_vec();
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(squared_distance(point(i), &c));
        }
    }
    centroids
}

fn assign(data: &[f64], dim: usize, centroids: &[f64]) -> Vec<u32> {
    let nearest = |p: &[f64]| nearest_centroid(p, centroids, dim).0;
    if data.len() / dim >= PAR_THRESHOLD {
        data.par_chunks_exact(dim).map(nearest).collect()
    } else {
        data.chunks_exact(dim).map(nearest).collect()
    }
}

/// Member means; an empty cluster is re-seeded at the point farthest from its
/// current centroid.
fn update(data: &[f64], dim: usize, k: usize, assignments: &[u32], previous: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &a) in data.chunks_exact(dim).zip(assignments) {
        let a = a as usize;
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
            *s += v;
        }
    }
    let mut centroids = previous.to_vec();
    for j in 0..k {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centroids[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                *c = s * inv;
            }
        }
    }
    let mut taken: Vec<usize> = Vec::new();
    for j in (0..k).filter(|&j| counts[j] == 0) {
        let mut far = None;
        let mut far_d = -1.0;
        for (i, (p, &a)) in data.chunks_exact(dim).zip(assignments).enumerate() {
            if taken.contains(&i) {
                continue;
            }
            let a = a as usize;
            let d = squared_distance(p, &centroids[a * dim..(a + 1) * dim]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        if let Some(i) = far {
            taken.push(i);
            centroids[j * dim..(j + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
        }
    }
    centroids
}

fn dispersion(data: &[f64], dim: usize, assignments: &[u32], centroids: &[f64]) -> f64 {
    data.chunks_exact(dim)
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a as usize * dim..(a as usize + 1) * dim]))
        .sum()
}
