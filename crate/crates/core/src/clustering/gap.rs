//! Gap-statistic selection of the cluster count.
//!
//! `Gap(k) = mean_b log W*_kb - log W_k`, where `W*_kb` is the dispersion of
//! reference set `b` drawn uniformly over the data's bounding box. The chosen
//! k is the smallest candidate with `Gap(k) >= Gap(k') - s_k'` where `k'` is
//! the next candidate and `s = sd_b(log W*) * sqrt(1 + 1/B)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::kmeans::kmeans;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRecord {
    pub k: usize,
    pub wk: f64,
    pub gap: f64,
    pub sk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapResult {
    pub records: Vec<GapRecord>,
    pub chosen_k: usize,
    /// No candidate satisfied the rule; `chosen_k` fell back to the largest.
    pub no_elbow: bool,
}

impl GapResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,wk,gap,sk\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.k, r.wk, r.gap, r.sk);
        }
        s
    }

    pub(crate) fn fixed(k: usize) -> Self {
        Self { records: Vec::new(), chosen_k: k, no_elbow: false }
    }
}

/// Runs the gap statistic over ascending candidates `ks` with `b` uniform
/// reference sets.
///
/// Points are put in a canonical order first, so the result does not depend
/// on the order they were supplied in.
pub fn gap_statistic(data: &[f64], dim: usize, ks: &[usize], b: usize, seed: u64) -> Result<GapResult> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no candidate k values".into()));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("candidate k values must be strictly ascending".into()));
    }
    if b == 0 {
        return Err(Error::InvalidArgument("B must be at least 1".into()));
    }
    if dim == 0 || data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sorted = canonical_order(data, dim);
    let n = sorted.len() / dim;

    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in sorted.chunks_exact(dim) {
        for d in 0..dim {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let references: Vec<Vec<f64>> = (0..b)
        .map(|_| {
            (0..n * dim)
                .map(|i| {
                    let d = i % dim;
                    if hi[d] > lo[d] {
                        rng.random_range(lo[d]..hi[d])
                    } else {
                        lo[d]
                    }
                })
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(ks.len());
    for &k in ks {
        let run_seed = seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let wk = kmeans(&sorted, dim, k, run_seed)?.wk;
        let logs: Vec<f64> = references
            .iter()
            .enumerate()
            .map(|(i, r)| kmeans(r, dim, k, run_seed.wrapping_add(i as u64 + 1)).map(|f| safe_ln(f.wk)))
            .collect::<Result<_>>()?;
        let mean = logs.iter().sum::<f64>() / b as f64;
        let sd = (logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / b as f64).sqrt();
        records.push(GapRecord { k, wk, gap: mean - safe_ln(wk), sk: sd * (1.0 + 1.0 / b as f64).sqrt() });
    }

    let chosen = select(&records);
    Ok(GapResult {
        chosen_k: chosen.unwrap_or(*ks.last().expect("non-empty")),
        no_elbow: chosen.is_none(),
        records,
    })
}

/// Smallest k whose gap is within one standard error of the next candidate.
pub(crate) fn select(records: &[GapRecord]) -> Option<usize> {
    records
        .windows(2)
        .find(|w| w[0].gap >= w[1].gap - w[1].sk)
        .map(|w| w[0].k)
}

fn safe_ln(w: f64) -> f64 {
    w.max(f64::MIN_POSITIVE).ln()
}

fn canonical_order(data: &[f64], dim: usize) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = data.chunks_exact(dim).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows.concat()
}
