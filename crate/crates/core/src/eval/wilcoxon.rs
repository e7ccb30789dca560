use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest nonzero-difference count handled by exact enumeration.
const EXACT_MAX: usize = 25;
/// Smallest sample accepted.
const MIN_PAIRS: usize = 6;

/// Two-sided Wilcoxon signed-rank p-value for paired samples.
///
/// Zero differences are dropped and tied magnitudes get average ranks. With
/// at most 25 nonzero differences the null distribution of the positive rank
/// sum is enumerated exactly (for the actual, possibly tied, ranks);
/// otherwise a normal approximation with tie-corrected variance and no
/// continuity correction is used.
pub fn paired_wilcoxon(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < MIN_PAIRS {
        return Err(Error::DegenerateSample(format!("need at least {MIN_PAIRS} pairs, got {}", x.len())));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample("non-finite difference".into()));
    }
    if d.is_empty() {
        return Err(Error::DegenerateSample("all differences are zero".into()));
    }
    let doubled = doubled_ranks(&d);
    let w_plus: u64 = d.iter().zip(&doubled).filter(|(v, _)| **v > 0.0).map(|(_, r)| *r).sum();
    let n = d.len();
    let p = if n <= EXACT_MAX {
        exact_p(&doubled, w_plus)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let ties: f64 = tie_sizes(&d).iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        let z = (w_plus as f64 / 2.0 - mean) / var.sqrt();
        2.0 * Normal::standard().sf(z.abs())
    };
    Ok(p.min(1.0))
}

/// Twice the average ranks of `|d|`, so ties stay integral.
fn doubled_ranks(d: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let r = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn tie_sizes(d: &[f64]) -> Vec<u64> {
    let mut a: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    a.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < a.len() {
        let j = a[i..].iter().take_while(|&&v| v == a[i]).count();
        out.push(j as u64);
        i += j;
    }
    out
}

/// `2 · min(P(W ≤ w), P(W ≥ w))` under random signs.
fn exact_p(doubled: &[u64], w: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    // counts[s] = number of sign patterns with doubled positive sum s
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(doubled.len() as i32);
    let lower: f64 = counts[..=w as usize].iter().sum();
    let upper: f64 = counts[w as usize..].iter().sum();
    2.0 * lower.min(upper) / all
}
