//! Registration quality metrics: landmark TRE/rTRE, Dice, 95th-percentile
//! Hausdorff distance, and the paired Wilcoxon signed-rank test used to
//! compare variants across seeds.

mod report;
mod wilcoxon;

pub use report::{aggregate_table, median, Aggregate, MetricReport, PairRecord};
pub use wilcoxon::paired_wilcoxon;

use serde::{Deserialize, Serialize};

use crate::clustering::LabelMap;
use crate::error::{Error, Result};
use crate::imaging::LandmarkSet;

/// Per-landmark registration errors for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtreResult {
    pub tre: Vec<f64>,
    pub rtre: Vec<f64>,
    pub mean_tre: f64,
    pub median_tre: f64,
    pub mean_rtre: f64,
    pub median_rtre: f64,
}

/// Euclidean landmark distances, also normalized by the image diagonal
/// `sqrt(w² + h²)`.
pub fn rtre(warped: &LandmarkSet, target: &LandmarkSet, width: usize, height: usize) -> Result<RtreResult> {
    if warped.len() != target.len() {
        return Err(Error::LengthMismatch(warped.len(), target.len()));
    }
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("image size {width}x{height} must be positive")));
    }
    if warped.is_empty() {
        return Err(Error::EmptyInput);
    }
    let diag = ((width * width + height * height) as f64).sqrt();
    let tre: Vec<f64> = warped.points.iter().zip(&target.points).map(|(a, b)| a.distance(b)).collect();
    let rtre: Vec<f64> = tre.iter().map(|t| t / diag).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(RtreResult {
        mean_tre: mean(&tre),
        median_tre: median(&tre),
        mean_rtre: mean(&rtre),
        median_rtre: median(&rtre),
        tre,
        rtre,
    })
}

fn check_maps(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "label maps {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `2|A∩B| / (|A|+|B|)` for the pixels labeled `class_id`; 1 when the class
/// is absent from both maps.
pub fn dice(a: &LabelMap, b: &LabelMap, class_id: u32) -> Result<f64> {
    check_maps(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (x == class_id, y == class_id);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Mask pixels with a 4-neighbour outside the mask. Pixels beyond the image
/// count as outside, so every nonempty mask has a boundary.
pub fn boundary(map: &LabelMap, class_id: u32) -> Vec<(usize, usize)> {
    let (w, h) = (map.width(), map.height());
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && map.get(x as usize, y as usize) == class_id;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as i64, y as i64);
            if inside(xi, yi) && !(inside(xi - 1, yi) && inside(xi + 1, yi) && inside(xi, yi - 1) && inside(xi, yi + 1)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Nearest-boundary distances from each side to the other, pooled.
fn symmetric_distances(a: &LabelMap, b: &LabelMap, class_id: u32) -> Result<Vec<f64>> {
    check_maps(a, b)?;
    let (ba, bb) = (boundary(a, class_id), boundary(b, class_id));
    if ba.is_empty() || bb.is_empty() {
        return Err(Error::EmptyMask(class_id));
    }
    let nearest = |from: &[(usize, usize)], to: &[(usize, usize)]| -> Vec<f64> {
        from.iter()
            .map(|&(x, y)| {
                to.iter()
                    .map(|&(u, v)| {
                        let (dx, dy) = (x as f64 - u as f64, y as f64 - v as f64);
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect()
    };
    let mut d = nearest(&ba, &bb);
    d.extend(nearest(&bb, &ba));
    Ok(d)
}

/// 95th percentile, linearly interpolated between order statistics, of the
/// pooled boundary-to-boundary nearest distances (pixels).
pub fn hd95(a: &LabelMap, b: &LabelMap, class_id: u32) -> Result<f64> {
    Ok(percentile(symmetric_distances(a, b, class_id)?, 95.0))
}

/// Largest boundary-to-boundary nearest distance (pixels).
pub fn hausdorff(a: &LabelMap, b: &LabelMap, class_id: u32) -> Result<f64> {
    Ok(symmetric_distances(a, b, class_id)?.into_iter().fold(0.0, f64::max))
}

/// Percentile at position `q/100 · (n-1)` of the sorted values.
pub fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    assert!(!v.is_empty(), "percentile of an empty sample");
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{Frame, Point};

    fn set(pts: &[(f64, f64)]) -> LandmarkSet {
        LandmarkSet::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect(), Frame::Reference)
    }

    fn map(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> LabelMap {
        LabelMap::new(w, h, 2, (0..w * h).map(|p| f(p % w, p / w) as u32).collect()).unwrap()
    }

    #[test]
    fn three_four_five() {
        let r = rtre(&set(&[(0.0, 0.0)]), &set(&[(3.0, 4.0)]), 100, 100).unwrap();
        assert_eq!(r.tre, vec![5.0]);
        assert_eq!(r.rtre, vec![5.0 / 20000f64.sqrt()]);
    }

    #[test]
    fn identical_sets_are_zero() {
        let s = set(&[(1.0, 2.0), (5.5, 3.25)]);
        let r = rtre(&s, &s, 10, 10).unwrap();
        assert!(r.rtre.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rtre_errors() {
        assert!(matches!(rtre(&set(&[(0.0, 0.0)]), &set(&[]), 4, 4), Err(Error::LengthMismatch(1, 0))));
        assert!(rtre(&set(&[(0.0, 0.0)]), &set(&[(0.0, 0.0)]), 0, 4).is_err());
    }

    #[test]
    fn dice_closed_forms() {
        let full = map(8, 6, |_, _| true);
        let left = map(8, 6, |x, _| x < 4);
        let right = map(8, 6, |x, _| x >= 4);
        assert_eq!(dice(&left, &left, 1).unwrap(), 1.0);
        assert_eq!(dice(&left, &right, 1).unwrap(), 0.0);
        assert!((dice(&left, &full, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let empty = map(8, 6, |_, _| false);
        assert_eq!(dice(&empty, &empty, 1).unwrap(), 1.0);
        assert!(dice(&left, &map(4, 4, |_, _| true), 1).is_err());
    }

    #[test]
    fn hd95_cases() {
        let a = map(10, 10, |x, y| x == 2 && y == 3);
        let b = map(10, 10, |x, y| x == 5 && y == 7);
        assert_eq!(hd95(&a, &b, 1).unwrap(), 5.0);
        assert_eq!(hd95(&a, &a, 1).unwrap(), 0.0);
        let none = map(10, 10, |_, _| false);
        assert!(matches!(hd95(&a, &none, 1), Err(Error::EmptyMask(1))));
    }

    #[test]
    fn boundary_of_a_square() {
        let m = map(6, 6, |x, y| (1..5).contains(&x) && (1..5).contains(&y));
        assert_eq!(boundary(&m, 1).len(), 12);
        let full = map(3, 3, |_, _| true);
        assert_eq!(boundary(&full, 1).len(), 8);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(vec![0.0, 10.0], 95.0), 9.5);
        assert_eq!(percentile(vec![3.0], 95.0), 3.0);
        assert_eq!(percentile(vec![4.0, 1.0, 3.0, 2.0, 0.0], 50.0), 2.0);
    }

    #[test]
    fn hd95_is_symmetric_and_below_hausdorff() {
        let a = map(16, 16, |x, y| (x as i64 - 6).pow(2) + (y as i64 - 7).pow(2) < 16);
        let b = map(16, 16, |x, y| x + y < 14 && x > 2);
        assert_eq!(hd95(&a, &b, 1).unwrap(), hd95(&b, &a, 1).unwrap());
        assert!(hd95(&a, &b, 1).unwrap() <= hausdorff(&a, &b, 1).unwrap());
    }
}
