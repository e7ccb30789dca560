use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};

/// Sub-pixel location: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Reference,
    Floating,
}

impl Frame {
    pub fn flipped(self) -> Frame {
        match self {
            Frame::Reference => Frame::Floating,
            Frame::Floating => Frame::Reference,
        }
    }
}

/// Ordered landmarks; two sets correspond by index.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Point>,
    pub frame: Frame,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, frame: Frame) -> Self {
        Self { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks every point lies in `[0, w-1] x [0, h-1]`.
    pub fn check_within(&self, width: usize, height: usize) -> Result<()> {
        for p in &self.points {
            let inside = p.x >= 0.0
                && p.y >= 0.0
                && p.x <= (width - 1) as f64
                && p.y <= (height - 1) as f64;
            if !inside {
                return Err(Error::PointOutOfDomain { x: p.x, y: p.y, width, height });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,x,y\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(s, "{i},{},{}", p.x, p.y);
        }
        s
    }

    /// Parses `index,x,y` rows after a header line. Rows may appear in any
    /// order but the indices must form `0..n`.
    pub fn from_csv(text: &str, frame: Frame) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let malformed = |reason: &str| Error::MalformedRow { line: lineno + 1, reason: reason.into() };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(malformed(&format!("expected 3 fields, found {}", fields.len())));
            }
            let index: usize = fields[0].parse().map_err(|_| malformed("bad index"))?;
            let x: f64 = fields[1].parse().map_err(|_| malformed("bad x"))?;
            let y: f64 = fields[2].parse().map_err(|_| malformed("bad y"))?;
            if !x.is_finite() || !y.is_finite() {
                return Err(malformed("non-finite coordinate"));
            }
            rows.push((index, Point::new(x, y)));
        }
        rows.sort_by_key(|r| r.0);
        for (expected, &(found, _)) in rows.iter().enumerate() {
            if found != expected {
                return Err(Error::NonContiguousIndices { expected, found });
            }
        }
        Ok(Self::new(rows.into_iter().map(|r| r.1).collect(), frame))
    }
}

pub fn load_landmarks(path: impl AsRef<Path>, frame: Frame) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LandmarkSet::from_csv(&text, frame)
}

pub fn save_landmarks(path: impl AsRef<Path>, set: &LandmarkSet) -> Result<()> {
    write_atomic(path, set.to_csv().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_in_order() {
        let set = LandmarkSet::from_csv("index,x,y\n0,10.5,20.0\n1,3.0,4.0\n", Frame::Reference).unwrap();
        assert_eq!(set.points, vec![Point::new(10.5, 20.0), Point::new(3.0, 4.0)]);
    }

    #[test]
    fn anhir_style_header_and_shuffled_rows() {
        let set = LandmarkSet::from_csv(",X,Y\n1,3,4\n0,1,2\n", Frame::Floating).unwrap();
        assert_eq!(set.points, vec![Point::new(1.0, 2.0), Point::new(3.0, 4.0)]);
        assert_eq!(set.frame, Frame::Floating);
    }

    #[test]
    fn header_only_is_empty() {
        assert!(LandmarkSet::from_csv("index,x,y\n", Frame::Reference).unwrap().is_empty());
    }

    #[test]
    fn index_gap_rejected() {
        let err = LandmarkSet::from_csv("index,x,y\n0,1,1\n2,3,3\n", Frame::Reference).unwrap_err();
        assert!(matches!(err, Error::NonContiguousIndices { expected: 1, found: 2 }));
    }

    #[test]
    fn malformed_rows_rejected() {
        for bad in ["index,x,y\n0,1\n", "index,x,y\n0,a,1\n", "index,x,y\n-1,1,1\n", "index,x,y\n0,NaN,1\n"] {
            assert!(matches!(
                LandmarkSet::from_csv(bad, Frame::Reference),
                Err(Error::MalformedRow { line: 2, .. })
            ), "{bad}");
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let set = LandmarkSet::new(vec![Point::new(0.1, 1.0 / 3.0), Point::new(12.75, 5.0)], Frame::Reference);
        assert_eq!(LandmarkSet::from_csv(&set.to_csv(), Frame::Reference).unwrap(), set);
    }

    #[test]
    fn domain_check() {
        let set = LandmarkSet::new(vec![Point::new(9.0, 0.0)], Frame::Reference);
        assert!(set.check_within(10, 10).is_ok());
        assert!(set.check_within(9, 10).is_err());
    }
}
