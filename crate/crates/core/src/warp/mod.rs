//! Backward bilinear warping with derivatives with respect to the
//! displacement, i.e. a spatial-transformer sampler.
//!
//! `u` lives in the reference frame: the registered image at `p` is the
//! floating image sampled at `p + u(p)`. Sample coordinates are clamped to
//! the image rectangle; derivatives are taken piecewise inside the
//! interpolation cell and vanish where a coordinate is clamped.

mod io;

pub use io::{decode_field, encode_field, field_to_csv, load_field, save_field};

use crate::clustering::SoftLabelMap;
use crate::error::{Error, Result};
use crate::imaging::{Image, LandmarkSet, Point};

/// Dense per-pixel displacement in pixel units, `(ux, uy)` interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    width: usize,
    height: usize,
    u: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, u: vec![0.0; width * height * 2] }
    }

    pub fn new(width: usize, height: usize, u: Vec<f64>) -> Result<Self> {
        if u.len() != width * height * 2 {
            return Err(Error::DimensionMismatch(format!(
                "field {width}x{height} needs {} components, got {}",
                width * height * 2,
                u.len()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite displacement".into()));
        }
        Ok(Self { width, height, u })
    }

    pub fn uniform(width: usize, height: usize, ux: f64, uy: f64) -> Self {
        Self::from_fn(width, height, |_, _| (ux, uy))
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut u = Vec::with_capacity(width * height * 2);
        for y in 0..height {
            for x in 0..width {
                let (ux, uy) = f(x, y);
                u.push(ux);
                u.push(uy);
            }
        }
        Self { width, height, u }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Interleaved components, `[ux0, uy0, ux1, uy1, ...]`.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.u
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = 2 * (y * self.width + x);
        (self.u[i], self.u[i + 1])
    }

    /// Displacement bilinearly interpolated at a sub-pixel location.
    pub fn interpolate(&self, p: Point) -> (f64, f64) {
        let s = Sample::at(self.width, self.height, p.x, p.y);
        let mut ux = 0.0;
        let mut uy = 0.0;
        for k in 0..4 {
            ux += s.w[k] * self.u[2 * s.idx[k]];
            uy += s.w[k] * self.u[2 * s.idx[k] + 1];
        }
        (ux, uy)
    }

    /// Euclidean norm of each displacement vector.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.u.chunks_exact(2).map(|c| c[0].hypot(c[1])).collect()
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitudes().iter().sum::<f64>() / self.pixel_count() as f64
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes().into_iter().fold(0.0, f64::max)
    }

    /// Mean endpoint error against another field of the same size.
    pub fn mean_endpoint_error(&self, other: &DisplacementField) -> Result<f64> {
        self.check_dims(other.width, other.height)?;
        let sum: f64 = self
            .u
            .chunks_exact(2)
            .zip(other.u.chunks_exact(2))
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .sum();
        Ok(sum / self.pixel_count() as f64)
    }

    /// Bilinear resize to `(nw, nh)` with displacement values rescaled by the
    /// size ratio so motion is preserved in physical terms.
    pub fn resized(&self, nw: usize, nh: usize) -> DisplacementField {
        let (ux, uy) = self.components();
        let sx = nw as f64 / self.width as f64;
        let sy = nh as f64 / self.height as f64;
        let rx = crate::imaging::resize_plane(&ux, self.width, self.height, nw, nh);
        let ry = crate::imaging::resize_plane(&uy, self.width, self.height, nw, nh);
        let mut u = Vec::with_capacity(nw * nh * 2);
        for (a, b) in rx.into_iter().zip(ry) {
            u.push(a * sx);
            u.push(b * sy);
        }
        DisplacementField { width: nw, height: nh, u }
    }

    /// Splits into separate `ux` and `uy` planes.
    pub fn components(&self) -> (Vec<f64>, Vec<f64>) {
        let ux = self.u.iter().step_by(2).copied().collect();
        let uy = self.u.iter().skip(1).step_by(2).copied().collect();
        (ux, uy)
    }

    pub(crate) fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "field {}x{} vs data {width}x{height}",
                self.width, self.height
            )))
        }
    }
}

/// One bilinear sample: the four source indices (`00, 10, 01, 11`), their
/// weights, and the weight derivatives with respect to `ux` and `uy`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub dwx: [f64; 4],
    pub dwy: [f64; 4],
}

impl Sample {
    /// Sampling stencil at `(px, py)` in a `width x height` grid.
    pub fn at(width: usize, height: usize, px: f64, py: f64) -> Sample {
        let (x0, x1, fx, x_active) = axis(px, width);
        let (y0, y1, fy, y_active) = axis(py, height);
        let gx = 1.0 - fx;
        let gy = 1.0 - fy;
        let idx = [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1];
        let w = [gx * gy, fx * gy, gx * fy, fx * fy];
        let dwx = if x_active { [-gy, gy, -fy, fy] } else { [0.0; 4] };
        let dwy = if y_active { [-gx, -fx, gx, fx] } else { [0.0; 4] };
        Sample { idx, w, dwx, dwy }
    }

    #[inline]
    pub fn value(&self, data: &[f64]) -> f64 {
        self.w[0] * data[self.idx[0]]
            + self.w[1] * data[self.idx[1]]
            + self.w[2] * data[self.idx[2]]
            + self.w[3] * data[self.idx[3]]
    }

    #[inline]
    pub fn grad(&self, data: &[f64]) -> [f64; 2] {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for k in 0..4 {
            let v = data[self.idx[k]];
            gx += self.dwx[k] * v;
            gy += self.dwy[k] * v;
        }
        [gx, gy]
    }
}

/// Clamped cell lookup along one axis: `(i0, i1, frac, derivative_active)`.
#[inline]
fn axis(p: f64, n: usize) -> (usize, usize, f64, bool) {
    if n == 1 {
        return (0, 0, 0.0, false);
    }
    let hi = (n - 1) as f64;
    let active = (0.0..=hi).contains(&p);
    let c = p.clamp(0.0, hi);
    let i0 = (c.floor() as usize).min(n - 2);
    (i0, i0 + 1, c - i0 as f64, active)
}

/// Per-pixel stencils for a whole field.
pub(crate) fn samples(field: &DisplacementField) -> Vec<Sample> {
    let (w, h) = (field.width, field.height);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = 2 * (y * w + x);
            out.push(Sample::at(w, h, x as f64 + field.u[i], y as f64 + field.u[i + 1]));
        }
    }
    out
}

/// Registered image: `img` sampled at `p + u(p)` for every pixel `p`.
pub fn warp_image(img: &Image, field: &DisplacementField) -> Result<Image> {
    field.check_dims(img.width(), img.height())?;
    let data = samples(field)
        .iter()
        .map(|s| s.value(img.data()).clamp(0.0, 1.0))
        .collect();
    Ok(Image::from_raw(img.width(), img.height(), data))
}

/// Derivatives of each warped pixel with respect to its own `(ux, uy)`.
pub fn warp_jacobian(img: &Image, field: &DisplacementField) -> Result<Vec<[f64; 2]>> {
    field.check_dims(img.width(), img.height())?;
    Ok(samples(field).iter().map(|s| s.grad(img.data())).collect())
}

/// Warps each class plane independently, then renormalizes each pixel onto
/// the simplex.
pub fn warp_soft_labels(labels: &SoftLabelMap, field: &DisplacementField) -> Result<SoftLabelMap> {
    field.check_dims(labels.width(), labels.height())?;
    let k = labels.classes();
    let mut planes: Vec<Vec<f64>> = (0..k)
        .map(|j| samples_values(field, labels.plane(j)))
        .collect();
    let n = field.pixel_count();
    for p in 0..n {
        let sum: f64 = planes.iter().map(|pl| pl[p]).sum();
        if sum > 0.0 {
            for pl in planes.iter_mut() {
                pl[p] /= sum;
            }
        }
    }
    Ok(SoftLabelMap::from_planes_unchecked(labels.width(), labels.height(), planes))
}

fn samples_values(field: &DisplacementField, plane: &[f64]) -> Vec<f64> {
    samples(field).iter().map(|s| s.value(plane)).collect()
}

/// Maps reference-frame points to the floating frame: `p -> p + u(p)` with
/// `u` interpolated bilinearly.
pub fn warp_points(pts: &LandmarkSet, field: &DisplacementField) -> Result<LandmarkSet> {
    pts.check_within(field.width, field.height)?;
    let points = pts
        .points
        .iter()
        .map(|&p| {
            let (ux, uy) = field.interpolate(p);
            Point::new(p.x + ux, p.y + uy)
        })
        .collect();
    Ok(LandmarkSet::new(points, pts.frame.flipped()))
}
