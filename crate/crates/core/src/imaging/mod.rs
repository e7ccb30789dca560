//! Raster types, pyramid resampling, and the file formats the pipeline reads
//! and writes.
//!
//! Intensities are `f64` in `[0, 1]`; 8-bit inputs are scaled by `1/255` at
//! load time and re-quantized with rounding on save.

mod io;
mod landmarks;

pub use io::{load_image, save_image, write_atomic};
pub(crate) use io::save_gray8;
pub use landmarks::{load_landmarks, save_landmarks, Frame, LandmarkSet, Point};

use crate::error::{Error, Result};

/// Single-channel image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("zero-sized image {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} intensities for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image by evaluating `f(x, y)` per pixel; values are clamped
    /// into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    /// Wraps values already known to lie in `[0, 1]`.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Horizontal mirror image.
    pub fn mirrored_x(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Per-pixel absolute difference, the misalignment visualization.
    pub fn abs_diff(&self, other: &Image) -> Result<Image> {
        check_same(self, other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).collect();
        Ok(Image::from_raw(self.width, self.height, data))
    }

    /// Checkerboard composite of two images with square tiles of `tile` pixels.
    pub fn checkerboard(&self, other: &Image, tile: usize) -> Result<Image> {
        check_same(self, other)?;
        let tile = tile.max(1);
        Ok(Image::from_fn(self.width, self.height, |x, y| {
            if ((x / tile) + (y / tile)).is_multiple_of(2) {
                self.get(x, y)
            } else {
                other.get(x, y)
            }
        }))
    }

    /// Halves each dimension by averaging 2x2 blocks. A trailing odd row or
    /// column is dropped.
    pub fn downsample_half(&self) -> Result<Image> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::ImageTooSmall { width: self.width, height: self.height, min: 2 });
        }
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * x, 2 * y)
                    + self.get(2 * x + 1, 2 * y)
                    + self.get(2 * x, 2 * y + 1)
                    + self.get(2 * x + 1, 2 * y + 1);
                data.push((0.25 * s).clamp(0.0, 1.0));
            }
        }
        Ok(Image::from_raw(w, h, data))
    }

    /// Mean-pooled pyramid, finest level first. Stops early when a level would
    /// drop below 2x2.
    pub fn pyramid(&self, levels: usize) -> Vec<Image> {
        let mut out = vec![self.clone()];
        while out.len() < levels.max(1) {
            match out.last().expect("non-empty").downsample_half() {
                Ok(next) => out.push(next),
                Err(_) => break,
            }
        }
        out
    }
}

pub(crate) fn check_same(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

/// Bilinear resampling of a scalar plane to a new size, pixel centers aligned
/// (`src = (dst + 0.5) * scale - 0.5`), edges clamped.
pub(crate) fn resize_plane(src: &[f64], w: usize, h: usize, nw: usize, nh: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), w * h);
    let sx = w as f64 / nw as f64;
    let sy = h as f64 / nh as f64;
    let axis = |d: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let c = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (c.floor() as usize).min(n.saturating_sub(2));
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, c - i0 as f64)
    };
    let cols: Vec<_> = (0..nw).map(|x| axis(x, sx, w)).collect();
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let (y0, y1, fy) = axis(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = (1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
            let bot = (1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
            out.push((1.0 - fy) * top + fy * bot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_block_mean() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let d = img.downsample_half().unwrap();
        assert_eq!((d.width(), d.height()), (1, 1));
        assert_eq!(d.data(), &[0.5]);
    }

    #[test]
    fn downsample_drops_odd_trailing_row_and_column() {
        let vals = [0.1, 0.2, 0.9, 0.3, 0.4, 0.9, 0.9, 0.9, 0.9];
        let img = Image::new(3, 3, vals.to_vec()).unwrap();
        let d = img.downsample_half().unwrap();
        assert_eq!((d.width(), d.height()), (1, 1));
        // (0.1 + 0.2 + 0.3 + 0.4) / 4
        assert!((d.data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn downsample_constant_is_exact() {
        for &(w, h) in &[(2, 2), (7, 5), (16, 9)] {
            let img = Image::constant(w, h, 0.37);
            let d = img.downsample_half().unwrap();
            assert!(d.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn downsample_rejects_tiny() {
        let img = Image::constant(1, 5, 0.5);
        assert!(matches!(img.downsample_half(), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn new_rejects_out_of_range() {
        assert!(Image::new(1, 1, vec![1.5]).is_err());
        assert!(Image::new(2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn pyramid_stops_at_two_pixels() {
        let img = Image::constant(8, 8, 0.2);
        let p = img.pyramid(10);
        let sizes: Vec<_> = p.iter().map(|i| i.width()).collect();
        assert_eq!(sizes, vec![8, 4, 2, 1]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let src: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        assert_eq!(resize_plane(&src, 4, 3, 4, 3), src);
        let c = vec![0.3; 6];
        assert!(resize_plane(&c, 3, 2, 12, 8).iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn downsample_preserves_mean_on_even_sizes(
                hw in 1usize..8, hh in 1usize..8, seed in any::<u64>()
            ) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let img = Image::from_fn(2 * hw, 2 * hh, |_, _| rng.random::<f64>());
                let d = img.downsample_half().unwrap();
                prop_assert!((img.mean() - d.mean()).abs() < 1e-12);
            }
        }
    }
}
