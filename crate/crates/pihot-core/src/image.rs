//! RGB image tensors and PNG I/O.
//!
//! Images travel through the pipeline as `(H, W, 3)` float arrays in
//! `[0, 1]`. An image may carry an optional depth sidecar: ground-truth
//! depth that rides along with the pixels so the oracle depth backend can
//! return it verbatim instead of estimating. The synthetic dataset attaches
//! the with-human depth to `I` and the human-free depth to the human-free
//! render, which is what makes stubbed depth estimation deterministic.

use std::path::Path;

use ndarray::Array3;

use crate::depth::DepthMap;
use crate::error::{Error, Result};

/// `(H, W, 3)` RGB image, values in `[0, 1]`, plus an optional depth sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
    depth_sidecar: Option<DepthMap>,
}

impl ImageTensor {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("image must be non-empty".into()));
        }
        if c != 3 {
            return Err(Error::shape("image channels", "(H, W, 3)", format!("(H, W, {c})")));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument(
                "image values must be finite and within [0, 1]".into(),
            ));
        }
        Ok(Self {
            data,
            depth_sidecar: None,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((height, width, 3)),
            depth_sidecar: None,
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn depth_sidecar(&self) -> Option<&DepthMap> {
        self.depth_sidecar.as_ref()
    }

    pub fn with_depth_sidecar(mut self, depth: DepthMap) -> Result<Self> {
        if depth.height() != self.height() || depth.width() != self.width() {
            return Err(Error::shape(
                "depth sidecar",
                format!("{}x{}", self.height(), self.width()),
                format!("{}x{}", depth.height(), depth.width()),
            ));
        }
        self.depth_sidecar = Some(depth);
        Ok(self)
    }

    pub fn take_depth_sidecar(&mut self) -> Option<DepthMap> {
        self.depth_sidecar.take()
    }

    /// Mirrors the image (and its sidecar, if any) left-to-right.
    pub fn flip_horizontal(&self) -> Self {
        let (h, w, _) = self.data.dim();
        Self {
            data: Array3::from_shape_fn((h, w, 3), |(y, x, c)| self.data[(y, w - 1 - x, c)]),
            depth_sidecar: self.depth_sidecar.as_ref().map(|d| d.flip_horizontal()),
        }
    }

    /// Crops `height × width` starting at `(top, left)`. The sidecar is
    /// cropped in lockstep.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (h, w, _) = self.data.dim();
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}+{top}+{left} does not fit in {h}x{w}"
            )));
        }
        let data = self
            .data
            .slice(ndarray::s![top..top + height, left..left + width, ..])
            .to_owned();
        Ok(Self {
            data,
            depth_sidecar: match &self.depth_sidecar {
                Some(d) => Some(d.crop(top, left, height, width)?),
                None => None,
            },
        })
    }

    /// Loads an 8-bit RGB PNG, mapping samples to `k / 255`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rgb = image::open(path)
            .map_err(|e| Error::file(path, format!("cannot open: {e}")))?
            .into_rgb8();
        let (w, h) = rgb.dimensions();
        if h == 0 || w == 0 {
            return Err(Error::file(path, "image is empty"));
        }
        let mut data = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, pixel) in rgb.enumerate_pixels() {
            for c in 0..3 {
                data[(y as usize, x as usize, c)] = pixel.0[c] as f32 / 255.0;
            }
        }
        Ok(Self {
            data,
            depth_sidecar: None,
        })
    }

    /// Writes an 8-bit RGB PNG, rounding each sample to the nearest `k/255`
    /// level. Loading the result reproduces an image quantised to that grid
    /// exactly; the sidecar is not persisted here.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w, _) = self.data.dim();
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for (x, y, pixel) in img.enumerate_pixels_mut() {
            for c in 0..3 {
                let v = self.data[(y as usize, x as usize, c)];
                pixel.0[c] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Snaps every sample to the nearest `k/255` level, the grid that survives
/// an 8-bit PNG round trip bit-for-bit.
pub fn quantize_to_u8_grid(value: f32) -> f32 {
    (value * 255.0).round().clamp(0.0, 255.0) / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn checker(h: usize, w: usize) -> ImageTensor {
        let data = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            quantize_to_u8_grid(((y + x + c) % 7) as f32 / 6.0)
        });
        ImageTensor::new(data).unwrap()
    }

    #[test]
    fn rejects_out_of_range_values() {
        let mut data = Array3::zeros((2, 2, 3));
        data[(0, 0, 0)] = 1.5;
        assert!(ImageTensor::new(data).is_err());
        let mut data = Array3::zeros((2, 2, 3));
        data[(1, 1, 2)] = f32::NAN;
        assert!(ImageTensor::new(data).is_err());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let data = Array3::zeros((2, 2, 4));
        assert!(ImageTensor::new(data).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_on_the_u8_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = checker(5, 7);
        img.save_png(&path).unwrap();
        let loaded = ImageTensor::load_png(&path).unwrap();
        assert_eq!(img.data(), loaded.data());
    }

    #[test]
    fn flip_is_involutive_and_moves_columns() {
        let img = checker(4, 6);
        let flipped = img.flip_horizontal();
        assert_eq!(flipped.data()[(0, 0, 0)], img.data()[(0, 5, 0)]);
        assert_eq!(flipped.flip_horizontal().data(), img.data());
    }

    #[test]
    fn crop_takes_the_requested_window() {
        let img = checker(6, 6);
        let crop = img.crop(1, 2, 3, 4).unwrap();
        assert_eq!(crop.height(), 3);
        assert_eq!(crop.width(), 4);
        assert_eq!(crop.data()[(0, 0, 1)], img.data()[(1, 2, 1)]);
        assert!(img.crop(4, 4, 3, 3).is_err());
    }

    #[test]
    fn sidecar_must_match_image_size() {
        let img = checker(4, 4);
        let depth = DepthMap::new(Array2::from_elem((3, 4), 1.0)).unwrap();
        assert!(img.clone().with_depth_sidecar(depth).is_err());
        let depth = DepthMap::new(Array2::from_elem((4, 4), 1.0)).unwrap();
        let with = img.with_depth_sidecar(depth).unwrap();
        assert!(with.depth_sidecar().is_some());
    }

    #[test]
    fn sidecar_follows_flips() {
        let mut grid = Array2::zeros((2, 3));
        grid[(0, 0)] = 1.0;
        let depth = DepthMap::new(grid).unwrap();
        let img = ImageTensor::zeros(2, 3).with_depth_sidecar(depth).unwrap();
        let flipped = img.flip_horizontal();
        let d = flipped.depth_sidecar().unwrap();
        assert_eq!(d.data()[(0, 2)], 1.0);
        assert_eq!(d.data()[(0, 0)], 0.0);
    }
}
