//! Depth maps and the relative-position map between paired depths.
//!
//! Given depth `D_i` estimated on the original image and `D_o` estimated on
//! the human-free image, `|D_i − D_o|` is large exactly where the human used
//! to occlude the scene, and that magnitude falls off with the human's
//! distance from whatever stood behind them. Min-max normalising that
//! difference yields the relative-position map `D_s ∈ [0, 1]` used to gate
//! feature fusion. A constant difference carries no positional signal, so
//! the degenerate `max == min` case maps to all zeros.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::Real;

/// H×W depth in metres; finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    data: Array2<f32>,
}

impl DepthMap {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("depth map must be non-empty".into()));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "depth values must be finite and non-negative".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn flip_horizontal(&self) -> Self {
        let (h, w) = self.data.dim();
        Self {
            data: Array2::from_shape_fn((h, w), |(y, x)| self.data[(y, w - 1 - x)]),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (h, w) = self.data.dim();
        if height == 0 || width == 0 || top + height > h || left + width > w {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}+{top}+{left} does not fit in {h}x{w}"
            )));
        }
        Ok(Self {
            data: self
                .data
                .slice(ndarray::s![top..top + height, left..left + width])
                .to_owned(),
        })
    }

    /// Loads a 16-bit grayscale PNG, mapping samples to `k / scale` metres.
    pub fn load_png16(path: impl AsRef<Path>, scale: f32) -> Result<Self> {
        let path = path.as_ref();
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth scale must be positive, got {scale}"
            )));
        }
        let img =
            image::open(path).map_err(|e| Error::file(path, format!("cannot open: {e}")))?;
        let gray = match img {
            image::DynamicImage::ImageLuma16(g) => g,
            other => {
                return Err(Error::file(
                    path,
                    format!("depth must be 16-bit grayscale PNG, got {other:?}"),
                ))
            }
        };
        let (w, h) = gray.dimensions();
        let mut data = Array2::zeros((h as usize, w as usize));
        for (x, y, pixel) in gray.enumerate_pixels() {
            data[(y as usize, x as usize)] = pixel.0[0] as f32 / scale;
        }
        Self::new(data)
    }

    /// Writes a 16-bit grayscale PNG with samples `round(depth · scale)`,
    /// saturating at the u16 range. Values already on the `k / scale` grid
    /// survive a round trip exactly.
    pub fn save_png16(&self, path: impl AsRef<Path>, scale: f32) -> Result<()> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth scale must be positive, got {scale}"
            )));
        }
        let (h, w) = self.data.dim();
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
        for (x, y, pixel) in img.enumerate_pixels_mut() {
            let v = self.data[(y as usize, x as usize)] * scale;
            pixel.0[0] = v.round().clamp(0.0, u16::MAX as f32) as u16;
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Min-max normalised `|D_i − D_o|`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePositionMap {
    data: Array2<f32>,
}

impl RelativePositionMap {
    /// Wraps precomputed gate values (used when an ablation substitutes a
    /// constant gate). Values must already lie in `[0, 1]`.
    pub fn new(data: Array2<f32>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty relative-position map".into()));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "relative-position values must lie in [0, 1], found {v}"
                )));
            }
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }
}

/// Computes the relative-position map from an original/human-free depth pair.
pub fn relative_position(
    with_human: &DepthMap,
    without_human: &DepthMap,
) -> Result<RelativePositionMap> {
    let data = relative_position_raw(&with_human.data, &without_human.data)?;
    Ok(RelativePositionMap { data })
}

/// [`relative_position`] on bare arrays of either float width.
///
/// Two passes: absolute difference with a running min/max, then the affine
/// rescale `(v − min) / (max − min)`. When `max == min` the difference is
/// constant and the map is all zeros.
pub fn relative_position_raw<F: Real>(
    with_human: &Array2<F>,
    without_human: &Array2<F>,
) -> Result<Array2<F>> {
    if with_human.dim() != without_human.dim() {
        return Err(Error::shape(
            "relative position inputs",
            format!("{:?}", with_human.dim()),
            format!("{:?}", without_human.dim()),
        ));
    }
    let mut diff = Array2::zeros(with_human.dim());
    let mut lo = F::infinity();
    let mut hi = F::neg_infinity();
    for ((d, &a), &b) in diff.iter_mut().zip(with_human.iter()).zip(without_human.iter()) {
        let v = (a - b).abs();
        if v < lo {
            lo = v;
        }
        if v > hi {
            hi = v;
        }
        *d = v;
    }
    if hi == lo {
        return Ok(Array2::zeros(with_human.dim()));
    }
    let span = hi - lo;
    diff.mapv_inplace(|v| (v - lo) / span);
    Ok(diff)
}
