//! Deterministic palettes and rendering helpers for inspection outputs.
//!
//! Every class maps to a fixed hue so overlays, dataset renders, and docs
//! stay consistent across runs and machines without any stored palette.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::{quantize_to_u8_grid, ImageTensor};
use crate::metrics::ContactLabelMap;

/// Standard HSV→RGB conversion; hue in degrees, s/v in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

/// Saturated, evenly spaced color for a contact class. `num_classes` counts
/// channel 0; class 0 (no contact) is black.
pub fn class_color(class: u8, num_classes: usize) -> [f32; 3] {
    if class == 0 {
        return [0.0, 0.0, 0.0];
    }
    let spread = (num_classes.max(2) - 1) as f64;
    let hue = (class as f64 - 1.0) / spread * 360.0;
    hsv_to_rgb(hue, 0.75, 0.85)
}

/// All class colors, indexable by class id.
pub fn class_palette(num_classes: usize) -> Vec<[f32; 3]> {
    (0..num_classes)
        .map(|k| class_color(k as u8, num_classes))
        .collect()
}

/// Blends class colors over the image wherever a contact label is present;
/// unlabeled pixels pass through untouched.
pub fn overlay(
    image: &ImageTensor,
    labels: &ContactLabelMap,
    num_classes: usize,
    opacity: f32,
) -> Result<ImageTensor> {
    if labels.height() != image.height() || labels.width() != image.width() {
        return Err(Error::shape(
            "overlay labels",
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", labels.height(), labels.width()),
        ));
    }
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::InvalidArgument(format!(
            "overlay opacity must lie in [0, 1], got {opacity}"
        )));
    }
    let palette = class_palette(num_classes);
    let mut data = image.data().clone();
    for i in 0..image.height() {
        for j in 0..image.width() {
            let class = labels.get(i, j) as usize;
            if class == 0 {
                continue;
            }
            let color = palette.get(class).copied().unwrap_or([1.0, 0.0, 1.0]);
            for c in 0..3 {
                let blended = (1.0 - opacity) * data[[i, j, c]] + opacity * color[c];
                data[[i, j, c]] = quantize_to_u8_grid(blended);
            }
        }
    }
    ImageTensor::new(data)
}

/// Saves a `[0, 1]` map as an 8-bit grayscale PNG (values scaled by 255).
pub fn save_gray8(map: &Array2<f32>, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = map.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for i in 0..h {
        for j in 0..w {
            let v = (map[(i, j)].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(j as u32, i as u32, image::Luma([v]));
        }
    }
    img.save(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use tempfile::TempDir;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn palette_is_distinct_and_deterministic() {
        let a = class_palette(18);
        let b = class_palette(18);
        assert_eq!(a, b);
        assert_eq!(a[0], [0.0, 0.0, 0.0]);
        for i in 1..a.len() {
            for j in i + 1..a.len() {
                assert_ne!(a[i], a[j], "classes {i} and {j} share a color");
            }
        }
    }

    #[test]
    fn overlay_leaves_unlabeled_pixels_untouched() {
        let data = Array3::from_elem((4, 4, 3), 0.25f32);
        let image = ImageTensor::new(data).unwrap();
        let mut labels = ContactLabelMap::zeros(4, 4);
        labels.set(1, 1, 3);
        let out = overlay(&image, &labels, 18, 0.5).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if (i, j) == (1, 1) {
                    assert_ne!(out.data()[[i, j, 0]], 0.25);
                } else {
                    for c in 0..3 {
                        assert_eq!(out.data()[[i, j, c]], 0.25);
                    }
                }
            }
        }
    }

    #[test]
    fn overlay_rejects_bad_inputs() {
        let image = ImageTensor::zeros(4, 4);
        let labels = ContactLabelMap::zeros(3, 4);
        assert!(overlay(&image, &labels, 18, 0.5).is_err());
        let labels = ContactLabelMap::zeros(4, 4);
        assert!(overlay(&image, &labels, 18, 1.5).is_err());
    }

    #[test]
    fn gray8_round_trip_values() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("map.png");
        let map = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f32 / 5.0);
        save_gray8(&map, &path).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (3, 2));
        for i in 0..2 {
            for j in 0..3 {
                let want = (map[(i, j)] * 255.0).round() as u8;
                assert_eq!(img.get_pixel(j as u32, i as u32)[0], want);
            }
        }
    }
}
