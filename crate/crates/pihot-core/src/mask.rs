//! Binary human masks and morphological dilation.
//!
//! Annotated human masks routinely under-cover the person, so before
//! inpainting the mask is expanded with an all-ones `N×N` window: a pixel is
//! set if any input pixel inside the window is set. This is convolution with
//! the ones kernel followed by thresholding at `> 0`, with zero padding at
//! the borders so the output never grows past the frame.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// H×W mask over `{0, 1}`, 1 marking the human region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array2<u8>,
}

impl BinaryMask {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("mask must be non-empty".into()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument(
                "mask values must be exactly 0 or 1".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[(y, x)]
    }

    pub fn set(&mut self, y: usize, x: usize, value: u8) {
        debug_assert!(value <= 1);
        self.data[(y, x)] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_all_ones(&self) -> bool {
        self.data.iter().all(|&v| v == 1)
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

    /// Loads a single-channel PNG where 0 = background and 255 = human.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img =
            image::open(path).map_err(|e| Error::file(path, format!("cannot open: {e}")))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::file(
                    path,
                    format!("mask must be 8-bit grayscale PNG, got {other:?}"),
                ))
            }
        };
        let (w, h) = gray.dimensions();
        let mut data = Array2::zeros((h as usize, w as usize));
        for (x, y, pixel) in gray.enumerate_pixels() {
            data[(y as usize, x as usize)] = match pixel.0[0] {
                0 => 0,
                255 => 1,
                v => {
                    return Err(Error::file(
                        path,
                        format!("mask pixel at ({x},{y}) is {v}, expected 0 or 255"),
                    ))
                }
            };
        }
        Self::new(data)
    }

    /// Writes the mask as an 8-bit grayscale PNG (1 → 255).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = self.data.dim();
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for (x, y, pixel) in img.enumerate_pixels_mut() {
            pixel.0[0] = if self.data[(y as usize, x as usize)] == 1 {
                255
            } else {
                0
            };
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Odd-sided all-ones dilation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DilationKernel {
    size: usize,
}

impl DilationKernel {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "dilation kernel size must be odd and >= 1, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }
}

/// Morphological dilation with the all-ones window, zero-padded at borders.
///
/// Runs as two separable passes (horizontal then vertical window-OR), so it
/// is `O(H·W·N)` rather than `O(H·W·N²)`.
pub fn dilate_mask(mask: &BinaryMask, kernel: DilationKernel) -> Result<BinaryMask> {
    let (h, w) = mask.data.dim();
    let r = kernel.radius() as isize;

    // horizontal pass
    let mut horiz: Array2<u8> = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let lo = (x as isize - r).max(0) as usize;
            let hi = ((x as isize + r) as usize).min(w - 1);
            let mut any = 0;
            for xx in lo..=hi {
                if mask.data[(y, xx)] == 1 {
                    any = 1;
                    break;
                }
            }
            horiz[(y, x)] = any;
        }
    }
    // vertical pass
    let mut out: Array2<u8> = Array2::zeros((h, w));
    for y in 0..h {
        let lo = (y as isize - r).max(0) as usize;
        let hi = ((y as isize + r) as usize).min(h - 1);
        for x in 0..w {
            let mut any = 0;
            for yy in lo..=hi {
                if horiz[(yy, x)] == 1 {
                    any = 1;
                    break;
                }
            }
            out[(y, x)] = any;
        }
    }
    BinaryMask::new(out)
}

/// Applies [`dilate_mask`] `iterations` times.
pub fn dilate_mask_iterated(
    mask: &BinaryMask,
    kernel: DilationKernel,
    iterations: usize,
) -> Result<BinaryMask> {
    let mut current = mask.clone();
    for _ in 0..iterations {
        current = dilate_mask(&current, kernel)?;
    }
    Ok(current)
}

/// Human pixels with at least one 4-neighbour outside the mask.
pub fn mask_boundary(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.data.dim();
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            if mask.data[(y, x)] != 1 {
                continue;
            }
            let mut edge = false;
            if y > 0 && mask.data[(y - 1, x)] == 0 {
                edge = true;
            }
            if y + 1 < h && mask.data[(y + 1, x)] == 0 {
                edge = true;
            }
            if x > 0 && mask.data[(y, x - 1)] == 0 {
                edge = true;
            }
            if x + 1 < w && mask.data[(y, x + 1)] == 0 {
                edge = true;
            }
            if edge {
                out[(y, x)] = 1;
            }
        }
    }
    BinaryMask { data: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force per-pixel window-max dilation oracle.
    pub(crate) fn dilate_oracle(mask: &BinaryMask, n: usize) -> BinaryMask {
        let (h, w) = mask.data().dim();
        let r = (n / 2) as isize;
        let mut out = Array2::zeros((h, w));
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut any = 0u8;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy >= 0
                            && yy < h as isize
                            && xx >= 0
                            && xx < w as isize
                            && mask.get(yy as usize, xx as usize) == 1
                        {
                            any = 1;
                        }
                    }
                }
                out[(y as usize, x as usize)] = any;
            }
        }
        BinaryMask::new(out).unwrap()
    }

    fn mask_from_bits(h: usize, w: usize, bits: u32) -> BinaryMask {
        let data = Array2::from_shape_fn((h, w), |(y, x)| ((bits >> (y * w + x)) & 1) as u8);
        BinaryMask::new(data).unwrap()
    }

    #[test]
    fn empty_mask_stays_empty() {
        let mask = BinaryMask::zeros(5, 5);
        let out = dilate_mask(&mask, DilationKernel::new(3).unwrap()).unwrap();
        assert_eq!(out.count_ones(), 0);
    }

    #[test]
    fn single_center_pixel_becomes_three_by_three_block() {
        let mut mask = BinaryMask::zeros(5, 5);
        mask.set(2, 2, 1);
        let out = dilate_mask(&mask, DilationKernel::new(3).unwrap()).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expected = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(out.get(y, x) == 1, expected, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn random_masks_match_window_max_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let data = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0..=1u8));
            let mask = BinaryMask::new(data).unwrap();
            let out = dilate_mask(&mask, DilationKernel::new(5).unwrap()).unwrap();
            assert_eq!(out, dilate_oracle(&mask, 5));
        }
    }

    #[test]
    fn exhaustive_4x4_masks_match_oracle() {
        let kernel = DilationKernel::new(3).unwrap();
        for bits in 0u32..(1 << 16) {
            let mask = mask_from_bits(4, 4, bits);
            assert_eq!(dilate_mask(&mask, kernel).unwrap(), dilate_oracle(&mask, 3));
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(DilationKernel::new(4).is_err());
        assert!(DilationKernel::new(0).is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        assert!(BinaryMask::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn non_binary_mask_rejected() {
        let mut data = Array2::zeros((2, 2));
        data[(0, 0)] = 2;
        assert!(BinaryMask::new(data).is_err());
    }

    #[test]
    fn boundary_of_solid_block_is_its_rim() {
        let mut mask = BinaryMask::zeros(5, 5);
        for y in 1..4 {
            for x in 1..4 {
                mask.set(y, x, 1);
            }
        }
        let b = mask_boundary(&mask);
        assert_eq!(b.get(2, 2), 0);
        assert_eq!(b.count_ones(), 8);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mut mask = BinaryMask::zeros(6, 4);
        mask.set(1, 2, 1);
        mask.set(5, 0, 1);
        mask.save_png(&path).unwrap();
        let loaded = BinaryMask::load_png(&path).unwrap();
        assert_eq!(mask, loaded);
    }

    #[test]
    fn png_with_gray_values_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        let mut img = image::GrayImage::new(3, 3);
        img.put_pixel(1, 1, image::Luma([128]));
        img.save(&path).unwrap();
        let err = BinaryMask::load_png(&path).unwrap_err();
        assert!(err.to_string().contains("expected 0 or 255"));
    }

    proptest! {
        #[test]
        fn dilation_is_extensive_and_monotone(
            bits_a in 0u32..(1 << 16),
            bits_b in 0u32..(1 << 16),
            n in prop::sample::select(vec![1usize, 3, 5]),
        ) {
            let kernel = DilationKernel::new(n).unwrap();
            let a = mask_from_bits(4, 4, bits_a);
            // B ⊇ A by construction
            let b = mask_from_bits(4, 4, bits_a | bits_b);
            let da = dilate_mask(&a, kernel).unwrap();
            let db = dilate_mask(&b, kernel).unwrap();
            for y in 0..4 {
                for x in 0..4 {
                    prop_assert!(da.get(y, x) >= a.get(y, x), "extensive");
                    prop_assert!(db.get(y, x) >= da.get(y, x), "monotone");
                }
            }
        }

        #[test]
        fn unit_kernel_is_identity(bits in 0u32..(1 << 16)) {
            let mask = mask_from_bits(4, 4, bits);
            let out = dilate_mask(&mask, DilationKernel::new(1).unwrap()).unwrap();
            prop_assert_eq!(out, mask);
        }

        #[test]
        fn dilation_commutes_with_horizontal_flip(bits in 0u32..(1 << 16)) {
            let kernel = DilationKernel::new(3).unwrap();
            let mask = mask_from_bits(4, 4, bits);
            let a = dilate_mask(&mask.flip_horizontal(), kernel).unwrap();
            let b = dilate_mask(&mask, kernel).unwrap().flip_horizontal();
            prop_assert_eq!(a, b);
        }
    }
}
