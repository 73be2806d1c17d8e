//! Pluggable inpainting and depth-estimation backends.
//!
//! The pipeline treats "remove the human" and "estimate depth" as swappable
//! services behind two traits. Built-in stubs keep everything deterministic
//! and CPU-only: a diffusion fill for inpainting, plus oracle and constant
//! depth sources. The `external` variants shell out to user-provided
//! commands through PNG files, so real models can be dropped in without
//! touching this crate.
//!
//! External protocol, with the command template split on whitespace:
//! - inpainter: `cmd <in_image.png> <in_mask.png> <out_image.png>`, mask is
//!   8-bit 0/255, output an 8-bit RGB PNG of the same size;
//! - depth: `cmd <in_image.png> <out_depth.png>`, output a 16-bit grayscale
//!   PNG in units of `1 / plugins.depth_scale` metres.

use std::collections::VecDeque;
use std::path::Path;
use std::process::Command;

use ndarray::Array2;

use crate::config::{DepthKind, InpainterKind, RunConfig};
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::BinaryMask;

/// Fills the masked (human) region of an image from its surroundings.
pub trait InpainterBackend {
    /// Returns an image identical to `image` outside `mask` with the masked
    /// region replaced. Any depth sidecar on the input is dropped; the
    /// caller decides what depth the inpainted image carries.
    fn inpaint(&self, image: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor>;

    fn name(&self) -> &'static str;
}

/// Produces a per-pixel depth estimate for an image.
pub trait DepthBackend {
    fn estimate(&self, image: &ImageTensor) -> Result<DepthMap>;

    fn name(&self) -> &'static str;
}

fn check_mask_fits(image: &ImageTensor, mask: &BinaryMask) -> Result<()> {
    if image.height() != mask.height() || image.width() != mask.width() {
        return Err(Error::shape(
            "inpainting mask",
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    Ok(())
}

/// Deterministic diffusion fill.
///
/// Masked pixels are seeded with the value of the nearest unmasked pixel
/// (multi-source BFS, 4-connected, row-major tie-breaking), then smoothed by
/// Jacobi sweeps that replace each masked pixel with the mean of its
/// in-bounds neighbours until the largest change drops below `1e-4` or 100
/// sweeps have run. Unmasked pixels are never touched, so they survive
/// bit-for-bit.
#[derive(Debug, Default, Clone, Copy)]
pub struct DiffusionInpainter;

impl InpainterBackend for DiffusionInpainter {
    fn inpaint(&self, image: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
        check_mask_fits(image, mask)?;
        if mask.is_all_ones() {
            return Err(Error::Backend {
                backend: self.name().into(),
                message: "mask covers the whole image; no pixels to fill from".into(),
            });
        }
        let (h, w) = (image.height(), image.width());
        let mut data = image.data().clone();
        if mask.count_ones() == 0 {
            return ImageTensor::new(data);
        }

        // seed: nearest unmasked neighbour by BFS from all unmasked pixels
        let mut source: Array2<Option<(usize, usize)>> = Array2::from_elem((h, w), None);
        let mut queue = VecDeque::new();
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) == 0 {
                    source[(y, x)] = Some((y, x));
                    queue.push_back((y, x));
                }
            }
        }
        while let Some((y, x)) = queue.pop_front() {
            let origin = source[(y, x)].expect("queued pixels have sources");
            let mut visit = |yy: usize, xx: usize, queue: &mut VecDeque<(usize, usize)>| {
                if source[(yy, xx)].is_none() {
                    source[(yy, xx)] = Some(origin);
                    queue.push_back((yy, xx));
                }
            };
            if y > 0 {
                visit(y - 1, x, &mut queue);
            }
            if y + 1 < h {
                visit(y + 1, x, &mut queue);
            }
            if x > 0 {
                visit(y, x - 1, &mut queue);
            }
            if x + 1 < w {
                visit(y, x + 1, &mut queue);
            }
        }
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) == 1 {
                    let (sy, sx) = source[(y, x)].expect("BFS reached every pixel");
                    for c in 0..3 {
                        data[(y, x, c)] = image.data()[(sy, sx, c)];
                    }
                }
            }
        }

        // Jacobi smoothing over the masked region
        let masked: Vec<(usize, usize)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .filter(|&(y, x)| mask.get(y, x) == 1)
            .collect();
        let mut next = data.clone();
        for _ in 0..100 {
            let mut max_delta = 0.0f32;
            for &(y, x) in &masked {
                for c in 0..3 {
                    let mut sum = 0.0f32;
                    let mut count = 0.0f32;
                    if y > 0 {
                        sum += data[(y - 1, x, c)];
                        count += 1.0;
                    }
                    if y + 1 < h {
                        sum += data[(y + 1, x, c)];
                        count += 1.0;
                    }
                    if x > 0 {
                        sum += data[(y, x - 1, c)];
                        count += 1.0;
                    }
                    if x + 1 < w {
                        sum += data[(y, x + 1, c)];
                        count += 1.0;
                    }
                    let value = sum / count;
                    max_delta = max_delta.max((value - data[(y, x, c)]).abs());
                    next[(y, x, c)] = value;
                }
            }
            std::mem::swap(&mut data, &mut next);
            if max_delta < 1e-4 {
                break;
            }
        }
        ImageTensor::new(data)
    }

    fn name(&self) -> &'static str {
        "diffusion_stub"
    }
}

/// Depth oracle: hands back the ground-truth depth attached to the image.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleDepth;

impl DepthBackend for OracleDepth {
    fn estimate(&self, image: &ImageTensor) -> Result<DepthMap> {
        image.depth_sidecar().cloned().ok_or_else(|| Error::Backend {
            backend: self.name().into(),
            message: "image carries no ground-truth depth; use a dataset that \
                      provides depth or switch plugins.depth"
                .into(),
        })
    }

    fn name(&self) -> &'static str {
        "oracle_stub"
    }
}

/// Flat 0.5 m everywhere; the "depth tells you nothing" baseline.
#[derive(Debug, Default, Clone, Copy)]
pub struct ConstantDepth;

impl DepthBackend for ConstantDepth {
    fn estimate(&self, image: &ImageTensor) -> Result<DepthMap> {
        DepthMap::new(Array2::from_elem((image.height(), image.width()), 0.5))
    }

    fn name(&self) -> &'static str {
        "constant_stub"
    }
}

fn run_external(backend: &'static str, cmd: &str, file_args: &[&Path]) -> Result<()> {
    let mut parts = cmd.split_whitespace();
    let program = parts.next().ok_or_else(|| Error::Backend {
        backend: backend.into(),
        message: "empty command template".into(),
    })?;
    let mut command = Command::new(program);
    command.args(parts).args(file_args);
    let output = command.output().map_err(|e| Error::Backend {
        backend: backend.into(),
        message: format!("failed to run {program}: {e}"),
    })?;
    if !output.status.success() {
        return Err(Error::Backend {
            backend: backend.into(),
            message: format!(
                "{program} exited with {}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ),
        });
    }
    Ok(())
}

/// Inpainter that shells out to `plugins.inpainter_cmd`.
#[derive(Debug, Clone)]
pub struct ExternalInpainter {
    cmd: String,
}

impl ExternalInpainter {
    pub fn new(cmd: impl Into<String>) -> Self {
        Self { cmd: cmd.into() }
    }
}

impl InpainterBackend for ExternalInpainter {
    fn inpaint(&self, image: &ImageTensor, mask: &BinaryMask) -> Result<ImageTensor> {
        check_mask_fits(image, mask)?;
        let dir = tempfile::tempdir()?;
        let in_image = dir.path().join("image.png");
        let in_mask = dir.path().join("mask.png");
        let out_image = dir.path().join("inpainted.png");
        image.save_png(&in_image)?;
        mask.save_png(&in_mask)?;
        run_external(self.name(), &self.cmd, &[&in_image, &in_mask, &out_image])?;
        let result = ImageTensor::load_png(&out_image).map_err(|e| Error::Backend {
            backend: self.name().into(),
            message: format!("bad output image: {e}"),
        })?;
        if result.height() != image.height() || result.width() != image.width() {
            return Err(Error::Backend {
                backend: self.name().into(),
                message: format!(
                    "output size {}x{} does not match input {}x{}",
                    result.height(),
                    result.width(),
                    image.height(),
                    image.width()
                ),
            });
        }
        Ok(result)
    }

    fn name(&self) -> &'static str {
        "external"
    }
}

/// Depth estimator that shells out to `plugins.depth_cmd`.
#[derive(Debug, Clone)]
pub struct ExternalDepth {
    cmd: String,
    scale: f32,
}

impl ExternalDepth {
    pub fn new(cmd: impl Into<String>, scale: f32) -> Self {
        Self {
            cmd: cmd.into(),
            scale,
        }
    }
}

impl DepthBackend for ExternalDepth {
    fn estimate(&self, image: &ImageTensor) -> Result<DepthMap> {
        let dir = tempfile::tempdir()?;
        let in_image = dir.path().join("image.png");
        let out_depth = dir.path().join("depth.png");
        image.save_png(&in_image)?;
        run_external(self.name(), &self.cmd, &[&in_image, &out_depth])?;
        let depth = DepthMap::load_png16(&out_depth, self.scale).map_err(|e| Error::Backend {
            backend: self.name().into(),
            message: format!("bad output depth: {e}"),
        })?;
        if depth.height() != image.height() || depth.width() != image.width() {
            return Err(Error::Backend {
                backend: self.name().into(),
                message: format!(
                    "output size {}x{} does not match input {}x{}",
                    depth.height(),
                    depth.width(),
                    image.height(),
                    image.width()
                ),
            });
        }
        Ok(depth)
    }

    fn name(&self) -> &'static str {
        "external"
    }
}

/// The backend pair a run was configured with.
pub struct Backends {
    pub inpainter: Box<dyn InpainterBackend>,
    pub depth: Box<dyn DepthBackend>,
}

impl Backends {
    pub fn from_config(cfg: &RunConfig) -> Self {
        let inpainter: Box<dyn InpainterBackend> = match cfg.plugins.inpainter {
            InpainterKind::DiffusionStub => Box::new(DiffusionInpainter),
            InpainterKind::External => {
                Box::new(ExternalInpainter::new(cfg.plugins.inpainter_cmd.clone()))
            }
        };
        let depth: Box<dyn DepthBackend> = match cfg.plugins.depth {
            DepthKind::OracleStub => Box::new(OracleDepth),
            DepthKind::ConstantStub => Box::new(ConstantDepth),
            DepthKind::External => Box::new(ExternalDepth::new(
                cfg.plugins.depth_cmd.clone(),
                cfg.plugins.depth_scale as f32,
            )),
        };
        Self { inpainter, depth }
    }
}
