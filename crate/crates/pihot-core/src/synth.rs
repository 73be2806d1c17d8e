//! Procedural scenes with exact ground truth.
//!
//! Each scene is a painter's-algorithm rendering of a flat wall, a few
//! depth-placed geometric objects, and a simple humanoid drawn in front.
//! Because every surface's geometry and depth are known, the human mask,
//! both depth maps, the human-free image, and the contact labels are all
//! exact by construction rather than annotated.
//!
//! Contact labelling rule: a pixel is labelled with class `k` when the
//! human-free rendering shows object `k` there, the pixel lies within
//! `band_radius` (Chebyshev) of the visible human silhouette's boundary,
//! and the human/object depth gap is at most `depth_tolerance`.
//!
//! All colors land on the 1/255 grid and all depths on the 1/depth_scale
//! grid, so PNG round trips reproduce every array bit for bit, and the same
//! per-surface noise field drives both renderings, so the image pair is
//! bitwise identical outside the human mask.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::image::{quantize_to_u8_grid, ImageTensor};
use crate::mask::{dilate_mask_iterated, mask_boundary, BinaryMask, DilationKernel};
use crate::metrics::ContactLabelMap;
use crate::viz::class_color;

/// Human-readable names for the object classes; wraps with a numeric suffix
/// if a dataset asks for more classes than there are base names.
const CLASS_NAMES: [&str; 17] = [
    "box", "ball", "cup", "book", "chair", "table", "lamp", "plant", "shelf", "mug", "bottle",
    "plate", "bowl", "phone", "pillow", "vase", "frame",
];

pub fn class_name(class: usize) -> String {
    assert!(class >= 1, "class 0 is the no-contact background");
    let base = CLASS_NAMES[(class - 1) % CLASS_NAMES.len()];
    if class <= CLASS_NAMES.len() {
        base.to_string()
    } else {
        format!("{base}{}", (class - 1) / CLASS_NAMES.len())
    }
}

/// Axis-aligned drawable primitive. Coordinates may extend off-canvas; only
/// the on-canvas intersection is rendered.
#[derive(Debug, Clone)]
pub enum Shape {
    Rect {
        top: i64,
        left: i64,
        height: i64,
        width: i64,
    },
    Ellipse {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
    },
}

impl Shape {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (yf, xf) = (y as f64, x as f64);
        match *self {
            Shape::Rect {
                top,
                left,
                height,
                width,
            } => {
                let (y, x) = (y as i64, x as i64);
                y >= top && y < top + height && x >= left && x < left + width
            }
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (yf - cy) / ry.max(1e-9);
                let dx = (xf - cx) / rx.max(1e-9);
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

/// One scene object with its depth (in integer units of `1/depth_scale`).
#[derive(Debug, Clone)]
pub struct PlacedObject {
    pub shape: Shape,
    pub depth: u32,
    pub class: u8,
    pub color: [f32; 3],
}

/// The humanoid: a few primitives sharing one depth plane.
#[derive(Debug, Clone)]
pub struct PlacedHuman {
    pub parts: Vec<Shape>,
    pub depth: u32,
    pub color: [f32; 3],
}

impl PlacedHuman {
    fn contains(&self, y: usize, x: usize) -> bool {
        self.parts.iter().any(|p| p.contains(y, x))
    }
}

/// Complete description of one scene; rendering it is deterministic given a
/// noise source.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub size: usize,
    pub wall_depth: u32,
    pub wall_color: [f32; 3],
    pub human: PlacedHuman,
    pub objects: Vec<PlacedObject>,
    pub band_radius: usize,
    /// Contact depth gate, in the same integer units as the depths.
    pub depth_tolerance_units: u32,
    pub noise: f32,
}

/// Raw rendering products, depths still in integer units.
pub(crate) struct Rendered {
    pub image: Array3<f32>,
    pub image_no_human: Array3<f32>,
    pub human_mask: BinaryMask,
    pub depth_units: Array2<u32>,
    pub depth_units_no_human: Array2<u32>,
    /// Visible surface per pixel without the human: 0 = wall, k = object k.
    /// Only the in-crate tests consume it, as the oracle for the label rule.
    #[allow(dead_code)]
    pub visible_no_human: Array2<u16>,
    pub labels: ContactLabelMap,
}

impl SceneSpec {
    /// Renders both image/depth pairs, the mask, and the contact labels.
    ///
    /// Draw order: wall, then objects far to near (painter's algorithm, so
    /// the nearer surface overwrites; equal depths resolve to the higher
    /// object index), then the human, which wins depth ties but never beats
    /// a strictly nearer object.
    pub(crate) fn render(&self, rng: &mut ChaCha8Rng) -> Result<Rendered> {
        let s = self.size;
        let n = self.objects.len();

        // One full-canvas noise field per surface, drawn in a fixed order
        // (wall, objects, human) so both renderings share surface textures.
        let amplitude = self.noise;
        let noise: Vec<Array3<f32>> = (0..n + 2)
            .map(|_| {
                Array3::from_shape_simple_fn((s, s, 3), || {
                    if amplitude > 0.0 {
                        rng.gen_range(-amplitude..=amplitude)
                    } else {
                        0.0
                    }
                })
            })
            .collect();

        // Human-free z-buffer pass.
        let mut visible = Array2::<u16>::zeros((s, s));
        let mut depth_no = Array2::<u32>::from_elem((s, s), self.wall_depth);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.objects[b].depth.cmp(&self.objects[a].depth));
        for &k in &order {
            let object = &self.objects[k];
            for y in 0..s {
                for x in 0..s {
                    if object.shape.contains(y, x) {
                        visible[(y, x)] = (k + 1) as u16;
                        depth_no[(y, x)] = object.depth;
                    }
                }
            }
        }

        // Add the human on top: wins ties, loses to strictly nearer objects.
        let mut depth_with = depth_no.clone();
        let mut mask = BinaryMask::zeros(s, s);
        for y in 0..s {
            for x in 0..s {
                if self.human.contains(y, x) && self.human.depth <= depth_with[(y, x)] {
                    depth_with[(y, x)] = self.human.depth;
                    mask.set(y, x, 1);
                }
            }
        }

        // Color both variants from the same per-surface noise fields, so
        // pixels outside the mask are bitwise identical.
        let paint = |surface: usize, base: [f32; 3], y: usize, x: usize, c: usize| -> f32 {
            quantize_to_u8_grid((base[c] + noise[surface][[y, x, c]]).clamp(0.0, 1.0))
        };
        let mut image = Array3::<f32>::zeros((s, s, 3));
        let mut image_no = Array3::<f32>::zeros((s, s, 3));
        for y in 0..s {
            for x in 0..s {
                let k = visible[(y, x)] as usize;
                let (surface, base) = if k == 0 {
                    (0, self.wall_color)
                } else {
                    (k, self.objects[k - 1].color)
                };
                for c in 0..3 {
                    let under = paint(surface, base, y, x, c);
                    image_no[[y, x, c]] = under;
                    image[[y, x, c]] = if mask.get(y, x) == 1 {
                        paint(n + 1, self.human.color, y, x, c)
                    } else {
                        under
                    };
                }
            }
        }

        // Contact labels: object pixels of the human-free view, within the
        // band around the visible silhouette, close enough in depth.
        let boundary = mask_boundary(&mask);
        let band = if self.band_radius == 0 {
            boundary
        } else {
            dilate_mask_iterated(
                &boundary,
                DilationKernel::new(2 * self.band_radius + 1)?,
                1,
            )?
        };
        let mut labels = ContactLabelMap::zeros(s, s);
        for y in 0..s {
            for x in 0..s {
                let k = visible[(y, x)] as usize;
                if k == 0 || band.get(y, x) == 0 {
                    continue;
                }
                let object = &self.objects[k - 1];
                let gap = (i64::from(self.human.depth) - i64::from(object.depth)).unsigned_abs();
                if gap <= u64::from(self.depth_tolerance_units) {
                    labels.set(y, x, object.class);
                }
            }
        }

        Ok(Rendered {
            image,
            image_no_human: image_no,
            human_mask: mask,
            depth_units: depth_with,
            depth_units_no_human: depth_no,
            visible_no_human: visible,
            labels,
        })
    }
}

/// One generated scene: everything the pipeline or its oracles may need.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub id: String,
    pub image: ImageTensor,
    pub image_no_human: ImageTensor,
    pub human_mask: BinaryMask,
    pub depth_with_human: DepthMap,
    pub depth_no_human: DepthMap,
    pub labels: ContactLabelMap,
}

impl SceneSample {
    /// The image with its ground-truth depth attached, ready for a depth
    /// backend that reads sidecars.
    pub fn image_with_depth(&self) -> Result<ImageTensor> {
        self.image
            .clone()
            .with_depth_sidecar(self.depth_with_human.clone())
    }
}

/// Generation controls; mirrors the `synth.*` config keys plus the run seed
/// and the depth quantization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub contact_fraction: f64,
    pub band_radius: usize,
    pub depth_tolerance: f64,
    pub noise: f64,
    pub classes: usize,
    pub depth_scale: f64,
}

impl SynthParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            seed: cfg.train.seed,
            scenes: cfg.synth.scenes,
            size: cfg.synth.size,
            min_objects: cfg.synth.min_objects,
            max_objects: cfg.synth.max_objects,
            contact_fraction: cfg.synth.contact_fraction,
            band_radius: cfg.synth.band_radius,
            depth_tolerance: cfg.synth.depth_tolerance,
            noise: cfg.synth.noise,
            classes: cfg.synth.classes,
            depth_scale: cfg.plugins.depth_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 {
            return Err(Error::InvalidArgument(
                "cannot generate a dataset of 0 scenes".into(),
            ));
        }
        if self.size < 8 {
            return Err(Error::InvalidArgument(format!(
                "scene size {} is below the 8-pixel minimum",
                self.size
            )));
        }
        if self.min_objects > self.max_objects || self.max_objects == 0 {
            return Err(Error::InvalidArgument(format!(
                "object count range {}..={} is empty",
                self.min_objects, self.max_objects
            )));
        }
        if !(0.0..=1.0).contains(&self.contact_fraction) {
            return Err(Error::InvalidArgument(format!(
                "contact fraction {} outside [0, 1]",
                self.contact_fraction
            )));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::InvalidArgument(format!(
                "noise amplitude {} outside [0, 0.5]",
                self.noise
            )));
        }
        if self.classes == 0 || self.classes > 255 {
            return Err(Error::InvalidArgument(format!(
                "class count {} outside 1..=255",
                self.classes
            )));
        }
        if !(self.depth_scale.is_finite() && self.depth_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth scale {} must be positive",
                self.depth_scale
            )));
        }
        if !(self.depth_tolerance.is_finite() && self.depth_tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "depth tolerance {} must be non-negative",
                self.depth_tolerance
            )));
        }
        if self.positives() > 0 && self.band_radius == 0 {
            return Err(Error::InvalidArgument(
                "contact scenes need band_radius >= 1: abutting objects sit outside \
                 the silhouette, so a zero-width band can never label them"
                    .into(),
            ));
        }
        Ok(())
    }

    /// How many scenes are posed with contact; the first `positives()`
    /// indices are the contact-positive ones.
    pub fn positives(&self) -> usize {
        (self.contact_fraction * self.scenes as f64).round() as usize
    }

    fn tolerance_units(&self) -> u32 {
        (self.depth_tolerance * self.depth_scale).round() as u32
    }
}

/// Uniform draw that tolerates degenerate ranges.
fn range_i64(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    if hi <= lo {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    let mut out = base;
    for v in &mut out {
        *v = (*v + rng.gen_range(-amount..=amount)).clamp(0.0, 1.0);
    }
    out
}

/// Depth bands, in integer units: the wall sits behind everything, the
/// human and objects share an overlapping mid range so contact is possible.
const WALL_DEPTH: (u32, u32) = (3800, 4200);
const HUMAN_DEPTH: (u32, u32) = (1200, 3000);
const OBJECT_DEPTH: (u32, u32) = (800, 3600);

fn draw_spec(params: &SynthParams, rng: &mut ChaCha8Rng, contact: bool) -> SceneSpec {
    let s = params.size as i64;
    let tol = params.tolerance_units();

    let wall_depth = rng.gen_range(WALL_DEPTH.0..=WALL_DEPTH.1);
    let gray = 0.35 + rng.gen_range(-0.03..=0.03f32);
    let wall_color = [gray, gray, gray];

    let human_depth = rng.gen_range(HUMAN_DEPTH.0..=HUMAN_DEPTH.1);
    let torso_h = range_i64(rng, s / 3, s / 2);
    let torso_w = range_i64(rng, s / 5, s / 3);
    let torso_top = range_i64(rng, s / 4, (s - torso_h - 1).max(s / 4));
    let torso_left = range_i64(rng, 1, (s - torso_w - 1).max(1));
    let torso = Shape::Rect {
        top: torso_top,
        left: torso_left,
        height: torso_h,
        width: torso_w,
    };
    let head_r = (torso_w as f64 * 0.45).max(1.5);
    let head = Shape::Ellipse {
        cy: torso_top as f64 - head_r * 0.7,
        cx: torso_left as f64 + torso_w as f64 / 2.0,
        ry: head_r,
        rx: head_r * 0.85,
    };
    let arm_h = (torso_h / 4).max(1);
    let arm_w = range_i64(rng, torso_w / 2, torso_w);
    let arm_top = torso_top + range_i64(rng, 0, (torso_h / 3).max(1));
    let arm_on_right = rng.gen_bool(0.5);
    let arm = Shape::Rect {
        top: arm_top,
        left: if arm_on_right {
            torso_left + torso_w
        } else {
            torso_left - arm_w
        },
        height: arm_h,
        width: arm_w,
    };
    let human = PlacedHuman {
        parts: vec![torso, head, arm],
        depth: human_depth,
        color: jitter(rng, [0.80, 0.60, 0.50], 0.05),
    };

    let count = rng.gen_range(params.min_objects..=params.max_objects).max(1);
    let mut objects = Vec::with_capacity(count);
    for index in 0..count {
        let class = rng.gen_range(1..=params.classes) as u8;
        let color = jitter(rng, class_color(class, params.classes + 1), 0.05);
        if contact && index == 0 {
            // Pose the first object flush against the torso, on whichever
            // horizontal side has room, at a depth inside the gate.
            let height = range_i64(rng, torso_h / 2, torso_h).max(2);
            let width = range_i64(rng, s / 6, s / 3).max(2);
            let top = torso_top + range_i64(rng, 0, (torso_h - height).max(0));
            let room_right = s - (torso_left + torso_w);
            let left = if room_right >= torso_left {
                torso_left + torso_w
            } else {
                torso_left - width
            };
            let offset = if tol == 0 {
                0
            } else {
                rng.gen_range(0..=tol / 2) as i64 * if rng.gen_bool(0.5) { 1 } else { -1 }
            };
            let depth = (i64::from(human_depth) + offset).clamp(1, 60_000) as u32;
            objects.push(PlacedObject {
                shape: Shape::Rect {
                    top,
                    left,
                    height,
                    width,
                },
                depth,
                class,
                color,
            });
            continue;
        }
        let h = range_i64(rng, s / 8, s / 3).max(2);
        let w = range_i64(rng, s / 8, s / 3).max(2);
        let top = range_i64(rng, 0, s - h);
        let left = range_i64(rng, 0, s - w);
        let shape = if rng.gen_bool(0.5) {
            Shape::Rect {
                top,
                left,
                height: h,
                width: w,
            }
        } else {
            Shape::Ellipse {
                cy: top as f64 + h as f64 / 2.0,
                cx: left as f64 + w as f64 / 2.0,
                ry: h as f64 / 2.0,
                rx: w as f64 / 2.0,
            }
        };
        let depth = if contact {
            rng.gen_range(OBJECT_DEPTH.0..=OBJECT_DEPTH.1)
        } else {
            // Keep every object outside twice the contact gate so a
            // no-contact pose is valid no matter where shapes land.
            let margin = 2 * tol + 1;
            let below_room = human_depth.saturating_sub(margin) >= OBJECT_DEPTH.0;
            let above_room = human_depth + margin <= OBJECT_DEPTH.1;
            let go_below = match (below_room, above_room) {
                (true, true) => rng.gen_bool(0.5),
                (true, false) => true,
                _ => false,
            };
            if go_below {
                rng.gen_range(OBJECT_DEPTH.0..=human_depth - margin)
            } else {
                rng.gen_range((human_depth + margin).min(OBJECT_DEPTH.1)..=OBJECT_DEPTH.1)
            }
        };
        objects.push(PlacedObject {
            shape,
            depth,
            class,
            color,
        });
    }

    SceneSpec {
        size: params.size,
        wall_depth,
        wall_color,
        human,
        objects,
        band_radius: params.band_radius,
        depth_tolerance_units: tol,
        noise: params.noise as f32,
    }
}

/// Poses and renders scene `index`, retrying until the contact target for
/// that index is met. Deterministic: the RNG stream is derived from the
/// dataset seed and the scene index alone.
pub fn generate_scene(params: &SynthParams, index: usize) -> Result<SceneSample> {
    let contact = index < params.positives();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);
    for _ in 0..200 {
        let spec = draw_spec(params, &mut rng, contact);
        let rendered = spec.render(&mut rng)?;
        let has_contact = rendered.labels.contact_pixels() > 0;
        if has_contact == contact {
            return assemble(params, index, rendered);
        }
    }
    Err(Error::Dataset(format!(
        "could not pose scene {index} with contact={contact} after 200 attempts"
    )))
}

fn assemble(params: &SynthParams, index: usize, rendered: Rendered) -> Result<SceneSample> {
    let scale = params.depth_scale as f32;
    let to_depth =
        |units: &Array2<u32>| DepthMap::new(units.mapv(|u| u as f32 / scale));
    Ok(SceneSample {
        id: format!("scene_{index:05}"),
        image: ImageTensor::new(rendered.image)?,
        image_no_human: ImageTensor::new(rendered.image_no_human)?,
        human_mask: rendered.human_mask,
        depth_with_human: to_depth(&rendered.depth_units)?,
        depth_no_human: to_depth(&rendered.depth_units_no_human)?,
        labels: rendered.labels,
    })
}

/// Everything a consumer needs to interpret a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub seed: u64,
    pub scenes: usize,
    pub size: usize,
    pub depth_scale: f64,
    pub classes: usize,
    /// Names for classes 1..=classes.
    pub class_names: Vec<String>,
    pub band_radius: usize,
    pub depth_tolerance: f64,
    pub noise: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub contact_fraction: f64,
}

impl DatasetMeta {
    fn from_params(params: &SynthParams) -> Self {
        Self {
            seed: params.seed,
            scenes: params.scenes,
            size: params.size,
            depth_scale: params.depth_scale,
            classes: params.classes,
            class_names: (1..=params.classes).map(class_name).collect(),
            band_radius: params.band_radius,
            depth_tolerance: params.depth_tolerance,
            noise: params.noise,
            min_objects: params.min_objects,
            max_objects: params.max_objects,
            contact_fraction: params.contact_fraction,
        }
    }

    /// Total class-channel count including the no-contact channel.
    pub fn num_classes(&self) -> usize {
        self.classes + 1
    }

    fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("scenes = {}\n", self.scenes));
        out.push_str(&format!("size = {}\n", self.size));
        out.push_str(&format!("depth_scale = {}\n", self.depth_scale));
        out.push_str(&format!("classes = {}\n", self.classes));
        for (i, name) in self.class_names.iter().enumerate() {
            out.push_str(&format!("class.{} = {}\n", i + 1, name));
        }
        out.push_str(&format!("band_radius = {}\n", self.band_radius));
        out.push_str(&format!("depth_tolerance = {}\n", self.depth_tolerance));
        out.push_str(&format!("noise = {}\n", self.noise));
        out.push_str(&format!("min_objects = {}\n", self.min_objects));
        out.push_str(&format!("max_objects = {}\n", self.max_objects));
        out.push_str(&format!("contact_fraction = {}\n", self.contact_fraction));
        out
    }

    fn parse(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Dataset(format!("meta line {}: expected key = value", number + 1))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        fn req<T: std::str::FromStr>(
            map: &std::collections::BTreeMap<String, String>,
            key: &str,
        ) -> Result<T> {
            map.get(key)
                .ok_or_else(|| Error::Dataset(format!("meta is missing {key}")))?
                .parse()
                .map_err(|_| Error::Dataset(format!("meta has malformed {key}")))
        }
        let classes: usize = req(&map, "classes")?;
        let class_names = (1..=classes)
            .map(|k| req::<String>(&map, &format!("class.{k}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed: req(&map, "seed")?,
            scenes: req(&map, "scenes")?,
            size: req(&map, "size")?,
            depth_scale: req(&map, "depth_scale")?,
            classes,
            class_names,
            band_radius: req(&map, "band_radius")?,
            depth_tolerance: req(&map, "depth_tolerance")?,
            noise: req(&map, "noise")?,
            min_objects: req(&map, "min_objects")?,
            max_objects: req(&map, "max_objects")?,
            contact_fraction: req(&map, "contact_fraction")?,
        })
    }
}

const SUBDIRS: [&str; 6] = [
    "images",
    "images_nohuman",
    "masks",
    "depth",
    "depth_nohuman",
    "labels",
];

/// Writes `path` atomically: the content lands under a temporary name in
/// the same directory and is renamed into place.
fn atomic<F: FnOnce(&Path) -> Result<()>>(path: &Path, write: F) -> Result<()> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".tmp.{file_name}"));
    write(&tmp)?;
    fs::rename(&tmp, path)
        .map_err(|e| Error::file(path.display().to_string(), format!("cannot finalize: {e}")))?;
    Ok(())
}

fn save_sample(sample: &SceneSample, root: &Path, depth_scale: f32) -> Result<()> {
    let id = &sample.id;
    atomic(&root.join("images").join(format!("{id}.png")), |p| {
        sample.image.save_png(p)
    })?;
    atomic(&root.join("images_nohuman").join(format!("{id}.png")), |p| {
        sample.image_no_human.save_png(p)
    })?;
    atomic(&root.join("masks").join(format!("{id}.png")), |p| {
        sample.human_mask.save_png(p)
    })?;
    atomic(&root.join("depth").join(format!("{id}.png")), |p| {
        sample.depth_with_human.save_png16(p, depth_scale)
    })?;
    atomic(&root.join("depth_nohuman").join(format!("{id}.png")), |p| {
        sample.depth_no_human.save_png16(p, depth_scale)
    })?;
    atomic(&root.join("labels").join(format!("{id}.png")), |p| {
        sample.labels.save_png(p)
    })?;
    Ok(())
}

/// Generates a full dataset directory; reruns with the same parameters are
/// byte-identical.
pub fn generate(params: &SynthParams, root: &Path) -> Result<DatasetMeta> {
    params.validate()?;
    for sub in SUBDIRS {
        fs::create_dir_all(root.join(sub))?;
    }
    for index in 0..params.scenes {
        let sample = generate_scene(params, index)?;
        save_sample(&sample, root, params.depth_scale as f32)?;
    }
    let meta = DatasetMeta::from_params(params);
    atomic(&root.join("meta"), |p| {
        fs::write(p, meta.to_text())?;
        Ok(())
    })?;
    Ok(meta)
}

fn check_invariants(sample: &SceneSample, meta: &DatasetMeta) -> Result<()> {
    let id = &sample.id;
    let (h, w) = (sample.image.height(), sample.image.width());
    let same = |oh: usize, ow: usize| oh == h && ow == w;
    if !same(sample.image_no_human.height(), sample.image_no_human.width())
        || !same(sample.human_mask.height(), sample.human_mask.width())
        || !same(sample.depth_with_human.height(), sample.depth_with_human.width())
        || !same(sample.depth_no_human.height(), sample.depth_no_human.width())
        || !same(sample.labels.height(), sample.labels.width())
    {
        return Err(Error::Dataset(format!(
            "sample {id}: the six maps do not share one size"
        )));
    }
    for i in 0..h {
        for j in 0..w {
            if sample.labels.get(i, j) as usize > meta.classes {
                return Err(Error::Dataset(format!(
                    "sample {id}: label {} at ({i},{j}) exceeds the {} classes",
                    sample.labels.get(i, j),
                    meta.classes
                )));
            }
            if sample.human_mask.get(i, j) == 0 {
                for c in 0..3 {
                    if sample.image.data()[[i, j, c]] != sample.image_no_human.data()[[i, j, c]] {
                        return Err(Error::Dataset(format!(
                            "sample {id}: image pair differs outside the mask at ({i},{j})"
                        )));
                    }
                }
                if sample.depth_with_human.data()[(i, j)] != sample.depth_no_human.data()[(i, j)]
                {
                    return Err(Error::Dataset(format!(
                        "sample {id}: depth pair differs outside the mask at ({i},{j})"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Reads a dataset directory back, verifying the structural invariants the
/// generator guarantees. Samples come back sorted by id.
pub fn load_dataset(root: &Path) -> Result<(DatasetMeta, Vec<SceneSample>)> {
    let meta_path = root.join("meta");
    let text = fs::read_to_string(&meta_path).map_err(|e| {
        Error::file(
            meta_path.display().to_string(),
            format!("cannot read dataset meta: {e}"),
        )
    })?;
    let meta = DatasetMeta::parse(&text)?;

    let images = root.join("images");
    let entries = fs::read_dir(&images).map_err(|e| {
        Error::file(images.display().to_string(), format!("cannot list images: {e}"))
    })?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            ids.push(stem.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Dataset(format!(
            "empty dataset: no images under {}",
            images.display()
        )));
    }

    let scale = meta.depth_scale as f32;
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let sample = SceneSample {
            image: ImageTensor::load_png(root.join("images").join(format!("{id}.png")))?,
            image_no_human: ImageTensor::load_png(
                root.join("images_nohuman").join(format!("{id}.png")),
            )?,
            human_mask: BinaryMask::load_png(root.join("masks").join(format!("{id}.png")))?,
            depth_with_human: DepthMap::load_png16(
                root.join("depth").join(format!("{id}.png")),
                scale,
            )?,
            depth_no_human: DepthMap::load_png16(
                root.join("depth_nohuman").join(format!("{id}.png")),
                scale,
            )?,
            labels: ContactLabelMap::load_png(root.join("labels").join(format!("{id}.png")))?,
            id,
        };
        check_invariants(&sample, &meta)?;
        samples.push(sample);
    }
    Ok((meta, samples))
}
