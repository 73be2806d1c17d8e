//! Contact-detection metrics: SC-Acc., C-Acc., mIoU and wIoU.
//!
//! Ground truth and predictions are per-pixel class maps where 0 means "no
//! contact" and `k >= 1` names the object class being touched. The two
//! accuracies are measured over ground-truth contact pixels only: SC-Acc.
//! requires the exact class to match, C-Acc. only that some contact was
//! predicted, so SC-Acc. ≤ C-Acc. always. IoU is computed per contact class
//! over the classes present in ground truth or prediction; mIoU averages
//! them uniformly and wIoU weights them by ground-truth pixel frequency.
//!
//! An image with no ground-truth contact defines no accuracy, and a metric
//! whose denominator is empty is reported as absent rather than zero so it
//! cannot silently drag an average down.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use crate::config::Aggregation;
use crate::error::{Error, Result};

/// H×W map of contact class indices; 0 = no contact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContactLabelMap {
    data: Array2<u8>,
}

impl ContactLabelMap {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument("label map must be non-empty".into()));
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

    pub fn set(&mut self, y: usize, x: usize, class: u8) {
        self.data[(y, x)] = class;
    }

    pub fn contact_pixels(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0).count()
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

    /// Loads an 8-bit grayscale PNG of raw class indices.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img =
            image::open(path).map_err(|e| Error::file(path, format!("cannot open: {e}")))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::file(
                    path,
                    format!("label map must be 8-bit grayscale PNG, got {other:?}"),
                ))
            }
        };
        let (w, h) = gray.dimensions();
        let mut data = Array2::zeros((h as usize, w as usize));
        for (x, y, pixel) in gray.enumerate_pixels() {
            data[(y as usize, x as usize)] = pixel.0[0];
        }
        Self::new(data)
    }

    /// Writes the raw class indices as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = self.data.dim();
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for (x, y, pixel) in img.enumerate_pixels_mut() {
            pixel.0[0] = self.data[(y as usize, x as usize)];
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// The four metrics; a `None` means the denominator was empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    /// % of ground-truth contact pixels with the exact class predicted.
    pub sc_acc: Option<f64>,
    /// % of ground-truth contact pixels with any contact predicted.
    pub c_acc: Option<f64>,
    /// Mean IoU over contact classes present in ground truth or prediction.
    pub miou: Option<f64>,
    /// Ground-truth-frequency-weighted IoU over the same classes.
    pub wiou: Option<f64>,
    /// IoU per contact class present in ground truth or prediction,
    /// ascending by class index.
    pub per_class_iou: Vec<(u8, f64)>,
    /// Images folded into this report.
    pub images: usize,
}

impl MetricReport {
    fn fmt_opt(v: Option<f64>) -> String {
        match v {
            Some(x) => format!("{x:.4}"),
            None => "n/a".to_string(),
        }
    }

    /// One-line `key=value` rendering used by the CLI.
    pub fn summary_line(&self) -> String {
        format!(
            "sc_acc={} c_acc={} miou={} wiou={} images={}",
            Self::fmt_opt(self.sc_acc),
            Self::fmt_opt(self.c_acc),
            Self::fmt_opt(self.miou),
            Self::fmt_opt(self.wiou),
            self.images
        )
    }
}

/// Running confusion counts, poolable across any number of images.
#[derive(Debug, Clone, Default)]
pub struct Confusion {
    num_classes: usize,
    images: usize,
    gt_contact: u64,
    exact_hits: u64,
    contact_hits: u64,
    intersection: BTreeMap<u8, u64>,
    pred_count: BTreeMap<u8, u64>,
    gt_count: BTreeMap<u8, u64>,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::default()
        }
    }

    /// Folds one prediction/ground-truth pair into the counts.
    pub fn add_image(&mut self, pred: &ContactLabelMap, gt: &ContactLabelMap) -> Result<()> {
        if pred.data.dim() != gt.data.dim() {
            return Err(Error::shape(
                "metric inputs",
                format!("{:?}", gt.data.dim()),
                format!("{:?}", pred.data.dim()),
            ));
        }
        for (&p, &g) in pred.data.iter().zip(gt.data.iter()) {
            if (p as usize) >= self.num_classes || (g as usize) >= self.num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class index out of range: pred={p} gt={g} num_classes={}",
                    self.num_classes
                )));
            }
            if g > 0 {
                self.gt_contact += 1;
                *self.gt_count.entry(g).or_insert(0) += 1;
                if p > 0 {
                    self.contact_hits += 1;
                }
                if p == g {
                    self.exact_hits += 1;
                    *self.intersection.entry(g).or_insert(0) += 1;
                }
            }
            if p > 0 {
                *self.pred_count.entry(p).or_insert(0) += 1;
            }
        }
        self.images += 1;
        Ok(())
    }

    fn iou(&self, class: u8) -> f64 {
        let inter = *self.intersection.get(&class).unwrap_or(&0);
        let union = self.pred_count.get(&class).unwrap_or(&0)
            + self.gt_count.get(&class).unwrap_or(&0)
            - inter;
        debug_assert!(union > 0, "iou queried for an absent class");
        inter as f64 / union as f64
    }

    /// Computes the metrics from the pooled counts.
    pub fn report(&self) -> MetricReport {
        let mut classes: Vec<u8> = self
            .gt_count
            .keys()
            .chain(self.pred_count.keys())
            .copied()
            .collect();
        classes.sort_unstable();
        classes.dedup();

        let (sc_acc, c_acc) = if self.gt_contact > 0 {
            (
                Some(100.0 * self.exact_hits as f64 / self.gt_contact as f64),
                Some(100.0 * self.contact_hits as f64 / self.gt_contact as f64),
            )
        } else {
            (None, None)
        };
        let per_class_iou: Vec<(u8, f64)> =
            classes.iter().map(|&k| (k, self.iou(k))).collect();
        let miou = if per_class_iou.is_empty() {
            None
        } else {
            Some(
                per_class_iou.iter().map(|&(_, v)| v).sum::<f64>() / per_class_iou.len() as f64,
            )
        };
        let wiou = if self.gt_contact > 0 {
            let weighted: f64 = per_class_iou
                .iter()
                .map(|&(k, v)| *self.gt_count.get(&k).unwrap_or(&0) as f64 * v)
                .sum();
            Some(weighted / self.gt_contact as f64)
        } else {
            None
        };
        MetricReport {
            sc_acc,
            c_acc,
            miou,
            wiou,
            per_class_iou,
            images: self.images,
        }
    }
}

/// Metrics for a single prediction/ground-truth pair.
pub fn evaluate(
    pred: &ContactLabelMap,
    gt: &ContactLabelMap,
    num_classes: usize,
) -> Result<MetricReport> {
    let mut confusion = Confusion::new(num_classes);
    confusion.add_image(pred, gt)?;
    Ok(confusion.report())
}

/// Metrics over a dataset, pooled per [`Aggregation`]. An empty dataset is
/// an error: there is nothing to report and a default would read as a score.
pub fn evaluate_dataset<'a>(
    pairs: impl IntoIterator<Item = (&'a ContactLabelMap, &'a ContactLabelMap)>,
    num_classes: usize,
    aggregation: Aggregation,
) -> Result<MetricReport> {
    let report = match aggregation {
        Aggregation::Micro => {
            let mut confusion = Confusion::new(num_classes);
            for (pred, gt) in pairs {
                confusion.add_image(pred, gt)?;
            }
            confusion.report()
        }
        Aggregation::Macro => {
            let mut images = 0;
            let mut sums = [0.0f64; 4];
            let mut counts = [0usize; 4];
            let mut class_sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
            for (pred, gt) in pairs {
                let r = evaluate(pred, gt, num_classes)?;
                images += 1;
                for (slot, value) in [r.sc_acc, r.c_acc, r.miou, r.wiou].into_iter().enumerate() {
                    if let Some(v) = value {
                        sums[slot] += v;
                        counts[slot] += 1;
                    }
                }
                for (k, v) in r.per_class_iou {
                    let slot = class_sums.entry(k).or_insert((0.0, 0));
                    slot.0 += v;
                    slot.1 += 1;
                }
            }
            let mean = |slot: usize| {
                if counts[slot] > 0 {
                    Some(sums[slot] / counts[slot] as f64)
                } else {
                    None
                }
            };
            MetricReport {
                sc_acc: mean(0),
                c_acc: mean(1),
                miou: mean(2),
                wiou: mean(3),
                per_class_iou: class_sums
                    .into_iter()
                    .map(|(k, (sum, n))| (k, sum / n as f64))
                    .collect(),
                images,
            }
        }
    };
    if report.images == 0 {
        return Err(Error::InvalidArgument(
            "cannot evaluate an empty dataset".into(),
        ));
    }
    Ok(report)
}
