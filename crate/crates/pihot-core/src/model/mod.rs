//! The full contact-detection network.
//!
//! A scene is prepared into three aligned inputs — the original image, a
//! human-free version of it, and a relative position map locating the
//! removed person in depth — and the network fuses the two image streams
//! with the position gate into per-class contact probabilities at input
//! resolution.
//!
//! Preparation (mask dilation, inpainting, depth estimation) runs in `f32`
//! against the pluggable backends; the network itself is generic over the
//! float type so training runs fast in `f32` while gradient verification
//! runs in `f64`.

mod adam;
mod backbone;
mod checkpoint;
mod fusion;
mod head;
mod loss;

pub use adam::Adam;
pub use backbone::{Backbone, ConvBlock, RESIDUAL_CHANNELS, RESIDUAL_DOWNSAMPLE};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use fusion::{cpo_fuse, cpo_fuse_backward, fuse_scalar, FusionParams};
pub use head::{SegmentHead, PROB_FLOOR};
pub use loss::{hot_loss, hot_loss_with_grad, LossConfig};

use ndarray::{Array2, Array3, Axis};

use crate::attention::{CrossAttention, CrossAttentionCache};
use crate::config::{MaskSettings, ModelSettings, RunConfig};
use crate::depth::{relative_position, DepthMap, RelativePositionMap};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::mask::{dilate_mask_iterated, BinaryMask, DilationKernel};
use crate::metrics::ContactLabelMap;
use crate::nn::{area_downsample, real, GradStore, ParamInit, ParamStore, Real};
use crate::plugins::Backends;

use backbone::{BackboneCache, ConvBlockCache};
use head::HeadCache;

/// Per-class contact probabilities at image resolution, every value inside
/// the clamp window.
#[derive(Debug, Clone)]
pub struct PredictionMap<F = f32> {
    data: Array3<F>,
}

impl<F: Real> PredictionMap<F> {
    /// Wraps a `(num_classes, H, W)` probability volume, rejecting values
    /// outside `[0, 1]` and class counts a `u8` label map cannot index.
    pub fn new(data: Array3<F>) -> Result<Self> {
        let channels = data.shape()[0];
        if channels < 2 || channels > 256 {
            return Err(Error::InvalidArgument(format!(
                "prediction needs 2..=256 class channels, got {channels}"
            )));
        }
        if data.shape()[1] == 0 || data.shape()[2] == 0 {
            return Err(Error::InvalidArgument("empty prediction map".into()));
        }
        for &v in data.iter() {
            if !(v >= F::zero() && v <= F::one()) {
                return Err(Error::InvalidArgument(
                    "prediction probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array3<F> {
        &self.data
    }

    pub fn num_classes(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Decodes to the most probable class per pixel; ties go to the lowest
    /// class index, so an all-equal pixel reads as no-contact.
    pub fn class_map(&self) -> ContactLabelMap {
        let (h, w) = (self.height(), self.width());
        let mut out = ContactLabelMap::zeros(h, w);
        for i in 0..h {
            for j in 0..w {
                let mut best = 0usize;
                let mut best_p = self.data[[0, i, j]];
                for k in 1..self.num_classes() {
                    let p = self.data[[k, i, j]];
                    if p > best_p {
                        best_p = p;
                        best = k;
                    }
                }
                out.set(i, j, best as u8);
            }
        }
        out
    }
}

/// Which of the four optional stages are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    /// Replace the human with inpainted background; off reuses the input.
    pub oi: bool,
    /// Cross-attend object features into contact features.
    pub ipi: bool,
    /// Gate fusion with the relative position map; off uses all-ones.
    pub spo: bool,
    /// Cross-attend depth into object features; off contributes zeros.
    pub idsi: bool,
}

impl Ablation {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            oi: cfg.train.oi,
            ipi: cfg.train.ipi,
            spo: cfg.train.spo,
            idsi: cfg.train.idsi,
        }
    }

    pub fn all_on() -> Self {
        Self {
            oi: true,
            ipi: true,
            spo: true,
            idsi: true,
        }
    }
}

/// Backend outputs for one scene, kept in full precision-independent `f32`
/// form so they can be inspected, visualized, or cast into either float type.
pub struct PreparedInput {
    pub image: ImageTensor,
    /// Human-free counterpart (inpainted, or the input itself with the
    /// object-inpainting stage disabled).
    pub inpainted: ImageTensor,
    /// Estimated depth of the original image; absent when the position gate
    /// is disabled and depth was never computed.
    pub depth_image: Option<DepthMap>,
    /// Estimated depth of the human-free image.
    pub depth_inpainted: Option<DepthMap>,
    /// Normalized depth difference (all ones when the gate is disabled).
    pub position: RelativePositionMap,
}

/// The three aligned tensors the network consumes.
pub struct ModelInput<F> {
    pub image: Array3<F>,
    pub image_object: Array3<F>,
    pub position: Array2<F>,
}

fn image_chw<F: Real>(image: &ImageTensor) -> Array3<F> {
    let (h, w) = (image.height(), image.width());
    let data = image.data();
    Array3::from_shape_fn((3, h, w), |(c, i, j)| real::<F>(data[[i, j, c]] as f64))
}

impl PreparedInput {
    pub fn to_model_input<F: Real>(&self) -> ModelInput<F> {
        ModelInput {
            image: image_chw(&self.image),
            image_object: image_chw(&self.inpainted),
            position: self.position.data().mapv(|v| real::<F>(v as f64)),
        }
    }
}

pub struct ForwardCache<F: Real> {
    backbone_image: BackboneCache<F>,
    backbone_object: BackboneCache<F>,
    contact: Vec<ConvBlockCache<F>>,
    ipi: Option<CrossAttentionCache<F>>,
    idsi: Option<CrossAttentionCache<F>>,
    position: Array2<F>,
    head: HeadCache<F>,
}

/// The assembled network. Layer structs hold parameter names; the values
/// live in a caller-owned [`ParamStore`], so the same model drives `f32`
/// training and `f64` verification.
#[derive(Debug)]
pub struct PihotModel {
    settings: ModelSettings,
    mask: MaskSettings,
    ablation: Ablation,
    fusion: FusionParams,
    backbone: Backbone,
    contact: Vec<ConvBlock>,
    ipi: Option<CrossAttention>,
    idsi: Option<CrossAttention>,
    head: SegmentHead,
}

impl PihotModel {
    /// Builds the network described by `cfg` and registers every parameter,
    /// deterministically from `train.seed`, into `store`.
    pub fn new<F: Real>(cfg: &RunConfig, store: &mut ParamStore<F>) -> Result<Self> {
        cfg.validate()?;
        let ablation = Ablation::from_config(cfg);
        let mut init = ParamInit::seeded(cfg.train.seed);
        let backbone = Backbone::new(store, &mut init, &cfg.model)?;
        let c = backbone.out_channels();
        let contact = (0..2)
            .map(|i| ConvBlock::new(store, &mut init, &format!("contact.block{i}"), c, c, 3, 1, 1))
            .collect();
        let attn_dim = cfg.resolved_attn_dim();
        let ipi = if ablation.ipi {
            Some(CrossAttention::new(store, &mut init, "ipi", c, c, attn_dim)?)
        } else {
            None
        };
        let idsi = if ablation.idsi {
            Some(CrossAttention::new(store, &mut init, "idsi", 1, c, attn_dim)?)
        } else {
            None
        };
        let head = SegmentHead::new(store, &mut init, c, cfg.model.num_classes);
        Ok(Self {
            settings: cfg.model.clone(),
            mask: cfg.mask.clone(),
            ablation,
            fusion: FusionParams::from_model(&cfg.model)?,
            backbone,
            contact,
            ipi,
            idsi,
            head,
        })
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }

    /// Runs the pluggable preprocessing: dilate the human mask, remove the
    /// human, and estimate where the person was in depth.
    ///
    /// `human_free_depth` is attached to the inpainted image before depth
    /// estimation so a ground-truth-reading depth backend can see it; it is
    /// ignored when inpainting is disabled, because the human-free image
    /// then *is* the original and keeps the original's depth.
    pub fn prepare(
        &self,
        image: &ImageTensor,
        human_mask: &BinaryMask,
        human_free_depth: Option<&DepthMap>,
        backends: &Backends,
    ) -> Result<PreparedInput> {
        if human_mask.height() != image.height() || human_mask.width() != image.width() {
            return Err(Error::shape(
                "human mask",
                format!("{}x{}", image.height(), image.width()),
                format!("{}x{}", human_mask.height(), human_mask.width()),
            ));
        }
        let kernel = DilationKernel::new(self.mask.dilation_kernel)?;
        let dilated = dilate_mask_iterated(human_mask, kernel, self.mask.dilation_iters)?;

        let inpainted = if self.ablation.oi {
            let mut out = backends.inpainter.inpaint(image, &dilated)?;
            match human_free_depth {
                Some(d) => out = out.with_depth_sidecar(d.clone())?,
                None => {}
            }
            out
        } else {
            image.clone()
        };

        let (depth_image, depth_inpainted, position) = if self.ablation.spo {
            let d_i = backends.depth.estimate(image)?;
            let d_o = backends.depth.estimate(&inpainted)?;
            let position = relative_position(&d_i, &d_o)?;
            (Some(d_i), Some(d_o), position)
        } else {
            let ones = Array2::<f32>::ones((image.height(), image.width()));
            (None, None, RelativePositionMap::new(ones)?)
        };

        Ok(PreparedInput {
            image: image.clone(),
            inpainted,
            depth_image,
            depth_inpainted,
            position,
        })
    }

    fn check_input<F: Real>(&self, input: &ModelInput<F>) -> Result<(usize, usize)> {
        let shape = input.image.shape();
        if shape[0] != 3 {
            return Err(Error::shape(
                "model input image",
                "3 channels",
                format!("{} channels", shape[0]),
            ));
        }
        if input.image_object.shape() != shape {
            return Err(Error::shape(
                "human-free image",
                format!("{shape:?}"),
                format!("{:?}", input.image_object.shape()),
            ));
        }
        let (h, w) = (shape[1], shape[2]);
        if [h, w] != *input.position.shape() {
            return Err(Error::shape(
                "position map",
                format!("{h}x{w}"),
                format!("{:?}", input.position.shape()),
            ));
        }
        let f = self.backbone.downsample();
        if h % f != 0 || w % f != 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {h}x{w} is not divisible by the feature stride {f}"
            )));
        }
        Ok((h, w))
    }

    /// Full forward pass to clamped per-class probabilities.
    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        input: &ModelInput<F>,
    ) -> Result<(PredictionMap<F>, ForwardCache<F>)> {
        let (h, w) = self.check_input(input)?;

        let (features_image, backbone_image) = self.backbone.forward(store, &input.image);
        let (features_object, backbone_object) =
            self.backbone.forward(store, &input.image_object);

        let mut x_c = features_image;
        let mut contact_caches = Vec::with_capacity(self.contact.len());
        for block in &self.contact {
            let (y, cache) = block.forward(store, &x_c);
            contact_caches.push(cache);
            x_c = y;
        }

        let (o_a, ipi_cache) = match &self.ipi {
            Some(ipi) => {
                let (y, cache) = ipi.forward(store, &features_object, &x_c)?;
                (y, Some(cache))
            }
            None => (features_object.clone(), None),
        };

        let position = area_downsample(&input.position, self.backbone.downsample())?;

        let (d_a, idsi_cache) = match &self.idsi {
            Some(idsi) => {
                let query = position.clone().insert_axis(Axis(0));
                let (y, cache) = idsi.forward(store, &query, &o_a)?;
                (y, Some(cache))
            }
            None => (Array3::zeros(o_a.raw_dim()), None),
        };

        let fused = cpo_fuse(&x_c, &o_a, &position, &d_a, &self.fusion)?;
        let (probs, head) = self.head.forward(store, &fused, h, w);
        let prediction = PredictionMap::new(probs)?;
        Ok((
            prediction,
            ForwardCache {
                backbone_image,
                backbone_object,
                contact: contact_caches,
                ipi: ipi_cache,
                idsi: idsi_cache,
                position,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d probabilities`.
    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        cache: &ForwardCache<F>,
        d_probs: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Result<()> {
        let d_fused = self.head.backward(store, &cache.head, d_probs, grads);
        let (d_xc_fuse, mut d_oa, d_da) =
            cpo_fuse_backward(&d_fused, &cache.position, &self.fusion);

        if let (Some(idsi), Some(idsi_cache)) = (&self.idsi, &cache.idsi) {
            // The depth query is data, not a learned input; its gradient is
            // dropped, but the attention parameters and the object-feature
            // context still learn from it.
            let (_d_query, d_context) = idsi.backward(store, idsi_cache, &d_da, grads)?;
            d_oa = d_oa + &d_context;
        }

        let (d_xc_total, d_object_features) = match (&self.ipi, &cache.ipi) {
            (Some(ipi), Some(ipi_cache)) => {
                let (d_query, d_context) = ipi.backward(store, ipi_cache, &d_oa, grads)?;
                (d_xc_fuse + &d_context, d_query)
            }
            _ => (d_xc_fuse, d_oa),
        };

        let mut d_contact = d_xc_total;
        for (block, block_cache) in self.contact.iter().zip(&cache.contact).rev() {
            d_contact = block.backward(store, block_cache, &d_contact, grads);
        }

        self.backbone
            .backward(store, &cache.backbone_image, &d_contact, grads);
        self.backbone
            .backward(store, &cache.backbone_object, &d_object_features, grads);
        Ok(())
    }

    /// Forward, loss, and a full backward pass in one call.
    pub fn loss_and_grads<F: Real>(
        &self,
        store: &ParamStore<F>,
        input: &ModelInput<F>,
        target: &ContactLabelMap,
        loss_cfg: &LossConfig,
    ) -> Result<(F, GradStore<F>)> {
        let (prediction, cache) = self.forward(store, input)?;
        let (loss, d_probs) = hot_loss_with_grad(&prediction, target, loss_cfg)?;
        let mut grads = GradStore::new();
        self.backward(store, &cache, &d_probs, &mut grads)?;
        Ok((loss, grads))
    }

    /// Forward pass only.
    pub fn predict<F: Real>(
        &self,
        store: &ParamStore<F>,
        input: &ModelInput<F>,
    ) -> Result<PredictionMap<F>> {
        Ok(self.forward(store, input)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DepthKind;
    use crate::plugins::{ConstantDepth, DiffusionInpainter, OracleDepth};
    use ndarray::Array3 as NdArray3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.set("model.out_channels", "6").unwrap();
        cfg.set("model.downsample", "4").unwrap();
        cfg.set("model.num_classes", "4").unwrap();
        cfg.set("model.attn_dim", "5").unwrap();
        cfg.set("synth.classes", "3").unwrap();
        cfg.set("train.seed", "11").unwrap();
        cfg
    }

    fn random_input(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ModelInput<f64> {
        ModelInput {
            image: NdArray3::from_shape_simple_fn((3, h, w), || rng.gen_range(0.0..1.0)),
            image_object: NdArray3::from_shape_simple_fn((3, h, w), || rng.gen_range(0.0..1.0)),
            position: Array2::from_shape_simple_fn((h, w), || rng.gen_range(0.0..1.0)),
        }
    }

    fn test_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
        let data = NdArray3::from_shape_simple_fn((h, w, 3), || {
            crate::image::quantize_to_u8_grid(rng.gen_range(0.0f32..1.0))
        });
        ImageTensor::new(data).unwrap()
    }

    fn center_mask(h: usize, w: usize) -> BinaryMask {
        let mut mask = BinaryMask::zeros(h, w);
        for i in h / 3..2 * h / 3 {
            for j in w / 3..2 * w / 3 {
                mask.set(i, j, 1);
            }
        }
        mask
    }

    #[test]
    fn forward_shapes_and_clamped_range() {
        let cfg = small_config();
        let mut store = ParamStore::<f64>::new();
        let model = PihotModel::new(&cfg, &mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_input(&mut rng, 16, 12);
        let (pred, _) = model.forward(&store, &input).unwrap();
        assert_eq!(pred.data().shape(), [4, 16, 12]);
        for &p in pred.data().iter() {
            assert!((PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&p));
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let cfg = small_config();
        let mut store = ParamStore::<f64>::new();
        let model = PihotModel::new(&cfg, &mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_input(&mut rng, 14, 12);
        let err = model.forward(&store, &input).err().unwrap();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input_f32 = ModelInput {
            image: NdArray3::from_shape_simple_fn((3, 8, 8), || rng.gen_range(0.0f32..1.0)),
            image_object: NdArray3::from_shape_simple_fn((3, 8, 8), || rng.gen_range(0.0f32..1.0)),
            position: Array2::from_shape_simple_fn((8, 8), || rng.gen_range(0.0f32..1.0)),
        };
        let run = || {
            let mut store = ParamStore::<f32>::new();
            let model = PihotModel::new(&cfg, &mut store).unwrap();
            model.predict(&store, &input_f32).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn class_map_breaks_ties_toward_lowest_class() {
        let mut data = NdArray3::from_elem((3, 1, 2), 0.2);
        data[[1, 0, 0]] = 0.9;
        data[[2, 0, 0]] = 0.9;
        let pred = PredictionMap::new(data).unwrap();
        let map = pred.class_map();
        assert_eq!(map.get(0, 0), 1);
        assert_eq!(map.get(0, 1), 0);
    }

    #[test]
    fn prediction_map_rejects_bad_volumes() {
        assert!(PredictionMap::new(NdArray3::<f64>::from_elem((1, 2, 2), 0.5)).is_err());
        assert!(PredictionMap::new(NdArray3::<f64>::from_elem((3, 2, 2), 1.5)).is_err());
        assert!(PredictionMap::new(NdArray3::<f64>::from_elem((3, 2, 2), f64::NAN)).is_err());
    }

    #[test]
    fn prepare_without_inpainting_reuses_the_image() {
        let mut cfg = small_config();
        cfg.set("train.oi", "false").unwrap();
        let mut store = ParamStore::<f32>::new();
        let model = PihotModel::new(&cfg, &mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let image = test_image(&mut rng, 12, 12);
        let backends = Backends {
            inpainter: Box::new(DiffusionInpainter),
            depth: Box::new(ConstantDepth),
        };
        let prepared = model
            .prepare(&image, &center_mask(12, 12), None, &backends)
            .unwrap();
        assert_eq!(prepared.inpainted.data(), prepared.image.data());
        // Constant depth on both images: no depth difference anywhere.
        assert!(prepared.position.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prepare_with_gate_disabled_skips_depth_entirely() {
        let mut cfg = small_config();
        cfg.set("train.spo", "false").unwrap();
        let mut store = ParamStore::<f32>::new();
        let model = PihotModel::new(&cfg, &mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let image = test_image(&mut rng, 12, 12);
        // An oracle depth backend with no sidecar would error if consulted;
        // with the gate off it must never be consulted.
        let backends = Backends {
            inpainter: Box::new(DiffusionInpainter),
            depth: Box::new(OracleDepth),
        };
        let prepared = model
            .prepare(&image, &center_mask(12, 12), None, &backends)
            .unwrap();
        assert!(prepared.depth_image.is_none());
        assert!(prepared.position.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn prepare_rejects_mismatched_mask() {
        let cfg = small_config();
        let mut store = ParamStore::<f32>::new();
        let model = PihotModel::new(&cfg, &mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let image = test_image(&mut rng, 12, 12);
        let backends = Backends {
            inpainter: Box::new(DiffusionInpainter),
            depth: Box::new(ConstantDepth),
        };
        assert!(model
            .prepare(&image, &center_mask(8, 8), None, &backends)
            .is_err());
    }

    /// With the position gate disabled the depth backend choice cannot
    /// influence the output at all.
    #[test]
    fn gate_off_makes_output_depth_independent() {
        let mut cfg = small_config();
        cfg.set("train.spo", "false").unwrap();
        cfg.set("plugins.depth", "constant_stub").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let image = test_image(&mut rng, 8, 8);
        let mask = center_mask(8, 8);
        let run = |depth: DepthKind| {
            let mut c = cfg.clone();
            c.set(
                "plugins.depth",
                match depth {
                    DepthKind::ConstantStub => "constant_stub",
                    DepthKind::OracleStub => "oracle_stub",
                    DepthKind::External => unreachable!(),
                },
            )
            .unwrap();
            let mut store = ParamStore::<f32>::new();
            let model = PihotModel::new(&c, &mut store).unwrap();
            let backends = Backends::from_config(&c);
            let prepared = model.prepare(&image, &mask, None, &backends).unwrap();
            let input = prepared.to_model_input::<f32>();
            model.predict(&store, &input).unwrap()
        };
        let with_constant = run(DepthKind::ConstantStub);
        let with_oracle = run(DepthKind::OracleStub);
        assert_eq!(with_constant.data(), with_oracle.data());
    }

    /// Spot finite-difference check over a few elements of every parameter
    /// group; the exhaustive sweep lives in the acceptance suite.
    #[test]
    fn end_to_end_gradcheck_spot() {
        let cfg = small_config();
        let mut store = ParamStore::<f64>::new();
        let model = PihotModel::new(&cfg, &mut store).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let input = random_input(&mut rng, 8, 8);
        let mut target = ContactLabelMap::zeros(8, 8);
        for i in 0..8 {
            for j in 0..8 {
                target.set(i, j, rng.gen_range(0..4) as u8);
            }
        }
        let loss_cfg = LossConfig::default();
        let (_, grads) = model
            .loss_and_grads(&store, &input, &target, &loss_cfg)
            .unwrap();

        let objective = |store: &ParamStore<f64>| -> f64 {
            let (pred, _) = model.forward(store, &input).unwrap();
            hot_loss(&pred, &target, &loss_cfg).unwrap()
        };
        let eps = 1e-5;
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in &names {
            for idx in 0..store.get(name).len().min(2) {
                let orig = store.get(name).as_slice().unwrap()[idx];
                let mut plus = store.clone();
                let mut arr = store.get(name).clone();
                arr.as_slice_mut().unwrap()[idx] = orig + eps;
                plus.set(name, arr);
                let mut minus = store.clone();
                let mut arr = store.get(name).clone();
                arr.as_slice_mut().unwrap()[idx] = orig - eps;
                minus.set(name, arr);
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let got = grads.get(name).map_or(0.0, |a| a.as_slice().unwrap()[idx]);
                assert!(
                    (fd - got).abs() <= 1e-4 * fd.abs().max(got.abs()).max(1e-3),
                    "{name}[{idx}]: fd {fd} vs analytic {got}"
                );
            }
        }
    }

    /// Ablated variants still run end to end and register fewer parameters.
    #[test]
    fn ablated_variants_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let input = random_input(&mut rng, 8, 8);
        let full_params = {
            let mut store = ParamStore::<f64>::new();
            PihotModel::new(&small_config(), &mut store).unwrap();
            store.len()
        };
        for flag in ["train.oi", "train.ipi", "train.spo", "train.idsi"] {
            let mut cfg = small_config();
            cfg.set(flag, "false").unwrap();
            let mut store = ParamStore::<f64>::new();
            let model = PihotModel::new(&cfg, &mut store).unwrap();
            let (pred, _) = model.forward(&store, &input).unwrap();
            assert_eq!(pred.data().shape(), [4, 8, 8]);
            if flag == "train.ipi" || flag == "train.idsi" {
                assert!(store.len() < full_params, "{flag} should drop parameters");
            }
        }
    }
}
