//! Single-threaded training loop with deterministic sampling and exact
//! resume.
//!
//! Determinism contract: every random decision at step `s` comes from a
//! fresh `ChaCha8Rng` seeded with the run seed on stream `s + 1` (stream 0
//! is reserved for parameter initialisation via the seed itself). The
//! optimizer's moments ride inside the checkpoint, so stopping after `k`
//! steps and resuming produces the byte-identical archive an uninterrupted
//! run writes.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, KEYS};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_dataset, ContactLabelMap, MetricReport};
use crate::model::{
    load_checkpoint, save_checkpoint, Adam, LossConfig, ModelInput, PihotModel,
};
use crate::nn::{GradStore, ParamStore};
use crate::plugins::Backends;
use crate::synth::SceneSample;

/// File names a training run leaves in its output directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.pihot";
pub const LOSS_LOG_FILE: &str = "loss.log";

#[derive(Debug)]
pub struct TrainOutcome {
    /// Steps executed in this invocation (resume runs only the remainder).
    pub steps_run: usize,
    /// Mean batch loss at the last executed step, if any step ran.
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

/// One dataset sample reduced to what a gradient step needs.
struct TrainExample {
    input: ModelInput<f32>,
    labels: ContactLabelMap,
}

/// Applies the step's augmentation draws to a sample. The draws happen
/// unconditionally relative to the enabled switches so the random stream
/// depends only on the configuration, not on the data.
fn augment(
    sample: &SceneSample,
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SceneSample> {
    let mut out = sample.clone();
    if cfg.train.flip && rng.gen_bool(0.5) {
        out = SceneSample {
            id: out.id,
            image: out.image.flip_horizontal(),
            image_no_human: out.image_no_human.flip_horizontal(),
            human_mask: out.human_mask.flip_horizontal(),
            depth_with_human: out.depth_with_human.flip_horizontal(),
            depth_no_human: out.depth_no_human.flip_horizontal(),
            labels: out.labels.flip_horizontal(),
        };
    }
    if cfg.train.crop {
        let size = cfg.train.crop_size;
        let (h, w) = (out.image.height(), out.image.width());
        if size > h || size > w {
            return Err(Error::Config(format!(
                "train.crop_size {size} exceeds the {h}x{w} images"
            )));
        }
        let top = rng.gen_range(0..=h - size);
        let left = rng.gen_range(0..=w - size);
        out = SceneSample {
            id: out.id,
            image: out.image.crop(top, left, size, size)?,
            image_no_human: out.image_no_human.crop(top, left, size, size)?,
            human_mask: out.human_mask.crop(top, left, size, size)?,
            depth_with_human: out.depth_with_human.crop(top, left, size, size)?,
            depth_no_human: out.depth_no_human.crop(top, left, size, size)?,
            labels: out.labels.crop(top, left, size, size)?,
        };
    }
    Ok(out)
}

/// Runs the full preprocessing front end on one sample.
fn prepare_example(
    model: &PihotModel,
    sample: &SceneSample,
    backends: &Backends,
) -> Result<TrainExample> {
    let image = sample.image_with_depth()?;
    let prepared = model.prepare(
        &image,
        &sample.human_mask,
        Some(&sample.depth_no_human),
        backends,
    )?;
    Ok(TrainExample {
        input: prepared.to_model_input::<f32>(),
        labels: sample.labels.clone(),
    })
}

/// Errors unless the checkpoint was produced by the same configuration,
/// `train.steps` excepted (extending a run is the point of resuming).
fn check_resume_config(current: &RunConfig, saved: &RunConfig) -> Result<()> {
    for key in KEYS {
        if *key == "train.steps" {
            continue;
        }
        let a = saved.get(key).expect("canonical key");
        let b = current.get(key).expect("canonical key");
        if a != b {
            return Err(Error::Config(format!(
                "resume: configuration mismatch at {key}: checkpoint has {a}, current run has {b}"
            )));
        }
    }
    Ok(())
}

/// Loads parameters from a checkpoint into the store, requiring an exact
/// name match in both directions.
fn restore_params(
    store: &mut ParamStore<f32>,
    params: indexmap::IndexMap<String, ndarray::ArrayD<f32>>,
) -> Result<()> {
    let expected: Vec<String> = store.names().map(str::to_string).collect();
    for name in &expected {
        if !params.contains_key(name) {
            return Err(Error::Checkpoint(format!(
                "checkpoint is missing parameter {name}"
            )));
        }
    }
    for (name, value) in params {
        if !expected.iter().any(|n| n == &name) {
            return Err(Error::Checkpoint(format!(
                "checkpoint has unexpected parameter {name}"
            )));
        }
        store.set(&name, value);
    }
    Ok(())
}

/// Writes the current parameters and optimizer moments as one archive.
fn save_state(
    path: &Path,
    step: u64,
    cfg: &RunConfig,
    store: &ParamStore<f32>,
    adam: &Adam<f32>,
) -> Result<()> {
    let mut tensors: Vec<(&str, ndarray::ArrayViewD<f32>)> = Vec::new();
    for (name, value) in store.iter() {
        tensors.push((name, value.view()));
    }
    let state = adam.state();
    // The optimizer names are owned strings; keep them alive for the call.
    let state_refs: Vec<(&str, ndarray::ArrayViewD<f32>)> = state
        .iter()
        .map(|(name, value)| (name.as_str(), value.view()))
        .collect();
    tensors.extend(state_refs);
    save_checkpoint(path, step, cfg, tensors)
}

/// Trains a model on `samples`, writing `checkpoint.pihot` and `loss.log`
/// under `out_dir`. With `resume`, continues that archive to the step count
/// in `cfg` instead of starting fresh.
pub fn train(
    cfg: &RunConfig,
    samples: &[SceneSample],
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Train("cannot train on an empty dataset".into()));
    }
    for sample in samples {
        let limit = cfg.model.num_classes as u8;
        if sample.labels.data().iter().any(|&v| v >= limit) {
            return Err(Error::Train(format!(
                "sample {} has labels outside the {} model classes; \
                 regenerate the dataset or raise model.num_classes",
                sample.id, cfg.model.num_classes
            )));
        }
    }
    if cfg.train.crop && cfg.train.crop_size % cfg.model.downsample != 0 {
        return Err(Error::Config(format!(
            "train.crop_size {} is not divisible by model.downsample {}",
            cfg.train.crop_size, cfg.model.downsample
        )));
    }

    let backends = Backends::from_config(cfg);
    let loss_cfg = LossConfig::from_settings(&cfg.loss);

    let mut store = ParamStore::<f32>::new();
    let model = PihotModel::new(cfg, &mut store)?;
    let mut adam = Adam::<f32>::new(cfg.train.lr);

    let start_step = match resume {
        None => 0usize,
        Some(path) => {
            let checkpoint = load_checkpoint(path)?;
            check_resume_config(cfg, &checkpoint.config)?;
            let step = checkpoint.step;
            let (params, optimizer) = checkpoint.split();
            restore_params(&mut store, params)?;
            adam.restore(step, optimizer)?;
            step as usize
        }
    };
    let steps = cfg.train.steps;
    if start_step > steps {
        return Err(Error::Train(format!(
            "checkpoint is already at step {start_step}, beyond train.steps {steps}"
        )));
    }

    std::fs::create_dir_all(out_dir)?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOSS_LOG_FILE);
    let log_file = OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .write(true)
        .open(&log_path)?;
    let mut log = BufWriter::new(log_file);

    // Without augmentation the preprocessing of each sample is constant, so
    // it runs once up front instead of once per draw.
    let augmenting = cfg.train.flip || cfg.train.crop;
    let static_examples: Vec<TrainExample> = if augmenting {
        Vec::new()
    } else {
        samples
            .iter()
            .map(|s| prepare_example(&model, s, &backends))
            .collect::<Result<_>>()?
    };

    let mut final_loss = None;
    for step in start_step..steps {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(step as u64 + 1);

        let mut batch_grads = GradStore::<f32>::new();
        let mut batch_loss = 0.0f64;
        for _ in 0..cfg.train.batch_size {
            let index = rng.gen_range(0..samples.len());
            let (loss, grads) = if augmenting {
                let sample = augment(&samples[index], cfg, &mut rng)?;
                let example = prepare_example(&model, &sample, &backends)?;
                model.loss_and_grads(&store, &example.input, &example.labels, &loss_cfg)?
            } else {
                let example = &static_examples[index];
                model.loss_and_grads(&store, &example.input, &example.labels, &loss_cfg)?
            };
            batch_loss += loss as f64;
            batch_grads.merge(&grads);
        }
        let scale = 1.0 / cfg.train.batch_size as f32;
        batch_grads.scale(scale);
        let mean_loss = batch_loss / cfg.train.batch_size as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Train(format!(
                "loss diverged to {mean_loss} at step {}",
                step + 1
            )));
        }

        adam.apply(&mut store, &batch_grads);
        writeln!(log, "{}\t{}", step + 1, mean_loss)?;
        final_loss = Some(mean_loss);
    }
    log.flush()?;

    save_state(&checkpoint_path, steps as u64, cfg, &store, &adam)?;
    Ok(TrainOutcome {
        steps_run: steps - start_step,
        final_loss,
        checkpoint: checkpoint_path,
        loss_log: log_path,
    })
}

/// A model plus its trained parameters, reconstructed from a checkpoint.
pub struct LoadedModel {
    pub config: RunConfig,
    pub model: PihotModel,
    pub store: ParamStore<f32>,
    pub step: u64,
}

/// Rebuilds the architecture recorded in a checkpoint and loads its weights.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let checkpoint = load_checkpoint(path)?;
    let config = checkpoint.config.clone();
    let mut store = ParamStore::<f32>::new();
    let model = PihotModel::new(&config, &mut store)?;
    let step = checkpoint.step;
    let (params, _optimizer) = checkpoint.split();
    restore_params(&mut store, params)?;
    Ok(LoadedModel {
        config,
        model,
        store,
        step,
    })
}

/// Decoded prediction for every sample, in input order.
pub fn predict_dataset(
    model: &PihotModel,
    store: &ParamStore<f32>,
    samples: &[SceneSample],
    backends: &Backends,
) -> Result<Vec<ContactLabelMap>> {
    samples
        .iter()
        .map(|sample| {
            let example = prepare_example(model, sample, backends)?;
            Ok(model.predict(store, &example.input)?.class_map())
        })
        .collect()
}

/// Runs the model over a dataset and scores it against the ground truth.
pub fn evaluate_model(
    cfg: &RunConfig,
    model: &PihotModel,
    store: &ParamStore<f32>,
    samples: &[SceneSample],
    backends: &Backends,
) -> Result<MetricReport> {
    let predictions = predict_dataset(model, store, samples, backends)?;
    evaluate_dataset(
        predictions.iter().zip(samples.iter().map(|s| &s.labels)),
        cfg.model.num_classes,
        cfg.metrics.aggregation,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SynthParams};
    use tempfile::TempDir;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (key, value) in [
            ("model.out_channels", "6"),
            ("model.downsample", "4"),
            ("model.num_classes", "4"),
            ("model.attn_dim", "5"),
            ("train.steps", "3"),
            ("train.batch_size", "2"),
            ("train.lr", "0.001"),
            ("train.seed", "9"),
            ("synth.scenes", "3"),
            ("synth.size", "16"),
            ("synth.classes", "3"),
            ("synth.min_objects", "1"),
            ("synth.max_objects", "2"),
        ] {
            cfg.set(key, value).unwrap();
        }
        cfg
    }

    fn tiny_dataset(cfg: &RunConfig) -> Vec<SceneSample> {
        let params = SynthParams::from_config(cfg);
        (0..params.scenes)
            .map(|i| generate_scene(&params, i).unwrap())
            .collect()
    }

    #[test]
    fn training_writes_checkpoint_and_log() {
        let cfg = tiny_config();
        let samples = tiny_dataset(&cfg);
        let dir = TempDir::new().unwrap();
        let outcome = train(&cfg, &samples, dir.path(), None).unwrap();
        assert_eq!(outcome.steps_run, 3);
        assert!(outcome.final_loss.unwrap().is_finite());
        assert!(outcome.checkpoint.exists());
        let log = std::fs::read_to_string(&outcome.loss_log).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("1\t"));
        assert!(lines[2].starts_with("3\t"));
    }

    #[test]
    fn same_seed_gives_identical_checkpoints() {
        let cfg = tiny_config();
        let samples = tiny_dataset(&cfg);
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        let out_a = train(&cfg, &samples, a.path(), None).unwrap();
        let out_b = train(&cfg, &samples, b.path(), None).unwrap();
        let bytes_a = std::fs::read(&out_a.checkpoint).unwrap();
        let bytes_b = std::fs::read(&out_b.checkpoint).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(
            std::fs::read(&out_a.loss_log).unwrap(),
            std::fs::read(&out_b.loss_log).unwrap()
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run_bit_for_bit() {
        let cfg = tiny_config();
        let samples = tiny_dataset(&cfg);

        let full_dir = TempDir::new().unwrap();
        let full = train(&cfg, &samples, full_dir.path(), None).unwrap();

        let mut short_cfg = cfg.clone();
        short_cfg.set("train.steps", "1").unwrap();
        let split_dir = TempDir::new().unwrap();
        let first = train(&short_cfg, &samples, split_dir.path(), None).unwrap();
        assert_eq!(first.steps_run, 1);
        let resumed = train(&cfg, &samples, split_dir.path(), Some(&first.checkpoint)).unwrap();
        assert_eq!(resumed.steps_run, 2);

        assert_eq!(
            std::fs::read(&full.checkpoint).unwrap(),
            std::fs::read(&resumed.checkpoint).unwrap()
        );
        assert_eq!(
            std::fs::read(&full.loss_log).unwrap(),
            std::fs::read(&resumed.loss_log).unwrap()
        );
    }

    #[test]
    fn resume_rejects_changed_configuration() {
        let cfg = tiny_config();
        let samples = tiny_dataset(&cfg);
        let dir = TempDir::new().unwrap();
        let outcome = train(&cfg, &samples, dir.path(), None).unwrap();

        let mut changed = cfg.clone();
        changed.set("train.lr", "0.01").unwrap();
        changed.set("train.steps", "5").unwrap();
        let err = train(&changed, &samples, dir.path(), Some(&outcome.checkpoint)).unwrap_err();
        assert!(err.to_string().contains("train.lr"), "{err}");

        // Only the step budget may change.
        let mut extended = cfg.clone();
        extended.set("train.steps", "4").unwrap();
        let resumed =
            train(&extended, &samples, dir.path(), Some(&outcome.checkpoint)).unwrap();
        assert_eq!(resumed.steps_run, 1);
    }

    #[test]
    fn checkpoint_round_trips_into_evaluation() {
        let cfg = tiny_config();
        let samples = tiny_dataset(&cfg);
        let dir = TempDir::new().unwrap();
        let outcome = train(&cfg, &samples, dir.path(), None).unwrap();

        let loaded = load_model(&outcome.checkpoint).unwrap();
        assert_eq!(loaded.step, 3);
        assert_eq!(loaded.config.snapshot(), cfg.snapshot());
        let backends = Backends::from_config(&loaded.config);
        let report =
            evaluate_model(&loaded.config, &loaded.model, &loaded.store, &samples, &backends)
                .unwrap();
        assert_eq!(report.images, samples.len());
        assert!(report.c_acc.is_some(), "dataset has contact scenes");
    }

    #[test]
    fn augmented_training_still_runs_deterministically() {
        let mut cfg = tiny_config();
        cfg.set("train.flip", "true").unwrap();
        cfg.set("train.crop", "true").unwrap();
        cfg.set("train.crop_size", "12").unwrap();
        let samples = tiny_dataset(&cfg);
        let a = TempDir::new().unwrap();
        let b = TempDir::new().unwrap();
        let out_a = train(&cfg, &samples, a.path(), None).unwrap();
        let out_b = train(&cfg, &samples, b.path(), None).unwrap();
        assert_eq!(
            std::fs::read(&out_a.checkpoint).unwrap(),
            std::fs::read(&out_b.checkpoint).unwrap()
        );
    }

    #[test]
    fn crop_size_must_fit_the_downsample_grid() {
        let mut cfg = tiny_config();
        cfg.set("train.crop", "true").unwrap();
        cfg.set("train.crop_size", "10").unwrap();
        let samples = tiny_dataset(&tiny_config());
        let dir = TempDir::new().unwrap();
        let err = train(&cfg, &samples, dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("crop_size"), "{err}");
    }

    #[test]
    fn labels_beyond_model_classes_are_rejected() {
        let cfg = tiny_config();
        let mut samples = tiny_dataset(&cfg);
        samples[0].labels.set(0, 0, 200);
        let dir = TempDir::new().unwrap();
        let err = train(&cfg, &samples, dir.path(), None).unwrap_err();
        assert!(err.to_string().contains("model classes"), "{err}");
    }
}
