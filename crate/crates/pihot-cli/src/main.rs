//! Command-line front end: dataset generation, training, evaluation,
//! single-image inference, and depth-map visualization.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Axis;
use pihot_core::config::RunConfig;
use pihot_core::depth::DepthMap;
use pihot_core::image::ImageTensor;
use pihot_core::mask::BinaryMask;
use pihot_core::metrics::MetricReport;
use pihot_core::plugins::Backends;
use pihot_core::synth::{self, DatasetMeta, SynthParams};
use pihot_core::train::{self, LoadedModel};
use pihot_core::viz;
use pihot_core::PihotModel;

#[derive(Parser)]
#[command(
    name = "pihot",
    version,
    about = "Human-object contact detection on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of indoor scenes with contact labels.
    GenData(GenData),
    /// Train a model on a generated dataset.
    Train(Train),
    /// Score a checkpoint against a dataset's ground truth.
    Eval(Eval),
    /// Predict contact classes for a single image.
    Infer(Infer),
    /// Write the depth maps and the relative-position map the model sees.
    VisualizeDepth(VisualizeDepth),
}

/// Configuration sources shared by the commands that assemble a fresh
/// configuration. Precedence, lowest to highest: built-in defaults, the
/// `PIHOT_SEED` environment variable (seed only, and only when nothing else
/// set it), `--config`, then `--set` in the order given, then dedicated
/// flags like `--seed`.
#[derive(Args)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set train.lr=0.001 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)
                .with_context(|| format!("reading configuration {}", path.display()))?;
        }
        for pair in &self.set {
            cfg.apply_override(pair)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenData {
    /// Directory to create the dataset in.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of scenes to generate (synth.scenes).
    #[arg(long, value_name = "N")]
    count: Option<usize>,
    /// Generation seed (train.seed).
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct Train {
    /// Dataset directory produced by gen-data.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Run directory for the checkpoint and loss log.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Total optimization steps (train.steps).
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Learning rate (train.lr).
    #[arg(long, value_name = "LR")]
    lr: Option<f64>,
    /// Examples per step (train.batch_size).
    #[arg(long = "batch-size", value_name = "N")]
    batch_size: Option<usize>,
    /// Training seed (train.seed).
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Continue from an existing checkpoint.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
    /// Disable a pipeline stage: oi, ipi, spo, or idsi (repeatable).
    #[arg(long = "ablate", value_name = "STAGE")]
    ablate: Vec<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct Eval {
    /// Dataset directory with ground-truth labels.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Checkpoint to score.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Also write the report to this file.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Override evaluation-time keys, e.g. --set metrics.aggregation=macro.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct Infer {
    /// Input RGB image (8-bit PNG).
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Human mask (8-bit grayscale PNG, 255 = human).
    #[arg(long, value_name = "FILE")]
    mask: PathBuf,
    /// Checkpoint holding the weights and configuration.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Output label map (8-bit PNG of class indices).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write an RGB overlay of the predicted classes.
    #[arg(long, value_name = "FILE")]
    overlay: Option<PathBuf>,
    /// Also write per-class probability maps prob_NN.png into this directory.
    #[arg(long, value_name = "DIR")]
    probs: Option<PathBuf>,
    /// 16-bit depth PNG for the input image (needed by the oracle depth
    /// backend).
    #[arg(long, value_name = "FILE")]
    depth: Option<PathBuf>,
    /// 16-bit depth PNG of the same scene without the human.
    #[arg(long = "depth-nohuman", value_name = "FILE")]
    depth_nohuman: Option<PathBuf>,
}

#[derive(Args)]
struct VisualizeDepth {
    /// Dataset directory; pair with --id.
    #[arg(long, value_name = "DIR", requires = "id")]
    dataset: Option<PathBuf>,
    /// Scene to visualize, e.g. scene_00002.
    #[arg(long, value_name = "ID", requires = "dataset")]
    id: Option<String>,
    /// Input RGB image; pair with --mask.
    #[arg(long, value_name = "FILE", requires = "mask", conflicts_with = "dataset")]
    image: Option<PathBuf>,
    /// Human mask for --image.
    #[arg(long, value_name = "FILE", requires = "image")]
    mask: Option<PathBuf>,
    /// 16-bit depth PNG for --image.
    #[arg(long, value_name = "FILE", requires = "image")]
    depth: Option<PathBuf>,
    /// 16-bit human-free depth PNG for --image.
    #[arg(long = "depth-nohuman", value_name = "FILE", requires = "image")]
    depth_nohuman: Option<PathBuf>,
    /// Directory for d_i.png, d_o.png, and d_s.png.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_cmd(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Infer(args) => infer_cmd(args),
        Command::VisualizeDepth(args) => visualize_depth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn gen_data(args: &GenData) -> Result<()> {
    let mut cfg = args.config.build()?;
    if let Some(count) = args.count {
        cfg.set("synth.scenes", &count.to_string())?;
    }
    if let Some(seed) = args.seed {
        cfg.set("train.seed", &seed.to_string())?;
    }
    cfg.apply_env()?;
    cfg.validate()?;
    let params = SynthParams::from_config(&cfg);
    let meta = synth::generate(&params, &args.out)
        .with_context(|| format!("generating dataset in {}", args.out.display()))?;
    println!(
        "wrote {} scenes ({}x{} px, {} contact classes, seed {}) to {}",
        meta.scenes,
        meta.size,
        meta.size,
        meta.classes,
        meta.seed,
        args.out.display()
    );
    Ok(())
}

/// Records how the dataset on disk was generated so the checkpoint snapshot
/// describes the data it was trained on. The metadata file wins over any
/// `synth.*` value supplied on the command line; the data already exists.
fn adopt_dataset(cfg: &mut RunConfig, meta: &DatasetMeta) -> Result<()> {
    cfg.set("synth.scenes", &meta.scenes.to_string())?;
    cfg.set("synth.size", &meta.size.to_string())?;
    cfg.set("synth.min_objects", &meta.min_objects.to_string())?;
    cfg.set("synth.max_objects", &meta.max_objects.to_string())?;
    cfg.set("synth.contact_fraction", &meta.contact_fraction.to_string())?;
    cfg.set("synth.band_radius", &meta.band_radius.to_string())?;
    cfg.set("synth.depth_tolerance", &meta.depth_tolerance.to_string())?;
    cfg.set("synth.noise", &meta.noise.to_string())?;
    cfg.set("synth.classes", &meta.classes.to_string())?;
    cfg.set("plugins.depth_scale", &meta.depth_scale.to_string())?;
    Ok(())
}

fn train_cmd(args: &Train) -> Result<()> {
    let mut cfg = args.config.build()?;
    if let Some(v) = args.steps {
        cfg.set("train.steps", &v.to_string())?;
    }
    if let Some(v) = args.lr {
        cfg.set("train.lr", &v.to_string())?;
    }
    if let Some(v) = args.batch_size {
        cfg.set("train.batch_size", &v.to_string())?;
    }
    if let Some(v) = args.seed {
        cfg.set("train.seed", &v.to_string())?;
    }
    for stage in &args.ablate {
        let key = match stage.as_str() {
            "oi" => "train.oi",
            "ipi" => "train.ipi",
            "spo" => "train.spo",
            "idsi" => "train.idsi",
            other => bail!("unknown stage {other:?}; expected oi, ipi, spo, or idsi"),
        };
        cfg.set(key, "false")?;
    }
    cfg.apply_env()?;

    let (meta, samples) = synth::load_dataset(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    adopt_dataset(&mut cfg, &meta)?;
    if meta.num_classes() > cfg.model.num_classes {
        bail!(
            "dataset uses {} classes (including background) but the model only \
             outputs {}; raise model.num_classes",
            meta.num_classes(),
            cfg.model.num_classes
        );
    }
    cfg.validate()?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating run directory {}", args.out.display()))?;
    let outcome = train::train(&cfg, &samples, &args.out, args.resume.as_deref())?;
    match outcome.final_loss {
        Some(loss) => println!(
            "trained {} steps on {} scenes; final loss {loss:.6}",
            outcome.steps_run,
            samples.len()
        ),
        None => println!("checkpoint already covers the requested steps; nothing to train"),
    }
    println!("checkpoint: {}", outcome.checkpoint.display());
    println!("loss log:   {}", outcome.loss_log.display());
    Ok(())
}

fn render_report(report: &MetricReport, step: u64, meta: &DatasetMeta) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "checkpoint step: {step}");
    let _ = writeln!(
        out,
        "dataset: {} images, {} contact classes",
        report.images, meta.classes
    );
    let metric = |name: &str, value: Option<f64>| match value {
        Some(v) => format!("{name}: {v:.4}"),
        None => format!("{name}: undefined (no contact pixels)"),
    };
    let _ = writeln!(out, "{}", metric("sc_acc", report.sc_acc));
    let _ = writeln!(out, "{}", metric("c_acc", report.c_acc));
    let _ = writeln!(out, "{}", metric("miou", report.miou));
    let _ = writeln!(out, "{}", metric("wiou", report.wiou));
    for (class, iou) in &report.per_class_iou {
        let _ = writeln!(out, "iou.class.{class}: {iou:.4}");
    }
    out
}

fn eval_cmd(args: &Eval) -> Result<()> {
    let loaded: LoadedModel = train::load_model(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let mut cfg = loaded.config;
    for pair in &args.set {
        cfg.apply_override(pair)?;
    }
    cfg.validate()?;
    let (meta, samples) = synth::load_dataset(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    if meta.num_classes() != cfg.model.num_classes {
        bail!(
            "class count mismatch: dataset has {} classes (including background) \
             but the checkpoint was trained with {}",
            meta.num_classes(),
            cfg.model.num_classes
        );
    }
    let backends = Backends::from_config(&cfg);
    let report = train::evaluate_model(&cfg, &loaded.model, &loaded.store, &samples, &backends)?;
    let text = render_report(&report, loaded.step, &meta);
    print!("{text}");
    if let Some(path) = &args.report {
        std::fs::write(path, &text)
            .with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

fn infer_cmd(args: &Infer) -> Result<()> {
    let loaded = train::load_model(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let cfg = loaded.config;
    let scale = cfg.plugins.depth_scale as f32;

    let mut image = ImageTensor::load_png(&args.image)?;
    if let Some(path) = &args.depth {
        image = image.with_depth_sidecar(DepthMap::load_png16(path, scale)?)?;
    }
    let human_free = args
        .depth_nohuman
        .as_ref()
        .map(|path| DepthMap::load_png16(path, scale))
        .transpose()?;
    let mask = BinaryMask::load_png(&args.mask)?;

    let backends = Backends::from_config(&cfg);
    let prepared = loaded
        .model
        .prepare(&image, &mask, human_free.as_ref(), &backends)?;
    let prediction = loaded
        .model
        .predict(&loaded.store, &prepared.to_model_input::<f32>())?;
    let classes = prediction.class_map();

    classes.save_png(&args.out)?;
    println!("wrote {}", args.out.display());

    if let Some(path) = &args.overlay {
        let blended = viz::overlay(&image, &classes, cfg.model.num_classes, 0.5)?;
        blended.save_png(path)?;
        println!("wrote {}", path.display());
    }
    if let Some(dir) = &args.probs {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        for k in 0..prediction.num_classes() {
            let map = prediction.data().index_axis(Axis(0), k).to_owned();
            viz::save_gray8(&map, dir.join(format!("prob_{k:02}.png")))?;
        }
        println!(
            "wrote {} probability maps to {}",
            prediction.num_classes(),
            dir.display()
        );
    }

    let total = classes.height() * classes.width();
    let contact = classes.data().iter().filter(|&&c| c != 0).count();
    println!("contact pixels: {contact} of {total}");
    Ok(())
}

fn visualize_depth(args: &VisualizeDepth) -> Result<()> {
    let mut cfg = args.config.build()?;
    cfg.apply_env()?;

    let (image, mask, human_free) = match (&args.dataset, &args.image) {
        (Some(root), None) => {
            let (meta, samples) = synth::load_dataset(root)
                .with_context(|| format!("loading dataset {}", root.display()))?;
            adopt_dataset(&mut cfg, &meta)?;
            let id = args.id.as_deref().expect("clap enforces --id with --dataset");
            let sample = samples
                .iter()
                .find(|s| s.id == id)
                .with_context(|| {
                    format!("no scene {id:?} in {} ({} scenes)", root.display(), samples.len())
                })?;
            (
                sample.image_with_depth()?,
                sample.human_mask.clone(),
                Some(sample.depth_no_human.clone()),
            )
        }
        (None, Some(path)) => {
            let scale = cfg.plugins.depth_scale as f32;
            let mut image = ImageTensor::load_png(path)?;
            if let Some(depth) = &args.depth {
                image = image.with_depth_sidecar(DepthMap::load_png16(depth, scale)?)?;
            }
            let human_free = args
                .depth_nohuman
                .as_ref()
                .map(|p| DepthMap::load_png16(p, scale))
                .transpose()?;
            let mask_path = args.mask.as_ref().expect("clap enforces --mask with --image");
            (image, BinaryMask::load_png(mask_path)?, human_free)
        }
        _ => bail!("pass either --dataset with --id, or --image with --mask"),
    };

    cfg.validate()?;
    if !cfg.train.spo {
        bail!("the position stage is disabled in this configuration; no depth to visualize");
    }

    let model = PihotModel::new(&cfg, &mut pihot_core::nn::ParamStore::<f32>::new())?;
    let backends = Backends::from_config(&cfg);
    let prepared = model.prepare(&image, &mask, human_free.as_ref(), &backends)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let scale = cfg.plugins.depth_scale as f32;
    let d_i = prepared
        .depth_image
        .as_ref()
        .expect("position stage is enabled, so depth was computed");
    let d_o = prepared
        .depth_inpainted
        .as_ref()
        .expect("position stage is enabled, so depth was computed");
    d_i.save_png16(args.out.join("d_i.png"), scale)?;
    d_o.save_png16(args.out.join("d_o.png"), scale)?;
    viz::save_gray8(prepared.position.data(), args.out.join("d_s.png"))?;
    println!("wrote d_i.png, d_o.png, d_s.png to {}", args.out.display());
    Ok(())
}
