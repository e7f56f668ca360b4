//! Command implementations behind the CLI: the training loop with logging,
//! checkpointing and resume, plus the one-shot stylize / reconstruct /
//! gradient-check / separation-score commands.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use peerstyle_core::data::{random_crop, stack_samples, ImageSample, SyntheticDataset};
use peerstyle_core::gradcheck::{loss_suite, network_suite, op_suite, CheckOutcome, GradCheckConfig};
use peerstyle_core::losses::LossReport;
use peerstyle_core::nn::Models;
use peerstyle_core::rng::{stream_from, RngStreams};
use peerstyle_core::tensor::Tensor;
use peerstyle_core::train::{lr_schedule, train_step, Optimizers, StepBatch};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{DatasetConfig, RunConfig, RunManifest};
use crate::imageio::{load_image, resize_bilinear, save_image};
use crate::{AppError, Result};

/// Images from one style-class directory, listed in name order so the same
/// seed always visits the same files.
#[derive(Debug)]
pub struct StyleFolder {
    files: Vec<PathBuf>,
}

fn list_images(dir: &Path) -> Result<StyleFolder> {
    let entries = fs::read_dir(dir)
        .map_err(|e| AppError::Config(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| AppError::io("listing images", e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if matches!(ext.as_str(), "png" | "ppm") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(AppError::Config(format!("{} holds no .png or .ppm images", dir.display())));
    }
    Ok(StyleFolder { files })
}

/// Where batches come from: the procedural desk dataset, or directories of
/// image files (index 0 content, 1.. styles, matching the class numbering).
#[derive(Debug)]
pub enum DataSource {
    Synthetic { set: SyntheticDataset, crop: usize },
    Folders { classes: Vec<StyleFolder>, crop: usize },
}

impl DataSource {
    pub fn from_config(cfg: &RunConfig) -> Result<DataSource> {
        let crop = cfg.train.crop_size;
        match &cfg.dataset {
            DatasetConfig::Synthetic { image_size } => {
                let mut set = SyntheticDataset::desk_default();
                set.image_size = *image_size;
                Ok(DataSource::Synthetic { set, crop })
            }
            DatasetConfig::Folders { content_dir, style_dirs } => {
                let mut classes = vec![list_images(Path::new(content_dir))?];
                for dir in style_dirs {
                    classes.push(list_images(Path::new(dir))?);
                }
                Ok(DataSource::Folders { classes, crop })
            }
        }
    }

    pub fn num_style_classes(&self) -> usize {
        match self {
            DataSource::Synthetic { set, .. } => set.styles.len(),
            DataSource::Folders { classes, .. } => classes.len() - 1,
        }
    }

    /// One image of `class`, already cropped to training size.
    pub fn sample(&self, class: usize, rng: &mut ChaCha12Rng) -> Result<ImageSample> {
        match self {
            DataSource::Synthetic { set, crop } => {
                let full = set.sample(class, rng)?;
                if full.height() == *crop && full.width() == *crop {
                    Ok(full)
                } else {
                    Ok(random_crop(&full, *crop, rng)?)
                }
            }
            DataSource::Folders { classes, crop } => {
                let folder = classes.get(class).ok_or_else(|| {
                    AppError::Runtime(format!("class {class} out of range"))
                })?;
                let path = &folder.files[rng.random_range(0..folder.files.len())];
                let loaded = load_image(path)?;
                let sized = fit_for_crop(&loaded, *crop, class)?;
                Ok(random_crop(&sized, *crop, rng)?)
            }
        }
    }

    /// One training batch, drawing in a fixed order: style class first, then
    /// the four image slots. At native synthetic size this defers to the
    /// dataset itself, so the stream stays compatible with its contract.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut ChaCha12Rng) -> Result<StepBatch> {
        if let DataSource::Synthetic { set, crop } = self {
            if set.image_size == *crop {
                return Ok(set.sample_batch(batch_size, rng)?);
            }
        }
        let styles = self.num_style_classes();
        if styles == 0 {
            return Err(AppError::Config(String::from("no style classes configured")));
        }
        let style_class = 1 + rng.random_range(0..styles);
        let draw = |class: usize, rng: &mut ChaCha12Rng| -> Result<Tensor> {
            let samples: Vec<ImageSample> =
                (0..batch_size).map(|_| self.sample(class, rng)).collect::<Result<_>>()?;
            Ok(stack_samples(&samples)?)
        };
        Ok(StepBatch {
            x_i: draw(0, rng)?,
            x_i2: draw(0, rng)?,
            x_t: draw(style_class, rng)?,
            x_t2: draw(style_class, rng)?,
            style_class,
        })
    }
}

/// Upscale an image whose short side is below the crop size, keeping aspect
/// ratio and rounding both sides up to the next multiple of four.
fn fit_for_crop(sample: &ImageSample, crop: usize, class: usize) -> Result<ImageSample> {
    let (h, w) = (sample.height(), sample.width());
    if h >= crop && w >= crop {
        return Ok(ImageSample::new(sample.pixels.clone(), class, sample.source.clone())?);
    }
    let scale = crop as f64 / h.min(w) as f64;
    let round4 = |x: f64| -> usize { (((x.ceil() as usize) + 3) / 4 * 4).max(crop) };
    let pixels = resize_bilinear(&sample.pixels, round4(h as f64 * scale), round4(w as f64 * scale))?;
    Ok(ImageSample::new(pixels, class, sample.source.clone())?)
}

/// What one `train` invocation did.
#[derive(Debug)]
pub struct TrainSummary {
    /// Global step count before this invocation.
    pub start_step: u64,
    /// Global step count after it.
    pub end_step: u64,
    /// Steps in the whole schedule (epochs × steps per epoch).
    pub total_steps: u64,
    pub reports: Vec<LossReport>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Run (or continue) training, writing the manifest, a CSV row per step, and
/// a checkpoint at every epoch boundary and at the end of the invocation.
pub fn run_train(
    cfg: &RunConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    step_cap: Option<u64>,
    quiet: bool,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let train = &cfg.train;
    let data = DataSource::from_config(cfg)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| AppError::io(&format!("creating {}", out_dir.display()), e))?;

    let (models, mut optimizers, mut streams, start_step) = match resume {
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            if ckpt.train != *train {
                return Err(AppError::Config(format!(
                    "checkpoint {} was written under a different training configuration",
                    path.display()
                )));
            }
            let models = ckpt.build_models()?;
            let optimizers = ckpt.build_optimizers(&models)?;
            let streams = ckpt.build_streams()?;
            (models, optimizers, streams, ckpt.step)
        }
        None => {
            let models = Models::init(&train.net, train.seed)?;
            let optimizers = Optimizers::new(&models, train.learning_rate);
            (models, optimizers, RngStreams::new(train.seed), 0)
        }
    };

    let steps_per_epoch = train.steps_per_epoch() as u64;
    let total_steps = steps_per_epoch * train.epochs as u64;
    let end_step = match step_cap {
        Some(cap) => total_steps.min(start_step + cap),
        None => total_steps,
    };

    RunManifest::new(cfg).save(&out_dir.join("manifest.toml"))?;
    let log_path = out_dir.join("train_log.csv");
    let fresh_log = start_step == 0 || !log_path.exists();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| AppError::io(&format!("opening {}", log_path.display()), e))?;
    if fresh_log {
        writeln!(log, "step,epoch,lr,{}", LossReport::csv_header())
            .map_err(|e| AppError::io("writing log header", e))?;
    }

    let checkpoint_path = out_dir.join("checkpoint.bin");
    let mut reports = Vec::with_capacity((end_step - start_step) as usize);
    for step in start_step..end_step {
        let epoch = (step / steps_per_epoch) as usize;
        optimizers.set_learning_rate(lr_schedule(epoch, train));
        let batch = data.sample_batch(train.batch_size, &mut streams.data)?;
        let report = train_step(&models, &batch, &mut optimizers, train, &mut streams, step)?;
        writeln!(
            log,
            "{},{},{},{}",
            step + 1,
            epoch,
            lr_schedule(epoch, train),
            report.to_csv_row()
        )
        .map_err(|e| AppError::io("writing log row", e))?;
        let done = step + 1;
        if done % steps_per_epoch == 0 || done == end_step {
            checkpoint::save(&checkpoint_path, &models, &optimizers, &streams, train, done)?;
        }
        if !quiet && (done % cfg.log_every as u64 == 0 || done == end_step) {
            println!(
                "step {done}/{total_steps} epoch {epoch} aux {:.4} main {:.4} disc {:.4}",
                report.aux_total, report.main_total, report.disc_total
            );
        }
        reports.push(report);
    }

    Ok(TrainSummary { start_step, end_step, total_steps, reports, checkpoint_path, log_path })
}

fn eval_models(ckpt: &Checkpoint) -> Result<Models> {
    let models = ckpt.build_models()?;
    // Inference builds no tape and runs no dropout or noise.
    models.set_all_trainable(false);
    Ok(models)
}

/// Encode content and style images, recombine, and decode with the main
/// decoder — the forward stylization path, deterministic end to end.
pub fn run_stylize(
    checkpoint_path: &Path,
    content_path: &Path,
    style_path: &Path,
    out_path: &Path,
) -> Result<()> {
    let models = eval_models(&checkpoint::load(checkpoint_path)?)?;
    let content = load_image(content_path)?;
    let style = load_image(style_path)?;
    let z_c = models.encode(&content.batched()?)?;
    let z_s = models.encode(&style.batched()?)?;
    // Eval mode draws nothing from the stream; it exists to satisfy the API.
    let mut rng = stream_from(0, "stylize");
    let fused = models.tpfr.forward(&z_c, &z_s, false, &mut rng)?;
    let image = models.decode_main(&fused)?;
    save_image(&image, out_path)
}

/// Self-transfer reconstruction with optional zeroing of the content or
/// style part of the recombined code before decoding.
pub fn run_reconstruct(
    checkpoint_path: &Path,
    image_path: &Path,
    out_path: &Path,
    zero_content: bool,
    zero_style: bool,
) -> Result<()> {
    let models = eval_models(&checkpoint::load(checkpoint_path)?)?;
    let input = load_image(image_path)?;
    let z = models.encode(&input.batched()?)?;
    let mut rng = stream_from(0, "reconstruct");
    let mut fused = models.tpfr.forward(&z, &z, false, &mut rng)?;
    if zero_content {
        fused = fused.zero_content();
    }
    if zero_style {
        fused = fused.zero_style();
    }
    let image = models.decode_main(&fused)?;
    save_image(&image, out_path)
}

/// Which finite-difference suites to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradScope {
    Op,
    Network,
    Loss,
    All,
}

/// Run the requested gradient-check suites, print one line per item, and
/// report whether everything passed.
pub fn run_gradcheck(scope: GradScope, quiet: bool) -> Result<bool> {
    let cfg = GradCheckConfig::default();
    let mut outcomes: Vec<CheckOutcome> = Vec::new();
    if matches!(scope, GradScope::Op | GradScope::All) {
        outcomes.extend(op_suite(&cfg)?);
    }
    if matches!(scope, GradScope::Network | GradScope::All) {
        outcomes.extend(network_suite(&cfg)?);
    }
    if matches!(scope, GradScope::Loss | GradScope::All) {
        outcomes.extend(loss_suite(&cfg)?);
    }
    let mut all_ok = true;
    for o in &outcomes {
        let ok = o.passed(&cfg);
        all_ok &= ok;
        if !quiet {
            println!(
                "{} {:<28} max_rel_err {:.3e} over {} elements ({})",
                if ok { "ok  " } else { "FAIL" },
                o.name,
                o.max_rel_err,
                o.elements,
                o.worst
            );
        }
    }
    Ok(all_ok)
}

/// Mean intra-class and inter-class style-code distances over freshly drawn
/// samples. Without a checkpoint this scores the untrained network.
pub fn run_eval_separation(
    cfg: &RunConfig,
    checkpoint_path: Option<&Path>,
    samples_per_class: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if samples_per_class < 2 {
        return Err(AppError::Config(String::from("need at least 2 samples per class")));
    }
    let models = match checkpoint_path {
        Some(path) => eval_models(&checkpoint::load(path)?)?,
        None => {
            let m = Models::init(&cfg.train.net, cfg.train.seed)?;
            m.set_all_trainable(false);
            m
        }
    };
    let data = DataSource::from_config(cfg)?;
    let mut rng = stream_from(seed, "eval-separation");
    let mut samples = Vec::new();
    for class in 1..=data.num_style_classes() {
        for _ in 0..samples_per_class {
            samples.push(data.sample(class, &mut rng)?);
        }
    }
    Ok(peerstyle_core::train::eval_style_separation(&models, &samples)?)
}
