//! The interleaved three-way optimization: per batch, an auxiliary step
//! (encoder + auxiliary decoder), a main step (main decoder + attention
//! heads), and a discriminator step — in that fixed order, each updating
//! only its own parameter group while treating the rest as constants.
//!
//! Gradients may *flow through* frozen networks (the auxiliary step
//! backpropagates through the frozen main decoder into the encoder, for
//! example); frozen parameters simply receive no update. Every random draw
//! comes from one of three named streams (data, dropout, noise), so a run is
//! a pure function of its seed.

use crate::adam::AdamState;
use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::losses::{
    aux_total_loss, content_cycle_loss, identity_loss, latent_cycle_from, main_total_loss,
    ragan_disc_loss, ragan_gen_loss, style_distance, style_metric_loss, transfer_cycle_from,
    LossReport,
};
use crate::nn::{Models, NetConfig, Role};
use crate::rng::RngStreams;
use crate::tensor::Tensor;
use alloc::string::String;
use alloc::vec::Vec;

/// Numeric knobs of one training run. File locations (dataset, checkpoints,
/// logs) live with the front end; everything here is what the math needs.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default = "TrainConfig::desk"))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epoch at which the linear learning-rate decay begins.
    pub decay_start_epoch: usize,
    /// Weight of the reconstruction identity terms.
    pub lambda_idt: f64,
    /// Margin of the style-clustering loss.
    pub margin_mu: f64,
    /// Images visited per epoch (batches per epoch = this / batch_size).
    pub photos_per_epoch: usize,
    pub crop_size: usize,
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    /// Full-scale defaults: learning rate 4e-4, batch size 2, 200 epochs
    /// with linear decay starting at epoch 50, identity weight 25, margin 1,
    /// 6144 images per epoch at 256x256.
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 4e-4,
            batch_size: 2,
            epochs: 200,
            decay_start_epoch: 50,
            lambda_idt: 25.0,
            margin_mu: 1.0,
            photos_per_epoch: 6144,
            crop_size: 256,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset matching [`NetConfig::desk`]: 32x32 crops and short
    /// epochs, sized for CPU smoke runs.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            decay_start_epoch: 5,
            photos_per_epoch: 64,
            crop_size: 32,
            net: NetConfig::desk(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(alloc::format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("photos_per_epoch", self.photos_per_epoch),
        ] {
            if v == 0 {
                return Err(Error::Config(alloc::format!("{name} must be at least 1")));
            }
        }
        if self.decay_start_epoch > self.epochs {
            return Err(Error::Config(alloc::format!(
                "decay_start_epoch ({}) must not exceed epochs ({})",
                self.decay_start_epoch, self.epochs
            )));
        }
        if !(self.lambda_idt >= 0.0) || !(self.margin_mu >= 0.0) {
            return Err(Error::Config(String::from(
                "lambda_idt and margin_mu must be non-negative",
            )));
        }
        if self.crop_size == 0 || self.crop_size % 4 != 0 {
            return Err(Error::Config(alloc::format!(
                "crop_size must be a positive multiple of 4, got {}",
                self.crop_size
            )));
        }
        Ok(())
    }

    /// Batches per epoch implied by `photos_per_epoch`.
    pub fn steps_per_epoch(&self) -> usize {
        (self.photos_per_epoch / self.batch_size).max(1)
    }
}

/// One training batch: two same-class content draws and two draws from a
/// single style class, each `[B, 3, H, W]`.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub x_i: Tensor,
    pub x_i2: Tensor,
    pub x_t: Tensor,
    pub x_t2: Tensor,
    /// Which style class the target images came from.
    pub style_class: usize,
}

impl StepBatch {
    pub fn validate(&self) -> Result<()> {
        let shape = self.x_i.shape();
        if shape.len() != 4 {
            return Err(Error::shape(
                "step_batch",
                alloc::format!("expected [batch, ch, h, w] images, got {shape:?}"),
            ));
        }
        for (name, t) in [("x_i2", &self.x_i2), ("x_t", &self.x_t), ("x_t2", &self.x_t2)] {
            if t.shape() != shape {
                return Err(Error::shape(
                    "step_batch",
                    alloc::format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// One optimizer per parameter group.
pub struct Optimizers {
    pub aux: AdamState,
    pub main: AdamState,
    pub disc: AdamState,
}

impl Optimizers {
    pub fn new(models: &Models, learning_rate: f64) -> Optimizers {
        Optimizers {
            aux: AdamState::new(learning_rate, &models.group(Role::Auxiliary)),
            main: AdamState::new(learning_rate, &models.group(Role::Main)),
            disc: AdamState::new(learning_rate, &models.group(Role::Discriminator)),
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.aux.learning_rate = lr;
        self.main.learning_rate = lr;
        self.disc.learning_rate = lr;
    }
}

/// Learning rate at `epoch`: constant until `decay_start_epoch`, then linear
/// to zero at `epochs`. Continuous and non-increasing.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.decay_start_epoch {
        cfg.learning_rate
    } else if epoch >= cfg.epochs {
        0.0
    } else {
        let remaining = (cfg.epochs - epoch) as f64;
        let span = (cfg.epochs - cfg.decay_start_epoch) as f64;
        // Dividing first makes the decay-start boundary exact (x/x = 1) and
        // keeps the sequence non-increasing under rounding.
        cfg.learning_rate * (remaining / span)
    }
}

fn finite(component: &'static str, value: &Tensor, step: u64) -> Result<f64> {
    let v = value.item()?;
    if !v.is_finite() {
        return Err(Error::NonFiniteLoss { component: String::from(component), step });
    }
    Ok(v)
}

/// Auxiliary sub-step: encode all four batch images, minimize the content
/// cycle + style clustering + latent cycle + weighted reconstruction
/// identity, and update encoder + auxiliary decoder. The main decoder and
/// attention heads participate in the forward pass but stay fixed.
pub fn aux_step(
    models: &Models,
    batch: &StepBatch,
    optimizers: &mut Optimizers,
    cfg: &TrainConfig,
    streams: &mut RngStreams,
    step: u64,
) -> Result<LossReport> {
    models.set_all_trainable(false);
    models.set_trainable(Role::Auxiliary, true);
    let z_i1 = models.encode(&batch.x_i)?;
    let z_i2 = models.encode(&batch.x_i2)?;
    let z_t1 = models.encode(&batch.x_t)?;
    let z_t2 = models.encode(&batch.x_t2)?;

    let z_cont = content_cycle_loss(models, &z_i1, &z_t1, true, &mut streams.dropout)?;
    let style = style_metric_loss(&z_i1, &z_i2, &z_t1, &z_t2, cfg.margin_mu)?;
    let recon_i = models.decode_aux(&z_i1)?;
    let recon_t = models.decode_aux(&z_t1)?;
    let aux_idt = identity_loss(&batch.x_i, &recon_i, &batch.x_t, &recon_t)?;
    let aux_z_cycle = latent_cycle_from(models, &recon_i, &z_i1, &recon_t, &z_t1)?;
    let total = aux_total_loss(&z_cont, &style.total, &aux_z_cycle, &aux_idt, cfg.lambda_idt)?;

    let report = LossReport {
        z_cont: finite("z_cont", &z_cont, step)?,
        z_style_pos: finite("z_style_pos", &style.pos, step)?,
        z_style_neg: finite("z_style_neg", &style.neg, step)?,
        z_style: finite("z_style", &style.total, step)?,
        aux_idt: finite("aux_idt", &aux_idt, step)?,
        aux_z_cycle: finite("aux_z_cycle", &aux_z_cycle, step)?,
        aux_total: finite("aux_total", &total, step)?,
        ..LossReport::default()
    };
    total.backward()?;
    optimizers.aux.step(&models.group(Role::Auxiliary))?;
    Ok(report)
}

/// Main sub-step: transfer the target's style onto the input, score the
/// result adversarially, close the transfer cycle in latent space, and hold
/// self-transfer to the identity. Updates main decoder + attention heads
/// with the encoder and discriminator fixed. Returns the stylized image for
/// the discriminator step.
pub fn main_step(
    models: &Models,
    batch: &StepBatch,
    optimizers: &mut Optimizers,
    cfg: &TrainConfig,
    streams: &mut RngStreams,
    step: u64,
) -> Result<(LossReport, Tensor)> {
    models.set_all_trainable(false);
    models.set_trainable(Role::Main, true);
    // The frozen encoder builds no tape here, so these codes are constants.
    let z_i = models.encode(&batch.x_i)?;
    let z_t = models.encode(&batch.x_t)?;

    let fused = models.tpfr.forward(&z_i, &z_t, true, &mut streams.dropout)?;
    let x_f = models.decode_main(&fused)?;
    let real = models.discriminate(&batch.x_t2, &batch.x_t, true, &mut streams.noise)?;
    let fake = models.discriminate(&x_f, &batch.x_t, true, &mut streams.noise)?;
    let gen = ragan_gen_loss(&real, &fake)?;

    let z_transf = transfer_cycle_from(&models.encode(&x_f)?, &z_i, &z_t)?;
    let self_i = models.decode_main(&models.tpfr.forward(&z_i, &z_i, true, &mut streams.dropout)?)?;
    let self_t = models.decode_main(&models.tpfr.forward(&z_t, &z_t, true, &mut streams.dropout)?)?;
    let main_idt = identity_loss(&batch.x_i, &self_i, &batch.x_t, &self_t)?;
    let total = main_total_loss(&gen, &z_transf, &main_idt, cfg.lambda_idt)?;

    let report = LossReport {
        gen: finite("gen", &gen, step)?,
        z_transf: finite("z_transf", &z_transf, step)?,
        main_idt: finite("main_idt", &main_idt, step)?,
        main_total: finite("main_total", &total, step)?,
        ..LossReport::default()
    };
    total.backward()?;
    optimizers.main.step(&models.group(Role::Main))?;
    Ok((report, x_f))
}

/// Discriminator sub-step: real pair = two paintings of one style class,
/// fake pair = the detached stylized image against its conditioning style
/// image.
pub fn disc_step(
    models: &Models,
    batch: &StepBatch,
    stylized: &Tensor,
    optimizers: &mut Optimizers,
    streams: &mut RngStreams,
    step: u64,
) -> Result<f64> {
    models.set_all_trainable(false);
    models.set_trainable(Role::Discriminator, true);
    let fake_image = stylized.detach();
    let real = models.discriminate(&batch.x_t2, &batch.x_t, true, &mut streams.noise)?;
    let fake = models.discriminate(&fake_image, &batch.x_t, true, &mut streams.noise)?;
    let total = ragan_disc_loss(&real, &fake)?;
    let value = finite("disc_total", &total, step)?;
    total.backward()?;
    optimizers.disc.step(&models.group(Role::Discriminator))?;
    Ok(value)
}

/// One full training step: auxiliary, main, and discriminator sub-steps in
/// order. Fails fast with the name of the first non-finite loss component.
pub fn train_step(
    models: &Models,
    batch: &StepBatch,
    optimizers: &mut Optimizers,
    cfg: &TrainConfig,
    streams: &mut RngStreams,
    step: u64,
) -> Result<LossReport> {
    batch.validate()?;
    let aux = aux_step(models, batch, optimizers, cfg, streams, step)?;
    let (main, stylized) = main_step(models, batch, optimizers, cfg, streams, step)?;
    let disc_total = disc_step(models, batch, &stylized, optimizers, streams, step)?;
    models.set_all_trainable(true);
    let report = LossReport {
        gen: main.gen,
        z_transf: main.z_transf,
        main_idt: main.main_idt,
        main_total: main.main_total,
        disc_total,
        ..aux
    };
    report.validate(cfg.lambda_idt, cfg.margin_mu)?;
    Ok(report)
}

/// Mean intra-class and inter-class style-code distances over a sample set.
/// A style-separated latent space shows inter well above intra.
pub fn eval_style_separation(models: &Models, samples: &[ImageSample]) -> Result<(f64, f64)> {
    models.set_all_trainable(false);
    let result = style_separation_inner(models, samples);
    models.set_all_trainable(true);
    result
}

fn style_separation_inner(models: &Models, samples: &[ImageSample]) -> Result<(f64, f64)> {
    let mut codes = Vec::with_capacity(samples.len());
    for s in samples {
        codes.push((s.class_id, models.encode(&s.batched()?)?));
    }
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let d = style_distance(&codes[i].1, &codes[j].1)?.item()?;
            if codes[i].0 == codes[j].0 {
                intra = (intra.0 + d, intra.1 + 1);
            } else {
                inter = (inter.0 + d, inter.1 + 1);
            }
        }
    }
    if intra.1 == 0 || inter.1 == 0 {
        return Err(Error::arg(
            "eval_style_separation",
            "need at least two classes with two samples each",
        ));
    }
    Ok((intra.0 / intra.1 as f64, inter.0 / inter.1 as f64))
}
