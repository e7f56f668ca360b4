//! Training objectives: the smooth-L1 latent distance, the latent-space
//! cycle and style-clustering losses, the image reconstruction identities,
//! and the relativistic least-squares GAN pair.
//!
//! Everything returns a scalar tensor on the gradient tape; the numeric
//! values land in a [`LossReport`] for logging. No pre-trained perceptual
//! network is involved anywhere — all supervision lives in latent space, in
//! pixel space, or in the discriminator.

use crate::error::{Error, Result};
use crate::nn::{LatentCode, Models};
use crate::tensor::Tensor;
use alloc::string::String;
use rand::Rng;

/// Smooth-L1 distance between two feature maps, averaged over batch and
/// spatial extent but summed over channels: `(1/(B*W*H)) sum rho(d)` with
/// `rho(d) = 0.5 d^2` for `|d| < 1` and `|d| - 0.5` beyond. The quadratic
/// bowl keeps gradients bounded for large residuals while staying smooth at
/// the junction.
pub fn smooth_l1(z1: &Tensor, z2: &Tensor) -> Result<Tensor> {
    let s1 = z1.shape();
    let s2 = z2.shape();
    if s1 != s2 {
        return Err(Error::shape(
            "smooth_l1",
            alloc::format!("operands must match exactly, got {s1:?} and {s2:?}"),
        ));
    }
    if s1.len() != 4 {
        return Err(Error::shape(
            "smooth_l1",
            alloc::format!("expected [batch, ch, h, w] feature maps, got {s1:?}"),
        ));
    }
    let scale = 1.0 / (s1[0] * s1[2] * s1[3]) as f64;
    z1.sub(z2)?.huber()?.sum_all()?.mul_scalar(scale)
}

/// Distance over the full latent code: content, local style, and global
/// style terms summed (each normalized over its own extent).
pub fn latent_distance(a: &LatentCode, b: &LatentCode) -> Result<Tensor> {
    let cont = smooth_l1(&a.content, &b.content)?;
    cont.add(&style_distance(a, b)?)
}

/// Distance over the style part only: the local map and the 1x1 global
/// vector have incompatible extents, so their smooth-L1 terms are summed.
pub fn style_distance(a: &LatentCode, b: &LatentCode) -> Result<Tensor> {
    let local = smooth_l1(&a.style_local, &b.style_local)?;
    local.add(&smooth_l1(&a.style_global, &b.style_global)?)
}

/// The style-clustering loss split into its logged parts.
pub struct StyleMetricParts {
    /// Intra-class style distances (same-class pairs pulled together).
    pub pos: Tensor,
    /// Cross-class style distances (pushed apart up to the margin).
    pub neg: Tensor,
    /// `pos + max(0, margin - neg)`.
    pub total: Tensor,
}

/// Margin-based clustering of style codes: `z_i1`/`z_i2` share one style
/// class and `z_t1`/`z_t2` share another. Same-class style distances are
/// minimized; cross-class distances only matter while they are still inside
/// the margin.
pub fn style_metric_loss(
    z_i1: &LatentCode,
    z_i2: &LatentCode,
    z_t1: &LatentCode,
    z_t2: &LatentCode,
    margin: f64,
) -> Result<StyleMetricParts> {
    let pos = style_distance(z_i1, z_i2)?.add(&style_distance(z_t1, z_t2)?)?;
    let neg = style_distance(z_i1, z_t1)?.add(&style_distance(z_i2, z_t2)?)?;
    let hinge = neg.neg()?.add_scalar(margin)?.max_with_scalar(0.0)?;
    let total = pos.add(&hinge)?;
    Ok(StyleMetricParts { pos, neg, total })
}

/// Reconstruction identity over a pair of images with precomputed
/// reconstructions: `f[recon_i - x_i] + f[recon_t - x_t]`.
pub fn identity_loss(x_i: &Tensor, recon_i: &Tensor, x_t: &Tensor, recon_t: &Tensor) -> Result<Tensor> {
    smooth_l1(recon_i, x_i)?.add(&smooth_l1(recon_t, x_t)?)
}

/// Content preservation through transfer: the content code must survive a
/// full transfer-decode-encode round trip, both for a real target style and
/// for the degenerate self-transfer.
pub fn content_cycle_loss<R: Rng>(
    models: &Models,
    z_i: &LatentCode,
    z_t: &LatentCode,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let styled = models.encode(&models.decode_main(&models.tpfr.forward(z_i, z_t, training, rng)?)?)?;
    let kept = models.encode(&models.decode_main(&models.tpfr.forward(z_i, z_i, training, rng)?)?)?;
    let a = smooth_l1(&styled.content, &z_i.content)?;
    a.add(&smooth_l1(&kept.content, &z_i.content)?)
}

/// Latent codes must survive an auxiliary decode-encode round trip, given
/// the already decoded reconstructions of both inputs.
pub fn latent_cycle_from(
    models: &Models,
    recon_i: &Tensor,
    z_i: &LatentCode,
    recon_t: &Tensor,
    z_t: &LatentCode,
) -> Result<Tensor> {
    let cycle_i = latent_distance(&models.encode(recon_i)?, z_i)?;
    cycle_i.add(&latent_distance(&models.encode(recon_t)?, z_t)?)
}

/// [`latent_cycle_from`] with the auxiliary reconstructions computed here.
pub fn latent_cycle_loss(models: &Models, z_i: &LatentCode, z_t: &LatentCode) -> Result<Tensor> {
    let recon_i = models.decode_aux(z_i)?;
    let recon_t = models.decode_aux(z_t)?;
    latent_cycle_from(models, &recon_i, z_i, &recon_t, z_t)
}

/// Transfer cycle over an already re-encoded stylized image `e_f`: its
/// content must match the input's content code and its style must match the
/// target's style code.
pub fn transfer_cycle_from(e_f: &LatentCode, z_i: &LatentCode, z_t: &LatentCode) -> Result<Tensor> {
    let cont = smooth_l1(&e_f.content, &z_i.content)?;
    cont.add(&style_distance(e_f, z_t)?)
}

/// [`transfer_cycle_from`] with the stylized image produced internally.
pub fn transfer_cycle_loss<R: Rng>(
    models: &Models,
    z_i: &LatentCode,
    z_t: &LatentCode,
    training: bool,
    rng: &mut R,
) -> Result<Tensor> {
    let x_f = models.decode_main(&models.tpfr.forward(z_i, z_t, training, rng)?)?;
    transfer_cycle_from(&models.encode(&x_f)?, z_i, z_t)
}

fn check_scores(op: &'static str, real: &Tensor, fake: &Tensor) -> Result<()> {
    if real.numel() == 0 || fake.numel() == 0 {
        return Err(Error::arg(op, "score batches must be non-empty"));
    }
    Ok(())
}

/// `mean[(a - mean(b) + shift)^2]` — one half of a relativistic pair.
/// Expectations run over batch and spatial positions jointly.
fn relativistic(a: &Tensor, b: &Tensor, shift: f64) -> Result<Tensor> {
    a.sub(&b.mean_all()?)?.add_scalar(shift)?.square()?.mean_all()
}

/// Relativistic least-squares loss for the generator: pushes fake scores
/// one unit above the average real score and vice versa. Only score
/// differences enter, so adding a constant to every score changes nothing.
pub fn ragan_gen_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    check_scores("ragan_gen_loss", real_scores, fake_scores)?;
    let a = relativistic(real_scores, fake_scores, 1.0)?;
    a.add(&relativistic(fake_scores, real_scores, -1.0)?)
}

/// Relativistic least-squares loss for the discriminator: mirror image of
/// [`ragan_gen_loss`] with the score roles swapped.
pub fn ragan_disc_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    check_scores("ragan_disc_loss", real_scores, fake_scores)?;
    let a = relativistic(real_scores, fake_scores, -1.0)?;
    a.add(&relativistic(fake_scores, real_scores, 1.0)?)
}

/// Total auxiliary objective: content cycle + style clustering + latent
/// cycle + `lambda` times the reconstruction identity.
pub fn aux_total_loss(
    z_cont: &Tensor,
    z_style: &Tensor,
    aux_z_cycle: &Tensor,
    aux_idt: &Tensor,
    lambda: f64,
) -> Result<Tensor> {
    z_cont.add(z_style)?.add(aux_z_cycle)?.add(&aux_idt.mul_scalar(lambda)?)
}

/// Total main-decoder objective: adversarial + transfer cycle + `lambda`
/// times the self-transfer identity.
pub fn main_total_loss(gen: &Tensor, z_transf: &Tensor, main_idt: &Tensor, lambda: f64) -> Result<Tensor> {
    gen.add(z_transf)?.add(&main_idt.mul_scalar(lambda)?)
}

/// Every loss component of one training step, as plain numbers for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub z_cont: f64,
    pub z_style_pos: f64,
    pub z_style_neg: f64,
    pub z_style: f64,
    pub aux_idt: f64,
    pub aux_z_cycle: f64,
    pub aux_total: f64,
    pub gen: f64,
    pub z_transf: f64,
    pub main_idt: f64,
    pub main_total: f64,
    pub disc_total: f64,
}

impl LossReport {
    /// Combined objective across all three parameter groups.
    pub fn grand_total(&self) -> f64 {
        self.aux_total + self.main_total + self.disc_total
    }

    /// Check that every component is finite and that the stored totals agree
    /// with their definitions to 1e-10.
    pub fn validate(&self, lambda: f64, margin: f64) -> Result<()> {
        for (name, v) in self.fields() {
            if !v.is_finite() {
                return Err(Error::Config(alloc::format!("loss component {name} is not finite: {v}")));
            }
        }
        let style = self.z_style_pos + (margin - self.z_style_neg).max(0.0);
        let aux = self.z_cont + self.z_style + self.aux_z_cycle + lambda * self.aux_idt;
        let main = self.gen + self.z_transf + lambda * self.main_idt;
        for (name, stored, expect) in [
            ("z_style", self.z_style, style),
            ("aux_total", self.aux_total, aux),
            ("main_total", self.main_total, main),
        ] {
            if (stored - expect).abs() > 1e-10 {
                return Err(Error::Config(alloc::format!(
                    "{name} is {stored} but its components sum to {expect}"
                )));
            }
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, f64); 12] {
        [
            ("z_cont", self.z_cont),
            ("z_style_pos", self.z_style_pos),
            ("z_style_neg", self.z_style_neg),
            ("z_style", self.z_style),
            ("aux_idt", self.aux_idt),
            ("aux_z_cycle", self.aux_z_cycle),
            ("aux_total", self.aux_total),
            ("gen", self.gen),
            ("z_transf", self.z_transf),
            ("main_idt", self.main_idt),
            ("main_total", self.main_total),
            ("disc_total", self.disc_total),
        ]
    }

    /// Column names matching [`LossReport::to_csv_row`].
    pub fn csv_header() -> &'static str {
        "z_cont,z_style_pos,z_style_neg,z_style,aux_idt,aux_z_cycle,aux_total,gen,z_transf,main_idt,main_total,disc_total"
    }

    /// One comma-separated row; floats print with shortest round-trip form.
    pub fn to_csv_row(&self) -> String {
        let f = self.fields();
        let mut row = String::new();
        for (i, (_, v)) in f.iter().enumerate() {
            if i > 0 {
                row.push(',');
            }
            row.push_str(&alloc::format!("{v}"));
        }
        row
    }
}
