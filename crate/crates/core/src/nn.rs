//! The four networks: encoder (with the global-style sub-network), auxiliary
//! and main decoders, and the conditional patch discriminator.
//!
//! Architecture (Johnson-style, widths configurable through [`NetConfig`]):
//!
//! * Encoder: 7x7 stride-1 ingress conv, two 3x3 stride-2 downsampling convs,
//!   then `n_resnet_blocks` residual blocks at the full trunk width. The
//!   trunk splits channel-wise into content, local style, and a global-style
//!   tail that a small sub-network collapses to one value per feature map.
//! * Decoders: residual blocks at trunk width, two 4x4 stride-2 transposed
//!   convs, a 7x7 egress conv, TanH. The auxiliary decoder copies the main
//!   decoder's architecture but never shares parameters.
//! * Discriminator: two 4x4 stride-2 convs with LeakyReLU (instance norm on
//!   the second only) over the channel-concatenated (candidate, condition)
//!   pair, then a 3x3 conv to a 1-channel score map at 1/4 resolution. No
//!   output sigmoid; in training mode independent Gaussian noise is added to
//!   each input first.
//!
//! All conv weights initialize from N(0, 0.02), biases zero, norm scales one.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tpfr::TpfrModule;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

/// Epsilon inside instance normalization.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;
/// Standard deviation for conv weight initialization.
pub const WEIGHT_INIT_STD: f64 = 0.02;
/// Negative slope of the discriminator's LeakyReLU units.
pub const DISC_LRELU_SLOPE: f64 = 0.2;

/// Width and behavior knobs for all networks.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default = "NetConfig::desk"))]
pub struct NetConfig {
    pub image_channels: usize,
    /// Width of the first encoder layer; the second runs at twice this.
    pub base_width: usize,
    pub content_channels: usize,
    pub style_local_channels: usize,
    pub style_global_channels: usize,
    pub n_resnet_blocks: usize,
    pub k_neighbors: usize,
    pub attention_dropout: f64,
    pub discriminator_noise_sigma: f64,
}

impl Default for NetConfig {
    /// Full-scale defaults: 256/256/256 latent split, K=5 neighbors,
    /// attention dropout 0.2, discriminator noise sigma 0.1.
    fn default() -> NetConfig {
        NetConfig {
            image_channels: 3,
            base_width: 64,
            content_channels: 256,
            style_local_channels: 256,
            style_global_channels: 256,
            n_resnet_blocks: 4,
            k_neighbors: 5,
            attention_dropout: 0.2,
            discriminator_noise_sigma: 0.1,
        }
    }
}

impl NetConfig {
    /// Desk-scale preset used by the smoke tests: 16/16/16 latent split,
    /// K=3, sized for 32x32 images on a CPU.
    pub fn desk() -> NetConfig {
        NetConfig {
            image_channels: 3,
            base_width: 16,
            content_channels: 16,
            style_local_channels: 16,
            style_global_channels: 16,
            n_resnet_blocks: 2,
            k_neighbors: 3,
            attention_dropout: 0.2,
            discriminator_noise_sigma: 0.1,
        }
    }

    /// Total trunk width: content + local style + global-style tail.
    pub fn trunk_channels(&self) -> usize {
        self.content_channels + self.style_local_channels + self.style_global_channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_channels", self.image_channels),
            ("base_width", self.base_width),
            ("content_channels", self.content_channels),
            ("style_local_channels", self.style_local_channels),
            ("style_global_channels", self.style_global_channels),
            ("k_neighbors", self.k_neighbors),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(alloc::format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.attention_dropout) {
            return Err(Error::Config(alloc::format!(
                "attention_dropout must be in [0, 1), got {}",
                self.attention_dropout
            )));
        }
        if !(self.discriminator_noise_sigma >= 0.0) {
            return Err(Error::Config(alloc::format!(
                "discriminator_noise_sigma must be non-negative, got {}",
                self.discriminator_noise_sigma
            )));
        }
        Ok(())
    }
}

/// Split latent representation of one image batch.
///
/// `content` is `[B, Cc, h, w]`, `style_local` is `[B, Cs, h, w]`, and
/// `style_global` is `[B, Cg, 1, 1]`, where `h = H/4, w = W/4` relative to
/// the encoded image.
#[derive(Clone, Debug)]
pub struct LatentCode {
    pub content: Tensor,
    pub style_local: Tensor,
    pub style_global: Tensor,
}

impl LatentCode {
    /// The style part: (local, global) treated jointly.
    pub fn style(&self) -> (&Tensor, &Tensor) {
        (&self.style_local, &self.style_global)
    }

    /// Copy with the content part zeroed (latent ablation probe).
    pub fn zero_content(&self) -> LatentCode {
        LatentCode {
            content: Tensor::zeros(&self.content.shape()),
            style_local: self.style_local.clone(),
            style_global: self.style_global.clone(),
        }
    }

    /// Copy with both style parts zeroed (latent ablation probe).
    pub fn zero_style(&self) -> LatentCode {
        LatentCode {
            content: self.content.clone(),
            style_local: Tensor::zeros(&self.style_local.shape()),
            style_global: Tensor::zeros(&self.style_global.shape()),
        }
    }
}

// ------------------------------------------------------------------ layers

pub(crate) struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn init<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Result<Conv> {
        let weight = Tensor::randn(&[cout, cin, k, k], 0.0, WEIGHT_INIT_STD, rng)?;
        weight.set_requires_grad(true);
        Ok(Conv { weight, bias: Tensor::param(alloc::vec![0.0; cout], &[cout])?, stride, pad })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, &self.bias, self.stride, self.pad)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((alloc::format!("{prefix}.weight"), self.weight.clone()));
        out.push((alloc::format!("{prefix}.bias"), self.bias.clone()));
    }
}

struct Deconv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl Deconv {
    fn init<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Result<Deconv> {
        let weight = Tensor::randn(&[cin, cout, k, k], 0.0, WEIGHT_INIT_STD, rng)?;
        weight.set_requires_grad(true);
        Ok(Deconv { weight, bias: Tensor::param(alloc::vec![0.0; cout], &[cout])?, stride, pad })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d_transpose(&self.weight, &self.bias, self.stride, self.pad)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((alloc::format!("{prefix}.weight"), self.weight.clone()));
        out.push((alloc::format!("{prefix}.bias"), self.bias.clone()));
    }
}

struct Norm {
    scale: Tensor,
    shift: Tensor,
}

impl Norm {
    fn init(channels: usize) -> Result<Norm> {
        Ok(Norm {
            scale: Tensor::param(alloc::vec![1.0; channels], &[channels])?,
            shift: Tensor::param(alloc::vec![0.0; channels], &[channels])?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.instance_norm(&self.scale, &self.shift, INSTANCE_NORM_EPS)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((alloc::format!("{prefix}.scale"), self.scale.clone()));
        out.push((alloc::format!("{prefix}.shift"), self.shift.clone()));
    }
}

/// conv -> instance norm -> ReLU
struct ConvBlock {
    conv: Conv,
    norm: Norm,
}

impl ConvBlock {
    fn init<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Result<ConvBlock> {
        Ok(ConvBlock { conv: Conv::init(cin, cout, k, stride, pad, rng)?, norm: Norm::init(cout)? })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.forward(&self.conv.forward(x)?)?.relu()
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv.params(&alloc::format!("{prefix}.conv"), out);
        self.norm.params(&alloc::format!("{prefix}.norm"), out);
    }
}

/// Residual block: conv-IN-ReLU-conv-IN plus the skip connection.
struct ResBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
}

impl ResBlock {
    fn init<R: Rng>(channels: usize, rng: &mut R) -> Result<ResBlock> {
        Ok(ResBlock {
            conv1: Conv::init(channels, channels, 3, 1, 1, rng)?,
            norm1: Norm::init(channels)?,
            conv2: Conv::init(channels, channels, 3, 1, 1, rng)?,
            norm2: Norm::init(channels)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let y = self.norm2.forward(&self.conv2.forward(&y)?)?;
        x.add(&y)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv1.params(&alloc::format!("{prefix}.conv1"), out);
        self.norm1.params(&alloc::format!("{prefix}.norm1"), out);
        self.conv2.params(&alloc::format!("{prefix}.conv2"), out);
        self.norm2.params(&alloc::format!("{prefix}.norm2"), out);
    }
}

// ------------------------------------------------------------ global style

/// Collapses the global-style channel tail `[B, Cg, h, w]` to one value per
/// feature map: two stride-2 3x3 conv + ReLU stages, then global average
/// pooling.
///
/// There is deliberately no instance norm here: the sub-network must be able
/// to represent pooling-like maps (a normalizing layer would erase the very
/// per-map statistics this output is supposed to summarize, and would map
/// any spatially constant plane to a constant regardless of its value).
pub struct GlobalStyleNet {
    conv1: Conv,
    conv2: Conv,
}

impl GlobalStyleNet {
    fn init<R: Rng>(channels: usize, rng: &mut R) -> Result<GlobalStyleNet> {
        Ok(GlobalStyleNet {
            conv1: Conv::init(channels, channels, 3, 2, 1, rng)?,
            conv2: Conv::init(channels, channels, 3, 2, 1, rng)?,
        })
    }

    /// `[B, Cg, h, w] -> [B, Cg, 1, 1]`
    pub fn forward(&self, style_tail: &Tensor) -> Result<Tensor> {
        let y = self.conv1.forward(style_tail)?.relu()?;
        let y = self.conv2.forward(&y)?.relu()?;
        y.mean_axis(3, true)?.mean_axis(2, true)
    }

    /// Overwrite both convs with centered delta kernels and zero bias, making
    /// the sub-network the identity on spatially constant non-negative
    /// planes (an average-pool-equivalent configuration, used by tests).
    pub fn set_delta_kernels(&self) -> Result<()> {
        for conv in [&self.conv1, &self.conv2] {
            let shape = conv.weight.shape();
            let (cout, cin, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
            let mut w = alloc::vec![0.0; cout * cin * kh * kw];
            for c in 0..cout.min(cin) {
                w[((c * cin + c) * kh + kh / 2) * kw + kw / 2] = 1.0;
            }
            conv.weight.set_values(&w)?;
            conv.bias.set_values(&alloc::vec![0.0; cout])?;
        }
        Ok(())
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv1.params(&alloc::format!("{prefix}.conv1"), out);
        self.conv2.params(&alloc::format!("{prefix}.conv2"), out);
    }
}

// ---------------------------------------------------------------- encoder

pub struct Encoder {
    ingress: ConvBlock,
    down1: ConvBlock,
    down2: ConvBlock,
    blocks: Vec<ResBlock>,
    pub global_net: GlobalStyleNet,
    content_channels: usize,
    style_local_channels: usize,
}

impl Encoder {
    fn init<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Result<Encoder> {
        let w = cfg.base_width;
        let trunk = cfg.trunk_channels();
        Ok(Encoder {
            ingress: ConvBlock::init(cfg.image_channels, w, 7, 1, 3, rng)?,
            down1: ConvBlock::init(w, 2 * w, 3, 2, 1, rng)?,
            down2: ConvBlock::init(2 * w, trunk, 3, 2, 1, rng)?,
            blocks: (0..cfg.n_resnet_blocks)
                .map(|_| ResBlock::init(trunk, rng))
                .collect::<Result<Vec<_>>>()?,
            global_net: GlobalStyleNet::init(cfg.style_global_channels, rng)?,
            content_channels: cfg.content_channels,
            style_local_channels: cfg.style_local_channels,
        })
    }

    /// `[B, 3, H, W] -> LatentCode` at quarter resolution. H and W must be
    /// divisible by 4.
    pub fn forward(&self, image: &Tensor) -> Result<LatentCode> {
        let shape = image.shape();
        if shape.len() != 4 {
            return Err(Error::shape(
                "encode",
                alloc::format!("expected [batch, ch, h, w] image, got {shape:?}"),
            ));
        }
        let (h, w) = (shape[2], shape[3]);
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(
                "encode",
                alloc::format!("spatial extents must be positive multiples of 4, got {h}x{w}"),
            ));
        }
        let y = self.ingress.forward(image)?;
        let y = self.down1.forward(&y)?;
        let mut y = self.down2.forward(&y)?;
        for block in &self.blocks {
            y = block.forward(&y)?;
        }
        let cc = self.content_channels;
        let cs = self.style_local_channels;
        let trunk = y.shape()[1];
        let content = y.slice(1, 0, cc)?;
        let style_local = y.slice(1, cc, cc + cs)?;
        let style_tail = y.slice(1, cc + cs, trunk)?;
        let style_global = self.global_net.forward(&style_tail)?;
        Ok(LatentCode { content, style_local, style_global })
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.ingress.params(&alloc::format!("{prefix}.ingress"), out);
        self.down1.params(&alloc::format!("{prefix}.down1"), out);
        self.down2.params(&alloc::format!("{prefix}.down2"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&alloc::format!("{prefix}.block{i}"), out);
        }
        self.global_net.params(&alloc::format!("{prefix}.global"), out);
    }
}

// ---------------------------------------------------------------- decoder

pub struct Decoder {
    blocks: Vec<ResBlock>,
    up1: Deconv,
    up1_norm: Norm,
    up2: Deconv,
    up2_norm: Norm,
    egress: Conv,
}

impl Decoder {
    fn init<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Result<Decoder> {
        let w = cfg.base_width;
        let trunk = cfg.trunk_channels();
        Ok(Decoder {
            blocks: (0..cfg.n_resnet_blocks)
                .map(|_| ResBlock::init(trunk, rng))
                .collect::<Result<Vec<_>>>()?,
            up1: Deconv::init(trunk, 2 * w, 4, 2, 1, rng)?,
            up1_norm: Norm::init(2 * w)?,
            up2: Deconv::init(2 * w, w, 4, 2, 1, rng)?,
            up2_norm: Norm::init(w)?,
            egress: Conv::init(w, cfg.image_channels, 7, 1, 3, rng)?,
        })
    }

    /// `LatentCode -> [B, 3, 4h, 4w]` in `[-1, 1]` (TanH output). The global
    /// style vector is broadcast across the latent grid and concatenated
    /// with content and local style to rebuild the full trunk.
    pub fn forward(&self, z: &LatentCode) -> Result<Tensor> {
        let cs = z.content.shape();
        let (b, h, w) = (cs[0], cs[2], cs[3]);
        let cg = z.style_global.shape()[1];
        let global_map = z.style_global.broadcast_to(&[b, cg, h, w])?;
        let mut y = Tensor::concat(&[&z.content, &z.style_local, &global_map], 1)?;
        for block in &self.blocks {
            y = block.forward(&y)?;
        }
        let y = self.up1_norm.forward(&self.up1.forward(&y)?)?.relu()?;
        let y = self.up2_norm.forward(&self.up2.forward(&y)?)?.relu()?;
        self.egress.forward(&y)?.tanh()
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&alloc::format!("{prefix}.block{i}"), out);
        }
        self.up1.params(&alloc::format!("{prefix}.up1"), out);
        self.up1_norm.params(&alloc::format!("{prefix}.up1_norm"), out);
        self.up2.params(&alloc::format!("{prefix}.up2"), out);
        self.up2_norm.params(&alloc::format!("{prefix}.up2_norm"), out);
        self.egress.params(&alloc::format!("{prefix}.egress"), out);
    }
}

// ----------------------------------------------------------- discriminator

pub struct Discriminator {
    conv1: Conv,
    conv2: Conv,
    norm2: Norm,
    head: Conv,
    noise_sigma: f64,
}

impl Discriminator {
    fn init<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Result<Discriminator> {
        let w = cfg.base_width;
        Ok(Discriminator {
            conv1: Conv::init(2 * cfg.image_channels, w, 4, 2, 1, rng)?,
            conv2: Conv::init(w, 2 * w, 4, 2, 1, rng)?,
            norm2: Norm::init(2 * w)?,
            head: Conv::init(2 * w, 1, 3, 1, 1, rng)?,
            noise_sigma: cfg.discriminator_noise_sigma,
        })
    }

    /// Score how well `candidate` matches the style of `condition`:
    /// `[B, 3, H, W] x2 -> [B, 1, H/4, W/4]`, raw linear outputs. In
    /// training mode, independent Gaussian noise (std `noise_sigma`) is added
    /// to each input before channel concatenation.
    pub fn forward<R: Rng>(
        &self,
        candidate: &Tensor,
        condition: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        if candidate.shape() != condition.shape() {
            return Err(Error::shape(
                "discriminate",
                alloc::format!(
                    "candidate {:?} and condition {:?} must match",
                    candidate.shape(),
                    condition.shape()
                ),
            ));
        }
        let (cand, cond) = if training && self.noise_sigma > 0.0 {
            (
                add_gaussian_noise(candidate, self.noise_sigma, rng)?,
                add_gaussian_noise(condition, self.noise_sigma, rng)?,
            )
        } else {
            (candidate.clone(), condition.clone())
        };
        let x = Tensor::concat(&[&cand, &cond], 1)?;
        let y = self.conv1.forward(&x)?.leaky_relu(DISC_LRELU_SLOPE)?;
        let y = self.norm2.forward(&self.conv2.forward(&y)?)?.leaky_relu(DISC_LRELU_SLOPE)?;
        self.head.forward(&y)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv1.params(&alloc::format!("{prefix}.conv1"), out);
        self.conv2.params(&alloc::format!("{prefix}.conv2"), out);
        self.norm2.params(&alloc::format!("{prefix}.norm2"), out);
        self.head.params(&alloc::format!("{prefix}.head"), out);
    }
}

/// `x + n`, `n ~ N(0, sigma)` elementwise. The noise enters as a constant
/// leaf, so gradients pass to `x` untouched.
pub fn add_gaussian_noise<R: Rng>(x: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    let noise = Tensor::randn(&x.shape(), 0.0, sigma, rng)?;
    x.add(&noise)
}

// ------------------------------------------------------------------ models

/// Which parameter group a training sub-step updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Encoder (including the global-style sub-network) + auxiliary decoder.
    Auxiliary,
    /// Main decoder + the peer-attention heads.
    Main,
    /// The discriminator.
    Discriminator,
}

/// All networks of one run plus their configuration.
pub struct Models {
    pub config: NetConfig,
    pub encoder: Encoder,
    pub aux_decoder: Decoder,
    pub main_decoder: Decoder,
    pub tpfr: TpfrModule,
    pub discriminator: Discriminator,
}

impl Models {
    /// Initialize all parameters from the dedicated init stream of `seed`.
    /// Construction order is fixed, so a given (config, seed) pair always
    /// produces identical parameters.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Models> {
        config.validate()?;
        let mut rng = crate::rng::stream_from(seed, "init");
        Ok(Models {
            config: config.clone(),
            encoder: Encoder::init(config, &mut rng)?,
            aux_decoder: Decoder::init(config, &mut rng)?,
            main_decoder: Decoder::init(config, &mut rng)?,
            tpfr: TpfrModule::init(config, &mut rng)?,
            discriminator: Discriminator::init(config, &mut rng)?,
        })
    }

    pub fn encode(&self, image: &Tensor) -> Result<LatentCode> {
        self.encoder.forward(image)
    }

    pub fn decode_aux(&self, z: &LatentCode) -> Result<Tensor> {
        self.aux_decoder.forward(z)
    }

    pub fn decode_main(&self, z: &LatentCode) -> Result<Tensor> {
        self.main_decoder.forward(z)
    }

    pub fn discriminate<R: Rng>(
        &self,
        candidate: &Tensor,
        condition: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.discriminator.forward(candidate, condition, training, rng)
    }

    /// Named parameters of one group, in stable order.
    pub fn group(&self, role: Role) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        match role {
            Role::Auxiliary => {
                self.encoder.params("encoder", &mut out);
                self.aux_decoder.params("aux_decoder", &mut out);
            }
            Role::Main => {
                self.main_decoder.params("main_decoder", &mut out);
                self.tpfr.params("tpfr", &mut out);
            }
            Role::Discriminator => {
                self.discriminator.params("discriminator", &mut out);
            }
        }
        out
    }

    /// All named parameters (auxiliary, main, discriminator group order).
    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.group(Role::Auxiliary);
        out.extend(self.group(Role::Main));
        out.extend(self.group(Role::Discriminator));
        out
    }

    /// Toggle gradient tracking for one group.
    pub fn set_trainable(&self, role: Role, on: bool) {
        for (_, p) in self.group(role) {
            p.set_requires_grad(on);
        }
    }

    /// Toggle gradient tracking for every parameter.
    pub fn set_all_trainable(&self, on: bool) {
        for (_, p) in self.params() {
            p.set_requires_grad(on);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_from;

    #[test]
    fn config_validation() {
        assert!(NetConfig::default().validate().is_ok());
        assert!(NetConfig::desk().validate().is_ok());
        let mut bad = NetConfig::desk();
        bad.k_neighbors = 0;
        assert!(bad.validate().is_err());
        let mut bad = NetConfig::desk();
        bad.attention_dropout = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = NetConfig::desk();
        bad.discriminator_noise_sigma = -0.5;
        assert!(bad.validate().is_err());
        let mut bad = NetConfig::desk();
        bad.content_channels = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn encode_splits_shapes_at_desk_scale() {
        let cfg = NetConfig::desk();
        let m = Models::init(&cfg, 0).unwrap();
        let img = Tensor::zeros(&[2, 3, 32, 32]);
        let z = m.encode(&img).unwrap();
        assert_eq!(z.content.shape(), alloc::vec![2, 16, 8, 8]);
        assert_eq!(z.style_local.shape(), alloc::vec![2, 16, 8, 8]);
        assert_eq!(z.style_global.shape(), alloc::vec![2, 16, 1, 1]);
    }

    #[test]
    fn encode_rejects_indivisible_extents() {
        let m = Models::init(&NetConfig::desk(), 0).unwrap();
        for (h, w) in [(31usize, 32usize), (32, 30), (2, 2)] {
            // Extents not divisible by 4 cannot round-trip the two stride-2 stages.
            let img = Tensor::zeros(&[1, 3, h, w]);
            assert!(m.encode(&img).is_err(), "{h}x{w} must be rejected");
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let m = Models::init(&NetConfig::desk(), 1).unwrap();
        let mut rng = stream_from(2, "img");
        let img = Tensor::randn(&[1, 3, 32, 32], 0.0, 0.5, &mut rng).unwrap();
        let z1 = m.encode(&img).unwrap();
        let z2 = m.encode(&img).unwrap();
        assert_eq!(z1.content.values(), z2.content.values());
        assert_eq!(z1.style_global.values(), z2.style_global.values());
    }

    #[test]
    fn decode_round_trip_shape_and_range() {
        let cfg = NetConfig::desk();
        let m = Models::init(&cfg, 3).unwrap();
        let mut rng = stream_from(4, "img");
        let img = Tensor::randn(&[1, 3, 32, 32], 0.0, 0.5, &mut rng).unwrap();
        let z = m.encode(&img).unwrap();
        let out = m.decode_aux(&z).unwrap();
        assert_eq!(out.shape(), alloc::vec![1, 3, 32, 32]);
        assert!(out.values().iter().all(|v| (-1.0..=1.0).contains(v)), "TanH bound");
    }

    #[test]
    fn decoders_do_not_share_parameters() {
        let m = Models::init(&NetConfig::desk(), 5).unwrap();
        let mut rng = stream_from(6, "img");
        let img = Tensor::randn(&[1, 3, 32, 32], 0.0, 0.5, &mut rng).unwrap();
        let z = m.encode(&img).unwrap();
        let a = m.decode_aux(&z).unwrap();
        let b = m.decode_main(&z).unwrap();
        assert_ne!(a.values(), b.values(), "independent init must differ");
    }

    #[test]
    fn global_style_net_preserves_positive_constants_with_delta_kernels() {
        let m = Models::init(&NetConfig::desk(), 7).unwrap();
        m.encoder.global_net.set_delta_kernels().unwrap();
        // Spatially constant per-channel planes: channel c holds 0.5 + c.
        let (b, c, h, w) = (1usize, 16usize, 8usize, 8usize);
        let mut data = alloc::vec![0.0; b * c * h * w];
        for ci in 0..c {
            for v in data[ci * h * w..(ci + 1) * h * w].iter_mut() {
                *v = 0.5 + ci as f64;
            }
        }
        let tail = Tensor::new(data, &[b, c, h, w]).unwrap();
        let out = m.encoder.global_net.forward(&tail).unwrap();
        assert_eq!(out.shape(), alloc::vec![1, 16, 1, 1]);
        for (ci, v) in out.values().iter().enumerate() {
            assert!((v - (0.5 + ci as f64)).abs() < 1e-12, "channel {ci}: {v}");
        }
    }

    #[test]
    fn global_style_net_output_is_always_1x1() {
        let m = Models::init(&NetConfig::desk(), 8).unwrap();
        for (h, w) in [(1usize, 1usize), (2, 3), (8, 8), (16, 5)] {
            let tail = Tensor::zeros(&[2, 16, h, w]);
            let out = m.encoder.global_net.forward(&tail).unwrap();
            assert_eq!(out.shape(), alloc::vec![2, 16, 1, 1], "input {h}x{w}");
        }
    }

    #[test]
    fn discriminator_map_shape_and_determinism() {
        let m = Models::init(&NetConfig::desk(), 9).unwrap();
        let mut rng = stream_from(10, "img");
        let a = Tensor::randn(&[2, 3, 32, 32], 0.0, 0.5, &mut rng).unwrap();
        let b = Tensor::randn(&[2, 3, 32, 32], 0.0, 0.5, &mut rng).unwrap();
        let mut noise = stream_from(11, "noise");
        let s1 = m.discriminate(&a, &b, false, &mut noise).unwrap();
        assert_eq!(s1.shape(), alloc::vec![2, 1, 8, 8]);
        // Eval mode consumes no randomness and is reproducible.
        let s2 = m.discriminate(&a, &b, false, &mut noise).unwrap();
        assert_eq!(s1.values(), s2.values());
        assert_eq!(noise.get_word_pos(), 0);
        // Mismatched inputs are rejected.
        let small = Tensor::zeros(&[2, 3, 16, 16]);
        assert!(m.discriminate(&a, &small, false, &mut noise).is_err());
    }

    #[test]
    fn input_noise_statistics_match_sigma() {
        // std of (noised - clean) over >= 1e5 samples is 0.1 +- 0.01.
        let x = Tensor::zeros(&[1, 3, 200, 200]); // 120k samples
        let mut rng = stream_from(12, "noise");
        let noised = add_gaussian_noise(&x, 0.1, &mut rng).unwrap();
        let vals = noised.values();
        let n = vals.len() as f64;
        let mean: f64 = vals.iter().sum::<f64>() / n;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = libm::sqrt(var);
        assert!((std - 0.1).abs() < 0.01, "empirical noise std {std}");
    }

    #[test]
    fn parameter_groups_are_disjoint_and_stable() {
        let m = Models::init(&NetConfig::desk(), 13).unwrap();
        let aux = m.group(Role::Auxiliary);
        let main = m.group(Role::Main);
        let disc = m.group(Role::Discriminator);
        let all = m.params();
        assert_eq!(all.len(), aux.len() + main.len() + disc.len());
        let mut names: alloc::vec::Vec<&str> = all.iter().map(|(n, _)| n.as_str()).collect();
        let total = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), total, "parameter names must be unique");
        assert!(main.iter().any(|(n, _)| n.starts_with("tpfr.")), "attention heads train with the main decoder");
    }

    #[test]
    fn init_is_reproducible_per_seed() {
        let a = Models::init(&NetConfig::desk(), 77).unwrap();
        let b = Models::init(&NetConfig::desk(), 77).unwrap();
        let c = Models::init(&NetConfig::desk(), 78).unwrap();
        let av = a.params();
        let bv = b.params();
        let cv = c.params();
        for ((n1, p1), (_, p2)) in av.iter().zip(bv.iter()) {
            assert_eq!(p1.values(), p2.values(), "{n1} differs across same-seed inits");
        }
        let some_differ = av.iter().zip(cv.iter()).any(|((_, p1), (_, p2))| p1.values() != p2.values());
        assert!(some_differ, "different seeds must give different weights");
    }

    #[test]
    fn freeze_toggles_groups_independently() {
        let m = Models::init(&NetConfig::desk(), 14).unwrap();
        m.set_all_trainable(false);
        m.set_trainable(Role::Main, true);
        assert!(m.group(Role::Main).iter().all(|(_, p)| p.requires_grad()));
        assert!(m.group(Role::Auxiliary).iter().all(|(_, p)| !p.requires_grad()));
        assert!(m.group(Role::Discriminator).iter().all(|(_, p)| !p.requires_grad()));
    }

    #[test]
    fn full_scale_encode_shape() {
        // 256x256 at full widths -> 768-channel trunk split 256/256/256 over
        // a 64x64 grid. Zero residual blocks keep this shape-only check fast.
        let mut cfg = NetConfig::default();
        cfg.n_resnet_blocks = 0;
        let m = Models::init(&cfg, 0).unwrap();
        let img = Tensor::zeros(&[1, 3, 256, 256]);
        let z = m.encode(&img).unwrap();
        assert_eq!(z.content.shape(), alloc::vec![1, 256, 64, 64]);
        assert_eq!(z.style_local.shape(), alloc::vec![1, 256, 64, 64]);
        assert_eq!(z.style_global.shape(), alloc::vec![1, 256, 1, 1]);
    }

    #[test]
    fn latent_zeroing_probes() {
        let m = Models::init(&NetConfig::desk(), 15).unwrap();
        let mut rng = stream_from(16, "img");
        let img = Tensor::randn(&[1, 3, 32, 32], 0.0, 0.5, &mut rng).unwrap();
        let z = m.encode(&img).unwrap();
        let zc = z.zero_content();
        assert!(zc.content.values().iter().all(|v| *v == 0.0));
        assert_eq!(zc.style_local.values(), z.style_local.values());
        let zs = z.zero_style();
        assert!(zs.style_local.values().iter().all(|v| *v == 0.0));
        assert!(zs.style_global.values().iter().all(|v| *v == 0.0));
        assert_eq!(zs.content.values(), z.content.values());
    }

    #[test]
    fn seeded_rng_draws_differ_across_streams() {
        // Guard the init/noise stream separation that reproducibility relies on.
        let mut a = stream_from(0, "init");
        let mut b = stream_from(0, "noise");
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }
}
