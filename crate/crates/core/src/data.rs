//! Images as tensors plus a procedural dataset.
//!
//! Training needs a content class and several visually distinct style
//! classes. At desk scale those come from three parametric texture families
//! (oriented stripes, checkerboards, blotch fields) with class-specific
//! palettes, plus a geometric-scene generator for content. The palettes are
//! chosen far apart so the classes are separable by plain channel statistics
//! — which keeps the style-clustering objective honest and testable without
//! shipping an image corpus.
//!
//! Pixel values always live in `[-1, 1]` and spatial extents are multiples
//! of 4 (two stride-2 stages each way).

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::StepBatch;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

/// One image with its class label.
///
/// `pixels` is `[3, H, W]` in `[-1, 1]`; H and W are divisible by 4.
/// `source` records where it came from (a file path or a generator tag).
#[derive(Clone, Debug)]
pub struct ImageSample {
    pub pixels: Tensor,
    pub class_id: usize,
    pub source: String,
}

impl ImageSample {
    pub fn new(pixels: Tensor, class_id: usize, source: String) -> Result<ImageSample> {
        let shape = pixels.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::shape(
                "image_sample",
                alloc::format!("expected [3, h, w] pixels, got {shape:?}"),
            ));
        }
        let (h, w) = (shape[1], shape[2]);
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(
                "image_sample",
                alloc::format!("extents must be positive multiples of 4, got {h}x{w}"),
            ));
        }
        if pixels.values().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::arg("image_sample", "pixel values must lie in [-1, 1]"));
        }
        Ok(ImageSample { pixels, class_id, source })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// View as a single-image batch `[1, 3, H, W]`.
    pub fn batched(&self) -> Result<Tensor> {
        let s = self.pixels.shape();
        self.pixels.reshape(&[1, 3, s[1], s[2]])
    }
}

/// Stack equally sized samples into one `[B, 3, H, W]` batch.
pub fn stack_samples(samples: &[ImageSample]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::arg("stack_samples", "cannot stack an empty sample list"))?;
    let shape = first.pixels.shape();
    let mut data = Vec::with_capacity(samples.len() * first.pixels.numel());
    for s in samples {
        if s.pixels.shape() != shape {
            return Err(Error::shape(
                "stack_samples",
                alloc::format!("sample shapes differ: {:?} vs {shape:?}", s.pixels.shape()),
            ));
        }
        data.extend_from_slice(&s.pixels.values());
    }
    Tensor::new(data, &[samples.len(), 3, shape[1], shape[2]])
}

/// Crop `size`x`size` pixels at a uniformly random position. A full-size
/// crop is the identity.
pub fn random_crop<R: Rng>(sample: &ImageSample, size: usize, rng: &mut R) -> Result<ImageSample> {
    let (h, w) = (sample.height(), sample.width());
    if size == 0 || size % 4 != 0 {
        return Err(Error::arg(
            "random_crop",
            alloc::format!("crop size must be a positive multiple of 4, got {size}"),
        ));
    }
    if size > h || size > w {
        return Err(Error::arg(
            "random_crop",
            alloc::format!("crop {size} exceeds image extent {h}x{w}"),
        ));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    let src = sample.pixels.values();
    let mut out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for y in 0..size {
            let row = (c * h + top + y) * w + left;
            out.extend_from_slice(&src[row..row + size]);
        }
    }
    ImageSample::new(
        Tensor::new(out, &[3, size, size])?,
        sample.class_id,
        sample.source.clone(),
    )
}

/// The procedural texture families used as stand-in style classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureFamily {
    /// Parallel stripes at a fixed orientation.
    Stripes,
    /// Axis-aligned checkerboard.
    Checker,
    /// Random discs over a flat background.
    Blotches,
}

/// Parameters of one synthetic style class. `palette` holds two RGB colors
/// in `[-1, 1]`; `frequency` counts stripes/cells across the image (or discs
/// for the blotch family); `angle` orients the stripes.
#[derive(Clone, Debug)]
pub struct SynthClass {
    pub family: TextureFamily,
    pub frequency: f64,
    pub palette: [[f64; 3]; 2],
    pub angle: f64,
}

/// Parameters of the geometric content scenes: background plus two shape
/// colors.
#[derive(Clone, Debug)]
pub struct SceneClass {
    pub palette: [[f64; 3]; 3],
}

/// Content scenes plus style texture classes, all generated on demand.
/// Class 0 is content; style classes are numbered from 1.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub scene: SceneClass,
    pub styles: Vec<SynthClass>,
    pub image_size: usize,
}

fn fract(x: f64) -> f64 {
    x - libm::floor(x)
}

/// Render one image of a texture class. The same (class, size, rng state)
/// always renders the same image; per-image variation comes from a random
/// phase, a mild frequency wobble, and (for blotches) disc placement.
pub fn synth_style<R: Rng>(
    class: &SynthClass,
    class_id: usize,
    size: usize,
    rng: &mut R,
) -> Result<ImageSample> {
    if size == 0 || size % 4 != 0 {
        return Err(Error::arg(
            "synth_style",
            alloc::format!("image size must be a positive multiple of 4, got {size}"),
        ));
    }
    let phase: f64 = rng.random();
    let freq = class.frequency * (0.9 + 0.2 * rng.random::<f64>());
    let [c0, c1] = class.palette;
    let mut data = alloc::vec![0.0; 3 * size * size];
    let paint = |x: usize, y: usize, color: [f64; 3], data: &mut [f64]| {
        for (ch, v) in color.iter().enumerate() {
            data[(ch * size + y) * size + x] = v.clamp(-1.0, 1.0);
        }
    };
    match class.family {
        TextureFamily::Stripes => {
            let (cos_a, sin_a) = (libm::cos(class.angle), libm::sin(class.angle));
            for y in 0..size {
                for x in 0..size {
                    let u = x as f64 / size as f64;
                    let v = y as f64 / size as f64;
                    let t = fract((u * cos_a + v * sin_a) * freq + phase);
                    paint(x, y, if t < 0.5 { c0 } else { c1 }, &mut data);
                }
            }
        }
        TextureFamily::Checker => {
            for y in 0..size {
                for x in 0..size {
                    let cx = libm::floor(x as f64 / size as f64 * freq + phase) as i64;
                    let cy = libm::floor(y as f64 / size as f64 * freq + phase) as i64;
                    paint(x, y, if (cx + cy).rem_euclid(2) == 0 { c0 } else { c1 }, &mut data);
                }
            }
        }
        TextureFamily::Blotches => {
            for y in 0..size {
                for x in 0..size {
                    paint(x, y, c0, &mut data);
                }
            }
            let discs = libm::round(class.frequency).max(1.0) as usize;
            for _ in 0..discs {
                let cx: f64 = rng.random();
                let cy: f64 = rng.random();
                let r = 0.1 + 0.15 * rng.random::<f64>();
                for y in 0..size {
                    for x in 0..size {
                        let du = x as f64 / size as f64 - cx;
                        let dv = y as f64 / size as f64 - cy;
                        if du * du + dv * dv < r * r {
                            paint(x, y, c1, &mut data);
                        }
                    }
                }
            }
        }
    }
    ImageSample::new(
        Tensor::new(data, &[3, size, size])?,
        class_id,
        alloc::format!("synth:{:?}", class.family),
    )
}

/// Render one geometric content scene: a vertical background gradient with
/// a random rectangle and a random disc on top.
pub fn synth_scene<R: Rng>(scene: &SceneClass, size: usize, rng: &mut R) -> Result<ImageSample> {
    if size == 0 || size % 4 != 0 {
        return Err(Error::arg(
            "synth_scene",
            alloc::format!("image size must be a positive multiple of 4, got {size}"),
        ));
    }
    let [bg, rect, disc] = scene.palette;
    let tilt = 0.3 * (rng.random::<f64>() - 0.5);
    let mut data = alloc::vec![0.0; 3 * size * size];
    for y in 0..size {
        let shade = tilt * (y as f64 / size as f64 - 0.5);
        for x in 0..size {
            for ch in 0..3 {
                data[(ch * size + y) * size + x] = (bg[ch] + shade).clamp(-1.0, 1.0);
            }
        }
    }
    // Rectangle.
    let rx = rng.random_range(0..size / 2);
    let ry = rng.random_range(0..size / 2);
    let rw = rng.random_range(size / 4..size / 2);
    let rh = rng.random_range(size / 4..size / 2);
    for y in ry..(ry + rh).min(size) {
        for x in rx..(rx + rw).min(size) {
            for ch in 0..3 {
                data[(ch * size + y) * size + x] = rect[ch].clamp(-1.0, 1.0);
            }
        }
    }
    // Disc.
    let cx: f64 = rng.random();
    let cy: f64 = rng.random();
    let r = 0.15 + 0.15 * rng.random::<f64>();
    for y in 0..size {
        for x in 0..size {
            let du = x as f64 / size as f64 - cx;
            let dv = y as f64 / size as f64 - cy;
            if du * du + dv * dv < r * r {
                for ch in 0..3 {
                    data[(ch * size + y) * size + x] = disc[ch].clamp(-1.0, 1.0);
                }
            }
        }
    }
    ImageSample::new(Tensor::new(data, &[3, size, size])?, 0, String::from("synth:Scene"))
}

impl SyntheticDataset {
    /// Desk defaults: 32x32 images, neutral geometric content, and three
    /// style classes (warm stripes, green checker, blue blotch field) whose
    /// channel means are far apart.
    pub fn desk_default() -> SyntheticDataset {
        SyntheticDataset {
            scene: SceneClass {
                palette: [[-0.1, -0.1, -0.1], [0.45, 0.35, 0.2], [-0.55, -0.45, -0.35]],
            },
            styles: alloc::vec![
                SynthClass {
                    family: TextureFamily::Stripes,
                    frequency: 6.0,
                    palette: [[0.9, -0.6, -0.6], [0.3, -0.9, -0.9]],
                    angle: 0.6,
                },
                SynthClass {
                    family: TextureFamily::Checker,
                    frequency: 4.0,
                    palette: [[-0.8, 0.9, -0.7], [-0.4, 0.3, -0.9]],
                    angle: 0.0,
                },
                SynthClass {
                    family: TextureFamily::Blotches,
                    frequency: 5.0,
                    palette: [[-0.7, -0.7, 0.9], [0.5, 0.5, 0.3]],
                    angle: 0.0,
                },
            ],
            image_size: 32,
        }
    }

    /// Content class plus style classes.
    pub fn num_classes(&self) -> usize {
        self.styles.len() + 1
    }

    /// Generate one image of `class_id` (0 = content, 1.. = styles).
    pub fn sample<R: Rng>(&self, class_id: usize, rng: &mut R) -> Result<ImageSample> {
        if class_id == 0 {
            synth_scene(&self.scene, self.image_size, rng)
        } else {
            let class = self.styles.get(class_id - 1).ok_or_else(|| {
                Error::arg(
                    "sample",
                    alloc::format!("class {class_id} out of range ({} classes)", self.num_classes()),
                )
            })?;
            synth_style(class, class_id, self.image_size, rng)
        }
    }

    /// Draw one training batch: two content batches and two batches of a
    /// single randomly chosen style class.
    pub fn sample_batch<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<StepBatch> {
        if batch_size == 0 {
            return Err(Error::arg("sample_batch", "batch size must be at least 1"));
        }
        if self.styles.is_empty() {
            return Err(Error::arg("sample_batch", "dataset has no style classes"));
        }
        let style_class = 1 + rng.random_range(0..self.styles.len());
        let draw = |class: usize, rng: &mut R| -> Result<Tensor> {
            let samples: Vec<ImageSample> = (0..batch_size)
                .map(|_| self.sample(class, rng))
                .collect::<Result<_>>()?;
            stack_samples(&samples)
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
