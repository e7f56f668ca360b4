//! The checkpoint file: everything needed to continue a run bit-exactly —
//! training configuration, global step, every named parameter, the three
//! optimizer states, and the positions of the three random streams.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 8 bytes  magic "PSTYCKPT"
//! u32      format version (currently 1)
//! u64      payload length
//! payload  config TOML, step, parameters, optimizer states, rng streams
//! u64      FNV-1a hash of the payload
//! ```
//!
//! Structural problems (wrong magic, unknown version, truncation, hash
//! mismatch, unknown parameter names) are configuration errors: the file the
//! user pointed at is not a usable checkpoint for this build.

use std::fs;
use std::path::Path;

use peerstyle_core::nn::Models;
use peerstyle_core::rng::{RngStreams, StreamState};
use peerstyle_core::train::{Optimizers, TrainConfig};

use crate::{AppError, Result};

const MAGIC: &[u8; 8] = b"PSTYCKPT";
const VERSION: u32 = 1;

/// One optimizer's persisted state.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// A parsed checkpoint, ready to rebuild models, optimizers, and streams.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    /// Global training step at save time.
    pub step: u64,
    /// `(name, shape, values)` for every parameter, in model order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    /// Auxiliary, main, discriminator — in that order.
    pub optimizers: [OptimizerState; 3],
    /// Data, dropout, noise stream positions.
    pub streams: Vec<StreamState>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(AppError::Config(String::from("checkpoint truncated")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| AppError::Config(String::from("checkpoint holds invalid text")))
    }
}

/// Persist the complete training state.
pub fn save(
    path: &Path,
    models: &Models,
    optimizers: &Optimizers,
    streams: &RngStreams,
    train: &TrainConfig,
    step: u64,
) -> Result<()> {
    let mut w = Writer { buf: Vec::new() };
    let config_text = toml::to_string(train)
        .map_err(|e| AppError::Runtime(format!("config serialization: {e}")))?;
    w.str(&config_text);
    w.u64(step);

    let params = models.params();
    w.u32(params.len() as u32);
    for (name, p) in &params {
        w.str(name);
        let shape = p.shape();
        w.u32(shape.len() as u32);
        for &d in &shape {
            w.u64(d as u64);
        }
        w.f64s(&p.values());
    }

    for opt in [&optimizers.aux, &optimizers.main, &optimizers.disc] {
        w.u64(opt.step_count);
        w.f64(opt.learning_rate);
        let (m, v) = opt.moments();
        w.u32(m.len() as u32);
        for buf in m.iter().chain(v.iter()) {
            w.f64s(buf);
        }
    }

    let states = streams.capture();
    w.u32(states.len() as u32);
    for s in &states {
        w.buf.extend_from_slice(&s.seed);
        w.buf.extend_from_slice(&s.word_pos.to_le_bytes());
    }

    let mut file = Vec::with_capacity(w.buf.len() + 28);
    file.extend_from_slice(MAGIC);
    file.extend_from_slice(&VERSION.to_le_bytes());
    file.extend_from_slice(&(w.buf.len() as u64).to_le_bytes());
    file.extend_from_slice(&w.buf);
    file.extend_from_slice(&fnv1a(&w.buf).to_le_bytes());
    fs::write(path, file).map_err(|e| AppError::io(&format!("writing {}", path.display()), e))
}

/// Read and validate a checkpoint file.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return Err(AppError::Config(format!("{} is not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(AppError::Config(format!(
            "checkpoint version {version} is not supported (this build reads {VERSION})"
        )));
    }
    let payload_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() != 20 + payload_len + 8 {
        return Err(AppError::Config(String::from("checkpoint truncated")));
    }
    let payload = &bytes[20..20 + payload_len];
    let stored_hash = u64::from_le_bytes(bytes[20 + payload_len..].try_into().unwrap());
    if fnv1a(payload) != stored_hash {
        return Err(AppError::Config(String::from("checkpoint is corrupt (hash mismatch)")));
    }

    let mut r = Reader { bytes: payload, pos: 0 };
    let config_text = r.str()?;
    let train: TrainConfig = toml::from_str(&config_text)
        .map_err(|e| AppError::Config(format!("checkpoint config: {e}")))?;
    let step = r.u64()?;

    let n_params = r.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let values = r.f64s()?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(AppError::Config(format!(
                "checkpoint parameter '{name}' has {} values for shape {shape:?}",
                values.len()
            )));
        }
        params.push((name, shape, values));
    }

    let mut optimizers = Vec::with_capacity(3);
    for _ in 0..3 {
        let step_count = r.u64()?;
        let learning_rate = r.f64()?;
        let n = r.u32()? as usize;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(r.f64s()?);
        }
        for _ in 0..n {
            v.push(r.f64s()?);
        }
        optimizers.push(OptimizerState { step_count, learning_rate, m, v });
    }
    let optimizers: [OptimizerState; 3] =
        optimizers.try_into().expect("exactly three optimizer states");

    let n_streams = r.u32()? as usize;
    let mut streams = Vec::with_capacity(n_streams);
    for _ in 0..n_streams {
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        streams.push(StreamState { seed, word_pos });
    }
    if r.pos != payload.len() {
        return Err(AppError::Config(String::from("checkpoint has trailing bytes")));
    }

    Ok(Checkpoint { train, step, params, optimizers, streams })
}

impl Checkpoint {
    /// Rebuild the models and overwrite every parameter with the stored
    /// values. The parameter name sets must match exactly.
    pub fn build_models(&self) -> Result<Models> {
        let models = Models::init(&self.train.net, self.train.seed)?;
        let live = models.params();
        if live.len() != self.params.len() {
            return Err(AppError::Config(format!(
                "checkpoint has {} parameters, this configuration builds {}",
                self.params.len(),
                live.len()
            )));
        }
        for ((name, shape, values), (live_name, p)) in self.params.iter().zip(&live) {
            if name != live_name || *shape != p.shape() {
                return Err(AppError::Config(format!(
                    "checkpoint parameter '{name}' {shape:?} does not match model \
                     parameter '{live_name}' {:?}",
                    p.shape()
                )));
            }
            p.set_values(values)?;
        }
        Ok(models)
    }

    /// Rebuild the three optimizer states against `models`.
    pub fn build_optimizers(&self, models: &Models) -> Result<Optimizers> {
        let mut optimizers = Optimizers::new(models, self.train.learning_rate);
        for (state, opt) in self
            .optimizers
            .iter()
            .zip([&mut optimizers.aux, &mut optimizers.main, &mut optimizers.disc])
        {
            opt.restore_moments(state.m.clone(), state.v.clone())?;
            opt.step_count = state.step_count;
            opt.learning_rate = state.learning_rate;
        }
        Ok(optimizers)
    }

    pub fn build_streams(&self) -> Result<RngStreams> {
        Ok(RngStreams::restore(&self.streams)?)
    }
}
