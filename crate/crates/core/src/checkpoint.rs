//! Binary checkpoint format (`WWD1`, little-endian):
//!
//! ```text
//! magic "WWD1" | version u32
//! feature config: sample_rate, frame_length, frame_shift, n_fft, n_mels (u32),
//!                 f_min, f_max, preemphasis, energy_floor (f32)
//! token inventory: count u32, then (len u32, utf-8 bytes) per token
//! input_dim u32 | n_layers u32 | (nodes u32, memory u32) per layer
//! f32 tensors: input_mean, input_scale,
//!              per layer feature_filters, time_filters, bias,
//!              output_weights, output_bias
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::FeatureConfig;
use crate::svdf::{Architecture, LayerShape, ModelParams};
use crate::tokens::NUM_TOKENS;

const MAGIC: &[u8; 4] = b"WWD1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint dimensions invalid: {0}")]
    DimMismatch(String),
    #[error("feature config mismatch: checkpoint {found:?}, frontend {expected:?}")]
    ConfigMismatch { expected: Box<FeatureConfig>, found: Box<FeatureConfig> },
    #[error("trailing bytes after checkpoint payload")]
    TrailingData,
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated,
            _ => CheckpointError::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    fn dim(&mut self, what: &str, max: usize) -> Result<usize, CheckpointError> {
        let v = self.u32()? as usize;
        if v == 0 || v > max {
            return Err(CheckpointError::DimMismatch(format!("{what} = {v}")));
        }
        Ok(v)
    }

    fn tensor(&mut self, len: usize) -> Result<Vec<f32>, CheckpointError> {
        (0..len).map(|_| self.f32()).collect()
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    w.write_all(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes())
}

fn write_tensor<W: Write>(w: &mut W, t: &[f32]) -> std::io::Result<()> {
    t.iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut w: W) -> Result<(), CheckpointError> {
    params.validate().map_err(|e| CheckpointError::DimMismatch(e.to_string()))?;
    let fc = &params.feature_config;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    write_u32(&mut w, fc.sample_rate_hz as usize)?;
    for v in [fc.frame_length, fc.frame_shift, fc.n_fft, fc.n_mels] {
        write_u32(&mut w, v)?;
    }
    for v in [fc.f_min_hz, fc.f_max_hz, fc.preemphasis, fc.energy_floor] {
        w.write_all(&v.to_le_bytes())?;
    }
    write_u32(&mut w, params.token_inventory.len())?;
    for name in &params.token_inventory {
        write_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
    }
    let arch = params.architecture();
    write_u32(&mut w, arch.input_dim)?;
    write_u32(&mut w, arch.layers.len())?;
    for l in &arch.layers {
        write_u32(&mut w, l.nodes)?;
        write_u32(&mut w, l.memory)?;
    }
    write_tensor(&mut w, &params.input_mean)?;
    write_tensor(&mut w, &params.input_scale)?;
    for t in params.trainable() {
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a checkpoint and checks its frontend configuration against
/// `expected`.
pub fn read_checkpoint<R: Read>(r: R, expected: &FeatureConfig) -> Result<ModelParams, CheckpointError> {
    let mut r = Reader { inner: r };
    let magic = r.bytes::<4>()?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let found = FeatureConfig {
        sample_rate_hz: r.u32()?,
        frame_length: r.u32()? as usize,
        frame_shift: r.u32()? as usize,
        n_fft: r.u32()? as usize,
        n_mels: r.u32()? as usize,
        f_min_hz: r.f32()?,
        f_max_hz: r.f32()?,
        preemphasis: r.f32()?,
        energy_floor: r.f32()?,
    };
    if found != *expected {
        return Err(CheckpointError::ConfigMismatch { expected: Box::new(*expected), found: Box::new(found) });
    }
    let n_tokens = r.u32()? as usize;
    if n_tokens != NUM_TOKENS {
        return Err(CheckpointError::DimMismatch(format!("token inventory of {n_tokens}, expected {NUM_TOKENS}")));
    }
    let mut token_inventory = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let len = r.dim("token name length", 256)?;
        let mut buf = vec![0u8; len];
        r.inner.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
        token_inventory
            .push(String::from_utf8(buf).map_err(|_| CheckpointError::DimMismatch("token name is not UTF-8".into()))?);
    }
    let input_dim = r.dim("input_dim", 1 << 16)?;
    if input_dim != expected.n_mels {
        return Err(CheckpointError::DimMismatch(format!(
            "model input {input_dim} does not match {} Mel bins",
            expected.n_mels
        )));
    }
    let n_layers = r.dim("layer count", 64)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        layers.push(LayerShape { nodes: r.dim("nodes", 1 << 16)?, memory: r.dim("memory", 1 << 12)? });
    }
    let arch = Architecture { input_dim, layers };
    let mut params = ModelParams::zeros(&arch, found);
    params.token_inventory = token_inventory;
    params.input_mean = r.tensor(input_dim)?;
    params.input_scale = r.tensor(input_dim)?;
    for t in params.trainable_mut() {
        let loaded = r.tensor(t.len())?;
        t.copy_from_slice(&loaded);
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe)? != 0 {
        return Err(CheckpointError::TrailingData);
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), CheckpointError> {
    write_checkpoint(params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path, expected: &FeatureConfig) -> Result<ModelParams, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?), expected)
}
