//! Log-Mel filter-bank frontend: 25 ms Hann frames every 10 ms, 512-point
//! FFT, 80 triangular Mel filters over 20-7600 Hz, natural log with a floor.
//!
//! Each frame is computed from its own 400 samples only (pre-emphasis is
//! applied inside the frame), so the streaming path produces exactly the same
//! bits as the batch path regardless of how the waveform is chunked.

use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_MELS: usize = 80;
const FEATURE_MAGIC: &[u8; 4] = b"WWF1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate_hz: u32,
    pub frame_length: usize,
    pub frame_shift: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min_hz: f32,
    pub f_max_hz: f32,
    pub preemphasis: f32,
    pub energy_floor: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            frame_length: 400,
            frame_shift: 160,
            n_fft: 512,
            n_mels: NUM_MELS,
            f_min_hz: 20.0,
            f_max_hz: 7600.0,
            preemphasis: 0.97,
            energy_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    /// `1 + floor((n - frame_length) / frame_shift)`, or 0 for short input.
    pub fn num_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_length {
            0
        } else {
            1 + (n_samples - self.frame_length) / self.frame_shift
        }
    }

    /// Smallest sample count that yields `n_frames` frames.
    pub fn samples_for_frames(&self, n_frames: usize) -> usize {
        if n_frames == 0 {
            0
        } else {
            self.frame_length + (n_frames - 1) * self.frame_shift
        }
    }

    pub fn log_floor(&self) -> f32 {
        (f64::from(self.energy_floor)).ln() as f32
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad feature dump magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("feature dump truncated")]
    Truncated,
    #[error("feature dump has {found} dims, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
}

/// T x dim matrix of log-Mel energies, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    dim: usize,
}

impl FeatureMatrix {
    pub fn new(dim: usize) -> Self {
        Self { data: Vec::new(), dim }
    }

    pub fn from_rows(data: Vec<f32>, dim: usize) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim), "ragged feature matrix");
        Self { data, dim }
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn push_row(&mut self, row: &[f32]) {
        assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn append(&mut self, other: &FeatureMatrix) {
        assert_eq!(other.dim, self.dim);
        self.data.extend_from_slice(&other.data);
    }

    /// Writes the `WWF1` dump: magic, u32 T, u32 dim, then f32 rows (LE).
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<(), FeatureError> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&(self.num_frames() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R, expected_dim: usize) -> Result<Self, FeatureError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != FEATURE_MAGIC {
            return Err(FeatureError::BadMagic(magic));
        }
        let mut word = [0u8; 4];
        read_exact(&mut r, &mut word)?;
        let t = u32::from_le_bytes(word) as usize;
        read_exact(&mut r, &mut word)?;
        let dim = u32::from_le_bytes(word) as usize;
        if dim != expected_dim {
            return Err(FeatureError::DimMismatch { expected: expected_dim, found: dim });
        }
        let mut data = Vec::with_capacity(t * dim);
        for _ in 0..t * dim {
            read_exact(&mut r, &mut word)?;
            data.push(f32::from_le_bytes(word));
        }
        Ok(Self { data, dim })
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), FeatureError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FeatureError::Truncated,
        _ => FeatureError::Io(e),
    })
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter as a contiguous run of FFT-bin weights.
#[derive(Debug, Clone)]
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

fn mel_filterbank(config: &FeatureConfig) -> Vec<MelFilter> {
    let n_bins = config.n_fft / 2 + 1;
    let bin_hz = f64::from(config.sample_rate_hz) / config.n_fft as f64;
    let lo = hz_to_mel(f64::from(config.f_min_hz));
    let hi = hz_to_mel(f64::from(config.f_max_hz));
    let edges: Vec<f64> =
        (0..config.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64)).collect();
    (0..config.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let weights: Vec<(usize, f64)> = (0..n_bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            match weights.first() {
                Some(&(first_bin, _)) => MelFilter { first_bin, weights: weights.iter().map(|&(_, w)| w).collect() },
                None => {
                    // Narrower than one bin: fall back to the nearest bin.
                    let k = ((center / bin_hz).round() as usize).min(n_bins - 1);
                    MelFilter { first_bin: k, weights: vec![1.0] }
                }
            }
        })
        .collect()
}

/// Batch and streaming log-Mel extractor. Construction precomputes the
/// window, filterbank and FFT plan; extraction itself is stateless.
#[derive(Clone)]
pub struct LogMel {
    config: FeatureConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMel").field("config", &self.config).finish()
    }
}

impl LogMel {
    pub fn new(config: FeatureConfig) -> Self {
        assert!(config.n_fft >= config.frame_length, "FFT shorter than frame");
        let n = config.frame_length;
        let window =
            (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()).collect();
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Self { config, window, filters: mel_filterbank(&config), fft }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// Log-Mel energies of one `frame_length`-sample frame.
    fn frame(&self, samples: &[f64], out: &mut [f32], scratch: &mut Vec<Complex<f64>>) {
        debug_assert_eq!(samples.len(), self.config.frame_length);
        let pre = f64::from(self.config.preemphasis);
        scratch.clear();
        scratch.resize(self.config.n_fft, Complex::new(0.0, 0.0));
        for i in 0..samples.len() {
            let prev = if i == 0 { samples[0] } else { samples[i - 1] };
            scratch[i].re = (samples[i] - pre * prev) * self.window[i];
        }
        self.fft.process(scratch);
        let floor = f64::from(self.config.energy_floor);
        for (filter, o) in self.filters.iter().zip(out.iter_mut()) {
            let energy: f64 =
                filter.weights.iter().enumerate().map(|(j, w)| w * scratch[filter.first_bin + j].norm_sqr()).sum();
            *o = energy.max(floor).ln() as f32;
        }
    }

    /// Batch extraction over a float waveform in [-1, 1).
    pub fn compute(&self, samples: &[f64]) -> FeatureMatrix {
        let t = self.config.num_frames(samples.len());
        let mut out = FeatureMatrix::from_rows(vec![0.0; t * self.config.n_mels], self.config.n_mels);
        let mut scratch = Vec::new();
        for i in 0..t {
            let start = i * self.config.frame_shift;
            self.frame(&samples[start..start + self.config.frame_length], out.row_mut(i), &mut scratch);
        }
        out
    }

    /// Streaming extraction: feeds one chunk, returns the frames it completes.
    pub fn process_chunk(&self, chunk: &[f64], state: &mut LogMelState) -> FeatureMatrix {
        let mut out = FeatureMatrix::new(self.config.n_mels);
        if chunk.is_empty() {
            return out;
        }
        state.pending.extend_from_slice(chunk);
        let mut row = vec![0.0f32; self.config.n_mels];
        let mut scratch = Vec::new();
        let mut offset = 0;
        while offset + self.config.frame_length <= state.pending.len() {
            self.frame(&state.pending[offset..offset + self.config.frame_length], &mut row, &mut scratch);
            out.push_row(&row);
            offset += self.config.frame_shift;
        }
        state.pending.drain(..offset);
        out
    }
}

/// Samples carried between chunks: everything from the start of the next
/// frame onwards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogMelState {
    pending: Vec<f64>,
}

impl LogMelState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Batch log-Mel features with the given configuration.
pub fn logmel(samples: &[f64], config: &FeatureConfig) -> FeatureMatrix {
    LogMel::new(*config).compute(samples)
}
