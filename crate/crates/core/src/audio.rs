//! 16 kHz mono 16-bit PCM WAV input/output.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: unsupported audio format ({detail}); expected 16 kHz mono 16-bit PCM")]
    UnsupportedFormat { path: PathBuf, detail: String },
}

impl AudioError {
    pub fn is_not_found(&self) -> bool {
        matches!(self, AudioError::Wav { source: hound::Error::IoError(e), .. }
            if e.kind() == std::io::ErrorKind::NotFound)
    }
}

/// Reads a WAV file, rejecting anything that is not 16 kHz mono 16-bit
/// integer PCM.
pub fn read_wav(path: &Path) -> Result<Vec<i16>, AudioError> {
    let wrap = |source| AudioError::Wav { path: path.to_path_buf(), source };
    let reader = hound::WavReader::open(path).map_err(wrap)?;
    let spec = reader.spec();
    let mut problems = Vec::new();
    if spec.sample_rate != SAMPLE_RATE {
        problems.push(format!("{} Hz", spec.sample_rate));
    }
    if spec.channels != 1 {
        problems.push(format!("{} channels", spec.channels));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        problems.push(format!("{}-bit {:?}", spec.bits_per_sample, spec.sample_format));
    }
    if !problems.is_empty() {
        return Err(AudioError::UnsupportedFormat { path: path.to_path_buf(), detail: problems.join(", ") });
    }
    reader.into_samples::<i16>().collect::<Result<_, _>>().map_err(wrap)
}

pub fn write_wav(path: &Path, samples: &[i16]) -> Result<(), AudioError> {
    let wrap = |source| AudioError::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        writer.write_sample(s).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Converts PCM to floats in [-1, 1).
pub fn to_float(samples: &[i16]) -> Vec<f64> {
    samples.iter().map(|&s| f64::from(s) / 32768.0).collect()
}

/// Rounds and saturates float samples in [-1, 1) back to PCM.
pub fn to_pcm(samples: &[f64]) -> Vec<i16> {
    samples.iter().map(|&x| (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16).collect()
}

pub fn duration_s(n_samples: usize) -> f64 {
    n_samples as f64 / f64::from(SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<i16> = (0..1000).map(|i| ((i * 37) % 2000 - 1000) as i16).collect();
        write_wav(&path, &samples).unwrap();
        assert_eq!(read_wav(&path).unwrap(), samples);
    }

    #[test]
    fn rejects_stereo_and_other_rates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, AudioError::UnsupportedFormat { .. }));
        assert!(msg.contains("8000 Hz") && msg.contains("2 channels"), "{msg}");
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert!(err.is_not_found());
    }

    #[test]
    fn pcm_float_round_trip_is_exact() {
        let pcm = vec![-32768i16, -1, 0, 1, 32767];
        assert_eq!(to_pcm(&to_float(&pcm)), pcm);
    }
}
