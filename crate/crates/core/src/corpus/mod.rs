//! Corpus manifests and the data-preparation steps applied to them:
//! speaker balancing, nested A/B splits, augmentation and synthetic corpus
//! generation.

mod augment;
mod balance;
mod manifest;
mod split;
mod synth;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use augment::{augment, augment_waveform, AugmentConfig, NoiseBank};
pub use balance::{balance_speakers, BalanceConfig};
pub use manifest::{Alignment, CorpusManifest, Label, Utterance, MAX_POSITIVE_DURATION_S};
pub use split::{normalized_hash, split_ab, SplitSpec};
pub use synth::{generate_synthetic_corpus, render_utterance, SynthConfig, SyntheticCorpus};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Audio(#[from] crate::audio::AudioError),
    #[error("utterance {id}: {why}")]
    InvalidUtterance { id: String, why: String },
    #[error("duplicate utterance id {0}")]
    DuplicateId(String),
    #[error("token inventory has {0} entries, expected 12")]
    Inventory(usize),
    #[error("manifest is empty")]
    Empty,
    #[error("every speaker has fewer than {min_holdout} utterances; nothing left for training")]
    NoTrainSpeakers { min_holdout: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("utterance {0} is not a positive; only positives are augmented")]
    NotPositive(String),
    #[error("noise bank is empty")]
    EmptyNoiseBank,
    #[error("utterance {id}: no augmented copy within {max_s} s after {attempts} attempts")]
    AugmentationRejected { id: String, max_s: f64, attempts: usize },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.to_path_buf(), source }
    }
}

/// Stable 64-bit seed derived from a base seed and a string key.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(b"seed");
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
pub(crate) fn test_utt(id: &str, speaker: &str, label: Label, frames: usize) -> Utterance {
    let cfg = crate::features::FeatureConfig::default();
    let n = cfg.samples_for_frames(frames);
    Utterance {
        id: id.into(),
        speaker_id: speaker.into(),
        audio_path: PathBuf::from(format!("audio/{id}.wav")),
        duration_s: n as f64 / 16000.0,
        label,
        tokens: vec![9, 0, 9],
        alignment: Some(Alignment::from_runs(&[(9, 2), (0, frames - 4), (9, 2)])),
        augmented_from: None,
    }
}
