use sha2::{Digest, Sha256};

use super::{CorpusError, CorpusManifest};

/// `A[x_percent]` / `B[100 - x_percent]` split request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub x_percent: u8,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(x_percent: u8, seed: u64) -> Result<Self, CorpusError> {
        if x_percent > 100 {
            return Err(CorpusError::InvalidParameter(format!("split percentage {x_percent} > 100")));
        }
        Ok(Self { x_percent, seed })
    }

    pub fn b_percent(&self) -> u8 {
        100 - self.x_percent
    }
}

/// Deterministic map of `(key, seed)` to `[0, 1)`.
pub fn normalized_hash(key: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let digest = h.finalize();
    let top = u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
    // 53 significant bits so the division is exact.
    (top >> 11) as f64 / (1u64 << 53) as f64
}

/// Splits by thresholding each utterance's hash at `x/100`. Because the hash
/// does not depend on `x`, `A[x]` grows monotonically with `x` and `B` is
/// always its complement. Augmented copies hash their parent's id.
pub fn split_ab(manifest: &CorpusManifest, spec: SplitSpec) -> (CorpusManifest, CorpusManifest) {
    let cut = f64::from(spec.x_percent) / 100.0;
    let (a, b) = manifest.utterances.iter().cloned().partition(|u| normalized_hash(u.split_key(), spec.seed) < cut);
    (manifest.with_utterances(a), manifest.with_utterances(b))
}
