use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use wakeword_core::corpus::{AugmentConfig, BalanceConfig, SynthConfig};
use wakeword_core::decode::DecoderConfig;
use wakeword_core::features::FeatureConfig;
use wakeword_core::train::TrainConfig;

use crate::error::{Failure, EXIT_CONFIG, EXIT_MISSING};

/// Everything a run depends on. Subcommand flags override the file; the
/// result is echoed next to every run's outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Model used by `decode`.
    pub checkpoint: Option<PathBuf>,
    pub corpus: CorpusPaths,
    pub synth: SynthSection,
    pub prepare: PrepareSection,
    pub split: SplitSection,
    pub train: TrainConfig,
    pub decoder: DecoderConfig,
    pub eval: EvalSection,
    pub latency: LatencySection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusPaths {
    /// Full corpus manifest, input to `prepare`.
    pub manifest: Option<PathBuf>,
    /// Text file listing background-noise WAVs, one per line.
    pub noise_list: Option<PathBuf>,
    /// Training pool, input to `split`.
    pub train: Option<PathBuf>,
    pub train_a: Option<PathBuf>,
    pub train_b: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_speakers: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub neg_duration_s: (f64, f64),
    pub phoneme_frames: (usize, usize),
    pub noise_clips: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            n_speakers: d.n_speakers,
            n_pos: d.n_pos,
            n_neg: d.n_neg,
            neg_duration_s: d.neg_duration_s,
            phoneme_frames: d.phoneme_frames,
            noise_clips: d.noise_clips,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_speakers: self.n_speakers,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            seed,
            neg_duration_s: self.neg_duration_s,
            phoneme_frames: self.phoneme_frames,
            noise_clips: self.noise_clips,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepareSection {
    pub min_holdout: usize,
    pub train_cap: usize,
    pub eval_cap: usize,
    /// Augmented copies per training positive; 0 disables augmentation.
    pub augment_copies: usize,
    pub speed_range: (f64, f64),
    pub snr_db_range: (f64, f64),
    pub max_attempts: usize,
}

impl Default for PrepareSection {
    fn default() -> Self {
        let b = BalanceConfig::default();
        let a = AugmentConfig::default();
        Self {
            min_holdout: b.min_holdout,
            train_cap: b.train_cap,
            eval_cap: b.eval_cap,
            augment_copies: 0,
            speed_range: a.speed_range,
            snr_db_range: a.snr_db_range,
            max_attempts: a.max_attempts,
        }
    }
}

impl PrepareSection {
    pub fn balance(&self, seed: u64) -> BalanceConfig {
        BalanceConfig { min_holdout: self.min_holdout, train_cap: self.train_cap, eval_cap: self.eval_cap, seed }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            copies: self.augment_copies,
            speed_range: self.speed_range,
            snr_db_range: self.snr_db_range,
            max_attempts: self.max_attempts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub x_percent: u8,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { x_percent: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub target_fah: f64,
    /// Output directory of the `decode` run being evaluated.
    pub decoded: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { target_fah: 0.1, decoded: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencySection {
    pub ce_decoded: Option<PathBuf>,
    pub ctc_decoded: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::new(EXIT_MISSING, format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().replace('\n', " ");
            Failure::new(EXIT_CONFIG, format!("config {}: {msg}", path.display())).into()
        })
    }

    /// Frontend configuration implied by the encoder's input width.
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig { n_mels: self.train.architecture.input_dim, ..FeatureConfig::default() }
    }

    /// Output directory from the flag, else from the file.
    pub fn out_dir(&self, flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
        flag.or_else(|| self.output_dir.clone())
            .ok_or_else(|| Failure::new(EXIT_CONFIG, "no output directory: pass --out or set output_dir").into())
    }

    /// Writes the resolved configuration as `name` inside `dir`.
    pub fn echo(&self, dir: &Path, name: &str) -> anyhow::Result<()> {
        let text = toml::to_string_pretty(self).context("serialising resolved config")?;
        let path = dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// A required input path: the flag if given, else the config entry.
pub fn input(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    let path =
        flag.or_else(|| from_config.clone()).ok_or_else(|| Failure::new(EXIT_CONFIG, format!("no {what} given")))?;
    if !path.exists() {
        return Err(Failure::new(EXIT_MISSING, format!("{what} {} does not exist", path.display())).into());
    }
    Ok(path)
}
