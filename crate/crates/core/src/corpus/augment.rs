use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, Alignment, CorpusError, CorpusManifest, Utterance, MAX_POSITIVE_DURATION_S};
use crate::audio::{self, duration_s};
use crate::features::FeatureConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub copies: usize,
    pub speed_range: (f64, f64),
    pub snr_db_range: (f64, f64),
    pub max_attempts: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { copies: 5, speed_range: (0.9, 1.1), snr_db_range: (5.0, 20.0), max_attempts: 10 }
    }
}

/// Background-noise clips, as float samples.
#[derive(Debug, Clone, Default)]
pub struct NoiseBank {
    clips: Vec<Vec<f64>>,
}

impl NoiseBank {
    pub fn load(paths: &[PathBuf]) -> Result<Self, CorpusError> {
        let clips =
            paths.iter().map(|p| audio::read_wav(p).map(|pcm| audio::to_float(&pcm))).collect::<Result<Vec<_>, _>>()?;
        Self::from_clips(clips)
    }

    pub fn from_clips(clips: Vec<Vec<f64>>) -> Result<Self, CorpusError> {
        if clips.is_empty() || clips.iter().any(|c| c.is_empty()) {
            return Err(CorpusError::EmptyNoiseBank);
        }
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Applies one speed factor and one noise draw to a waveform.
///
/// The waveform is linearly resampled to `round(n / speed)` samples, so a
/// factor of 1 reproduces the input exactly. The alignment is stretched by
/// `1 / speed` onto the new frame count, staying contiguous. Noise is looped
/// from `noise_offset` and scaled to `snr_db`; `+inf` adds nothing.
pub fn augment_waveform(
    pcm: &[i16],
    alignment: Option<&Alignment>,
    speed: f64,
    snr_db: f64,
    noise: &[f64],
    noise_offset: usize,
    features: &FeatureConfig,
) -> (Vec<i16>, Option<Alignment>) {
    let x = audio::to_float(pcm);
    let n_out = ((x.len() as f64) / speed).round() as usize;
    let mut y: Vec<f64> = (0..n_out)
        .map(|j| {
            let pos = j as f64 * speed;
            let i = pos.floor() as usize;
            if i + 1 >= x.len() {
                return x[x.len() - 1];
            }
            let frac = pos - i as f64;
            x[i] + frac * (x[i + 1] - x[i])
        })
        .collect();

    let signal = mean_power(&y);
    let noise_power = mean_power(noise);
    if signal > 0.0 && noise_power > 0.0 && snr_db.is_finite() {
        let gain = (signal / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
        for (j, v) in y.iter_mut().enumerate() {
            *v += gain * noise[(noise_offset + j) % noise.len()];
        }
    }

    let stretched = alignment.map(|al| {
        let old = al.frames();
        let t_new = features.num_frames(n_out);
        Alignment((0..t_new).map(|t| old[(((t as f64 + 0.5) * speed).floor() as usize).min(old.len() - 1)]).collect())
    });
    (audio::to_pcm(&y), stretched)
}

/// Creates `config.copies` speed-perturbed, noise-mixed copies of a
/// positive utterance and writes their audio to `out_dir`.
pub fn augment(
    manifest: &CorpusManifest,
    utt: &Utterance,
    config: &AugmentConfig,
    bank: &NoiseBank,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<Utterance>, CorpusError> {
    if !utt.is_positive() {
        return Err(CorpusError::NotPositive(utt.id.clone()));
    }
    if bank.is_empty() {
        return Err(CorpusError::EmptyNoiseBank);
    }
    let (lo, hi) = config.speed_range;
    if !(lo > 0.0 && lo <= hi) || config.snr_db_range.0 > config.snr_db_range.1 {
        return Err(CorpusError::InvalidParameter("empty speed or SNR range".into()));
    }
    let features = FeatureConfig::default();
    let pcm = audio::read_wav(&manifest.audio_path(utt))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &utt.id));
    std::fs::create_dir_all(out_dir).map_err(|e| CorpusError::io(out_dir, e))?;
    let out_dir = std::path::absolute(out_dir).map_err(|e| CorpusError::io(out_dir, e))?;

    let mut copies = Vec::with_capacity(config.copies);
    for k in 0..config.copies {
        let mut accepted = None;
        for _ in 0..config.max_attempts {
            let speed = rng.random_range(lo..=hi);
            let snr = rng.random_range(config.snr_db_range.0..=config.snr_db_range.1);
            let clip = &bank.clips[rng.random_range(0..bank.clips.len())];
            let offset = rng.random_range(0..clip.len());
            let n_out = ((pcm.len() as f64) / speed).round() as usize;
            if duration_s(n_out) > MAX_POSITIVE_DURATION_S {
                continue;
            }
            accepted = Some(augment_waveform(&pcm, utt.alignment.as_ref(), speed, snr, clip, offset, &features));
            break;
        }
        let Some((samples, alignment)) = accepted else {
            return Err(CorpusError::AugmentationRejected {
                id: utt.id.clone(),
                max_s: MAX_POSITIVE_DURATION_S,
                attempts: config.max_attempts,
            });
        };
        let id = format!("{}_aug{k}", utt.id);
        let path = out_dir.join(format!("{id}.wav"));
        audio::write_wav(&path, &samples)?;
        copies.push(Utterance {
            id,
            speaker_id: utt.speaker_id.clone(),
            audio_path: path,
            duration_s: duration_s(samples.len()),
            label: utt.label,
            tokens: utt.tokens.clone(),
            alignment,
            augmented_from: Some(utt.id.clone()),
        });
    }
    Ok(copies)
}
