//! Desk-scale synthetic corpora with exact alignments.
//!
//! Every non-blank token has a fixed spectral signature: two or three
//! sinusoidal partials plus band-limited noise. Speakers shift all partials
//! by a pitch factor and speak at their own rate. Positives embed the nine
//! keyword phonemes in silence/unknown filler; negatives contain filler only.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{derive_seed, Alignment, CorpusError, CorpusManifest, Label, Utterance};
use crate::audio::{self, duration_s};
use crate::features::FeatureConfig;
use crate::tokens::{collapse_repeats, TokenId, KEYWORD, SILENCE, UNKNOWN};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
    /// Duration range of negative utterances, seconds.
    pub neg_duration_s: (f64, f64),
    /// Frames per keyword phoneme before the speaker's rate is applied.
    pub phoneme_frames: (usize, usize),
    /// Number of background-noise clips written for augmentation.
    pub noise_clips: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 20,
            n_pos: 200,
            n_neg: 800,
            seed: 0,
            neg_duration_s: (2.0, 6.0),
            phoneme_frames: (5, 9),
            noise_clips: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    pub noise_bank: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct Signature {
    partials: [(f64, f64); 3],
    band_hz: f64,
    band_amp: f64,
    white_amp: f64,
}

fn signature(token: TokenId) -> Signature {
    match token {
        SILENCE => Signature { partials: [(0.0, 0.0); 3], band_hz: 1000.0, band_amp: 0.0, white_amp: 0.01 },
        UNKNOWN => Signature {
            partials: [(520.0, 0.5), (2350.0, 0.35), (3900.0, 0.2)],
            band_hz: 1200.0,
            band_amp: 0.5,
            white_amp: 0.02,
        },
        k => {
            let k = k as f64;
            let f1 = 300.0 * 1.25f64.powf(k);
            let f2 = 4800.0 / 1.17f64.powf(k);
            let f3 = 2200.0 + 450.0 * ((token * 4) % 9) as f64;
            let third = if token.is_multiple_of(2) { 0.3 } else { 0.0 };
            Signature {
                partials: [(f1, 0.6), (f2, 0.4), (f3, third)],
                band_hz: 5200.0 + 250.0 * k,
                band_amp: 0.25,
                white_amp: 0.01,
            }
        }
    }
}

/// RBJ band-pass biquad.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / f64::from(audio::SAMPLE_RATE);
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Per-speaker voice parameters.
#[derive(Debug, Clone, Copy)]
struct Voice {
    pitch: f64,
    rate: f64,
}

fn voice(seed: u64, speaker: &str) -> Voice {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, speaker));
    Voice { pitch: rng.random_range(0.93..1.07), rate: rng.random_range(0.85..1.15) }
}

/// Renders audio for a frame-level alignment. Sample `i` belongs to the
/// frame whose 25 ms window is centred nearest to it.
pub fn render_utterance<R: Rng>(alignment: &Alignment, pitch: f64, level: f64, rng: &mut R) -> Vec<i16> {
    let cfg = FeatureConfig::default();
    let frames = alignment.frames();
    let n = cfg.samples_for_frames(frames.len());
    let offset = (cfg.frame_length - cfg.frame_shift) / 2;
    let frame_of = |i: usize| (i.saturating_sub(offset) / cfg.frame_shift).min(frames.len() - 1);
    let sr = f64::from(audio::SAMPLE_RATE);
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let token = frames[frame_of(start)];
        let mut end = start + 1;
        while end < n && frames[frame_of(end)] == token {
            end += 1;
        }
        let sig = signature(token);
        let phases: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
        let mut band = BandPass::new((sig.band_hz * pitch).min(7800.0), 4.0);
        let fade = 80.min((end - start) / 2).max(1);
        for i in start..end {
            let t = (i - start) as f64 / sr;
            let mut v = 0.0;
            for (p, (freq, amp)) in sig.partials.iter().enumerate() {
                if *amp > 0.0 {
                    v += amp * (2.0 * PI * freq * pitch * t + phases[p]).sin();
                }
            }
            let g: f64 = StandardNormal.sample(rng);
            v += sig.band_amp * band.step(g) * 3.0;
            let w: f64 = StandardNormal.sample(rng);
            v += sig.white_amp * w;
            let from_start = (i - start) as f64;
            let from_end = (end - 1 - i) as f64;
            let env = (from_start.min(from_end) / fade as f64).min(1.0);
            out[i] = level * v * (0.5 - 0.5 * (PI * env).cos());
        }
        start = end;
    }
    // Low-level background noise across the whole recording.
    for v in out.iter_mut() {
        let g: f64 = StandardNormal.sample(rng);
        *v += 0.002 * g;
    }
    audio::to_pcm(&out)
}

fn positive_alignment<R: Rng>(rng: &mut R, voice: Voice, phoneme_frames: (usize, usize)) -> Alignment {
    let mut runs = vec![(SILENCE, rng.random_range(10..=40))];
    if rng.random_bool(0.5) {
        runs.push((UNKNOWN, rng.random_range(10..=40)));
        runs.push((SILENCE, rng.random_range(5..=15)));
    }
    for &ph in &KEYWORD {
        let base = rng.random_range(phoneme_frames.0..=phoneme_frames.1) as f64;
        runs.push((ph, ((base * voice.rate).round() as usize).max(1)));
    }
    runs.push((SILENCE, rng.random_range(15..=40)));
    if rng.random_bool(0.3) {
        runs.push((UNKNOWN, rng.random_range(10..=30)));
        runs.push((SILENCE, rng.random_range(5..=15)));
    }
    Alignment::from_runs(&runs)
}

fn negative_alignment<R: Rng>(rng: &mut R, frames: usize) -> Alignment {
    let mut out = Vec::with_capacity(frames);
    let mut token = if rng.random_bool(0.5) { SILENCE } else { UNKNOWN };
    while out.len() < frames {
        let len = if token == SILENCE { rng.random_range(10..=60) } else { rng.random_range(20..=100) };
        out.extend(std::iter::repeat_n(token, len.min(frames - out.len())));
        token = if token == SILENCE { UNKNOWN } else { SILENCE };
    }
    Alignment(out)
}

fn noise_clip<R: Rng>(kind: usize, n: usize, rng: &mut R) -> Vec<f64> {
    let mut band = BandPass::new(300.0 + 900.0 * kind as f64, 1.5);
    let mut low = 0.0;
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            match kind % 3 {
                0 => 0.1 * g,
                1 => {
                    low = 0.97 * low + 0.03 * g;
                    1.0 * low
                }
                _ => 0.3 * band.step(g),
            }
        })
        .collect()
}

/// Writes a synthetic corpus (WAVs under `out_dir/audio`, a noise bank under
/// `out_dir/noise`) and returns its manifest. Identical configs produce
/// byte-identical audio.
pub fn generate_synthetic_corpus(out_dir: &Path, config: &SynthConfig) -> Result<SyntheticCorpus, CorpusError> {
    if config.n_speakers == 0 || config.n_pos + config.n_neg == 0 {
        return Err(CorpusError::InvalidParameter("need at least one speaker and one utterance".into()));
    }
    let (dmin, dmax) = config.neg_duration_s;
    if !(dmin > 0.0 && dmin <= dmax)
        || config.phoneme_frames.0 == 0
        || config.phoneme_frames.0 > config.phoneme_frames.1
    {
        return Err(CorpusError::InvalidParameter("empty duration range".into()));
    }
    let audio_dir = out_dir.join("audio");
    let noise_dir = out_dir.join("noise");
    for d in [&audio_dir, &noise_dir] {
        std::fs::create_dir_all(d).map_err(|e| CorpusError::io(d, e))?;
    }

    let speakers: Vec<String> = (0..config.n_speakers).map(|s| format!("spk{s:03}")).collect();
    // Uneven speaker contributions, as in crowd-sourced collections.
    let weights: Vec<f64> = (0..config.n_speakers).map(|s| 1.0 / ((s + 1) as f64).powf(0.7)).collect();
    let pick = WeightedIndex::new(&weights).expect("positive weights");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let features = FeatureConfig::default();

    let mut utterances = Vec::with_capacity(config.n_pos + config.n_neg);
    let jobs = (0..config.n_pos)
        .map(|i| (format!("pos_{i:05}"), Label::Positive))
        .chain((0..config.n_neg).map(|i| (format!("neg_{i:05}"), Label::Negative)));
    for (id, label) in jobs {
        let speaker = &speakers[pick.sample(&mut rng)];
        let v = voice(config.seed, speaker);
        let mut urng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &id));
        let alignment = match label {
            Label::Positive => positive_alignment(&mut urng, v, config.phoneme_frames),
            Label::Negative => {
                let secs = urng.random_range(dmin..=dmax);
                negative_alignment(&mut urng, features.num_frames((secs * 16000.0) as usize).max(1))
            }
        };
        let level = urng.random_range(0.05..0.25);
        let pcm = render_utterance(&alignment, v.pitch, level, &mut urng);
        let rel = PathBuf::from("audio").join(format!("{id}.wav"));
        audio::write_wav(&out_dir.join(&rel), &pcm)?;
        utterances.push(Utterance {
            id,
            speaker_id: speaker.clone(),
            audio_path: rel,
            duration_s: duration_s(pcm.len()),
            label,
            tokens: collapse_repeats(alignment.frames()),
            alignment: Some(alignment),
            augmented_from: None,
        });
    }

    let mut noise_bank = Vec::with_capacity(config.noise_clips);
    let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "noise"));
    for k in 0..config.noise_clips {
        let path = noise_dir.join(format!("noise_{k}.wav"));
        audio::write_wav(&path, &audio::to_pcm(&noise_clip(k, 3 * 16000, &mut nrng)))?;
        noise_bank.push(path);
    }
    Ok(SyntheticCorpus { manifest: CorpusManifest::new(utterances, out_dir)?, noise_bank })
}
