//! Glue from manifests to features, emissions, trajectories and DET
//! summaries.

use thiserror::Error;

use crate::audio::{read_wav, to_float, AudioError};
use crate::corpus::{CorpusManifest, Utterance};
use crate::decode::{run_decoder, DecodeError, DecoderConfig, ScoreTrajectory};
use crate::eval::{det_curve, frr_at_fah, DetCurve, EvalError};
use crate::features::{FeatureMatrix, LogMel};
use crate::svdf::{forward, EmissionMatrix, ModelError, ModelParams};
use crate::tokens::KEYWORD;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("utterance {id}: {source}")]
    Model {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Reads an utterance's audio and computes its log-Mel features.
pub fn load_features(
    manifest: &CorpusManifest,
    utt: &Utterance,
    frontend: &LogMel,
) -> Result<FeatureMatrix, PipelineError> {
    let pcm = read_wav(&manifest.audio_path(utt))?;
    Ok(frontend.compute(&to_float(&pcm)))
}

pub fn emissions(params: &ModelParams, id: &str, feats: &FeatureMatrix) -> Result<EmissionMatrix, PipelineError> {
    forward(params, feats).map(|(em, _)| em).map_err(|source| PipelineError::Model { id: id.to_string(), source })
}

/// Decoder output for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    pub id: String,
    pub positive: bool,
    pub duration_s: f64,
    pub trajectory: ScoreTrajectory,
    pub mean_blank_prob: f64,
    pub frames: usize,
}

/// Runs every utterance of `manifest` through the model and the decoder.
pub fn decode_manifest(
    params: &ModelParams,
    manifest: &CorpusManifest,
    decoder: &DecoderConfig,
) -> Result<Vec<StreamResult>, PipelineError> {
    let frontend = LogMel::new(params.feature_config);
    manifest
        .utterances
        .iter()
        .map(|utt| {
            let feats = load_features(manifest, utt, &frontend)?;
            let em = emissions(params, &utt.id, &feats)?;
            let (trajectory, _) = run_decoder(&utt.id, &em, decoder, &KEYWORD)?;
            Ok(StreamResult {
                id: utt.id.clone(),
                positive: utt.is_positive(),
                duration_s: utt.duration_s,
                trajectory,
                mean_blank_prob: em.mean_blank_prob(),
                frames: em.num_frames(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub curve: DetCurve,
    pub frr_at_target: f64,
    pub threshold_at_target: f64,
    pub target_fah: f64,
    pub positives: usize,
    pub negative_hours: f64,
    /// Frame-weighted mean blank probability over every stream.
    pub mean_blank_prob: f64,
}

/// DET curve and FRR at `target_fah` from decoded streams. A positive whose
/// trajectory is empty counts as a rejection at every threshold.
pub fn summarize(
    results: &[StreamResult],
    decoder: &DecoderConfig,
    target_fah: f64,
) -> Result<EvalSummary, PipelineError> {
    let pos_peaks: Vec<f64> =
        results.iter().filter(|r| r.positive).map(|r| r.trajectory.peak().unwrap_or(0.0)).collect();
    let negs: Vec<ScoreTrajectory> = results.iter().filter(|r| !r.positive).map(|r| r.trajectory.clone()).collect();
    let negative_hours = results.iter().filter(|r| !r.positive).map(|r| r.duration_s).sum::<f64>() / 3600.0;
    let curve = det_curve(&pos_peaks, &negs, negative_hours, decoder.refractory_frames)?;
    let (frr_at_target, threshold_at_target) = frr_at_fah(&curve, target_fah)?;
    let frames: usize = results.iter().map(|r| r.frames).sum();
    let mean_blank_prob =
        results.iter().map(|r| r.mean_blank_prob * r.frames as f64).sum::<f64>() / frames.max(1) as f64;
    Ok(EvalSummary {
        curve,
        frr_at_target,
        threshold_at_target,
        target_fah,
        positives: pos_peaks.len(),
        negative_hours,
        mean_blank_prob,
    })
}
