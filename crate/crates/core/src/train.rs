//! Training loop for the three regimes: frame-wise cross-entropy on aligned
//! data, CTC on unaligned data, and the hybrid that switches from the first
//! to the second at a fixed epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{derive_seed, CorpusManifest};
use crate::features::{FeatureConfig, FeatureMatrix, LogMel};
use crate::loss::{ce_loss, ctc_loss, LossError};
use crate::pipeline::{load_features, PipelineError};
use crate::svdf::{backward, forward, Architecture, Gradients, ModelError, ModelParams};
use crate::tokens::{TokenId, SILENCE};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cross-entropy phase needs alignments; missing for: {}", .0.join(", "))]
    MissingAlignments(Vec<String>),
    #[error("no training utterances for the {0} phase")]
    NoData(LossKind),
    #[error("utterance {id}: {source}")]
    Loss {
        id: String,
        #[source]
        source: LossError,
    },
    #[error("utterance {id}: {source}")]
    Model {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    AlignmentBased,
    AlignmentFree,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Ctc,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Ce => "ce",
            LossKind::Ctc => "ctc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub total_epochs: usize,
    pub hybrid_switch_epoch: usize,
    pub lr_initial: f64,
    pub lr_decay_start_epoch: usize,
    pub lr_decay_factor: f64,
    pub hybrid_ctc_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Clear Adam moments when the hybrid regime switches loss.
    pub reset_moments_on_switch: bool,
    /// Checkpoint period in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Hybrid,
            total_epochs: 180,
            hybrid_switch_epoch: 90,
            lr_initial: 5e-3,
            lr_decay_start_epoch: 60,
            lr_decay_factor: 0.96,
            hybrid_ctc_lr: 5e-4,
            weight_decay: 1e-2,
            batch_size: 16,
            seed: 0,
            reset_moments_on_switch: true,
            checkpoint_every: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.total_epochs == 0 {
            return bad("total_epochs must be positive".into());
        }
        if self.regime == Regime::Hybrid && self.hybrid_switch_epoch >= self.total_epochs {
            return bad(format!(
                "hybrid_switch_epoch {} must be below total_epochs {}",
                self.hybrid_switch_epoch, self.total_epochs
            ));
        }
        for (name, v) in [
            ("lr_initial", self.lr_initial),
            ("lr_decay_factor", self.lr_decay_factor),
            ("hybrid_ctc_lr", self.hybrid_ctc_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Loss used at `epoch`.
    pub fn loss_at(&self, epoch: usize) -> LossKind {
        match self.regime {
            Regime::AlignmentBased => LossKind::Ce,
            Regime::AlignmentFree => LossKind::Ctc,
            Regime::Hybrid if epoch < self.hybrid_switch_epoch => LossKind::Ce,
            Regime::Hybrid => LossKind::Ctc,
        }
    }
}

/// Learning rate at `epoch`: constant, then geometric decay; the hybrid CTC
/// phase uses its own fixed rate.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    if config.regime == Regime::Hybrid && epoch >= config.hybrid_switch_epoch {
        return config.hybrid_ctc_lr;
    }
    if epoch < config.lr_decay_start_epoch {
        config.lr_initial
    } else {
        let k = (epoch - config.lr_decay_start_epoch + 1) as i32;
        config.lr_initial * config.lr_decay_factor.powi(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub skipped_steps: usize,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.trainable().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { m: zeros.clone(), v: zeros, step: 0, skipped_steps: 0 }
    }

    pub fn reset_moments(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        self.step = 0;
    }
}

/// One Adam update with decoupled weight decay. Returns `false` (and counts
/// a skipped step) when the gradient is not finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> bool {
    if !grads.is_finite() {
        state.skipped_steps += 1;
        return false;
    }
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (i, p) in params.trainable_mut().into_iter().enumerate() {
        let (g, m, v) = (&grads.tensors[i], &mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let mut x = f64::from(p[j]);
            x -= lr * weight_decay * x;
            x -= lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + ADAM_EPS);
            p[j] = x as f32;
        }
    }
    true
}

/// Features and targets of one training utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub features: FeatureMatrix,
    /// Per-frame labels for cross-entropy.
    pub frame_targets: Option<Vec<TokenId>>,
    /// Target sequence for CTC, see [`ctc_target`].
    pub sequence: Vec<TokenId>,
}

/// CTC target for a transcript: silence is left to the blank token, so it
/// is dropped. An utterance with nothing but silence keeps one silence
/// token so that the target is never empty.
pub fn ctc_target(tokens: &[TokenId]) -> Vec<TokenId> {
    let target: Vec<TokenId> = tokens.iter().copied().filter(|&t| t != SILENCE).collect();
    if target.is_empty() {
        vec![SILENCE]
    } else {
        target
    }
}

/// Computes features for every utterance of a manifest.
pub fn load_examples(manifest: &CorpusManifest, fc: &FeatureConfig) -> Result<Vec<TrainExample>, TrainError> {
    let frontend = LogMel::new(*fc);
    manifest
        .utterances
        .iter()
        .map(|u| {
            Ok(TrainExample {
                id: u.id.clone(),
                features: load_features(manifest, u, &frontend)?,
                frame_targets: u.alignment.as_ref().map(|a| a.frames().to_vec()),
                sequence: ctc_target(&u.tokens),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub regime_phase: LossKind,
    pub lr: f64,
    pub mean_loss: f64,
    /// Cumulative count of updates skipped for non-finite gradients.
    pub skipped_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

/// What the caller sees after each epoch: the epoch's metrics, the current
/// parameters, and whether this epoch closes a phase.
pub trait TrainObserver {
    fn on_epoch(&mut self, metrics: &EpochMetrics, params: &ModelParams, phase_end: bool);
}

impl<F: FnMut(&EpochMetrics, &ModelParams, bool)> TrainObserver for F {
    fn on_epoch(&mut self, metrics: &EpochMetrics, params: &ModelParams, phase_end: bool) {
        self(metrics, params, phase_end)
    }
}

/// Per-dimension mean and inverse standard deviation over every frame.
pub fn input_normalisation(examples: &[TrainExample], dim: usize) -> (Vec<f32>, Vec<f32>) {
    let mut sum = vec![0.0f64; dim];
    let mut sq = vec![0.0f64; dim];
    let mut n = 0usize;
    for ex in examples {
        for row in ex.features.rows() {
            for (k, &x) in row.iter().enumerate() {
                sum[k] += f64::from(x);
                sq[k] += f64::from(x) * f64::from(x);
            }
            n += 1;
        }
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let scale = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / n as f64 - m * m).max(0.0);
            (1.0 / var.sqrt().max(1e-3)) as f32
        })
        .collect();
    (mean.iter().map(|&m| m as f32).collect(), scale)
}

fn check_alignments(examples: &[TrainExample]) -> Result<(), TrainError> {
    let missing: Vec<String> = examples.iter().filter(|e| e.frame_targets.is_none()).map(|e| e.id.clone()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(TrainError::MissingAlignments(missing))
    }
}

/// Loss and gradient of one example. Infeasible CTC targets (too few
/// frames) contribute nothing.
fn example_gradient(
    params: &ModelParams,
    ex: &TrainExample,
    kind: LossKind,
) -> Result<Option<(f64, Gradients)>, TrainError> {
    let (em, cache) =
        forward(params, &ex.features).map_err(|source| TrainError::Model { id: ex.id.clone(), source })?;
    let out = match kind {
        LossKind::Ce => ce_loss(&em, ex.frame_targets.as_deref().unwrap_or_default()),
        LossKind::Ctc => ctc_loss(&em, &ex.sequence),
    }
    .map_err(|source| TrainError::Loss { id: ex.id.clone(), source })?;
    if !out.feasible {
        log::warn!("{}: CTC target longer than the utterance allows; skipped", ex.id);
        return Ok(None);
    }
    let g = backward(params, &cache, &out.grad).map_err(|source| TrainError::Model { id: ex.id.clone(), source })?;
    Ok(Some((out.loss, g)))
}

/// Trains from pre-computed examples. Phase A feeds the cross-entropy
/// epochs (and all epochs of the single-loss regimes); phase B feeds the
/// hybrid CTC epochs. Input normalisation is measured on phase A.
pub fn train_examples(
    phase_a: &[TrainExample],
    phase_b: &[TrainExample],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let fc = FeatureConfig { n_mels: config.architecture.input_dim, ..FeatureConfig::default() };
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init"));
    let mut params = ModelParams::init(&config.architecture, fc, &mut init_rng);
    if phase_a.is_empty() {
        return Err(TrainError::NoData(config.loss_at(0)));
    }
    if config.loss_at(0) == LossKind::Ce {
        check_alignments(phase_a)?;
    }
    let (mean, scale) = input_normalisation(phase_a, config.architecture.input_dim);
    params.input_mean = mean;
    params.input_scale = scale;

    let epochs = if config.regime == Regime::Hybrid && phase_b.is_empty() {
        log::info!("hybrid regime with no phase-B data; stopping after the CE phase");
        config.hybrid_switch_epoch
    } else {
        config.total_epochs
    };

    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle"));
    let mut metrics = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let kind = config.loss_at(epoch);
        let data = if config.regime == Regime::Hybrid && kind == LossKind::Ctc { phase_b } else { phase_a };
        if config.regime == Regime::Hybrid && epoch == config.hybrid_switch_epoch && config.reset_moments_on_switch {
            adam.reset_moments();
        }
        let lr = lr_schedule(epoch, config);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let (mut loss_sum, mut counted) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(&params);
            let mut used = 0usize;
            for &i in batch {
                if let Some((loss, g)) = example_gradient(&params, &data[i], kind)? {
                    grads.add_scaled(&g, 1.0);
                    loss_sum += loss;
                    counted += 1;
                    used += 1;
                }
            }
            if used == 0 {
                continue;
            }
            for t in grads.tensors.iter_mut() {
                t.iter_mut().for_each(|x| *x /= used as f64);
            }
            adam_step(&mut params, &grads, &mut adam, lr, config.weight_decay);
        }
        let m = EpochMetrics {
            epoch,
            regime_phase: kind,
            lr,
            mean_loss: if counted == 0 { f64::NAN } else { loss_sum / counted as f64 },
            skipped_steps: adam.skipped_steps,
        };
        log::info!("epoch {epoch} {kind} lr {lr:.3e} loss {:.5}", m.mean_loss);
        let phase_end = epoch + 1 == epochs || config.loss_at(epoch + 1) != kind;
        observer.on_epoch(&m, &params, phase_end);
        metrics.push(m);
    }
    Ok(TrainOutcome { params, metrics })
}

/// Loads both manifests and trains. For hybrid runs `train_b` supplies the
/// CTC phase; the single-loss regimes ignore it.
pub fn train_regime(
    train_a: &CorpusManifest,
    train_b: &CorpusManifest,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let fc = FeatureConfig { n_mels: config.architecture.input_dim, ..FeatureConfig::default() };
    let a = load_examples(train_a, &fc)?;
    if config.loss_at(0) == LossKind::Ce {
        check_alignments(&a)?;
    }
    let b = if config.regime == Regime::Hybrid { load_examples(train_b, &fc)? } else { Vec::new() };
    train_examples(&a, &b, config, observer)
}
