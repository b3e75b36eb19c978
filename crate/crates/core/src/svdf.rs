//! Stacked SVDF encoder.
//!
//! Every node of a layer owns a rank-1 factorisation: a feature filter that
//! projects the current input frame to a scalar, and a time filter over the
//! last `memory` such scalars. With `a[t,n] = feature_filter_n . x[t]` the
//! layer output is
//!
//! ```text
//! h[t,n] = relu(sum_{m<M} time_filter_n[m] * a[t-m,n] + bias_n),   a[t'<0] = 0
//! ```
//!
//! A final affine projection to the 12-token inventory and a log-softmax
//! produce the per-frame emissions. Parameters are stored as `f32` (the
//! checkpoint format); all arithmetic is carried out in `f64`.

use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureConfig, FeatureMatrix};
use crate::math::log_softmax_in_place;
use crate::tokens::{default_inventory, BLANK, NUM_TOKENS};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("layer {layer}: expected input dimension {expected}, got {found}")]
    DimMismatch { layer: usize, expected: usize, found: usize },
    #[error("output projection has shape {rows}x{cols}, expected {NUM_TOKENS}x{expected_cols}")]
    OutputShape { rows: usize, cols: usize, expected_cols: usize },
    #[error("layer {layer}: {what}")]
    BadLayer { layer: usize, what: String },
    #[error("empty feature matrix")]
    EmptyInput,
    #[error("forward cache does not belong to these parameters")]
    StaleCache,
    #[error("upstream gradient has {found} rows, cache has {expected}")]
    GradientShape { expected: usize, found: usize },
}

/// Layer sizes of an encoder: `(nodes, memory)` per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub layers: Vec<LayerShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub nodes: usize,
    pub memory: usize,
}

impl Default for Architecture {
    /// Three layers of 32 nodes with a four-frame memory.
    fn default() -> Self {
        Self { input_dim: crate::features::NUM_MELS, layers: vec![LayerShape { nodes: 32, memory: 4 }; 3] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvdfLayerParams {
    pub input_dim: usize,
    pub nodes: usize,
    pub memory: usize,
    /// `nodes x input_dim`, row-major.
    pub feature_filters: Vec<f32>,
    /// `nodes x memory`, row-major; tap `m` weighs the activation `m` frames back.
    pub time_filters: Vec<f32>,
    pub bias: Vec<f32>,
}

impl SvdfLayerParams {
    pub fn zeros(input_dim: usize, shape: LayerShape) -> Self {
        Self {
            input_dim,
            nodes: shape.nodes,
            memory: shape.memory,
            feature_filters: vec![0.0; shape.nodes * input_dim],
            time_filters: vec![0.0; shape.nodes * shape.memory],
            bias: vec![0.0; shape.nodes],
        }
    }

    fn validate(&self, layer: usize) -> Result<(), ModelError> {
        let bad = |what: String| Err(ModelError::BadLayer { layer, what });
        if self.nodes == 0 || self.memory == 0 || self.input_dim == 0 {
            return bad(format!("degenerate shape {}x{} memory {}", self.nodes, self.input_dim, self.memory));
        }
        if self.feature_filters.len() != self.nodes * self.input_dim
            || self.time_filters.len() != self.nodes * self.memory
            || self.bias.len() != self.nodes
        {
            return bad("tensor lengths disagree with declared shape".into());
        }
        Ok(())
    }
}

/// All encoder weights plus the frontend configuration they were trained
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub feature_config: FeatureConfig,
    pub token_inventory: Vec<String>,
    /// Fixed (not trained) per-dimension input normalisation:
    /// `x' = (x - input_mean) * input_scale`.
    pub input_mean: Vec<f32>,
    pub input_scale: Vec<f32>,
    pub layers: Vec<SvdfLayerParams>,
    /// `NUM_TOKENS x last_nodes`, row-major.
    pub output_weights: Vec<f32>,
    pub output_bias: Vec<f32>,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture, feature_config: FeatureConfig) -> Self {
        let mut input_dim = arch.input_dim;
        let layers = arch
            .layers
            .iter()
            .map(|&shape| {
                let l = SvdfLayerParams::zeros(input_dim, shape);
                input_dim = shape.nodes;
                l
            })
            .collect();
        Self {
            feature_config,
            token_inventory: default_inventory(),
            input_mean: vec![0.0; arch.input_dim],
            input_scale: vec![1.0; arch.input_dim],
            layers,
            output_weights: vec![0.0; NUM_TOKENS * input_dim],
            output_bias: vec![0.0; NUM_TOKENS],
        }
    }

    /// He-style random initialisation. Time filters start close to a unit
    /// impulse on the current frame.
    pub fn init<R: Rng>(arch: &Architecture, feature_config: FeatureConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch, feature_config);
        let fill = |v: &mut [f32], std: f64, rng: &mut R| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in v.iter_mut() {
                *x = normal.sample(rng) as f32;
            }
        };
        for layer in &mut p.layers {
            fill(&mut layer.feature_filters, (2.0 / layer.input_dim as f64).sqrt(), rng);
            fill(&mut layer.time_filters, 0.3 / (layer.memory as f64).sqrt(), rng);
            for n in 0..layer.nodes {
                layer.time_filters[n * layer.memory] += 1.0;
            }
            layer.bias.iter_mut().for_each(|b| *b = 0.01);
        }
        let last = p.last_nodes();
        fill(&mut p.output_weights, (1.0 / last as f64).sqrt(), rng);
        p
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.input_mean.len(),
            layers: self.layers.iter().map(|l| LayerShape { nodes: l.nodes, memory: l.memory }).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    fn last_nodes(&self) -> usize {
        self.layers.last().map_or(self.input_dim(), |l| l.nodes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_scale.len() != self.input_mean.len() {
            return Err(ModelError::DimMismatch {
                layer: 0,
                expected: self.input_mean.len(),
                found: self.input_scale.len(),
            });
        }
        let mut dim = self.input_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
            if layer.input_dim != dim {
                return Err(ModelError::DimMismatch { layer: i, expected: dim, found: layer.input_dim });
            }
            dim = layer.nodes;
        }
        if self.output_weights.len() != NUM_TOKENS * dim || self.output_bias.len() != NUM_TOKENS {
            return Err(ModelError::OutputShape {
                rows: self.output_bias.len(),
                cols: self.output_weights.len() / self.output_bias.len().max(1),
                expected_cols: dim,
            });
        }
        Ok(())
    }

    /// Trainable tensors in declaration order (normalisation excluded).
    pub fn trainable_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.feature_filters);
            out.push(&mut l.time_filters);
            out.push(&mut l.bias);
        }
        out.push(&mut self.output_weights);
        out.push(&mut self.output_bias);
        out
    }

    pub fn trainable(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for l in &self.layers {
            out.push(&l.feature_filters);
            out.push(&l.time_filters);
            out.push(&l.bias);
        }
        out.push(&self.output_weights);
        out.push(&self.output_bias);
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Hash of every parameter bit; ties a forward cache to its weights.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for t in self.trainable() {
            for v in t {
                v.to_bits().hash(&mut h);
            }
        }
        for v in self.input_mean.iter().chain(&self.input_scale) {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Gradient with the same layout as [`ModelParams::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self { tensors: params.trainable().iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }
}

/// T x 12 per-frame log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    data: Vec<f64>,
}

impl EmissionMatrix {
    pub fn from_logprobs(data: Vec<f64>) -> Self {
        assert_eq!(data.len() % NUM_TOKENS, 0, "ragged emission matrix");
        Self { data }
    }

    /// Builds log-probabilities from rows of (unnormalised) probabilities.
    pub fn from_probs(rows: &[[f64; NUM_TOKENS]]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * NUM_TOKENS);
        for r in rows {
            let total: f64 = r.iter().sum();
            data.extend(r.iter().map(|p| (p / total).ln().max(crate::math::LOG_ZERO)));
        }
        Self { data }
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / NUM_TOKENS
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * NUM_TOKENS..(t + 1) * NUM_TOKENS]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(NUM_TOKENS)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sub-matrix of frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> EmissionMatrix {
        EmissionMatrix { data: self.data[start * NUM_TOKENS..end * NUM_TOKENS].to_vec() }
    }

    pub fn mean_blank_prob(&self) -> f64 {
        if self.num_frames() == 0 {
            return 0.0;
        }
        self.rows().map(|r| r[BLANK].exp()).sum::<f64>() / self.num_frames() as f64
    }
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    frames: usize,
    /// Normalised input, T x F.
    input: Vec<f64>,
    layers: Vec<LayerCache>,
    /// Per-frame softmax of the output.
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Feature-filter outputs, T x N.
    proj: Vec<f64>,
    /// Pre-activation, T x N.
    pre: Vec<f64>,
    /// ReLU output, T x N.
    out: Vec<f64>,
}

fn check_input(params: &ModelParams, feats: &FeatureMatrix) -> Result<(), ModelError> {
    params.validate()?;
    if feats.num_frames() == 0 {
        return Err(ModelError::EmptyInput);
    }
    if feats.dim() != params.input_dim() {
        return Err(ModelError::DimMismatch { layer: 0, expected: params.input_dim(), found: feats.dim() });
    }
    Ok(())
}

fn normalise(params: &ModelParams, row: &[f32], out: &mut [f64]) {
    for (((o, &x), &m), &s) in out.iter_mut().zip(row).zip(&params.input_mean).zip(&params.input_scale) {
        *o = (f64::from(x) - f64::from(m)) * f64::from(s);
    }
}

#[inline]
fn dot(w: &[f32], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(&a, &b)| f64::from(a) * b).sum()
}

fn output_logits(params: &ModelParams, h: &[f64], out: &mut [f64]) {
    let n = h.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = dot(&params.output_weights[k * n..(k + 1) * n], h) + f64::from(params.output_bias[k]);
    }
}

/// Batch forward pass over a whole utterance.
pub fn forward(params: &ModelParams, feats: &FeatureMatrix) -> Result<(EmissionMatrix, ForwardCache), ModelError> {
    check_input(params, feats)?;
    let t_len = feats.num_frames();
    let f = params.input_dim();
    let mut input = vec![0.0; t_len * f];
    for t in 0..t_len {
        normalise(params, feats.row(t), &mut input[t * f..(t + 1) * f]);
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    let mut x: &[f64] = &input;
    for layer in &params.layers {
        let (n, m, d) = (layer.nodes, layer.memory, layer.input_dim);
        let mut proj = vec![0.0; t_len * n];
        for t in 0..t_len {
            let xt = &x[t * d..(t + 1) * d];
            for j in 0..n {
                proj[t * n + j] = dot(&layer.feature_filters[j * d..(j + 1) * d], xt);
            }
        }
        let mut pre = vec![0.0; t_len * n];
        let mut out = vec![0.0; t_len * n];
        for t in 0..t_len {
            for j in 0..n {
                let mut z = 0.0;
                for tap in 0..m.min(t + 1) {
                    z += f64::from(layer.time_filters[j * m + tap]) * proj[(t - tap) * n + j];
                }
                z += f64::from(layer.bias[j]);
                pre[t * n + j] = z;
                out[t * n + j] = z.max(0.0);
            }
        }
        layers.push(LayerCache { proj, pre, out });
        x = &layers.last().unwrap().out;
    }

    let last = params.last_nodes();
    let mut logp = vec![0.0; t_len * NUM_TOKENS];
    let mut probs = vec![0.0; t_len * NUM_TOKENS];
    for t in 0..t_len {
        let row = &mut logp[t * NUM_TOKENS..(t + 1) * NUM_TOKENS];
        output_logits(params, &x[t * last..(t + 1) * last], row);
        log_softmax_in_place(row);
        for (p, l) in probs[t * NUM_TOKENS..(t + 1) * NUM_TOKENS].iter_mut().zip(row.iter()) {
            *p = l.exp();
        }
    }
    let cache = ForwardCache { fingerprint: params.fingerprint(), frames: t_len, input, layers, probs };
    Ok((EmissionMatrix::from_logprobs(logp), cache))
}

/// Exact gradient of a loss with respect to every trainable tensor, given
/// the loss gradient with respect to the emitted log-probabilities
/// (`T x 12`, row-major).
///
/// The log-softmax Jacobian is applied here. It acts as the identity on rows
/// that already sum to zero, so losses may equally pass their gradient with
/// respect to the logits.
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_logprobs: &[f64]) -> Result<Gradients, ModelError> {
    if cache.fingerprint != params.fingerprint() {
        return Err(ModelError::StaleCache);
    }
    if d_logprobs.len() != cache.frames * NUM_TOKENS {
        return Err(ModelError::GradientShape { expected: cache.frames, found: d_logprobs.len() / NUM_TOKENS });
    }
    let t_len = cache.frames;
    let mut grads = Gradients::zeros_like(params);
    let n_layers = params.layers.len();

    // Output projection.
    let last = params.last_nodes();
    let h_last: &[f64] = cache.layers.last().map_or(&cache.input, |l| &l.out);
    let mut d_h = vec![0.0; t_len * last];
    {
        let (gw, rest) = grads.tensors[3 * n_layers..].split_at_mut(1);
        let (gw, gb) = (&mut gw[0], &mut rest[0]);
        let mut d_logit = [0.0; NUM_TOKENS];
        for t in 0..t_len {
            let g = &d_logprobs[t * NUM_TOKENS..(t + 1) * NUM_TOKENS];
            let p = &cache.probs[t * NUM_TOKENS..(t + 1) * NUM_TOKENS];
            let total: f64 = g.iter().sum();
            for k in 0..NUM_TOKENS {
                d_logit[k] = g[k] - p[k] * total;
            }
            let h = &h_last[t * last..(t + 1) * last];
            let dh = &mut d_h[t * last..(t + 1) * last];
            for k in 0..NUM_TOKENS {
                let dk = d_logit[k];
                if dk == 0.0 {
                    continue;
                }
                gb[k] += dk;
                let w = &params.output_weights[k * last..(k + 1) * last];
                let gwk = &mut gw[k * last..(k + 1) * last];
                for j in 0..last {
                    gwk[j] += dk * h[j];
                    dh[j] += dk * f64::from(w[j]);
                }
            }
        }
    }

    for li in (0..n_layers).rev() {
        let layer = &params.layers[li];
        let lc = &cache.layers[li];
        let (n, m, d) = (layer.nodes, layer.memory, layer.input_dim);
        let x: &[f64] = if li == 0 { &cache.input } else { &cache.layers[li - 1].out };

        // Through the ReLU (subgradient 0 at 0).
        let d_pre: Vec<f64> = d_h.iter().zip(&lc.pre).map(|(&g, &z)| if z > 0.0 { g } else { 0.0 }).collect();

        let mut d_proj = vec![0.0; t_len * n];
        {
            let base = 3 * li;
            let (g_ff, rest) = grads.tensors[base..base + 3].split_at_mut(1);
            let (g_tf, g_b) = rest.split_at_mut(1);
            let (g_ff, g_tf, g_b) = (&mut g_ff[0], &mut g_tf[0], &mut g_b[0]);
            for t in 0..t_len {
                for j in 0..n {
                    let g = d_pre[t * n + j];
                    if g == 0.0 {
                        continue;
                    }
                    g_b[j] += g;
                    for tap in 0..m.min(t + 1) {
                        g_tf[j * m + tap] += g * lc.proj[(t - tap) * n + j];
                        d_proj[(t - tap) * n + j] += g * f64::from(layer.time_filters[j * m + tap]);
                    }
                }
            }
            for t in 0..t_len {
                let xt = &x[t * d..(t + 1) * d];
                for j in 0..n {
                    let g = d_proj[t * n + j];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &mut g_ff[j * d..(j + 1) * d];
                    for (r, &xv) in row.iter_mut().zip(xt) {
                        *r += g * xv;
                    }
                }
            }
        }

        if li > 0 {
            let mut d_x = vec![0.0; t_len * d];
            for t in 0..t_len {
                let dxt = &mut d_x[t * d..(t + 1) * d];
                for j in 0..n {
                    let g = d_proj[t * n + j];
                    if g == 0.0 {
                        continue;
                    }
                    for (o, &w) in dxt.iter_mut().zip(&layer.feature_filters[j * d..(j + 1) * d]) {
                        *o += g * f64::from(w);
                    }
                }
            }
            d_h = d_x;
        }
    }
    Ok(grads)
}

/// Per-stream state: a ring of the last `memory` feature-filter outputs for
/// every node of every layer. Zero-initialised, which reproduces the causal
/// zero padding of the batch path.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamState {
    history: Vec<Vec<f64>>,
    frames_seen: usize,
}

impl StreamState {
    pub fn new(params: &ModelParams) -> Self {
        Self { history: params.layers.iter().map(|l| vec![0.0; l.nodes * l.memory]).collect(), frames_seen: 0 }
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }
}

/// Consumes one feature frame and returns that frame's 12 log-probabilities.
pub fn forward_streaming(
    params: &ModelParams,
    frame: &[f32],
    state: &mut StreamState,
) -> Result<[f64; NUM_TOKENS], ModelError> {
    if frame.len() != params.input_dim() {
        return Err(ModelError::DimMismatch { layer: 0, expected: params.input_dim(), found: frame.len() });
    }
    if state.history.len() != params.layers.len() {
        return Err(ModelError::StaleCache);
    }
    let t = state.frames_seen;
    let mut x = vec![0.0; params.input_dim()];
    normalise(params, frame, &mut x);
    for (layer, hist) in params.layers.iter().zip(state.history.iter_mut()) {
        let (n, m, d) = (layer.nodes, layer.memory, layer.input_dim);
        // Slot for frame t in the ring is t % m.
        let slot = t % m;
        let mut out = vec![0.0; n];
        for j in 0..n {
            hist[slot * n + j] = dot(&layer.feature_filters[j * d..(j + 1) * d], &x);
        }
        for j in 0..n {
            let mut z = 0.0;
            for tap in 0..m.min(t + 1) {
                let s = (t - tap) % m;
                z += f64::from(layer.time_filters[j * m + tap]) * hist[s * n + j];
            }
            z += f64::from(layer.bias[j]);
            out[j] = z.max(0.0);
        }
        x = out;
    }
    let mut row = [0.0; NUM_TOKENS];
    output_logits(params, &x, &mut row);
    log_softmax_in_place(&mut row);
    state.frames_seen += 1;
    Ok(row)
}
