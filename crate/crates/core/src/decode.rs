//! Rule-based wake-word decoder.
//!
//! A window of `window_frames` emissions slides over the stream every
//! `window_hop_frames`. Inside each window the probabilities are smoothed
//! causally, and a Max-Pooling Viterbi search picks one frame per keyword
//! token (strictly increasing) maximising the summed log-probabilities. The
//! window score is the geometric mean of the picked probabilities.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::LOG_ZERO;
use crate::svdf::EmissionMatrix;
use crate::tokens::{TokenId, NUM_TOKENS};

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("window of {window} frames cannot hold a {keyword}-token keyword")]
    WindowTooShort { window: usize, keyword: usize },
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("trajectory CSV line {line}: {why}")]
    Csv { line: usize, why: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub window_frames: usize,
    pub window_hop_frames: usize,
    pub smooth_frames: usize,
    pub trigger_threshold: f64,
    pub refractory_frames: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            window_frames: 100,
            window_hop_frames: 10,
            smooth_frames: 10,
            trigger_threshold: 0.5,
            refractory_frames: 100,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, keyword_len: usize) -> Result<(), DecodeError> {
        if self.window_frames < keyword_len {
            return Err(DecodeError::WindowTooShort { window: self.window_frames, keyword: keyword_len });
        }
        if self.window_hop_frames == 0 || self.smooth_frames == 0 {
            return Err(DecodeError::InvalidConfig("hop and smoothing must be at least one frame".into()));
        }
        if !(self.trigger_threshold > 0.0 && self.trigger_threshold <= 1.0) {
            return Err(DecodeError::InvalidConfig(format!("threshold {} outside (0, 1]", self.trigger_threshold)));
        }
        Ok(())
    }
}

/// Window scores of one stream, keyed by the window's last frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTrajectory {
    pub points: Vec<(usize, f64)>,
}

impl ScoreTrajectory {
    pub fn peak(&self) -> Option<f64> {
        self.points.iter().map(|p| p.1).reduce(f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "end_frame,score")?;
        for (f, s) in &self.points {
            writeln!(w, "{f},{s}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, DecodeError> {
        let mut points = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let err = |why: String| DecodeError::Csv { line: i + 1, why };
            let line = line.map_err(|e| err(e.to_string()))?;
            if i == 0 {
                if line.trim() != "end_frame,score" {
                    return Err(err(format!("unexpected header {line:?}")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (f, s) = line.split_once(',').ok_or_else(|| err("expected two columns".into()))?;
            let f: usize = f.trim().parse().map_err(|e| err(format!("{e}")))?;
            let s: f64 = s.trim().parse().map_err(|e| err(format!("{e}")))?;
            if points.last().is_some_and(|&(p, _)| p >= f) {
                return Err(err("end frames must increase".into()));
            }
            points.push((f, s));
        }
        Ok(Self { points })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerEvent {
    pub stream: String,
    /// End frame of the window that fired.
    pub frame: usize,
    /// Highest score among the windows merged into this event.
    pub peak: f64,
}

/// Causal moving average of probabilities over the last `smooth_frames`
/// frames (fewer at the start), returned as log-probabilities.
pub fn smooth(emissions: &EmissionMatrix, smooth_frames: usize) -> EmissionMatrix {
    assert!(smooth_frames >= 1);
    if smooth_frames == 1 {
        return emissions.clone();
    }
    let probs: Vec<f64> = emissions.as_slice().iter().map(|v| v.exp()).collect();
    let t_len = emissions.num_frames();
    let mut out = Vec::with_capacity(probs.len());
    for t in 0..t_len {
        let first = (t + 1).saturating_sub(smooth_frames);
        let count = (t + 1 - first) as f64;
        for k in 0..NUM_TOKENS {
            let s: f64 = (first..=t).map(|u| probs[u * NUM_TOKENS + k]).sum();
            out.push((s / count).ln().max(LOG_ZERO));
        }
    }
    EmissionMatrix::from_logprobs(out)
}

/// Best strictly increasing frame tuple for `keyword` in a window given as
/// rows of log-probabilities indexed by token.
///
/// Ties resolve toward earlier frames: the last keyword token is placed as
/// early as possible, then the one before it, and so on.
fn viterbi_rows<R: AsRef<[f64]>>(rows: &[R], keyword: &[TokenId]) -> Result<(f64, Vec<usize>), DecodeError> {
    let w = rows.len();
    let k = keyword.len();
    if w < k || k == 0 {
        return Err(DecodeError::WindowTooShort { window: w, keyword: k });
    }
    // dp[t][s]: best score using frames 0..=t for the first s tokens.
    let width = k + 1;
    let mut dp = vec![f64::NEG_INFINITY; w * width];
    for t in 0..w {
        let row = rows[t].as_ref();
        dp[t * width] = 0.0;
        for s in 1..=k.min(t + 1) {
            let take = if t == 0 { 0.0 } else { dp[(t - 1) * width + s - 1] } + row[keyword[s - 1]];
            let skip = if t == 0 { f64::NEG_INFINITY } else { dp[(t - 1) * width + s] };
            dp[t * width + s] = take.max(skip);
        }
    }
    let score = dp[(w - 1) * width + k];
    let mut picks = vec![0; k];
    let mut s = k;
    let mut t = w - 1;
    while s > 0 {
        // Prefer skipping frame t when that is at least as good: the token
        // then lands on an earlier frame.
        if t + 1 > s && dp[(t - 1) * width + s] >= dp[t * width + s] {
            t -= 1;
            continue;
        }
        picks[s - 1] = t;
        s -= 1;
        if s > 0 {
            t -= 1;
        }
    }
    Ok((score, picks))
}

/// Max-Pooling Viterbi over a `W x 12` window of log-probabilities.
pub fn maxpool_viterbi(window: &EmissionMatrix, keyword: &[TokenId]) -> Result<(f64, Vec<usize>), DecodeError> {
    let rows: Vec<&[f64]> = window.rows().collect();
    viterbi_rows(&rows, keyword)
}

/// Geometric-mean per-token probability of a path, in (0, 1].
pub fn window_score(path_score: f64, keyword_len: usize) -> f64 {
    (path_score / keyword_len as f64).exp()
}

/// Trigger events of one stream at `threshold`.
///
/// A window at or above threshold fires an event unless it falls within
/// `refractory_frames` of the previous firing, in which case it is merged
/// into that event (raising its peak if higher). Because this greedy rule
/// selects a maximum set of refractory-separated windows, raising the
/// threshold can never increase the event count.
pub fn trigger_events(
    stream: &str,
    trajectory: &ScoreTrajectory,
    threshold: f64,
    refractory_frames: usize,
) -> Vec<TriggerEvent> {
    let mut events: Vec<TriggerEvent> = Vec::new();
    for &(frame, score) in &trajectory.points {
        if score < threshold {
            continue;
        }
        match events.last_mut() {
            Some(ev) if frame < ev.frame + refractory_frames => ev.peak = ev.peak.max(score),
            _ => events.push(TriggerEvent { stream: stream.to_string(), frame, peak: score }),
        }
    }
    events
}

/// Frame-synchronous decoder for one stream. Holds the last
/// `window_frames` probability rows and scores a window every hop.
#[derive(Debug, Clone)]
pub struct StreamingDecoder {
    config: DecoderConfig,
    keyword: Vec<TokenId>,
    history: VecDeque<[f64; NUM_TOKENS]>,
    frames_seen: usize,
}

impl StreamingDecoder {
    pub fn new(config: DecoderConfig, keyword: &[TokenId]) -> Result<Self, DecodeError> {
        config.validate(keyword.len())?;
        Ok(Self { config, keyword: keyword.to_vec(), history: VecDeque::new(), frames_seen: 0 })
    }

    /// Feeds one emission row; returns `(end_frame, score)` when a window
    /// closes on this frame.
    pub fn push(&mut self, logprobs: &[f64]) -> Option<(usize, f64)> {
        let mut probs = [0.0; NUM_TOKENS];
        for (p, l) in probs.iter_mut().zip(logprobs) {
            *p = l.exp();
        }
        if self.history.len() == self.config.window_frames {
            self.history.pop_front();
        }
        self.history.push_back(probs);
        let t = self.frames_seen;
        self.frames_seen += 1;
        if !(t + 1).is_multiple_of(self.config.window_hop_frames) || self.history.len() < self.keyword.len() {
            return None;
        }
        let rows = self.smoothed_window();
        let (path, _) = viterbi_rows(&rows, &self.keyword).expect("window holds the keyword");
        Some((t, window_score(path, self.keyword.len())))
    }

    /// Smoothed log-probabilities of the current window. Smoothing restarts
    /// at the window's first frame.
    fn smoothed_window(&self) -> Vec<[f64; NUM_TOKENS]> {
        let k = self.config.smooth_frames;
        let rows: Vec<&[f64; NUM_TOKENS]> = self.history.iter().collect();
        let mut out = Vec::with_capacity(rows.len());
        for t in 0..rows.len() {
            let first = (t + 1).saturating_sub(k);
            let count = (t + 1 - first) as f64;
            let mut row = [LOG_ZERO; NUM_TOKENS];
            for &tok in &self.keyword {
                if k == 1 {
                    row[tok] = rows[t][tok].ln().max(LOG_ZERO);
                } else {
                    let s: f64 = (first..=t).map(|u| rows[u][tok]).sum();
                    row[tok] = (s / count).ln().max(LOG_ZERO);
                }
            }
            out.push(row);
        }
        out
    }
}

/// Decodes a whole emission matrix: the score trajectory plus the trigger
/// events at `config.trigger_threshold`.
pub fn run_decoder(
    stream: &str,
    emissions: &EmissionMatrix,
    config: &DecoderConfig,
    keyword: &[TokenId],
) -> Result<(ScoreTrajectory, Vec<TriggerEvent>), DecodeError> {
    let mut dec = StreamingDecoder::new(*config, keyword)?;
    let points = emissions.rows().filter_map(|row| dec.push(row)).collect();
    let traj = ScoreTrajectory { points };
    let events = trigger_events(stream, &traj, config.trigger_threshold, config.refractory_frames);
    Ok((traj, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::{BLANK, KEYWORD, KEYWORD_LEN, SILENCE};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_emissions(t: usize, rng: &mut impl Rng) -> EmissionMatrix {
        let rows: Vec<[f64; NUM_TOKENS]> =
            (0..t).map(|_| std::array::from_fn(|_| rng.random_range(0.01..1.0))).collect();
        EmissionMatrix::from_probs(&rows)
    }

    #[test]
    fn smooth_identity_constant_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let em = random_emissions(5, &mut rng);
        assert_eq!(smooth(&em, 1), em);

        let constant = EmissionMatrix::from_probs(&[[1.0; NUM_TOKENS]; 6]);
        let s = smooth(&constant, 4);
        for (a, b) in s.as_slice().iter().zip(constant.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }

        let s = smooth(&em, 3);
        for t in 0..5usize {
            let lo = t.saturating_sub(2);
            for k in 0..NUM_TOKENS {
                let mean = (lo..=t).map(|u| em.row(u)[k].exp()).sum::<f64>() / (t - lo + 1) as f64;
                assert!((s.row(t)[k] - mean.ln()).abs() < 1e-12);
            }
        }
        for r in s.rows() {
            assert!((r.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn viterbi_forced_diagonal_and_single_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let em = random_emissions(9, &mut rng);
        let (score, picks) = maxpool_viterbi(&em, &KEYWORD).unwrap();
        let expected: f64 = (0..9).map(|s| em.row(s)[KEYWORD[s]]).sum();
        assert!((score - expected).abs() < 1e-12);
        assert_eq!(picks, (0..9).collect::<Vec<_>>());

        let em = random_emissions(30, &mut rng);
        let (score, picks) = maxpool_viterbi(&em, &[4]).unwrap();
        let best = (0..30).map(|t| em.row(t)[4]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(score, best);
        assert_eq!(em.row(picks[0])[4], best);
    }

    #[test]
    fn viterbi_rejects_short_window() {
        let em = EmissionMatrix::from_probs(&[[1.0; NUM_TOKENS]; 8]);
        assert_eq!(maxpool_viterbi(&em, &KEYWORD).unwrap_err(), DecodeError::WindowTooShort { window: 8, keyword: 9 });
    }

    #[test]
    fn ties_prefer_earlier_frames() {
        // Uniform window: every tuple ties, so picks are 0..9.
        let em = EmissionMatrix::from_probs(&[[1.0; NUM_TOKENS]; 12]);
        assert_eq!(maxpool_viterbi(&em, &KEYWORD).unwrap().1, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn window_score_formula() {
        assert_eq!(window_score(0.0, 9), 1.0);
        assert!((window_score(9.0 * 0.5f64.ln(), 9) - 0.5).abs() < 1e-15);
        assert!((window_score(9.0 * 0.3f64.ln(), 9) - 0.3).abs() < 1e-15);
    }

    fn keyword_stream(t_len: usize, start: usize, end: usize) -> EmissionMatrix {
        let seg = (end - start) / KEYWORD_LEN;
        let rows: Vec<[f64; NUM_TOKENS]> = (0..t_len)
            .map(|t| {
                let mut r = [1e-6; NUM_TOKENS];
                if t >= start && t < start + seg * KEYWORD_LEN {
                    r[KEYWORD[(t - start) / seg]] = 1.0;
                } else {
                    r[SILENCE] = 1.0;
                }
                r
            })
            .collect();
        EmissionMatrix::from_probs(&rows)
    }

    #[test]
    fn keyword_fires_exactly_once() {
        let em = keyword_stream(300, 20, 101);
        let (traj, events) = run_decoder("u", &em, &DecoderConfig::default(), &KEYWORD).unwrap();
        assert_eq!(events.len(), 1, "{events:?}");
        assert!(events[0].peak > 0.85);
        assert_eq!(Some(events[0].peak), traj.peak());
    }

    #[test]
    fn blank_stream_never_fires() {
        let mut row = [0.0; NUM_TOKENS];
        row[BLANK] = 1.0;
        let em = EmissionMatrix::from_probs(&vec![row; 300]);
        let (traj, events) = run_decoder("u", &em, &DecoderConfig::default(), &KEYWORD).unwrap();
        assert!(events.is_empty());
        assert!(traj.peak().unwrap() <= 1.0 / 12.0);
    }

    #[test]
    fn threshold_above_peak_gives_no_events() {
        let em = keyword_stream(300, 20, 101);
        let (traj, _) = run_decoder("u", &em, &DecoderConfig::default(), &KEYWORD).unwrap();
        let cfg = DecoderConfig { trigger_threshold: (traj.peak().unwrap() + 1e-9).min(1.0), ..Default::default() };
        if cfg.trigger_threshold > traj.peak().unwrap() {
            assert!(run_decoder("u", &em, &cfg, &KEYWORD).unwrap().1.is_empty());
        }
        assert!(trigger_events("u", &traj, 1.5, 100).is_empty());
    }

    #[test]
    fn events_respect_refractory() {
        let traj = ScoreTrajectory { points: (0..50).map(|i| (i * 10 + 9, 0.9)).collect() };
        let ev = trigger_events("s", &traj, 0.5, 100);
        assert_eq!(ev.iter().map(|e| e.frame).collect::<Vec<_>>(), vec![9, 109, 209, 309, 409]);
        for w in ev.windows(2) {
            assert!(w[1].frame - w[0].frame >= 100);
        }
    }

    #[test]
    fn trajectory_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let em = random_emissions(150, &mut rng);
        let cfg = DecoderConfig { window_frames: 30, ..Default::default() };
        let (full, _) = run_decoder("u", &em, &cfg, &KEYWORD).unwrap();
        let mut changed = em.as_slice().to_vec();
        for v in changed[100 * NUM_TOKENS..].iter_mut() {
            *v = (1.0f64 / 12.0).ln();
        }
        let (cut, _) = run_decoder("u", &EmissionMatrix::from_logprobs(changed), &cfg, &KEYWORD).unwrap();
        let prefix = |t: &ScoreTrajectory| t.points.iter().filter(|p| p.0 < 100).copied().collect::<Vec<_>>();
        assert_eq!(prefix(&full), prefix(&cut));
    }

    #[test]
    fn csv_round_trip() {
        let traj = ScoreTrajectory { points: vec![(9, 0.25), (19, 0.125)] };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "end_frame,score\n9,0.25\n19,0.125\n");
        assert_eq!(ScoreTrajectory::read_csv(&buf[..]).unwrap(), traj);
        assert!(ScoreTrajectory::read_csv(&b"end_frame,score\n9,1\n9,1\n"[..]).is_err());
    }
}
