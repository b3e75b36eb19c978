//! DET curves, FRR at a false-alarm operating point, and trigger latency.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use thiserror::Error;

use crate::decode::{trigger_events, ScoreTrajectory};

/// Frame period of the decoder clock.
pub const FRAME_MS: f64 = 10.0;
/// Relative part of the latency trigger rule.
pub const TRIGGER_PEAK_FRACTION: f64 = 0.4;
/// Absolute floor of the latency trigger rule.
pub const TRIGGER_FLOOR: f64 = 0.20;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no positive utterances to measure FRR on")]
    NoPositives,
    #[error("negative audio totals {0} h; FAh needs a positive denominator")]
    NoNegativeHours(f64),
    #[error("no DET point reaches {target} FAh")]
    TargetUnreachable { target: f64 },
    #[error("utterance {0:?} is scored by only one of the two systems")]
    UnmatchedUtterance(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fah: f64,
    pub frr: f64,
}

/// Points sorted by ascending threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

impl DetCurve {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[0].threshold < w[1].threshold && w[1].fah <= w[0].fah && w[1].frr >= w[0].frr)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "threshold,fah,frr")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.threshold, p.fah, p.frr)?;
        }
        Ok(())
    }
}

/// Event count of one stream at each of its distinct scores, ascending.
fn stream_steps(traj: &ScoreTrajectory, refractory_frames: usize) -> Vec<(f64, usize)> {
    let mut scores: Vec<f64> = traj.points.iter().map(|p| p.1).collect();
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    scores.into_iter().map(|s| (s, trigger_events("", traj, s, refractory_frames).len())).collect()
}

/// Sweeps the threshold over every observed score plus one point just
/// above the largest, where nothing fires.
///
/// A positive is rejected at θ when its peak is below θ. False alarms are
/// the decoder's trigger events on negative streams re-evaluated at θ.
pub fn det_curve(
    pos_peaks: &[f64],
    neg_trajectories: &[ScoreTrajectory],
    neg_hours: f64,
    refractory_frames: usize,
) -> Result<DetCurve, EvalError> {
    if pos_peaks.is_empty() {
        return Err(EvalError::NoPositives);
    }
    if !(neg_hours > 0.0 && neg_hours.is_finite()) {
        return Err(EvalError::NoNegativeHours(neg_hours));
    }
    // A stream's count is constant on (v_{i-1}, v_i], so the total is the
    // sum of the counts at each stream's first score plus step deltas.
    let mut total: i64 = 0;
    let mut deltas: Vec<(f64, i64)> = Vec::new();
    let mut thresholds: Vec<f64> = pos_peaks.to_vec();
    for traj in neg_trajectories {
        let steps = stream_steps(traj, refractory_frames);
        if let Some(&(_, c)) = steps.first() {
            total += c as i64;
        }
        for (i, &(v, c)) in steps.iter().enumerate() {
            let next = steps.get(i + 1).map_or(0, |s| s.1);
            if next != c {
                deltas.push((v, next as i64 - c as i64));
            }
            thresholds.push(v);
        }
    }
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let top = *thresholds.last().expect("at least one positive");
    thresholds.push(top.next_up());
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut peaks = pos_peaks.to_vec();
    peaks.sort_by(f64::total_cmp);

    let n_pos = peaks.len() as f64;
    let (mut di, mut pi) = (0, 0);
    let mut points = Vec::with_capacity(thresholds.len());
    for th in thresholds {
        while di < deltas.len() && deltas[di].0 < th {
            total += deltas[di].1;
            di += 1;
        }
        while pi < peaks.len() && peaks[pi] < th {
            pi += 1;
        }
        points.push(DetPoint { threshold: th, fah: total as f64 / neg_hours, frr: pi as f64 / n_pos });
    }
    Ok(DetCurve { points })
}

/// FRR and threshold at the smallest threshold whose FAh is at most
/// `target_fah`. No interpolation between measured points.
pub fn frr_at_fah(curve: &DetCurve, target_fah: f64) -> Result<(f64, f64), EvalError> {
    curve
        .points
        .iter()
        .find(|p| p.fah <= target_fah)
        .map(|p| (p.frr, p.threshold))
        .ok_or(EvalError::TargetUnreachable { target: target_fah })
}

pub fn trigger_threshold(peak: f64) -> f64 {
    (TRIGGER_PEAK_FRACTION * peak).max(TRIGGER_FLOOR)
}

/// First end frame whose score strictly exceeds the trigger threshold, or
/// `None` when the stream never does.
pub fn trigger_point(traj: &ScoreTrajectory) -> Option<usize> {
    let th = trigger_threshold(traj.peak()?);
    traj.points.iter().find(|p| p.1 > th).map(|p| p.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyStatus {
    Ok,
    CeMiss,
    CtcMiss,
    BothMiss,
}

impl LatencyStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            LatencyStatus::Ok => "ok",
            LatencyStatus::CeMiss => "ce_miss",
            LatencyStatus::CtcMiss => "ctc_miss",
            LatencyStatus::BothMiss => "both_miss",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub utterance_id: String,
    pub t_ce: Option<usize>,
    pub t_ctc: Option<usize>,
    /// `(t_ctc - t_ce)` in milliseconds; negative when CTC fired first.
    pub latency_ms: Option<f64>,
    pub status: LatencyStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
    pub mean_ms: Option<f64>,
    /// Population standard deviation.
    pub std_ms: Option<f64>,
    pub ce_miss_rate: f64,
    pub ctc_miss_rate: f64,
}

impl LatencyReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "utterance_id,t_ce_frame,t_ctc_frame,latency_ms,status")?;
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let lat = r.latency_ms.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", r.utterance_id, opt(r.t_ce), opt(r.t_ctc), lat, r.status.as_str())?;
        }
        Ok(())
    }
}

/// Compares trigger points of two systems on the same utterances. Rows come
/// out sorted by utterance id.
pub fn latency_report(
    ce: &[(String, ScoreTrajectory)],
    ctc: &[(String, ScoreTrajectory)],
) -> Result<LatencyReport, EvalError> {
    let ce: BTreeMap<&str, &ScoreTrajectory> = ce.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let ctc: BTreeMap<&str, &ScoreTrajectory> = ctc.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let ids: BTreeSet<&str> = ce.keys().chain(ctc.keys()).copied().collect();
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        let (Some(a), Some(b)) = (ce.get(id), ctc.get(id)) else {
            return Err(EvalError::UnmatchedUtterance(id.to_string()));
        };
        let (t_ce, t_ctc) = (trigger_point(a), trigger_point(b));
        let (latency_ms, status) = match (t_ce, t_ctc) {
            (Some(x), Some(y)) => (Some((y as f64 - x as f64) * FRAME_MS), LatencyStatus::Ok),
            (None, Some(_)) => (None, LatencyStatus::CeMiss),
            (Some(_), None) => (None, LatencyStatus::CtcMiss),
            (None, None) => (None, LatencyStatus::BothMiss),
        };
        rows.push(LatencyRow { utterance_id: id.to_string(), t_ce, t_ctc, latency_ms, status });
    }
    let lats: Vec<f64> = rows.iter().filter_map(|r| r.latency_ms).collect();
    let (mean_ms, std_ms) = if lats.is_empty() {
        (None, None)
    } else {
        let n = lats.len() as f64;
        let mean = lats.iter().sum::<f64>() / n;
        let var = lats.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (Some(mean), Some(var.sqrt()))
    };
    let n = rows.len().max(1) as f64;
    let ce_miss_rate = rows.iter().filter(|r| r.t_ce.is_none()).count() as f64 / n;
    let ctc_miss_rate = rows.iter().filter(|r| r.t_ctc.is_none()).count() as f64 / n;
    Ok(LatencyReport { rows, mean_ms, std_ms, ce_miss_rate, ctc_miss_rate })
}
