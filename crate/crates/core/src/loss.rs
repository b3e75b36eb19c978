//! Frame-wise cross-entropy and CTC losses over an [`EmissionMatrix`].
//!
//! Both losses return their gradient with respect to the pre-softmax logits
//! (`softmax - target posterior`). Rows of that gradient sum to zero, which
//! makes it a valid input for [`crate::svdf::backward`]: the log-softmax
//! Jacobian leaves zero-sum rows unchanged.

use thiserror::Error;

use crate::math::{log_add, LOG_ZERO};
use crate::svdf::EmissionMatrix;
use crate::tokens::{TokenId, BLANK, NUM_TOKENS};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("target has {target} frames, emissions have {emissions}")]
    LengthMismatch { target: usize, emissions: usize },
    #[error("blank token used as a target at position {0}")]
    BlankInTarget(usize),
    #[error("token id {0} outside the inventory")]
    UnknownToken(TokenId),
    #[error("empty CTC target")]
    EmptyTarget,
    #[error("brute-force enumeration limited to {max} frames, got {got}")]
    TooLong { max: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// d loss / d logits, `T x 12` row-major.
    pub grad: Vec<f64>,
    /// False when no alignment of the target fits in the available frames;
    /// the loss is then `+inf` and the gradient zero.
    pub feasible: bool,
}

fn check_tokens(target: &[TokenId]) -> Result<(), LossError> {
    for (i, &t) in target.iter().enumerate() {
        if t >= NUM_TOKENS {
            return Err(LossError::UnknownToken(t));
        }
        if t == BLANK {
            return Err(LossError::BlankInTarget(i));
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of a per-frame alignment.
pub fn ce_loss(emissions: &EmissionMatrix, target: &[TokenId]) -> Result<LossOutput, LossError> {
    let t_len = emissions.num_frames();
    if target.len() != t_len {
        return Err(LossError::LengthMismatch { target: target.len(), emissions: t_len });
    }
    check_tokens(target)?;
    if t_len == 0 {
        return Ok(LossOutput { loss: 0.0, grad: Vec::new(), feasible: true });
    }
    let scale = 1.0 / t_len as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(t_len * NUM_TOKENS);
    for (row, &k) in emissions.rows().zip(target) {
        loss -= row[k];
        grad.extend(row.iter().enumerate().map(|(j, lp)| {
            let onehot = if j == k { 1.0 } else { 0.0 };
            (lp.exp() - onehot) * scale
        }));
    }
    Ok(LossOutput { loss: loss * scale, grad, feasible: true })
}

/// Minimum number of frames any CTC path for `target` needs: one per label
/// plus a separating blank between adjacent repeats.
pub fn ctc_min_frames(target: &[TokenId]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under CTC, with the alpha-beta
/// posterior gradient. Computed entirely in log space.
pub fn ctc_loss(emissions: &EmissionMatrix, target: &[TokenId]) -> Result<LossOutput, LossError> {
    if target.is_empty() {
        return Err(LossError::EmptyTarget);
    }
    check_tokens(target)?;
    let t_len = emissions.num_frames();
    if t_len < ctc_min_frames(target) {
        return Ok(LossOutput { loss: f64::INFINITY, grad: vec![0.0; t_len * NUM_TOKENS], feasible: false });
    }

    // blank, l1, blank, l2, ..., lL, blank
    let labels: Vec<TokenId> = std::iter::once(BLANK).chain(target.iter().flat_map(|&l| [l, BLANK])).collect();
    let s_len = labels.len();
    let skip_allowed = |s: usize| s >= 2 && labels[s] != BLANK && labels[s] != labels[s - 2];
    let lp = |t: usize, s: usize| emissions.row(t)[labels[s]].max(LOG_ZERO);

    let mut alpha = vec![LOG_ZERO; t_len * s_len];
    alpha[0] = lp(0, 0);
    alpha[1] = lp(0, 1);
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        // States earlier than this cannot still reach the end in time.
        let first = s_len.saturating_sub(2 * (t_len - t));
        for s in first..s_len.min(2 * (t + 1)) {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if skip_allowed(s) {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = if a <= LOG_ZERO { LOG_ZERO } else { a + lp(t, s) };
        }
    }
    let last = (t_len - 1) * s_len;
    let log_p = log_add(alpha[last + s_len - 1], alpha[last + s_len - 2]);

    // beta[t][s]: log-probability of finishing from state s at frame t,
    // excluding the emission at t itself.
    let mut beta = vec![LOG_ZERO; t_len * s_len];
    beta[last + s_len - 1] = 0.0;
    beta[last + s_len - 2] = 0.0;
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let nb = (t + 1) * s_len;
            let mut b = beta[nb + s] + lp(t + 1, s);
            if s + 1 < s_len {
                b = log_add(b, beta[nb + s + 1] + lp(t + 1, s + 1));
            }
            if s + 2 < s_len && skip_allowed(s + 2) {
                b = log_add(b, beta[nb + s + 2] + lp(t + 1, s + 2));
            }
            beta[t * s_len + s] = b.max(LOG_ZERO);
        }
    }

    let mut grad = vec![0.0; t_len * NUM_TOKENS];
    let mut occupancy = [LOG_ZERO; NUM_TOKENS];
    for t in 0..t_len {
        occupancy.fill(LOG_ZERO);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[labels[s]] = log_add(occupancy[labels[s]], v);
        }
        let row = emissions.row(t);
        for k in 0..NUM_TOKENS {
            let posterior = if occupancy[k] <= LOG_ZERO { 0.0 } else { (occupancy[k] - log_p).exp() };
            grad[t * NUM_TOKENS + k] = row[k].exp() - posterior;
        }
    }
    Ok(LossOutput { loss: -log_p, grad, feasible: true })
}

/// Largest T accepted by [`ctc_bruteforce`] (12^6 paths).
pub const BRUTEFORCE_MAX_FRAMES: usize = 6;

/// CTC collapse of a frame-label path: merge repeats, then drop blanks.
pub fn collapse_path(path: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

fn collapses_to(path: &[TokenId], target: &[TokenId]) -> bool {
    let mut matched = 0;
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            if target.get(matched) != Some(&p) {
                return false;
            }
            matched += 1;
        }
        prev = Some(p);
    }
    matched == target.len()
}

/// Verification oracle: sums the probability of every one of the 12^T
/// frame-label paths whose collapse equals `target`.
pub fn ctc_bruteforce(emissions: &EmissionMatrix, target: &[TokenId]) -> Result<f64, LossError> {
    let t_len = emissions.num_frames();
    if t_len > BRUTEFORCE_MAX_FRAMES {
        return Err(LossError::TooLong { max: BRUTEFORCE_MAX_FRAMES, got: t_len });
    }
    let probs: Vec<f64> = emissions.as_slice().iter().map(|v| v.exp()).collect();
    let mut path = vec![0; t_len];
    let mut total = 0.0;
    let n_paths = NUM_TOKENS.pow(t_len as u32);
    for index in 0..n_paths {
        let mut rest = index;
        let mut p = 1.0;
        for (t, slot) in path.iter_mut().enumerate() {
            *slot = rest % NUM_TOKENS;
            rest /= NUM_TOKENS;
            p *= probs[t * NUM_TOKENS + *slot];
        }
        if collapses_to(&path, target) {
            total += p;
        }
    }
    Ok(if total > 0.0 { -total.ln() } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::SILENCE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_emissions(t: usize, rng: &mut impl Rng) -> EmissionMatrix {
        let rows: Vec<[f64; NUM_TOKENS]> =
            (0..t).map(|_| std::array::from_fn(|_| rng.random_range(0.05..1.0))).collect();
        EmissionMatrix::from_probs(&rows)
    }

    fn uniform(t: usize) -> EmissionMatrix {
        EmissionMatrix::from_logprobs(vec![(1.0f64 / 12.0).ln(); t * NUM_TOKENS])
    }

    #[test]
    fn ce_uniform_is_log12() {
        let out = ce_loss(&uniform(5), &[0, 1, 9, 9, 10]).unwrap();
        assert!((out.loss - 12f64.ln()).abs() < 1e-12);
        for row in out.grad.chunks(NUM_TOKENS) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn ce_one_hot_correct_is_zero() {
        let mut rows = [[1e-300; NUM_TOKENS]; 3];
        rows[0][2] = 1.0;
        rows[1][9] = 1.0;
        rows[2][4] = 1.0;
        let out = ce_loss(&EmissionMatrix::from_probs(&rows), &[2, 9, 4]).unwrap();
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn ce_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let em = random_emissions(4, &mut rng);
        let target = [3, 3, 9, 10];
        let out = ce_loss(&em, &target).unwrap();
        let direct: f64 = -(0..4).map(|t| em.row(t)[target[t]]).sum::<f64>() / 4.0;
        assert!((out.loss - direct).abs() < 1e-12);
        // softmax - onehot, scaled by 1/T
        let g = out.grad[2 * NUM_TOKENS + 9];
        assert!((g - (em.row(2)[9].exp() - 1.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_blank_and_mismatch() {
        assert_eq!(ce_loss(&uniform(2), &[0, BLANK]).unwrap_err(), LossError::BlankInTarget(1));
        assert!(matches!(ce_loss(&uniform(2), &[0]), Err(LossError::LengthMismatch { .. })));
    }

    #[test]
    fn ctc_single_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let em = random_emissions(1, &mut rng);
        let out = ctc_loss(&em, &[4]).unwrap();
        assert!((out.loss + em.row(0)[4]).abs() < 1e-12);
    }

    #[test]
    fn ctc_two_frames_three_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let em = random_emissions(2, &mut rng);
        let p = |t: usize, k: usize| em.row(t)[k].exp();
        let a = 5;
        let expected = -(p(0, a) * p(1, a) + p(0, BLANK) * p(1, a) + p(0, a) * p(1, BLANK)).ln();
        assert!((ctc_loss(&em, &[a]).unwrap().loss - expected).abs() < 1e-12);
    }

    #[test]
    fn ctc_infeasible_is_infinite_with_zero_grad() {
        let out = ctc_loss(&uniform(2), &[1, 1]).unwrap();
        assert!(!out.feasible);
        assert_eq!(out.loss, f64::INFINITY);
        assert!(out.grad.iter().all(|&g| g == 0.0));
        assert!(ctc_loss(&uniform(3), &[1, 1]).unwrap().feasible);
        assert_eq!(ctc_min_frames(&[1, 1, 2, 2, 2]), 8);
    }

    #[test]
    fn ctc_errors() {
        assert_eq!(ctc_loss(&uniform(3), &[]).unwrap_err(), LossError::EmptyTarget);
        assert_eq!(ctc_loss(&uniform(3), &[BLANK]).unwrap_err(), LossError::BlankInTarget(0));
        assert_eq!(ctc_loss(&uniform(3), &[12]).unwrap_err(), LossError::UnknownToken(12));
    }

    #[test]
    fn ctc_gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let em = random_emissions(30, &mut rng);
        let out = ctc_loss(&em, &[0, 1, 1, 2, SILENCE]).unwrap();
        assert!(out.loss > 0.0);
        for row in out.grad.chunks(NUM_TOKENS) {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn ctc_long_sequences_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let em = random_emissions(2000, &mut rng);
        let target: Vec<TokenId> = (0..150).map(|i| i % 11).collect();
        let out = ctc_loss(&em, &target).unwrap();
        assert!(out.loss.is_finite() && out.loss > 0.0);
        assert!(out.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bruteforce_edge_cases() {
        assert!(matches!(ctc_bruteforce(&uniform(7), &[1]), Err(LossError::TooLong { .. })));
        assert_eq!(ctc_bruteforce(&uniform(2), &[1, 2, 3]).unwrap(), f64::INFINITY);
        // Deterministic emissions on the path a,blank,b.
        let mut rows = [[0.0; NUM_TOKENS]; 3];
        rows[0][1] = 1.0;
        rows[1][BLANK] = 1.0;
        rows[2][2] = 1.0;
        let em = EmissionMatrix::from_probs(&rows);
        assert!(ctc_bruteforce(&em, &[1, 2]).unwrap().abs() < 1e-12);
        assert!(ctc_loss(&em, &[1, 2]).unwrap().loss.abs() < 1e-9);
    }

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse_path(&[1, 1, BLANK, 1, 2, 2]), vec![1, 1, 2]);
        assert!(collapse_path(&[BLANK, BLANK]).is_empty());
    }

    #[test]
    fn target_probabilities_sum_to_at_most_one() {
        // Every path collapses to exactly one target, so summing p(target)
        // over all distinct collapses recovers total mass 1.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let em = random_emissions(3, &mut rng);
        let mut targets = std::collections::BTreeSet::new();
        for i in 0..NUM_TOKENS.pow(3) {
            let path = [i % 12, (i / 12) % 12, i / 144];
            targets.insert(collapse_path(&path));
        }
        let mut total = 0.0;
        for t in &targets {
            total += if t.is_empty() {
                (0..3).map(|f| em.row(f)[BLANK]).sum::<f64>().exp()
            } else {
                (-ctc_loss(&em, t).unwrap().loss).exp()
            };
        }
        assert!(total <= 1.0 + 1e-9 && total > 1.0 - 1e-9, "{total}");
    }

    #[test]
    fn permuting_mass_among_same_collapse_paths() {
        // T=2, target [a]: paths (a,a), (blank,a), (a,blank). Moving
        // probability between frames so that the sum over those three paths
        // is unchanged leaves the loss unchanged.
        let a = 3;
        let build = |p0a: f64, p0b: f64, p1a: f64, p1b: f64| {
            let mut rows = [[0.0; NUM_TOKENS]; 2];
            rows[0][a] = p0a;
            rows[0][BLANK] = p0b;
            rows[1][a] = p1a;
            rows[1][BLANK] = p1b;
            for r in rows.iter_mut() {
                let rest = (1.0 - r[a] - r[BLANK]) / 10.0;
                for (k, v) in r.iter_mut().enumerate() {
                    if k != a && k != BLANK {
                        *v = rest;
                    }
                }
            }
            EmissionMatrix::from_probs(&rows)
        };
        // Both settings put total mass 0.45 on the three paths:
        // 0.5*0.5 + 0.2*0.5 + 0.5*0.2 and 0.6*0.45 + 0.1*0.45 + 0.6*0.225.
        let l1 = ctc_loss(&build(0.5, 0.2, 0.5, 0.2), &[a]).unwrap().loss;
        let l4 = ctc_loss(&build(0.6, 0.1, 0.45, 0.225), &[a]).unwrap().loss;
        assert!((l1 - l4).abs() < 1e-12, "{l1} vs {l4}");
        assert!((l1 + 0.45f64.ln()).abs() < 1e-12);
    }
}
