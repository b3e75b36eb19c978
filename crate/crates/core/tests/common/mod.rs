//! Independent oracles shared by the property tests and the acceptance run.
//! Each check returns a one-line summary, or the first violation found.
#![allow(dead_code)]

use std::collections::HashSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wakeword_core::corpus::{normalized_hash, split_ab, CorpusManifest, Label, SplitSpec, Utterance};
use wakeword_core::decode::{maxpool_viterbi, ScoreTrajectory};
use wakeword_core::eval::{latency_report, trigger_point};
use wakeword_core::features::{FeatureConfig, FeatureMatrix, LogMel, LogMelState};
use wakeword_core::loss::{ctc_bruteforce, ctc_loss};
use wakeword_core::math::log_softmax_in_place;
use wakeword_core::svdf::{
    backward, forward, forward_streaming, Architecture, EmissionMatrix, LayerShape, ModelParams, StreamState,
};
use wakeword_core::tokens::{TokenId, BLANK, KEYWORD, NUM_TOKENS};

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn log_softmax_rows(logits: &[f64]) -> EmissionMatrix {
    let mut v = logits.to_vec();
    for row in v.chunks_mut(NUM_TOKENS) {
        log_softmax_in_place(row);
    }
    EmissionMatrix::from_logprobs(v)
}

pub fn random_logits(t: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..t * NUM_TOKENS).map(|_| rng.random_range(-scale..scale)).collect()
}

/// CTC forward-backward against path enumeration, and its logit gradient
/// against central differences.
pub fn ctc_oracle(instances: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let (mut worst_loss, mut worst_grad, mut infeasible) = (0.0f64, 0.0f64, 0usize);
    let eps = 1e-4;
    for i in 0..instances {
        let t = rng.random_range(1..=6);
        let l = rng.random_range(1..=3);
        let target: Vec<TokenId> = (0..l).map(|_| rng.random_range(0..BLANK)).collect();
        let logits = random_logits(t, 3.0, &mut rng);
        let em = log_softmax_rows(&logits);
        let out = ctc_loss(&em, &target).map_err(|e| format!("instance {i}: {e}"))?;
        let brute = ctc_bruteforce(&em, &target).map_err(|e| format!("instance {i}: {e}"))?;
        if brute.is_infinite() {
            infeasible += 1;
            if out.loss.is_finite() || out.feasible || out.grad.iter().any(|&g| g != 0.0) {
                return Err(format!("instance {i}: infeasible target {target:?} in {t} frames gave {}", out.loss));
            }
            continue;
        }
        let d = (out.loss - brute).abs();
        worst_loss = worst_loss.max(d);
        if d > 1e-6 {
            return Err(format!("instance {i}: ctc {} vs enumeration {brute} (T={t}, target {target:?})", out.loss));
        }
        for k in 0..logits.len() {
            let mut plus = logits.clone();
            plus[k] += eps;
            let mut minus = logits.clone();
            minus[k] -= eps;
            let lp = ctc_loss(&log_softmax_rows(&plus), &target).unwrap().loss;
            let lm = ctc_loss(&log_softmax_rows(&minus), &target).unwrap().loss;
            let fd = (lp - lm) / (2.0 * eps);
            let r = rel_err(out.grad[k], fd, 1e-6);
            worst_grad = worst_grad.max(r);
            if r > 1e-4 {
                return Err(format!("instance {i}: d/dlogit[{k}] analytic {} vs numeric {fd}", out.grad[k]));
            }
        }
    }
    Ok(format!(
        "{instances} instances ({infeasible} infeasible), max |loss diff| {worst_loss:.1e}, max grad rel err {worst_grad:.1e}"
    ))
}

pub fn random_model(rng: &mut ChaCha8Rng) -> (ModelParams, usize) {
    let input_dim = rng.random_range(2..=6);
    let n_layers = rng.random_range(1..=3);
    let layers =
        (0..n_layers).map(|_| LayerShape { nodes: rng.random_range(1..=5), memory: rng.random_range(1..=4) }).collect();
    let arch = Architecture { input_dim, layers };
    let fc = FeatureConfig { n_mels: input_dim, ..FeatureConfig::default() };
    let mut p = ModelParams::init(&arch, fc, rng);
    for (m, s) in p.input_mean.iter_mut().zip(p.input_scale.iter_mut()) {
        *m = rng.random_range(-0.5..0.5);
        *s = rng.random_range(0.5..2.0);
    }
    (p, input_dim)
}

fn functional(params: &ModelParams, feats: &FeatureMatrix, weights: &[f64]) -> f64 {
    let (em, _) = forward(params, feats).expect("valid model");
    em.as_slice().iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Backward pass against central differences of `sum(w * logprobs)` for
/// every coordinate of every trainable tensor. The perturbation is applied
/// to f32 parameters, so the difference quotient divides by the step that
/// was actually representable. Kinks must stay rare: more than one in a
/// thousand coordinates fails the check.
pub fn svdf_gradcheck(models: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let eps = 1e-4f64;
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for m in 0..models {
        let (params, dim) = random_model(&mut rng);
        let t = rng.random_range(1..=8);
        let feats = FeatureMatrix::from_rows((0..t * dim).map(|_| rng.random_range(-2.0f32..2.0)).collect(), dim);
        let weights: Vec<f64> = (0..t * NUM_TOKENS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = forward(&params, &feats).map_err(|e| e.to_string())?;
        let grads = backward(&params, &cache, &weights).map_err(|e| e.to_string())?;
        for (ti, g) in grads.tensors.iter().enumerate() {
            for k in 0..g.len() {
                let x = params.trainable()[ti][k];
                let up = (f64::from(x) + eps) as f32;
                let down = (f64::from(x) - eps) as f32;
                let mut pp = params.clone();
                pp.trainable_mut()[ti][k] = up;
                let fp = functional(&pp, &feats, &weights);
                pp.trainable_mut()[ti][k] = down;
                let fm = functional(&pp, &feats, &weights);
                let fd = (fp - fm) / (f64::from(up) - f64::from(down));
                let r = rel_err(g[k], fd, 1e-4);
                checked += 1;
                if r <= 1e-4 {
                    worst = worst.max(r);
                    continue;
                }
                // A ReLU switching inside [x - eps, x + eps] makes the loss
                // non-differentiable there. The one-sided quotients then
                // disagree, and the analytic value must be the one on the
                // side that contains x's own activation pattern.
                let f0 = functional(&params, &feats, &weights);
                let right = (fp - f0) / (f64::from(up) - f64::from(x));
                let left = (f0 - fm) / (f64::from(x) - f64::from(down));
                let kink = rel_err(left, right, 1e-4) > 1e-2;
                if kink && (rel_err(g[k], left, 1e-4) < 1e-2 || rel_err(g[k], right, 1e-4) < 1e-2) {
                    kinks += 1;
                    continue;
                }
                return Err(format!("model {m}, tensor {ti}[{k}]: analytic {} vs numeric {fd}", g[k]));
            }
        }
    }
    if kinks * 1000 > checked {
        return Err(format!("{kinks} of {checked} coordinates sit on ReLU kinks"));
    }
    Ok(format!(
        "{models} models, {checked} coordinates, max rel err {worst:.1e} ({kinks} at ReLU kinks matched one-sided)"
    ))
}

/// Exhaustive search over increasing 9-tuples. Among equal scores the tuple
/// whose last pick is earliest wins, then the second to last, and so on.
pub fn viterbi_bruteforce(window: &EmissionMatrix, keyword: &[TokenId]) -> (f64, Vec<usize>) {
    let w = window.num_frames();
    let k = keyword.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut picks: Vec<usize> = (0..k).collect();
    loop {
        let mut score = 0.0;
        for (s, &t) in picks.iter().enumerate() {
            score += window.row(t)[keyword[s]];
        }
        let better = match &best {
            None => true,
            Some((b, bp)) => score > *b || (score == *b && picks.iter().rev().lt(bp.iter().rev())),
        };
        if better {
            best = Some((score, picks.clone()));
        }
        // Next combination in lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                return best.expect("at least one tuple");
            }
            i -= 1;
            if picks[i] < w - k + i {
                break;
            }
        }
        picks[i] += 1;
        for j in i + 1..k {
            picks[j] = picks[j - 1] + 1;
        }
    }
}

/// Max-Pooling Viterbi against enumeration on random windows (W = 9..12),
/// plus windows of small integer log-scores, whose sums are exact and so
/// full of genuine ties.
pub fn viterbi_oracle(matrices: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let mut ties_checked = 0;
    for i in 0..matrices {
        let w = rng.random_range(9..=12);
        let quantised = i % 2 == 1;
        let rows: Vec<f64> = (0..w * NUM_TOKENS)
            .map(|_| if quantised { -f64::from(rng.random_range(1..=2u8)) } else { rng.random_range(-6.0..0.0) })
            .collect();
        let em = EmissionMatrix::from_logprobs(rows);
        let (score, picks) = maxpool_viterbi(&em, &KEYWORD).map_err(|e| e.to_string())?;
        let (bscore, bpicks) = viterbi_bruteforce(&em, &KEYWORD);
        if score != bscore || picks != bpicks {
            return Err(format!("matrix {i} (W={w}): dp {score} {picks:?} vs enumeration {bscore} {bpicks:?}"));
        }
        if maxpool_viterbi(&em, &KEYWORD).unwrap() != (score, picks) {
            return Err(format!("matrix {i}: repeated call differs"));
        }
        ties_checked += quantised as usize;
    }
    Ok(format!("{matrices} matrices, {ties_checked} with exact ties, scores and picks identical"))
}

/// Chunked feature extraction against batch (bit-exact) and frame-by-frame
/// SVDF against batch forward (within 1e-6).
pub fn streaming_equivalence(chunkings: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let fc = FeatureConfig::default();
    let frontend = LogMel::new(fc);
    let (mut worst, mut frames) = (0.0f64, 0usize);
    for c in 0..chunkings {
        let n = rng.random_range(0..12_000);
        let wave: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let batch = frontend.compute(&wave);
        let mut state = LogMelState::new();
        let mut streamed = FeatureMatrix::new(fc.n_mels);
        let mut pos = 0;
        while pos < n {
            let len = match rng.random_range(0..4) {
                0 => 0,
                1 => rng.random_range(1..10),
                2 => 160,
                _ => rng.random_range(1..3000),
            }
            .min(n - pos);
            streamed.append(&frontend.process_chunk(&wave[pos..pos + len], &mut state));
            pos += len;
        }
        if streamed != batch {
            return Err(format!("chunking {c}: streamed features differ from batch"));
        }
        if batch.num_frames() == 0 {
            continue;
        }
        let arch = Architecture {
            input_dim: fc.n_mels,
            layers: vec![LayerShape { nodes: 8, memory: rng.random_range(1..=5) }; 2],
        };
        let params = ModelParams::init(&arch, fc, &mut rng);
        let (em, _) = forward(&params, &batch).map_err(|e| e.to_string())?;
        let mut st = StreamState::new(&params);
        for t in 0..batch.num_frames() {
            let row = forward_streaming(&params, batch.row(t), &mut st).map_err(|e| e.to_string())?;
            for k in 0..NUM_TOKENS {
                worst = worst.max((row[k] - em.row(t)[k]).abs());
            }
        }
        frames += batch.num_frames();
        if worst > 1e-6 {
            return Err(format!("chunking {c}: streaming emissions differ by {worst}"));
        }
    }
    Ok(format!("{chunkings} chunkings, features bit-exact, {frames} emission frames within {worst:.1e}"))
}

pub fn utterance(id: &str, parent: Option<&str>) -> Utterance {
    Utterance {
        id: id.into(),
        speaker_id: "s".into(),
        audio_path: PathBuf::from(format!("{id}.wav")),
        duration_s: 1.0,
        label: Label::Positive,
        tokens: KEYWORD.to_vec(),
        alignment: None,
        augmented_from: parent.map(str::to_string),
    }
}

fn ids(m: &CorpusManifest) -> HashSet<String> {
    m.utterances.iter().map(|u| u.id.clone()).collect()
}

/// Nesting, complementarity and determinism of A[X]/B[Z] on random id sets.
pub fn split_laws(trials: usize, seed: u64) -> Check {
    let mut rng = rng(seed);
    let xs = [0u8, 1, 10, 20, 33, 50, 80, 99, 100];
    for trial in 0..trials {
        let n = rng.random_range(1000..1500);
        let mut utts: Vec<Utterance> =
            (0..n).map(|i| utterance(&format!("t{trial}_{i}_{}", rng.random::<u32>()), None)).collect();
        // A few augmented copies that must follow their parents.
        for i in 0..50 {
            let parent = utts[i].id.clone();
            utts.push(utterance(&format!("{parent}_aug"), Some(&parent)));
        }
        let m = CorpusManifest::new(utts, ".").map_err(|e| e.to_string())?;
        let all = ids(&m);
        let split_seed = rng.random();
        let mut prev: Option<HashSet<String>> = None;
        for &x in &xs {
            let (a, b) = split_ab(&m, SplitSpec::new(x, split_seed).unwrap());
            let (a_ids, b_ids) = (ids(&a), ids(&b));
            if !a_ids.is_disjoint(&b_ids) || a_ids.union(&b_ids).cloned().collect::<HashSet<_>>() != all {
                return Err(format!("trial {trial}, X={x}: A and B are not complementary"));
            }
            if let Some(p) = &prev {
                if !p.is_subset(&a_ids) {
                    return Err(format!("trial {trial}: A[{x}] does not contain the smaller A"));
                }
            }
            let (a2, b2) = split_ab(&m, SplitSpec::new(x, split_seed).unwrap());
            if a2 != a || b2 != b {
                return Err(format!("trial {trial}, X={x}: split is not deterministic"));
            }
            for u in m.utterances.iter().filter(|u| u.augmented_from.is_some()) {
                let parent = u.augmented_from.as_ref().unwrap();
                if a_ids.contains(&u.id) != a_ids.contains(parent) {
                    return Err(format!("trial {trial}: {} split away from its parent", u.id));
                }
            }
            let expected = m
                .utterances
                .iter()
                .filter(|u| normalized_hash(u.split_key(), split_seed) < f64::from(x) / 100.0)
                .count();
            if a.len() != expected {
                return Err(format!(
                    "trial {trial}, X={x}: |A| = {} but {expected} hashes fall below the cut",
                    a.len()
                ));
            }
            prev = Some(a_ids);
        }
    }
    Ok(format!("{trials} id sets of >=1000 ids, X in {xs:?}"))
}

pub fn trajectory(points: &[(usize, f64)]) -> ScoreTrajectory {
    ScoreTrajectory { points: points.to_vec() }
}

/// Trigger rule on constructed trajectories, and the sign convention of the
/// latency report on constructed CE/CTC pairs.
pub fn latency_rule() -> Check {
    // Non-binding floor: peak 0.8 gives 0.32; the ramp first exceeds it at 57.
    let ramp: Vec<(usize, f64)> = (0..100).map(|t| (t, if t < 57 { 0.3 } else { 0.8 })).collect();
    let cases = [
        (ramp, Some(57), "peak 0.8, threshold 0.32"),
        (vec![(5, 0.1), (6, 0.2), (7, 0.21), (8, 0.3)], Some(7), "peak 0.3, floor 0.20 binds"),
        (vec![(5, 0.2), (6, 0.2)], None, "peak 0.2 never exceeds the floor"),
        (vec![(5, 0.1), (6, 0.32), (7, 0.33), (8, 0.8)], Some(7), "score equal to 0.32 does not trigger"),
    ];
    for (points, expected, what) in cases {
        let got = trigger_point(&trajectory(&points));
        if got != expected {
            return Err(format!("{what}: expected {expected:?}, got {got:?}"));
        }
    }
    // Uniform scaling leaves the trigger unchanged while the floor is inactive.
    let base: Vec<(usize, f64)> = (0..60).map(|t| (t, 0.9 * (t as f64 / 59.0))).collect();
    let scaled: Vec<(usize, f64)> = base.iter().map(|&(t, s)| (t, s * 0.7)).collect();
    if trigger_point(&trajectory(&base)) != trigger_point(&trajectory(&scaled)) {
        return Err("trigger point changed under uniform scaling".into());
    }

    let step = |at: usize| trajectory(&(0..100).map(|t| (t, if t >= at { 0.9 } else { 0.05 })).collect::<Vec<_>>());
    let ce = vec![("u".to_string(), step(60))];
    let ctc = vec![("u".to_string(), step(50))];
    let r = latency_report(&ce, &ctc).map_err(|e| e.to_string())?;
    if r.rows[0].latency_ms != Some(-100.0) {
        return Err(format!("CTC at 50, CE at 60 gave {:?} ms, expected -100", r.rows[0].latency_ms));
    }
    let swapped = latency_report(&ctc, &ce).map_err(|e| e.to_string())?;
    if swapped.mean_ms != Some(100.0) {
        return Err("latency is not antisymmetric under swapping systems".into());
    }
    let never = vec![("u".to_string(), trajectory(&[(0, 0.1), (1, 0.15)]))];
    let r = latency_report(&never, &ctc).map_err(|e| e.to_string())?;
    if r.mean_ms.is_some() || r.ce_miss_rate != 1.0 {
        return Err("a CE miss contributed to the latency mean".into());
    }
    Ok("threshold max(0.4 peak, 0.20) in binding and non-binding cases; CTC-first gives -100 ms".into())
}
