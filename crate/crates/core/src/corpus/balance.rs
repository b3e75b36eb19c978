use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, CorpusError, CorpusManifest, Utterance, MAX_POSITIVE_DURATION_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceConfig {
    /// Speakers with fewer utterances than this are held out for evaluation.
    pub min_holdout: usize,
    pub train_cap: usize,
    pub eval_cap: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self { min_holdout: 50, train_cap: 100, eval_cap: 10, seed: 0 }
    }
}

/// Keeps a seeded random subset of at most `cap` utterances, in manifest
/// order.
fn cap_speaker<'a>(mut utts: Vec<&'a Utterance>, cap: usize, seed: u64, speaker: &str) -> Vec<&'a Utterance> {
    if utts.len() <= cap {
        return utts;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, speaker));
    let mut order: Vec<usize> = (0..utts.len()).collect();
    order.shuffle(&mut rng);
    let mut keep = order[..cap].to_vec();
    keep.sort_unstable();
    let mut i = 0;
    utts.retain(|_| {
        let k = keep.binary_search(&i).is_ok();
        i += 1;
        k
    });
    utts
}

/// Speaker-independent train/eval partition: drops over-long positives,
/// routes low-contribution speakers to evaluation, then caps every
/// speaker's contribution.
pub fn balance_speakers(
    manifest: &CorpusManifest,
    config: &BalanceConfig,
) -> Result<(CorpusManifest, CorpusManifest), CorpusError> {
    if manifest.is_empty() {
        return Err(CorpusError::Empty);
    }
    if config.train_cap == 0 || config.eval_cap == 0 {
        return Err(CorpusError::InvalidParameter("speaker caps must be positive".into()));
    }
    let mut by_speaker: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
    for u in &manifest.utterances {
        if u.is_positive() && u.duration_s > MAX_POSITIVE_DURATION_S {
            continue;
        }
        by_speaker.entry(&u.speaker_id).or_default().push(u);
    }

    let mut train_ids = std::collections::HashSet::new();
    let mut eval_ids = std::collections::HashSet::new();
    for (speaker, utts) in by_speaker {
        if utts.len() < config.min_holdout {
            eval_ids.extend(cap_speaker(utts, config.eval_cap, config.seed, speaker).iter().map(|u| &u.id));
        } else {
            train_ids.extend(cap_speaker(utts, config.train_cap, config.seed, speaker).iter().map(|u| &u.id));
        }
    }
    if train_ids.is_empty() {
        return Err(CorpusError::NoTrainSpeakers { min_holdout: config.min_holdout });
    }
    let pick = |ids: &std::collections::HashSet<&String>| {
        manifest.with_utterances(manifest.utterances.iter().filter(|u| ids.contains(&u.id)).cloned().collect())
    };
    Ok((pick(&train_ids), pick(&eval_ids)))
}
