use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CorpusError;
use crate::features::FeatureConfig;
use crate::tokens::{default_inventory, TokenId, BLANK, NUM_TOKENS};

/// Positives longer than this are discarded.
pub const MAX_POSITIVE_DURATION_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// Frame-level token labels, one per feature frame. Serialised as a
/// run-length list of `[token_id, n_frames]` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment(pub Vec<TokenId>);

impl Alignment {
    pub fn from_runs(runs: &[(TokenId, usize)]) -> Self {
        Alignment(runs.iter().flat_map(|&(tok, n)| std::iter::repeat_n(tok, n)).collect())
    }

    pub fn runs(&self) -> Vec<(TokenId, usize)> {
        let mut out: Vec<(TokenId, usize)> = Vec::new();
        for &t in &self.0 {
            match out.last_mut() {
                Some((tok, n)) if *tok == t => *n += 1,
                _ => out.push((t, 1)),
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn frames(&self) -> &[TokenId] {
        &self.0
    }
}

impl Serialize for Alignment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.runs().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Alignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let runs = Vec::<(TokenId, usize)>::deserialize(d)?;
        if runs.iter().any(|&(_, n)| n == 0) {
            return Err(serde::de::Error::custom("alignment run of zero frames"));
        }
        Ok(Alignment::from_runs(&runs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub audio_path: PathBuf,
    pub duration_s: f64,
    pub label: Label,
    pub tokens: Vec<TokenId>,
    pub alignment: Option<Alignment>,
    pub augmented_from: Option<String>,
}

impl Utterance {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * f64::from(crate::audio::SAMPLE_RATE)).round() as usize
    }

    /// Identity used for split assignment: augmented copies share their
    /// parent's.
    pub fn split_key(&self) -> &str {
        self.augmented_from.as_deref().unwrap_or(&self.id)
    }

    /// Structural checks. The 20 s positive limit is applied by
    /// [`super::balance_speakers`] rather than here, so that raw manifests
    /// can still be ingested.
    pub fn validate(&self, features: &FeatureConfig) -> Result<(), CorpusError> {
        let bad = |why: String| Err(CorpusError::InvalidUtterance { id: self.id.clone(), why });
        if self.id.is_empty() {
            return bad("empty id".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {} s", self.duration_s));
        }
        if let Some(&t) = self.tokens.iter().find(|&&t| t >= BLANK) {
            return bad(format!("token {t} is blank or outside the inventory"));
        }
        if let Some(al) = &self.alignment {
            if let Some(&t) = al.frames().iter().find(|&&t| t >= BLANK) {
                return bad(format!("aligned token {t} is blank or outside the inventory"));
            }
            let expected = features.num_frames(self.num_samples());
            if al.len() != expected {
                return bad(format!("alignment covers {} frames, audio has {expected}", al.len()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub utterances: Vec<Utterance>,
    pub token_inventory: Vec<String>,
    /// Directory that relative `audio_path`s are resolved against.
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn new(utterances: Vec<Utterance>, root: impl Into<PathBuf>) -> Result<Self, CorpusError> {
        let m = Self { utterances, token_inventory: default_inventory(), root: root.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Self { utterances: Vec::new(), token_inventory: default_inventory(), root: root.into() }
    }

    /// Same inventory and root, different utterances.
    pub fn with_utterances(&self, utterances: Vec<Utterance>) -> Self {
        Self { utterances, token_inventory: self.token_inventory.clone(), root: self.root.clone() }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.token_inventory.len() != NUM_TOKENS {
            return Err(CorpusError::Inventory(self.token_inventory.len()));
        }
        let features = FeatureConfig::default();
        let mut seen = HashSet::new();
        for u in &self.utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(CorpusError::DuplicateId(u.id.clone()));
            }
            u.validate(&features)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn audio_path(&self, utt: &Utterance) -> PathBuf {
        if utt.audio_path.is_absolute() {
            utt.audio_path.clone()
        } else {
            self.root.join(&utt.audio_path)
        }
    }

    pub fn positives(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| u.is_positive())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(|u| !u.is_positive())
    }

    pub fn total_hours(&self) -> f64 {
        self.utterances.iter().map(|u| u.duration_s).sum::<f64>() / 3600.0
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.utterances.iter().map(|u| u.id.as_str()).collect()
    }

    /// Concatenation; ids must stay unique. Audio paths are made absolute
    /// when the two roots differ.
    pub fn merged(&self, other: &CorpusManifest) -> Result<Self, CorpusError> {
        let mut utterances = self.utterances.clone();
        for u in &other.utterances {
            let mut u = u.clone();
            if other.root != self.root {
                u.audio_path = other.audio_path(&u);
            }
            utterances.push(u);
        }
        Self::new(utterances, self.root.clone())
    }

    /// Reads a JSONL manifest. Relative audio paths resolve against the
    /// manifest's directory.
    pub fn read_jsonl(path: &Path) -> Result<Self, CorpusError> {
        let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
        let mut utterances = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let u: Utterance = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                source: e,
            })?;
            utterances.push(u);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(utterances, root)
    }

    /// Writes one utterance per line. Audio paths are rewritten relative to
    /// the destination directory, so a tree of manifests and audio can be
    /// moved as a whole.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let dest_root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for u in &self.utterances {
            let mut u = u.clone();
            let abs = self.audio_path(&u);
            u.audio_path = relative_to(&abs, &dest_root).unwrap_or(abs);
            let line = serde_json::to_string(&u).expect("utterance serialises");
            writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
        }
        w.flush().map_err(|e| CorpusError::io(path, e))
    }
}

/// `path` relative to the directory `base`, climbing with `..` where needed.
fn relative_to(path: &Path, base: &Path) -> Option<PathBuf> {
    use std::path::Component;
    let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
    let path = std::path::absolute(path).ok()?;
    let base = std::path::absolute(base).ok()?;
    let p: Vec<Component> = path.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return None;
    }
    let mut out = PathBuf::new();
    for c in &b[common..] {
        match c {
            Component::Normal(_) => out.push(".."),
            _ => return None,
        }
    }
    out.extend(&p[common..]);
    Some(out)
}
