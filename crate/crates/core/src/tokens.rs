//! The fixed 12-entry token inventory shared by every model and manifest.
//!
//! Indices 0..9 are the wake-word phonemes in spoken order, followed by
//! `silence`, `unknown` and finally the CTC `blank`.

/// Index into the token inventory.
pub type TokenId = usize;

/// Number of phonemes in the wake word.
pub const KEYWORD_LEN: usize = 9;

/// Total inventory size: nine phonemes plus silence, unknown and blank.
pub const NUM_TOKENS: usize = 12;

pub const SILENCE: TokenId = 9;
pub const UNKNOWN: TokenId = 10;
/// Blank is always the last index.
pub const BLANK: TokenId = 11;

/// The keyword as a token sequence, in order.
pub const KEYWORD: [TokenId; KEYWORD_LEN] = [0, 1, 2, 3, 4, 5, 6, 7, 8];

pub const TOKEN_NAMES: [&str; NUM_TOKENS] =
    ["HH", "EY", "M", "AA", "R", "K", "OW", "L", "AH", "<sil>", "<unk>", "<blank>"];

/// Owned copy of the inventory names, used by manifests and checkpoints.
pub fn default_inventory() -> Vec<String> {
    TOKEN_NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn is_keyword_token(token: TokenId) -> bool {
    token < KEYWORD_LEN
}

/// Removes adjacent duplicates: the unaligned transcript implied by a
/// frame-level alignment.
pub fn collapse_repeats(frames: &[TokenId]) -> Vec<TokenId> {
    let mut out: Vec<TokenId> = Vec::new();
    for &t in frames {
        if out.last() != Some(&t) {
            out.push(t);
        }
    }
    out
}
