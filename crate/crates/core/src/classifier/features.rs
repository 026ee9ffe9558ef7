use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TextPair;
use crate::text::Tokenizer;

/// Scalar features appended after the hashed block: log overlap count,
/// Jaccard overlap, length ratio.
pub const NUM_SCALAR_FEATURES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub hash_bits: u8,
    pub tokenizer: Tokenizer,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hash_bits: 18,
            tokenizer: Tokenizer::default(),
        }
    }
}

impl FeatureConfig {
    pub fn hashed_dim(&self) -> usize {
        1usize << self.hash_bits
    }

    pub fn dim(&self) -> usize {
        self.hashed_dim() + NUM_SCALAR_FEATURES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    /// Hashed n-gram features, sorted by index, collisions summed.
    pub hashed: Vec<(u32, f64)>,
    /// Distinct unigrams shared by both sides.
    pub overlap: usize,
    pub jaccard: f64,
    /// Shorter side's word count over the longer side's, in `[0, 1]`.
    pub length_ratio: f64,
}

impl PairFeatures {
    /// Full sparse feature vector including the scalar slots.
    pub fn to_sparse(&self, config: &FeatureConfig) -> Vec<(u32, f64)> {
        let base = config.hashed_dim() as u32;
        let mut v = self.hashed.clone();
        v.push((base, (1.0 + self.overlap as f64).ln()));
        v.push((base + 1, self.jaccard));
        v.push((base + 2, self.length_ratio));
        v
    }
}

// Namespace salts keep the claim side, the text side, and the shared terms
// in disjoint hash streams.
const NS_CLAIM: u8 = b'a';
const NS_TEXT: u8 = b'b';
const NS_SHARED: u8 = b'x';

fn fnv1a(salt: u8, term: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in [salt, 0xff].iter().chain(term.as_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

fn add_namespace(out: &mut BTreeMap<u32, f64>, salt: u8, terms: &BTreeSet<String>, mask: u64) {
    if terms.is_empty() {
        return;
    }
    // each namespace contributes a unit-norm block
    let w = 1.0 / (terms.len() as f64).sqrt();
    for t in terms {
        *out.entry((fnv1a(salt, t) & mask) as u32).or_insert(0.0) += w;
    }
}

pub fn featurize_pair(pair: &TextPair<'_>, config: &FeatureConfig) -> PairFeatures {
    let tok = &config.tokenizer;
    let words_a = tok.words(pair.claim);
    let words_b = tok.words(pair.text);
    let uni_a: BTreeSet<&str> = words_a.iter().map(String::as_str).collect();
    let uni_b: BTreeSet<&str> = words_b.iter().map(String::as_str).collect();
    let overlap = uni_a.intersection(&uni_b).count();
    let union = uni_a.union(&uni_b).count();
    let jaccard = if union == 0 { 0.0 } else { overlap as f64 / union as f64 };
    let (la, lb) = (words_a.len(), words_b.len());
    let length_ratio = if la == 0 || lb == 0 {
        0.0
    } else {
        la.min(lb) as f64 / la.max(lb) as f64
    };

    let grams_a: BTreeSet<String> = tok.tokenize(pair.claim).into_iter().collect();
    let grams_b: BTreeSet<String> = tok.tokenize(pair.text).into_iter().collect();
    let shared: BTreeSet<String> = grams_a.intersection(&grams_b).cloned().collect();

    let mask = (config.hashed_dim() - 1) as u64;
    let mut acc = BTreeMap::new();
    add_namespace(&mut acc, NS_CLAIM, &grams_a, mask);
    add_namespace(&mut acc, NS_TEXT, &grams_b, mask);
    add_namespace(&mut acc, NS_SHARED, &shared, mask);

    PairFeatures {
        hashed: acc.into_iter().collect(),
        overlap,
        jaccard,
        length_ratio,
    }
}
