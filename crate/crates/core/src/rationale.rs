//! Rationale selection: per-sentence binary classification over retrieved
//! abstracts, or the baseline's fixed-threshold rule.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{check_threshold, ScoreBackend, TextPair};
use crate::data_model::{Claim, ClaimId, ClaimSet, Corpus, DocId, Document};
use crate::error::{Error, Result};

/// Claim id to the doc ids retrieved for it.
pub type RetrievedMap = BTreeMap<ClaimId, Vec<DocId>>;

/// Claim id to selected sentence indices per retrieved doc.
pub type RationaleMap = BTreeMap<ClaimId, BTreeMap<DocId, Vec<usize>>>;

/// Decision threshold used by binary mode.
pub const BINARY_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RationaleMode {
    Binary,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RationaleConfig {
    pub mode: RationaleMode,
    /// Only consulted in threshold mode.
    pub threshold: f64,
    pub max_sentences: Option<usize>,
    /// Fraction of negative training sentences to keep; `None` keeps all.
    pub negative_subsample: Option<f64>,
}

impl Default for RationaleConfig {
    fn default() -> Self {
        RationaleConfig {
            mode: RationaleMode::Binary,
            threshold: 0.5,
            max_sentences: None,
            negative_subsample: None,
        }
    }
}

impl RationaleConfig {
    pub fn baseline() -> Self {
        RationaleConfig {
            mode: RationaleMode::Threshold,
            ..RationaleConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_threshold(self.threshold)?;
        if self.max_sentences == Some(0) {
            return Err(Error::InvalidArgument("max_sentences must be >= 1 when set".into()));
        }
        if let Some(r) = self.negative_subsample {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidArgument(format!("negative_subsample {r} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn decision_threshold(&self) -> f64 {
        match self.mode {
            RationaleMode::Binary => BINARY_DECISION_THRESHOLD,
            RationaleMode::Threshold => self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationaleTrainingExample {
    pub claim_id: ClaimId,
    pub doc_id: DocId,
    pub sentence_index: usize,
    pub claim: String,
    pub sentence: String,
    pub label: bool,
}

/// One example per (claim, retrieved doc, sentence). A sentence is positive
/// iff it belongs to a gold rationale for that (claim, doc).
pub fn make_rationale_training_set(
    claims: &ClaimSet,
    retrieved: &RetrievedMap,
    corpus: &Corpus,
) -> Result<Vec<RationaleTrainingExample>> {
    let mut out = Vec::new();
    for claim in claims {
        let Some(docs) = retrieved.get(&claim.id) else {
            continue;
        };
        for &doc_id in docs {
            let doc = corpus.get(doc_id).ok_or_else(|| {
                Error::Integrity(format!(
                    "retrieved doc {doc_id} for claim {} is not in the corpus",
                    claim.id
                ))
            })?;
            let gold = claim.gold_sentences(doc_id);
            for (i, s) in doc.sentences.iter().enumerate() {
                out.push(RationaleTrainingExample {
                    claim_id: claim.id,
                    doc_id,
                    sentence_index: i,
                    claim: claim.text.clone(),
                    sentence: s.clone(),
                    label: gold.contains(&i),
                });
            }
        }
    }
    Ok(out)
}

/// Keeps every positive and a seeded Bernoulli(`keep`) sample of negatives.
pub fn subsample_negatives(
    examples: Vec<RationaleTrainingExample>,
    keep: f64,
    seed: u64,
) -> Vec<RationaleTrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples
        .into_iter()
        .filter(|e| e.label || rng.gen::<f64>() < keep)
        .collect()
}

/// Selected sentence indices for one (claim, doc), strictly ascending.
/// Documents without sentences select nothing.
pub fn select_rationales(
    claim: &Claim,
    doc: &Document,
    backend: &dyn ScoreBackend,
    config: &RationaleConfig,
) -> Result<Vec<usize>> {
    config.validate()?;
    if doc.sentences.is_empty() {
        return Ok(Vec::new());
    }
    let pairs: Vec<TextPair> = doc.sentences.iter().map(|s| TextPair::new(&claim.text, s)).collect();
    let probs = backend
        .score(&pairs)
        .map_err(|e| Error::stage("rationale", claim.id.0, Some(doc.doc_id.0), e))?;
    Ok(select_from_scores(&probs, config))
}

/// Applies the selection rule to precomputed per-sentence scores.
pub fn select_from_scores(probs: &[f64], config: &RationaleConfig) -> Vec<usize> {
    let t = config.decision_threshold();
    let mut chosen: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > t).collect();
    if let Some(cap) = config.max_sentences {
        if chosen.len() > cap {
            chosen.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            chosen.truncate(cap);
        }
    }
    chosen.sort_unstable();
    chosen
}
