//! Label prediction from selected rationales.
//!
//! The two-step cascade first asks a neutral detector whether the evidence
//! is enough to decide the claim at all. Only when it says ENOUGH_INFO is the
//! support detector consulted; its NOT_SUPPORT answer is reported as
//! CONTRADICT. The three-way scheme is a single argmax classifier.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{check_threshold, ScoreBackend, TextPair, ThreeWayBackend};
use crate::data_model::{Claim, ClaimId, ClaimSet, Corpus, DocId, Label};
use crate::error::{Error, Result};
use crate::rationale::RetrievedMap;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelInput {
    pub claim: String,
    /// Selected sentences joined in ascending index order by single spaces.
    pub evidence: String,
}

impl LabelInput {
    pub fn pair(&self) -> TextPair<'_> {
        TextPair::new(&self.claim, &self.evidence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    TwoStep,
    ThreeWay,
}

/// Where synthesized NOT_ENOUGH_INFO training instances come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeiSource {
    Cited,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub scheme: LabelScheme,
    pub neutral_threshold: f64,
    pub support_threshold: f64,
    pub nei_negatives_per_doc: usize,
    pub nei_source: NeiSource,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            scheme: LabelScheme::TwoStep,
            neutral_threshold: 0.5,
            support_threshold: 0.5,
            nei_negatives_per_doc: 2,
            nei_source: NeiSource::Cited,
            seed: 13,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold(self.neutral_threshold)?;
        check_threshold(self.support_threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeutralLabel {
    EnoughInfo,
    NotEnoughInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SupportLabel {
    Support,
    NotSupport,
}

/// One (claim, doc, evidence) instance with its three-way label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelInstance {
    pub claim_id: ClaimId,
    pub doc_id: DocId,
    pub sentences: Vec<usize>,
    pub input: LabelInput,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTrainingSets {
    pub neutral_set: Vec<(LabelInput, NeutralLabel)>,
    pub support_set: Vec<(LabelInput, SupportLabel)>,
    pub threeway_set: Vec<(LabelInput, Label)>,
}

impl LabelTrainingSets {
    /// Derives the class-merged binary sets from three-way instances:
    /// SUPPORT and CONTRADICT become ENOUGH_INFO; NOT_ENOUGH_INFO and
    /// CONTRADICT become NOT_SUPPORT.
    pub fn from_instances(instances: &[LabelInstance]) -> Self {
        let mut sets = LabelTrainingSets::default();
        for inst in instances {
            let neutral = match inst.label {
                Label::Support | Label::Contradict => NeutralLabel::EnoughInfo,
                Label::NotEnoughInfo => NeutralLabel::NotEnoughInfo,
            };
            let support = match inst.label {
                Label::Support => SupportLabel::Support,
                Label::Contradict | Label::NotEnoughInfo => SupportLabel::NotSupport,
            };
            sets.neutral_set.push((inst.input.clone(), neutral));
            sets.support_set.push((inst.input.clone(), support));
            sets.threeway_set.push((inst.input.clone(), inst.label));
        }
        sets
    }
}

/// Joins the chosen sentences of `doc` in ascending index order. An empty
/// index list is only accepted with `allow_empty`.
pub fn build_label_input(
    claim: &Claim,
    doc_id: DocId,
    indices: &[usize],
    corpus: &Corpus,
    allow_empty: bool,
) -> Result<LabelInput> {
    if indices.is_empty() && !allow_empty {
        return Err(Error::InvalidArgument(format!(
            "empty evidence for claim {} doc {doc_id} without NEI construction flag",
            claim.id
        )));
    }
    let doc = corpus.require(doc_id)?;
    let ordered: BTreeSet<usize> = indices.iter().copied().collect();
    let mut parts = Vec::with_capacity(ordered.len());
    for i in ordered {
        let s = doc.sentences.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "sentence {i} out of range for doc {doc_id} ({} sentences)",
                doc.sentences.len()
            ))
        })?;
        parts.push(s.as_str());
    }
    Ok(LabelInput {
        claim: claim.text.clone(),
        evidence: parts.join(" "),
    })
}

fn nei_rng(seed: u64, claim: ClaimId, doc: DocId) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&claim.0.to_le_bytes());
    key[16..24].copy_from_slice(&doc.0.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Gold ENOUGH_INFO instances plus synthesized NOT_ENOUGH_INFO ones.
///
/// Every gold (claim, doc) yields one instance whose evidence is the union of
/// its gold rationales. For every NEI-source doc, up to
/// `nei_negatives_per_doc` non-rationale sentences are sampled (seeded per
/// claim and doc) and each becomes a single-sentence NEI instance.
pub fn make_label_instances(
    claims: &ClaimSet,
    corpus: &Corpus,
    config: &CascadeConfig,
    retrieved: Option<&RetrievedMap>,
) -> Result<Vec<LabelInstance>> {
    if config.nei_source == NeiSource::Retrieved && retrieved.is_none() {
        return Err(Error::Config("nei_source = retrieved needs a retrieved map".into()));
    }
    let mut out = Vec::new();
    for claim in claims {
        for (&doc_id, rationales) in &claim.evidence {
            let sentences: Vec<usize> = claim.gold_sentences(doc_id).into_iter().collect();
            out.push(LabelInstance {
                claim_id: claim.id,
                doc_id,
                input: build_label_input(claim, doc_id, &sentences, corpus, false)?,
                sentences,
                label: rationales[0].label,
            });
        }

        let source: Vec<DocId> = match config.nei_source {
            NeiSource::Cited => claim.cited_doc_ids.clone(),
            NeiSource::Retrieved => retrieved.and_then(|m| m.get(&claim.id)).cloned().unwrap_or_default(),
        };
        if source.is_empty() {
            log::debug!("claim {} has no source docs; no NEI instances", claim.id);
        }
        let mut seen = BTreeSet::new();
        for doc_id in source {
            if !seen.insert(doc_id) {
                continue;
            }
            let doc = corpus.require(doc_id)?;
            let gold = claim.gold_sentences(doc_id);
            let candidates: Vec<usize> = (0..doc.sentences.len()).filter(|i| !gold.contains(i)).collect();
            let mut rng = nei_rng(config.seed, claim.id, doc_id);
            let mut picked: Vec<usize> = candidates
                .choose_multiple(&mut rng, config.nei_negatives_per_doc.min(candidates.len()))
                .copied()
                .collect();
            picked.sort_unstable();
            for i in picked {
                out.push(LabelInstance {
                    claim_id: claim.id,
                    doc_id,
                    sentences: vec![i],
                    input: build_label_input(claim, doc_id, &[i], corpus, false)?,
                    label: Label::NotEnoughInfo,
                });
            }
        }
    }
    Ok(out)
}

pub fn make_label_training_sets(
    claims: &ClaimSet,
    corpus: &Corpus,
    config: &CascadeConfig,
    retrieved: Option<&RetrievedMap>,
) -> Result<LabelTrainingSets> {
    Ok(LabelTrainingSets::from_instances(&make_label_instances(
        claims, corpus, config, retrieved,
    )?))
}

/// Two-step prediction for a single input. The support backend is never
/// called when the neutral stage says NOT_ENOUGH_INFO.
pub fn predict_label_two_step(
    neutral: &dyn ScoreBackend,
    support: &dyn ScoreBackend,
    input: &LabelInput,
    config: &CascadeConfig,
) -> Result<Label> {
    Ok(predict_labels_two_step(neutral, support, std::slice::from_ref(input), config)?[0])
}

/// Batched two-step prediction. The support backend sees only the inputs
/// the neutral stage accepted, and is not called at all if there are none.
pub fn predict_labels_two_step(
    neutral: &dyn ScoreBackend,
    support: &dyn ScoreBackend,
    inputs: &[LabelInput],
    config: &CascadeConfig,
) -> Result<Vec<Label>> {
    config.validate()?;
    let pairs: Vec<TextPair> = inputs.iter().map(LabelInput::pair).collect();
    let enough: Vec<bool> = neutral
        .score(&pairs)?
        .into_iter()
        .map(|p| p > config.neutral_threshold)
        .collect();
    let mut labels = vec![Label::NotEnoughInfo; inputs.len()];
    let idx: Vec<usize> = (0..inputs.len()).filter(|&i| enough[i]).collect();
    if idx.is_empty() {
        return Ok(labels);
    }
    let second: Vec<TextPair> = idx.iter().map(|&i| pairs[i]).collect();
    let probs = support.score(&second)?;
    for (&i, p) in idx.iter().zip(probs) {
        labels[i] = if p > config.support_threshold {
            Label::Support
        } else {
            Label::Contradict
        };
    }
    Ok(labels)
}

pub fn predict_label_three_way(backend: &dyn ThreeWayBackend, input: &LabelInput) -> Result<Label> {
    Ok(predict_labels_three_way(backend, std::slice::from_ref(input))?[0])
}

pub fn predict_labels_three_way(backend: &dyn ThreeWayBackend, inputs: &[LabelInput]) -> Result<Vec<Label>> {
    let pairs: Vec<TextPair> = inputs.iter().map(LabelInput::pair).collect();
    Ok(backend.score_classes(&pairs)?.into_iter().map(|s| s.argmax()).collect())
}

/// The label stage as wired into the pipeline.
pub enum LabelPredictor<'a> {
    TwoStep {
        neutral: &'a dyn ScoreBackend,
        support: &'a dyn ScoreBackend,
    },
    ThreeWay(&'a dyn ThreeWayBackend),
}

impl LabelPredictor<'_> {
    pub fn predict(&self, inputs: &[LabelInput], config: &CascadeConfig) -> Result<Vec<Label>> {
        match self {
            LabelPredictor::TwoStep { neutral, support } => predict_labels_two_step(*neutral, *support, inputs, config),
            LabelPredictor::ThreeWay(b) => predict_labels_three_way(*b, inputs),
        }
    }
}
