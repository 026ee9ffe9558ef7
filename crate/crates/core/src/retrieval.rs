//! Abstract retrieval: a TF-IDF candidate pool filtered by a binary
//! `(claim, title)` classifier, plus the plain top-k baseline and a
//! scorer-driven rerank of the pool.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{check_threshold, ScoreBackend, TaskTag, TextPair};
use crate::data_model::{Claim, ClaimSet, Corpus, DocId};
use crate::error::{Error, Result};
use crate::text::{rank_order, Ranked, RankedList, TfidfIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Keep pooled documents the classifier accepts.
    Classify,
    /// Keep the first `baseline_k` pooled documents.
    TopkBaseline,
    /// Re-sort the pool by backend score and keep the first `rerank_k`.
    Rerank,
}

/// Which document text the rerank scorer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankText {
    Title,
    FullText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub pool_size: usize,
    pub mode: RetrievalMode,
    pub baseline_k: usize,
    pub rerank_k: usize,
    pub max_accepted: Option<usize>,
    pub rerank_text: RerankText,
    /// Decision threshold for classify mode.
    pub threshold: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            pool_size: 30,
            mode: RetrievalMode::Classify,
            baseline_k: 3,
            rerank_k: 3,
            max_accepted: None,
            rerank_text: RerankText::FullText,
            threshold: 0.5,
        }
    }
}

impl RetrievalConfig {
    pub fn baseline() -> Self {
        RetrievalConfig {
            mode: RetrievalMode::TopkBaseline,
            ..RetrievalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size < 1 {
            return Err(Error::InvalidArgument("pool_size must be >= 1".into()));
        }
        for (name, k) in [("baseline_k", self.baseline_k), ("rerank_k", self.rerank_k)] {
            if k < 1 || k > self.pool_size {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {k} must lie in 1..={}",
                    self.pool_size
                )));
            }
        }
        if self.max_accepted == Some(0) {
            return Err(Error::InvalidArgument("max_accepted must be >= 1 when set".into()));
        }
        check_threshold(self.threshold)
    }

    pub fn needs_backend(&self) -> bool {
        matches!(self.mode, RetrievalMode::Classify | RetrievalMode::Rerank)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractTrainingExample {
    pub claim_id: crate::data_model::ClaimId,
    pub doc_id: DocId,
    pub claim: String,
    pub title: String,
    pub label: bool,
}

pub fn candidate_pool(index: &TfidfIndex, claim: &Claim, pool_size: usize) -> Result<RankedList> {
    index.top_k(&claim.text, pool_size)
}

/// One `(claim, title)` example per pooled document; positive iff the
/// document is gold evidence for the claim.
pub fn make_abstract_training_set(
    claims: &ClaimSet,
    corpus: &Corpus,
    index: &TfidfIndex,
    pool_size: usize,
) -> Result<Vec<AbstractTrainingExample>> {
    let mut out = Vec::new();
    for claim in claims {
        let pool = candidate_pool(index, claim, pool_size)?;
        for r in &pool.entries {
            let doc = corpus.require(r.doc_id)?;
            out.push(AbstractTrainingExample {
                claim_id: claim.id,
                doc_id: r.doc_id,
                claim: claim.text.clone(),
                title: doc.title.clone(),
                label: claim.evidence.contains_key(&r.doc_id),
            });
        }
    }
    Ok(out)
}

/// Runs retrieval for one claim. Returns the selected doc ids in ascending
/// order; the result is always a subset of the candidate pool.
pub fn retrieve_abstracts(
    claim: &Claim,
    index: &TfidfIndex,
    corpus: &Corpus,
    backend: Option<&dyn ScoreBackend>,
    config: &RetrievalConfig,
) -> Result<Vec<DocId>> {
    config.validate()?;
    let pool = candidate_pool(index, claim, config.pool_size)?;
    select_from_pool(claim, &pool, corpus, backend, config)
}

/// The selection half of [`retrieve_abstracts`], applied to an existing pool.
pub fn select_from_pool(
    claim: &Claim,
    pool: &RankedList,
    corpus: &Corpus,
    backend: Option<&dyn ScoreBackend>,
    config: &RetrievalConfig,
) -> Result<Vec<DocId>> {
    let wrap = |e: Error| Error::stage("retrieval", claim.id.0, None, e);
    let mut selected: Vec<DocId> = match config.mode {
        RetrievalMode::TopkBaseline => pool.doc_ids().into_iter().take(config.baseline_k).collect(),
        RetrievalMode::Classify => {
            if pool.is_empty() {
                return Ok(Vec::new());
            }
            let backend = require_backend(backend, config)?;
            let titles: Vec<&str> = pool
                .entries
                .iter()
                .map(|r| corpus.require(r.doc_id).map(|d| d.title.as_str()))
                .collect::<Result<_>>()
                .map_err(wrap)?;
            let pairs: Vec<TextPair> = titles.iter().map(|t| TextPair::new(&claim.text, t)).collect();
            let probs = backend.score(&pairs).map_err(wrap)?;
            let mut accepted: Vec<Ranked> = pool
                .entries
                .iter()
                .zip(probs)
                .filter(|(_, p)| *p > config.threshold)
                .map(|(r, p)| Ranked {
                    doc_id: r.doc_id,
                    score: p,
                })
                .collect();
            if let Some(cap) = config.max_accepted {
                accepted.sort_by(rank_order);
                accepted.truncate(cap);
            }
            accepted.into_iter().map(|r| r.doc_id).collect()
        }
        RetrievalMode::Rerank => {
            let backend = require_backend(backend, config)?;
            let texts: Vec<String> = pool
                .entries
                .iter()
                .map(|r| {
                    corpus.require(r.doc_id).map(|d| match config.rerank_text {
                        RerankText::Title => d.title.clone(),
                        RerankText::FullText => d.full_text(),
                    })
                })
                .collect::<Result<_>>()
                .map_err(wrap)?;
            let pairs: Vec<TextPair> = texts.iter().map(|t| TextPair::new(&claim.text, t)).collect();
            let probs = backend.score(&pairs).map_err(wrap)?;
            let mut rescored: Vec<Ranked> = pool
                .entries
                .iter()
                .zip(probs)
                .map(|(r, p)| Ranked {
                    doc_id: r.doc_id,
                    score: p,
                })
                .collect();
            rescored.sort_by(rank_order);
            rescored.into_iter().take(config.rerank_k).map(|r| r.doc_id).collect()
        }
    };
    selected.sort_unstable();
    Ok(selected)
}

fn require_backend<'a>(
    backend: Option<&'a dyn ScoreBackend>,
    config: &RetrievalConfig,
) -> Result<&'a dyn ScoreBackend> {
    backend.ok_or_else(|| Error::Config(format!("retrieval mode {:?} requires a scoring backend", config.mode)))
}

/// Scores pairs by TF-IDF cosine under an existing index.
pub struct TfidfScorer {
    index: Arc<TfidfIndex>,
}

impl TfidfScorer {
    pub fn new(index: Arc<TfidfIndex>) -> Self {
        TfidfScorer { index }
    }
}

impl ScoreBackend for TfidfScorer {
    fn task(&self) -> TaskTag {
        TaskTag::Rerank
    }

    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>> {
        Ok(pairs.iter().map(|p| self.index.cosine(p.claim, p.text)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FnBackend;
    use crate::data_model::{ClaimId, Document, GoldRationale, Label};
    use crate::text::TfidfConfig;
    use std::collections::BTreeMap;

    fn toy() -> (Corpus, TfidfIndex) {
        let docs = vec![
            (
                "Aspirin lowers fever",
                vec!["Aspirin reduced fever in adults.", "Dose mattered."],
            ),
            ("Fever in children", vec!["Children with fever were studied."]),
            (
                "Tumor growth and kinase",
                vec!["Kinase inhibition slowed tumor growth."],
            ),
            ("Sleep and memory", vec!["Sleep improves memory consolidation."]),
            ("Aspirin and bleeding", vec!["Aspirin increases bleeding risk."]),
        ];
        let corpus = Corpus::new(
            docs.into_iter()
                .enumerate()
                .map(|(i, (t, s))| Document {
                    doc_id: DocId(10 + i as u64),
                    title: t.into(),
                    sentences: s.into_iter().map(String::from).collect(),
                })
                .collect(),
        )
        .unwrap();
        let index = TfidfIndex::build(&corpus, &TfidfConfig::default()).unwrap();
        (corpus, index)
    }

    fn claim(text: &str, gold: &[u64]) -> Claim {
        let mut evidence = BTreeMap::new();
        for &g in gold {
            evidence.insert(
                DocId(g),
                vec![GoldRationale {
                    sentences: [0].into_iter().collect(),
                    label: Label::Support,
                }],
            );
        }
        Claim {
            id: ClaimId(1),
            text: text.into(),
            cited_doc_ids: gold.iter().map(|&g| DocId(g)).collect(),
            evidence,
            cited_from_evidence: false,
        }
    }

    #[test]
    fn pool_covering_corpus_contains_every_gold_doc() {
        let (corpus, index) = toy();
        let c = claim("aspirin fever", &[10, 14, 13]);
        let pool = candidate_pool(&index, &c, 50).unwrap();
        assert_eq!(pool.len(), corpus.len());
        for g in c.evidence.keys() {
            assert!(pool.doc_ids().contains(g));
        }
    }

    #[test]
    fn training_set_labels_follow_gold_membership() {
        let (corpus, index) = toy();
        let claims = ClaimSet {
            claims: vec![claim("aspirin fever", &[10, 14])],
        };
        let ex = make_abstract_training_set(&claims, &corpus, &index, 5).unwrap();
        assert_eq!(ex.len(), 5);
        assert_eq!(ex.iter().filter(|e| e.label).count(), 2);
        let titles: Vec<_> = ex.iter().map(|e| e.title.as_str()).collect();
        assert!(titles.contains(&"Aspirin lowers fever"));
        assert!(make_abstract_training_set(&ClaimSet::default(), &corpus, &index, 5)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn pool_miss_gives_only_negatives() {
        let (corpus, index) = toy();
        // gold doc 13 (sleep) shares nothing with the claim; pool of 2 misses it
        let claims = ClaimSet {
            claims: vec![claim("aspirin fever", &[13])],
        };
        let ex = make_abstract_training_set(&claims, &corpus, &index, 2).unwrap();
        assert_eq!(ex.len(), 2);
        assert!(ex.iter().all(|e| !e.label));
    }

    #[test]
    fn reject_all_gives_empty_retrieval() {
        let (corpus, index) = toy();
        let b = FnBackend::new(TaskTag::Abstract, |_| 0.1);
        let out = retrieve_abstracts(
            &claim("aspirin", &[]),
            &index,
            &corpus,
            Some(&b),
            &RetrievalConfig::default(),
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn baseline_takes_first_k_of_pool() {
        let (corpus, index) = toy();
        let c = claim("aspirin fever children", &[]);
        let pool = candidate_pool(&index, &c, 30).unwrap();
        let mut expected: Vec<DocId> = pool.doc_ids().into_iter().take(3).collect();
        expected.sort();
        let out = retrieve_abstracts(&c, &index, &corpus, None, &RetrievalConfig::baseline()).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn rerank_by_tfidf_cosine_equals_baseline() {
        let (corpus, index) = toy();
        let index = Arc::new(index);
        let scorer = TfidfScorer::new(index.clone());
        for q in [
            "aspirin fever",
            "tumor kinase growth",
            "memory",
            "children fever aspirin bleeding",
        ] {
            let c = claim(q, &[]);
            let base = retrieve_abstracts(&c, &index, &corpus, None, &RetrievalConfig::baseline()).unwrap();
            let cfg = RetrievalConfig {
                mode: RetrievalMode::Rerank,
                ..RetrievalConfig::default()
            };
            let rr = retrieve_abstracts(&c, &index, &corpus, Some(&scorer), &cfg).unwrap();
            assert_eq!(rr, base, "query {q}");
        }
    }

    #[test]
    fn classify_is_invariant_to_pool_order() {
        let (corpus, index) = toy();
        let c = claim("aspirin fever", &[]);
        let b = FnBackend::new(
            TaskTag::Abstract,
            |p| if p.text.contains("Aspirin") { 0.9 } else { 0.2 },
        );
        let pool = candidate_pool(&index, &c, 5).unwrap();
        let mut reversed = pool.clone();
        reversed.entries.reverse();
        let cfg = RetrievalConfig::default();
        let a = select_from_pool(&c, &pool, &corpus, Some(&b), &cfg).unwrap();
        let r = select_from_pool(&c, &reversed, &corpus, Some(&b), &cfg).unwrap();
        assert_eq!(a, r);
        assert_eq!(a, vec![DocId(10), DocId(14)]);
    }

    #[test]
    fn max_accepted_keeps_highest_scores() {
        let (corpus, index) = toy();
        let c = claim("aspirin fever", &[]);
        let b = FnBackend::new(
            TaskTag::Abstract,
            |p| if p.text.contains("bleeding") { 0.95 } else { 0.8 },
        );
        let cfg = RetrievalConfig {
            max_accepted: Some(1),
            ..RetrievalConfig::default()
        };
        let out = retrieve_abstracts(&c, &index, &corpus, Some(&b), &cfg).unwrap();
        assert_eq!(out, vec![DocId(14)]);
    }

    #[test]
    fn backend_failure_carries_claim_id() {
        struct Broken;
        impl ScoreBackend for Broken {
            fn task(&self) -> TaskTag {
                TaskTag::Abstract
            }
            fn score(&self, _: &[TextPair<'_>]) -> Result<Vec<f64>> {
                Err(Error::Protocol {
                    endpoint: "x".into(),
                    message: "boom".into(),
                })
            }
        }
        let (corpus, index) = toy();
        let err = retrieve_abstracts(
            &claim("aspirin", &[]),
            &index,
            &corpus,
            Some(&Broken),
            &RetrievalConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Stage { claim_id: 1, .. }));
    }

    #[test]
    fn config_validation() {
        let bad = RetrievalConfig {
            baseline_k: 31,
            ..RetrievalConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(RetrievalConfig::default().validate().is_ok());
    }

    #[test]
    fn classify_without_backend_is_config_error() {
        let (corpus, index) = toy();
        let err = retrieve_abstracts(
            &claim("aspirin", &[]),
            &index,
            &corpus,
            None,
            &RetrievalConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
