//! Corpus, claim, and prediction types plus their line-delimited JSON files.
//!
//! Field names follow the public SciFact release so that files produced by
//! other tools (and the official scorer) interoperate:
//!
//! * corpus: `{"doc_id": int, "title": str, "abstract": [str]}`
//! * claims: `{"id": int, "claim": str, "evidence": {doc_id: [{"sentences": [int], "label": str}]}, "cited_doc_ids": [int]}`
//! * predictions: `{"id": int, "evidence": {doc_id: {"sentences": [int], "label": str}}}`
//!
//! Unknown fields are ignored on read.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClaimId(pub u64);

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for ClaimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Veracity label. Gold files never carry `NotEnoughInfo`; it is encoded by
/// the absence of evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SUPPORT")]
    Support,
    #[serde(rename = "CONTRADICT")]
    Contradict,
    #[serde(rename = "NOT_ENOUGH_INFO")]
    NotEnoughInfo,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Contradict, Label::NotEnoughInfo, Label::Support];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Support => "SUPPORT",
            Label::Contradict => "CONTRADICT",
            Label::NotEnoughInfo => "NOT_ENOUGH_INFO",
        }
    }

    /// Row/column position in the (C, N, S) confusion-matrix order.
    pub fn matrix_index(self) -> usize {
        match self {
            Label::Contradict => 0,
            Label::NotEnoughInfo => 1,
            Label::Support => 2,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: DocId,
    pub title: String,
    pub sentences: Vec<String>,
}

impl Document {
    /// Title followed by every abstract sentence, space separated.
    pub fn full_text(&self) -> String {
        let mut text = self.title.clone();
        for s in &self.sentences {
            text.push(' ');
            text.push_str(s);
        }
        text
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<DocId, usize>,
    degenerate: Vec<DocId>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        let mut degenerate = Vec::new();
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate doc_id {}", d.doc_id)));
            }
            if d.sentences.is_empty() {
                degenerate.push(d.doc_id);
            }
        }
        Ok(Corpus {
            docs,
            by_id,
            degenerate,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: DocId) -> Option<&Document> {
        self.by_id.get(&id).map(|&i| &self.docs[i])
    }

    pub fn require(&self, id: DocId) -> Result<&Document> {
        self.get(id)
            .ok_or_else(|| Error::Integrity(format!("doc_id {id} not in corpus")))
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    /// Documents loaded with an empty abstract.
    pub fn degenerate(&self) -> &[DocId] {
        &self.degenerate
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldRationale {
    pub sentences: BTreeSet<usize>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub id: ClaimId,
    pub text: String,
    pub cited_doc_ids: Vec<DocId>,
    pub evidence: BTreeMap<DocId, Vec<GoldRationale>>,
    /// Set when the source record lacked `cited_doc_ids` and the evidence
    /// keys were used instead.
    pub cited_from_evidence: bool,
}

impl Claim {
    pub fn has_evidence(&self) -> bool {
        !self.evidence.is_empty()
    }

    /// Gold label for `doc`, or `None` when the doc is not evidence.
    pub fn gold_label(&self, doc: DocId) -> Option<Label> {
        self.evidence.get(&doc).and_then(|rs| rs.first()).map(|r| r.label)
    }

    /// Union of all gold rationale sentences for `doc`.
    pub fn gold_sentences(&self, doc: DocId) -> BTreeSet<usize> {
        self.evidence
            .get(&doc)
            .map(|rs| rs.iter().flat_map(|r| r.sentences.iter().copied()).collect())
            .unwrap_or_default()
    }

    pub fn evidence_docs(&self) -> BTreeSet<DocId> {
        self.evidence.keys().copied().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClaimSet {
    pub claims: Vec<Claim>,
}

impl ClaimSet {
    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Claim> {
        self.claims.iter()
    }

    pub fn get(&self, id: ClaimId) -> Option<&Claim> {
        self.claims.iter().find(|c| c.id == id)
    }

    /// Checks every evidence entry against the corpus: the doc must exist and
    /// every rationale index must be in range.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        for claim in &self.claims {
            for (doc_id, rationales) in &claim.evidence {
                let doc = corpus.get(*doc_id).ok_or_else(|| {
                    Error::Integrity(format!(
                        "claim {} cites evidence doc {} which is not in the corpus",
                        claim.id, doc_id
                    ))
                })?;
                for r in rationales {
                    if let Some(&bad) = r.sentences.iter().find(|&&i| i >= doc.sentences.len()) {
                        return Err(Error::Integrity(format!(
                            "claim {} doc {}: rationale sentence {} out of range (doc has {})",
                            claim.id,
                            doc_id,
                            bad,
                            doc.sentences.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a ClaimSet {
    type Item = &'a Claim;
    type IntoIter = std::slice::Iter<'a, Claim>;
    fn into_iter(self) -> Self::IntoIter {
        self.claims.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocPrediction {
    pub sentences: Vec<usize>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "id")]
    pub claim_id: ClaimId,
    pub evidence: BTreeMap<DocId, DocPrediction>,
}

impl Prediction {
    pub fn empty(claim_id: ClaimId) -> Self {
        Prediction {
            claim_id,
            evidence: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (doc, p) in &self.evidence {
            if p.sentences.is_empty() {
                return Err(Error::Contract(format!(
                    "prediction for claim {} doc {} has no sentences",
                    self.claim_id, doc
                )));
            }
            if p.label == Label::NotEnoughInfo {
                return Err(Error::Contract(format!(
                    "prediction for claim {} doc {} is labeled NOT_ENOUGH_INFO; NEI docs must be omitted",
                    self.claim_id, doc
                )));
            }
        }
        Ok(())
    }

    fn canonicalize(&mut self) {
        for p in self.evidence.values_mut() {
            p.sentences.sort_unstable();
            p.sentences.dedup();
        }
    }
}

/// A prediction set kept in canonical order (ascending claim id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Predictions {
    items: Vec<Prediction>,
}

impl Predictions {
    pub fn new(mut items: Vec<Prediction>) -> Self {
        for p in &mut items {
            p.canonicalize();
        }
        items.sort_by_key(|p| p.claim_id);
        Predictions { items }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Prediction> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ClaimId) -> Option<&Prediction> {
        self.items
            .binary_search_by_key(&id, |p| p.claim_id)
            .ok()
            .map(|i| &self.items[i])
    }

    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        for p in &self.items {
            p.validate()?;
            for (doc_id, dp) in &p.evidence {
                let doc = corpus.get(*doc_id).ok_or_else(|| {
                    Error::Integrity(format!(
                        "prediction for claim {} references unknown doc {}",
                        p.claim_id, doc_id
                    ))
                })?;
                if let Some(&bad) = dp.sentences.iter().find(|&&i| i >= doc.sentences.len()) {
                    return Err(Error::Integrity(format!(
                        "prediction for claim {} doc {}: sentence {} out of range",
                        p.claim_id, doc_id, bad
                    )));
                }
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Predictions {
    type Item = &'a Prediction;
    type IntoIter = std::slice::Iter<'a, Prediction>;
    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

// ---- raw records ----

#[derive(Deserialize)]
struct CorpusRecord {
    doc_id: u64,
    title: String,
    #[serde(rename = "abstract")]
    sentences: Vec<String>,
}

#[derive(Deserialize)]
struct RationaleRecord {
    sentences: Vec<usize>,
    label: Label,
}

#[derive(Deserialize)]
struct ClaimRecord {
    id: u64,
    claim: String,
    #[serde(default)]
    evidence: BTreeMap<DocId, Vec<RationaleRecord>>,
    cited_doc_ids: Option<Vec<DocId>>,
}

/// Reads a JSONL file, calling `f` with the 1-based line number and the
/// decoded record. Blank lines are skipped.
pub(crate) fn read_jsonl<T, F>(path: &Path, mut f: F) -> Result<()>
where
    T: DeserializeOwned,
    F: FnMut(usize, T) -> Result<()>,
{
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        f(i + 1, record)?;
    }
    Ok(())
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&r).map_err(|e| Error::Contract(e.to_string()))?;
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    let mut seen = HashMap::new();
    read_jsonl(path, |line, r: CorpusRecord| {
        if let Some(prev) = seen.insert(r.doc_id, line) {
            return Err(Error::Integrity(format!(
                "{}: duplicate doc_id {} on line {} (first seen on line {})",
                path.display(),
                r.doc_id,
                line,
                prev
            )));
        }
        if r.sentences.is_empty() {
            log::warn!("doc {} has an empty abstract; flagged degenerate", r.doc_id);
        }
        docs.push(Document {
            doc_id: DocId(r.doc_id),
            title: r.title,
            sentences: r.sentences,
        });
        Ok(())
    })?;
    Corpus::new(docs)
}

/// Loads a claims file. When `corpus` is given, evidence is additionally
/// validated against it.
pub fn load_claims(path: impl AsRef<Path>, corpus: Option<&Corpus>) -> Result<ClaimSet> {
    let path = path.as_ref();
    let mut claims = Vec::new();
    read_jsonl(path, |line, r: ClaimRecord| {
        let at = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: msg,
        };
        if r.claim.trim().is_empty() {
            return Err(at(format!("claim {} has empty text", r.id)));
        }
        let cited_from_evidence = r.cited_doc_ids.is_none();
        let cited_doc_ids = match r.cited_doc_ids {
            Some(c) => c,
            None => {
                log::warn!("claim {} has no cited_doc_ids; falling back to evidence keys", r.id);
                r.evidence.keys().copied().collect()
            }
        };
        let mut evidence = BTreeMap::new();
        for (doc, rats) in r.evidence {
            if !cited_doc_ids.contains(&doc) {
                return Err(Error::Integrity(format!(
                    "{} line {}: claim {} has evidence for doc {} which is not cited",
                    path.display(),
                    line,
                    r.id,
                    doc
                )));
            }
            let mut out = Vec::with_capacity(rats.len());
            for rat in rats {
                if rat.label == Label::NotEnoughInfo {
                    return Err(at(format!(
                        "claim {} doc {}: gold evidence cannot be NOT_ENOUGH_INFO",
                        r.id, doc
                    )));
                }
                if rat.sentences.is_empty() {
                    return Err(at(format!("claim {} doc {}: empty rationale", r.id, doc)));
                }
                out.push(GoldRationale {
                    sentences: rat.sentences.into_iter().collect(),
                    label: rat.label,
                });
            }
            if let Some(first) = out.first() {
                if out.iter().any(|g| g.label != first.label) {
                    return Err(Error::Integrity(format!(
                        "{} line {}: claim {} doc {} has conflicting rationale labels",
                        path.display(),
                        line,
                        r.id,
                        doc
                    )));
                }
                evidence.insert(doc, out);
            }
        }
        claims.push(Claim {
            id: ClaimId(r.id),
            text: r.claim,
            cited_doc_ids,
            evidence,
            cited_from_evidence,
        });
        Ok(())
    })?;
    let set = ClaimSet { claims };
    if let Some(corpus) = corpus {
        set.validate_against(corpus)?;
    }
    Ok(set)
}

/// Writes predictions in canonical order. Every record is validated first so
/// that nothing is written for an invalid set.
pub fn write_predictions(predictions: &Predictions, path: impl AsRef<Path>) -> Result<()> {
    for p in predictions {
        p.validate()?;
    }
    write_jsonl(path.as_ref(), predictions.iter())
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Predictions> {
    let path = path.as_ref();
    let mut items = Vec::new();
    read_jsonl(path, |line, p: Prediction| {
        p.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        items.push(p);
        Ok(())
    })?;
    Ok(Predictions::new(items))
}
