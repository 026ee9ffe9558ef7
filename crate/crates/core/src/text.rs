//! Tokenization, TF-IDF weighting, and cosine top-k ranking.
//!
//! Weights use raw term counts (optionally `1 + ln tf`) times the smoothed
//! inverse document frequency `ln((1 + N) / (1 + df)) + 1`, and every vector
//! is L2-normalized, so cosine similarity is a plain dot product.
//!
//! Dot products are always accumulated in ascending term-id order. The
//! inverted-index scorer in [`TfidfIndex::top_k`] and the pairwise
//! [`TfidfIndex::cosine`] therefore produce bit-identical scores for the same
//! text.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::{Corpus, DocId};
use crate::error::{Error, Result};
use crate::fingerprint::{fingerprint, hash_bytes};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Word tokens shorter than this many characters are dropped.
    pub min_token_chars: usize,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            lowercase: true,
            ngram_min: 1,
            ngram_max: 2,
            min_token_chars: 1,
        }
    }
}

impl Tokenizer {
    pub fn new(lowercase: bool, ngram_min: usize, ngram_max: usize) -> Result<Self> {
        let t = Tokenizer {
            lowercase,
            ngram_min,
            ngram_max,
            min_token_chars: 1,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn unigrams() -> Self {
        Tokenizer {
            ngram_max: 1,
            ..Tokenizer::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.ngram_min && self.ngram_min <= self.ngram_max && self.ngram_max <= 3) {
            return Err(Error::InvalidArgument(format!(
                "ngram range ({}, {}) must satisfy 1 <= min <= max <= 3",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }

    /// Maximal runs of alphanumeric characters.
    pub fn words(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty() && w.chars().count() >= self.min_token_chars)
            .map(|w| {
                if self.lowercase {
                    w.to_lowercase()
                } else {
                    w.to_string()
                }
            })
            .collect()
    }

    /// Word n-grams for every n in the configured range, shortest first.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let words = self.words(text);
        let mut out = Vec::new();
        for n in self.ngram_min..=self.ngram_max {
            for w in words.windows(n) {
                out.push(w.join(" "));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TfidfConfig {
    pub tokenizer: Tokenizer,
    pub sublinear_tf: bool,
}

/// Sparse vector with entries sorted by ascending term id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.entries.len() && j < other.entries.len() {
            let (ta, wa) = self.entries[i];
            let (tb, wb) = other.entries[j];
            match ta.cmp(&tb) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    acc += wa * wb;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub doc_id: DocId,
    pub score: f64,
}

/// Documents in non-increasing score order, ties by ascending doc id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<Ranked>,
}

impl RankedList {
    pub fn doc_ids(&self) -> Vec<DocId> {
        self.entries.iter().map(|r| r.doc_id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone)]
pub struct TfidfIndex {
    config: TfidfConfig,
    vocab: HashMap<String, u32>,
    idf: Vec<f64>,
    doc_ids: Vec<DocId>,
    doc_vectors: Vec<SparseVec>,
    postings: Vec<Vec<(u32, f64)>>,
}

impl TfidfIndex {
    pub fn build(corpus: &Corpus, config: &TfidfConfig) -> Result<Self> {
        config.tokenizer.validate()?;
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("cannot index an empty corpus".into()));
        }
        let n_docs = corpus.len();
        let mut doc_counts: Vec<HashMap<String, u32>> = Vec::with_capacity(n_docs);
        let mut df: HashMap<String, u32> = HashMap::new();
        for doc in corpus.docs() {
            let mut counts: HashMap<String, u32> = HashMap::new();
            for tok in config.tokenizer.tokenize(&doc.full_text()) {
                *counts.entry(tok).or_insert(0) += 1;
            }
            for term in counts.keys() {
                *df.entry(term.clone()).or_insert(0) += 1;
            }
            doc_counts.push(counts);
        }

        let mut terms: Vec<String> = df.keys().cloned().collect();
        terms.sort_unstable();
        let n = n_docs as f64;
        let idf: Vec<f64> = terms
            .iter()
            .map(|t| ((1.0 + n) / (1.0 + df[t] as f64)).ln() + 1.0)
            .collect();
        let vocab: HashMap<String, u32> = terms.into_iter().enumerate().map(|(i, t)| (t, i as u32)).collect();

        let doc_vectors: Vec<SparseVec> = doc_counts
            .iter()
            .map(|counts| {
                let ids = counts.iter().map(|(t, &c)| (vocab[t], c)).collect();
                weigh(ids, &idf, config.sublinear_tf)
            })
            .collect();

        let mut index = TfidfIndex {
            config: config.clone(),
            vocab,
            idf,
            doc_ids: corpus.docs().iter().map(|d| d.doc_id).collect(),
            doc_vectors,
            postings: Vec::new(),
        };
        index.build_postings();
        Ok(index)
    }

    fn build_postings(&mut self) {
        let mut postings = vec![Vec::new(); self.idf.len()];
        for (d, v) in self.doc_vectors.iter().enumerate() {
            for &(t, w) in &v.entries {
                postings[t as usize].push((d as u32, w));
            }
        }
        self.postings = postings;
    }

    pub fn config(&self) -> &TfidfConfig {
        &self.config
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.idf.len()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocab.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_id(term).map(|t| self.idf[t as usize])
    }

    pub fn doc_vector(&self, doc: DocId) -> Option<&SparseVec> {
        self.doc_ids
            .iter()
            .position(|&d| d == doc)
            .map(|i| &self.doc_vectors[i])
    }

    /// Unit-normalized TF-IDF vector of arbitrary text; out-of-vocabulary
    /// terms are dropped.
    pub fn vectorize(&self, text: &str) -> SparseVec {
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for tok in self.config.tokenizer.tokenize(text) {
            if let Some(&t) = self.vocab.get(&tok) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        weigh(counts.into_iter().collect(), &self.idf, self.config.sublinear_tf)
    }

    /// Cosine similarity between two texts under this index's weighting.
    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        self.vectorize(a).dot(&self.vectorize(b)).clamp(0.0, 1.0)
    }

    pub fn top_k(&self, query: &str, k: usize) -> Result<RankedList> {
        if k < 1 {
            return Err(Error::InvalidArgument("top_k requires k >= 1".into()));
        }
        let q = self.vectorize(query);
        let mut acc = vec![0.0f64; self.doc_ids.len()];
        for &(t, qw) in &q.entries {
            for &(d, dw) in &self.postings[t as usize] {
                acc[d as usize] += qw * dw;
            }
        }
        let mut ranked: Vec<Ranked> = acc
            .into_iter()
            .zip(&self.doc_ids)
            .map(|(s, &doc_id)| Ranked {
                doc_id,
                score: s.clamp(0.0, 1.0),
            })
            .collect();
        ranked.sort_by(rank_order);
        ranked.truncate(k);
        Ok(RankedList { entries: ranked })
    }

    pub fn save(&self, path: impl AsRef<Path>, corpus_fingerprint: &str) -> Result<()> {
        let path = path.as_ref();
        let mut terms = vec![String::new(); self.idf.len()];
        for (t, &i) in &self.vocab {
            terms[i as usize] = t.clone();
        }
        let cache = IndexCache {
            version: CACHE_VERSION,
            fingerprint: corpus_fingerprint.to_string(),
            config: self.config.clone(),
            terms,
            idf: self.idf.clone(),
            doc_ids: self.doc_ids.clone(),
            doc_vectors: self.doc_vectors.clone(),
        };
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), &cache).map_err(|e| Error::Contract(e.to_string()))
    }

    /// Loads a cached index. Returns `Ok(None)` when the cache is stale
    /// (version or fingerprint differs) so the caller can rebuild.
    pub fn load(path: impl AsRef<Path>, expected_fingerprint: &str) -> Result<Option<Self>> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let cache: IndexCache = serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if cache.version != CACHE_VERSION || cache.fingerprint != expected_fingerprint {
            return Ok(None);
        }
        let vocab = cache
            .terms
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i as u32))
            .collect();
        let mut index = TfidfIndex {
            config: cache.config,
            vocab,
            idf: cache.idf,
            doc_ids: cache.doc_ids,
            doc_vectors: cache.doc_vectors,
            postings: Vec::new(),
        };
        index.build_postings();
        Ok(Some(index))
    }
}

/// Fingerprint binding an index cache to the corpus text and weighting config.
pub fn index_fingerprint(corpus: &Corpus, config: &TfidfConfig) -> String {
    let mut text = Vec::new();
    for d in corpus.docs() {
        text.extend_from_slice(&d.doc_id.0.to_le_bytes());
        text.extend_from_slice(d.full_text().as_bytes());
        text.push(0);
    }
    fingerprint(&(config, hash_bytes(&text)))
}

const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexCache {
    version: u32,
    fingerprint: String,
    config: TfidfConfig,
    terms: Vec<String>,
    idf: Vec<f64>,
    doc_ids: Vec<DocId>,
    doc_vectors: Vec<SparseVec>,
}

fn weigh(mut counts: Vec<(u32, u32)>, idf: &[f64], sublinear: bool) -> SparseVec {
    counts.sort_unstable_by_key(|&(t, _)| t);
    let mut entries: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(t, c)| {
            let tf = if sublinear { 1.0 + (c as f64).ln() } else { c as f64 };
            (t, tf * idf[t as usize])
        })
        .collect();
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    SparseVec { entries }
}
