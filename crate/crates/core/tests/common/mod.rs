#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use claimcheck::classifier::{FnBackend, TaskTag};
use claimcheck::data_model::{ClaimSet, Corpus, DocPrediction, Label, Prediction, Predictions};
use claimcheck::pipeline::{BackendOverrides, PipelineConfig};
use serde_json::{json, Value};

const TOPICS: [(&str, &str); 8] = [
    ("aspirin", "stroke"),
    ("metformin", "diabetes"),
    ("statins", "cholesterol"),
    ("vitamin", "fractures"),
    ("exercise", "depression"),
    ("smoking", "cancer"),
    ("coffee", "arrhythmia"),
    ("sleep", "memory"),
];

pub struct Toy {
    pub dir: tempfile::TempDir,
    pub corpus: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
}

fn doc_id(topic: usize) -> u64 {
    10 * (topic as u64 + 1)
}

fn corpus_records() -> Vec<Value> {
    let mut out: Vec<Value> = TOPICS
        .iter()
        .enumerate()
        .map(|(i, (a, b))| {
            json!({
                "doc_id": doc_id(i),
                "title": format!("{a} and {b} in a cohort study"),
                "abstract": [
                    format!("We enrolled {} participants from regional clinics.", 100 + i),
                    format!("{a} treatment lowered the incidence of {b} significantly."),
                    format!("Follow up lasted {} years on average.", i + 2),
                    format!("Patients receiving {a} showed higher rates of {b} than controls."),
                    format!("The {b} registry confirmed the {a} association."),
                ],
            })
        })
        .collect();
    out.push(json!({"doc_id": 999, "title": "Editorial", "abstract": []}));
    out
}

fn claim_records(topics: std::ops::Range<usize>) -> Vec<Value> {
    let mut out = Vec::new();
    for i in topics {
        let (a, b) = TOPICS[i];
        let d = doc_id(i).to_string();
        let support = if i % 2 == 0 {
            json!([{"sentences": [1], "label": "SUPPORT"}, {"sentences": [4], "label": "SUPPORT"}])
        } else {
            json!([{"sentences": [1], "label": "SUPPORT"}])
        };
        let mut cited = vec![doc_id(i)];
        if i == 0 {
            cited.push(999);
        }
        out.push(json!({
            "id": 100 + i,
            "claim": format!("{a} reduces {b}."),
            "evidence": { d.clone(): support },
            "cited_doc_ids": cited,
        }));
        out.push(json!({
            "id": 200 + i,
            "claim": format!("{a} protects against {b} in adults."),
            "evidence": { d.clone(): [{"sentences": [3, 4], "label": "CONTRADICT"}] },
            "cited_doc_ids": [doc_id(i)],
        }));
        out.push(json!({
            "id": 300 + i,
            "claim": format!("{a} changes hair colour."),
            "evidence": {},
            "cited_doc_ids": [doc_id(i)],
        }));
    }
    out
}

fn write_lines(path: &Path, records: &[Value]) {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).unwrap();
}

/// A small dataset: eight topical abstracts plus an empty editorial, with
/// SUPPORT, CONTRADICT and NOT_ENOUGH_INFO claims for every topic.
pub fn toy() -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let train = dir.path().join("claims_train.jsonl");
    let dev = dir.path().join("claims_dev.jsonl");
    write_lines(&corpus, &corpus_records());
    write_lines(&train, &claim_records(0..8));
    write_lines(&dev, &claim_records(0..8));
    Toy {
        dir,
        corpus,
        train,
        dev,
    }
}

impl Toy {
    pub fn config(&self, out: &str) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.data.corpus = self.corpus.clone();
        cfg.data.claims = self.dev.clone();
        cfg.data.train_claims = Some(self.train.clone());
        cfg.output_dir = self.dir.path().join(out);
        cfg.models_dir = self.dir.path().join("models");
        cfg
    }
}

/// Gold evidence restated as predictions: each evidence doc with the union
/// of its rationales and its label.
pub fn gold_predictions(claims: &ClaimSet) -> Predictions {
    Predictions::new(
        claims
            .iter()
            .map(|c| Prediction {
                claim_id: c.id,
                evidence: c
                    .evidence
                    .keys()
                    .map(|d| {
                        (
                            *d,
                            DocPrediction {
                                sentences: c.gold_sentences(*d).into_iter().collect(),
                                label: c.gold_label(*d).unwrap(),
                            },
                        )
                    })
                    .collect(),
            })
            .collect(),
    )
}

/// Backends that answer every stage from the gold annotations.
pub fn perfect_backends(claims: &ClaimSet, corpus: &Corpus) -> BackendOverrides {
    let mut titles: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut sentences: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut labels: BTreeMap<String, Label> = BTreeMap::new();
    for c in claims {
        for d in c.evidence.keys() {
            let doc = corpus.get(*d).unwrap();
            titles.entry(c.text.clone()).or_default().insert(doc.title.clone());
            for i in c.gold_sentences(*d) {
                sentences
                    .entry(c.text.clone())
                    .or_default()
                    .insert(doc.sentences[i].clone());
            }
            labels.insert(c.text.clone(), c.gold_label(*d).unwrap());
        }
    }
    let hit = |m: &BTreeMap<String, BTreeSet<String>>, k: &str, v: &str| {
        if m.get(k).is_some_and(|s| s.contains(v)) {
            1.0
        } else {
            0.0
        }
    };
    let neutral_labels = labels.clone();
    BackendOverrides {
        abstract_scorer: Some(Arc::new(FnBackend::new(TaskTag::Abstract, move |p| {
            hit(&titles, p.claim, p.text)
        }))),
        rationale: Some(Arc::new(FnBackend::new(TaskTag::Rationale, move |p| {
            hit(&sentences, p.claim, p.text)
        }))),
        neutral: Some(Arc::new(FnBackend::new(TaskTag::Neutral, move |p| {
            if neutral_labels.contains_key(p.claim) && !p.text.is_empty() {
                1.0
            } else {
                0.0
            }
        }))),
        support: Some(Arc::new(FnBackend::new(TaskTag::Support, move |p| {
            if labels.get(p.claim) == Some(&Label::Support) {
                1.0
            } else {
                0.0
            }
        }))),
        threeway: None,
    }
}
