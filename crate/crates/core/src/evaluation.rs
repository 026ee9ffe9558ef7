//! Shared-task metric families.
//!
//! Abstract level: a predicted (claim, doc, label) is correct when the doc is
//! gold evidence and the label matches; "label + rationale" additionally
//! needs some gold rationale contained in the first `rationale_cap` predicted
//! sentences.
//!
//! Sentence level: a predicted sentence is correct only when it belongs to a
//! gold rationale that the prediction covers completely; "selection + label"
//! additionally needs the doc label to match.
//!
//! Every family is micro-averaged, with 0/0 defined as 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data_model::{ClaimId, ClaimSet, Corpus, DocId, Label, Predictions};
use crate::error::{Error, Result};
use crate::rationale::RetrievedMap;

/// Claim id to the label predicted for each (claim, doc), NEI included.
pub type LabelMap = BTreeMap<ClaimId, BTreeMap<DocId, Label>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Only claims with gold evidence contribute.
    EvidenceClaimsOnly,
    AllClaims,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstractMode {
    LabelOnly,
    LabelRationale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceMode {
    SelectionOnly,
    SelectionLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub rationale_cap: usize,
    pub denominator: DenominatorMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            rationale_cap: 3,
            denominator: DenominatorMode::AllClaims,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rationale_cap < 1 {
            return Err(Error::InvalidArgument("rationale_cap must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_universe(gold: &ClaimSet, predictions: &Predictions) -> Result<()> {
    let ids: BTreeSet<ClaimId> = gold.iter().map(|c| c.id).collect();
    if let Some(p) = predictions.iter().find(|p| !ids.contains(&p.claim_id)) {
        return Err(Error::Integrity(format!(
            "prediction for claim {} which is not in the gold set",
            p.claim_id
        )));
    }
    Ok(())
}

pub fn retrieval_metrics(gold: &ClaimSet, retrieved: &RetrievedMap, mode: DenominatorMode) -> Prf {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for claim in gold {
        if mode == DenominatorMode::EvidenceClaimsOnly && !claim.has_evidence() {
            continue;
        }
        let gold_docs = claim.evidence_docs();
        let got: BTreeSet<DocId> = retrieved
            .get(&claim.id)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_default();
        let hit = got.intersection(&gold_docs).count();
        tp += hit;
        fp += got.len() - hit;
        fn_ += gold_docs.len() - hit;
    }
    Prf::from_counts(tp, fp, fn_)
}

pub fn abstract_metrics(
    gold: &ClaimSet,
    predictions: &Predictions,
    mode: AbstractMode,
    config: &EvalConfig,
) -> Result<Prf> {
    config.validate()?;
    check_universe(gold, predictions)?;
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for claim in gold {
        n_gold += claim.evidence.len();
        let Some(pred) = predictions.get(claim.id) else {
            continue;
        };
        for (doc, dp) in &pred.evidence {
            n_pred += 1;
            let Some(rationales) = claim.evidence.get(doc) else {
                continue;
            };
            if dp.label != rationales[0].label {
                continue;
            }
            let correct = match mode {
                AbstractMode::LabelOnly => true,
                AbstractMode::LabelRationale => {
                    let head: BTreeSet<usize> = dp.sentences.iter().take(config.rationale_cap).copied().collect();
                    rationales.iter().any(|r| r.sentences.is_subset(&head))
                }
            };
            if correct {
                tp += 1;
            }
        }
    }
    Ok(Prf::from_counts(tp, n_pred - tp, n_gold - tp))
}

pub fn sentence_metrics(gold: &ClaimSet, predictions: &Predictions, mode: SentenceMode) -> Result<Prf> {
    check_universe(gold, predictions)?;
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for claim in gold {
        n_gold += claim
            .evidence
            .keys()
            .map(|d| claim.gold_sentences(*d).len())
            .sum::<usize>();
        let Some(pred) = predictions.get(claim.id) else {
            continue;
        };
        for (doc, dp) in &pred.evidence {
            n_pred += dp.sentences.len();
            let Some(rationales) = claim.evidence.get(doc) else {
                continue;
            };
            if mode == SentenceMode::SelectionLabel && dp.label != rationales[0].label {
                continue;
            }
            let predicted: BTreeSet<usize> = dp.sentences.iter().copied().collect();
            tp += predicted
                .iter()
                .filter(|s| {
                    rationales
                        .iter()
                        .any(|r| r.sentences.contains(s) && r.sentences.is_subset(&predicted))
                })
                .count();
        }
    }
    Ok(Prf::from_counts(tp, n_pred - tp, n_gold - tp))
}

/// Rows are true labels, columns predicted, both in (C, N, S) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// One-vs-rest scores in (C, N, S) order.
    pub per_class: [Prf; 3],
    pub confusion: ConfusionMatrix,
}

impl LabelReport {
    pub fn from_confusion(m: &ConfusionMatrix) -> Self {
        let total = m.total();
        let per_class: [Prf; 3] = std::array::from_fn(|c| {
            let tp = m.counts[c][c];
            let row: usize = m.counts[c].iter().sum();
            let col: usize = (0..3).map(|r| m.counts[r][c]).sum();
            Prf::from_counts(tp, col - tp, row - tp)
        });
        let macro_f1 = per_class.iter().map(|p| p.f1).sum::<f64>() / 3.0;
        let weighted_f1 = if total == 0 {
            0.0
        } else {
            (0..3)
                .map(|c| per_class[c].f1 * m.counts[c].iter().sum::<usize>() as f64)
                .sum::<f64>()
                / total as f64
        };
        LabelReport {
            accuracy: ratio(m.trace(), total),
            macro_f1,
            weighted_f1,
            per_class,
            confusion: *m,
        }
    }
}

pub fn label_metrics(gold: &[Label], predicted: &[Label]) -> Result<LabelReport> {
    if gold.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "label lists differ in length: {} gold vs {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(predicted) {
        m.counts[g.matrix_index()][p.matrix_index()] += 1;
    }
    Ok(LabelReport::from_confusion(&m))
}

/// Aligns per-(claim, doc) predicted labels with gold, where a doc without
/// gold evidence counts as NOT_ENOUGH_INFO.
pub fn align_labels(gold: &ClaimSet, labels: &LabelMap) -> (Vec<Label>, Vec<Label>) {
    let (mut g, mut p) = (Vec::new(), Vec::new());
    for claim in gold {
        if let Some(docs) = labels.get(&claim.id) {
            for (doc, label) in docs {
                g.push(claim.gold_label(*doc).unwrap_or(Label::NotEnoughInfo));
                p.push(*label);
            }
        }
    }
    (g, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: EvalConfig,
    pub num_claims: usize,
    pub retrieval: Prf,
    pub abstract_label_only: Prf,
    pub abstract_label_rationale: Prf,
    pub sentence_selection_only: Prf,
    pub sentence_selection_label: Prf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelReport>,
}

/// Computes every family. Retrieval is scored from `retrieved` when given,
/// otherwise from the docs present in the predictions.
pub fn evaluate_run(
    gold: &ClaimSet,
    predictions: &Predictions,
    retrieved: Option<&RetrievedMap>,
    labels: Option<&LabelMap>,
    corpus: Option<&Corpus>,
    config: &EvalConfig,
) -> Result<MetricReport> {
    config.validate()?;
    if let Some(corpus) = corpus {
        predictions.validate_against(corpus)?;
    }
    let derived: RetrievedMap;
    let retrieved = match retrieved {
        Some(r) => r,
        None => {
            derived = predictions
                .iter()
                .map(|p| (p.claim_id, p.evidence.keys().copied().collect()))
                .collect();
            &derived
        }
    };
    let label_report = match labels {
        Some(map) => {
            let (g, p) = align_labels(gold, map);
            Some(label_metrics(&g, &p)?)
        }
        None => None,
    };
    Ok(MetricReport {
        config: config.clone(),
        num_claims: gold.len(),
        retrieval: retrieval_metrics(gold, retrieved, config.denominator),
        abstract_label_only: abstract_metrics(gold, predictions, AbstractMode::LabelOnly, config)?,
        abstract_label_rationale: abstract_metrics(gold, predictions, AbstractMode::LabelRationale, config)?,
        sentence_selection_only: sentence_metrics(gold, predictions, SentenceMode::SelectionOnly)?,
        sentence_selection_label: sentence_metrics(gold, predictions, SentenceMode::SelectionLabel)?,
        labels: label_report,
    })
}

impl MetricReport {
    /// Plain-text table with percentages, one row per metric family.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>7} {:>7} {:>7}", "Metric", "P", "R", "F1");
        let rows = [
            ("Retrieval", &self.retrieval),
            ("Label Only", &self.abstract_label_only),
            ("Label+Rationale", &self.abstract_label_rationale),
            ("Selection Only", &self.sentence_selection_only),
            ("Selection+Label", &self.sentence_selection_label),
        ];
        for (name, p) in rows {
            let _ = writeln!(
                out,
                "{:<28} {:>7.2} {:>7.2} {:>7.2}",
                name,
                100.0 * p.precision,
                100.0 * p.recall,
                100.0 * p.f1
            );
        }
        if let Some(l) = &self.labels {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>8} {:>11}",
                "", "Accuracy", "Macro-F1", "Weighted-F1"
            );
            let _ = writeln!(
                out,
                "{:<12} {:>8.2} {:>8.2} {:>11.2}",
                "Labels",
                100.0 * l.accuracy,
                100.0 * l.macro_f1,
                100.0 * l.weighted_f1
            );
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<4} {:>5} {:>5} {:>5}", "", "C", "N", "S");
            for (name, row) in ["C", "N", "S"].iter().zip(&l.confusion.counts) {
                let _ = writeln!(out, "{:<4} {:>5} {:>5} {:>5}", name, row[0], row[1], row[2]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{Claim, DocPrediction, GoldRationale, Prediction};
    use proptest::prelude::*;

    fn gold_claim(id: u64, ev: &[(u64, &[&[usize]], Label)]) -> Claim {
        let mut evidence = BTreeMap::new();
        for (d, rats, l) in ev {
            evidence.insert(
                DocId(*d),
                rats.iter()
                    .map(|r| GoldRationale {
                        sentences: r.iter().copied().collect(),
                        label: *l,
                    })
                    .collect(),
            );
        }
        Claim {
            id: ClaimId(id),
            text: "c".into(),
            cited_doc_ids: evidence.keys().copied().collect(),
            evidence,
            cited_from_evidence: false,
        }
    }

    fn pred(id: u64, ev: &[(u64, &[usize], Label)]) -> Prediction {
        Prediction {
            claim_id: ClaimId(id),
            evidence: ev
                .iter()
                .map(|(d, s, l)| {
                    (
                        DocId(*d),
                        DocPrediction {
                            sentences: s.to_vec(),
                            label: *l,
                        },
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn retrieval_toy_counts() {
        let gold = ClaimSet {
            claims: vec![
                gold_claim(1, &[(1, &[&[0]], Label::Support)]),
                gold_claim(2, &[(2, &[&[0]], Label::Support), (3, &[&[0]], Label::Support)]),
            ],
        };
        let retrieved: RetrievedMap = [(ClaimId(1), vec![DocId(1), DocId(4)]), (ClaimId(2), vec![DocId(2)])]
            .into_iter()
            .collect();
        let m = retrieval_metrics(&gold, &retrieved, DenominatorMode::AllClaims);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn retrieval_perfect_and_empty() {
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[(1, &[&[0]], Label::Support)])],
        };
        let perfect: RetrievedMap = [(ClaimId(1), vec![DocId(1)])].into_iter().collect();
        let m = retrieval_metrics(&gold, &perfect, DenominatorMode::AllClaims);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = retrieval_metrics(&gold, &RetrievedMap::new(), DenominatorMode::AllClaims);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn denominator_modes_differ_on_nei_claims() {
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[(1, &[&[0]], Label::Support)]), gold_claim(2, &[])],
        };
        let retrieved: RetrievedMap = [(ClaimId(1), vec![DocId(1)]), (ClaimId(2), vec![DocId(5)])]
            .into_iter()
            .collect();
        let all = retrieval_metrics(&gold, &retrieved, DenominatorMode::AllClaims);
        let ev = retrieval_metrics(&gold, &retrieved, DenominatorMode::EvidenceClaimsOnly);
        assert_eq!(all.precision, 0.5);
        assert_eq!(ev.precision, 1.0);
        assert_eq!(all.recall, ev.recall);
    }

    #[test]
    fn incomplete_rationale_earns_no_sentence_credit() {
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[(1, &[&[1, 2]], Label::Support)])],
        };
        let preds = Predictions::new(vec![pred(1, &[(1, &[1], Label::Support)])]);
        let m = sentence_metrics(&gold, &preds, SentenceMode::SelectionOnly).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 2));
    }

    #[test]
    fn exact_sentence_match() {
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[(1, &[&[1, 2]], Label::Support)])],
        };
        let preds = Predictions::new(vec![pred(1, &[(1, &[1, 2], Label::Support)])]);
        let m = sentence_metrics(&gold, &preds, SentenceMode::SelectionLabel).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
    }

    #[test]
    fn wrong_label_contrast() {
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[(1, &[&[1, 2]], Label::Support)])],
        };
        let preds = Predictions::new(vec![pred(1, &[(1, &[1, 2], Label::Contradict)])]);
        let sl = sentence_metrics(&gold, &preds, SentenceMode::SelectionLabel).unwrap();
        assert_eq!((sl.tp, sl.fp, sl.fn_), (0, 2, 2));
        let so = sentence_metrics(&gold, &preds, SentenceMode::SelectionOnly).unwrap();
        assert_eq!(so.tp, 2);
    }

    #[test]
    fn abstract_modes() {
        let cfg = EvalConfig::default();
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[(1, &[&[0, 1]], Label::Support)])],
        };
        let ok = Predictions::new(vec![pred(1, &[(1, &[0, 1, 4], Label::Support)])]);
        assert_eq!(
            abstract_metrics(&gold, &ok, AbstractMode::LabelOnly, &cfg).unwrap().tp,
            1
        );
        assert_eq!(
            abstract_metrics(&gold, &ok, AbstractMode::LabelRationale, &cfg)
                .unwrap()
                .tp,
            1
        );

        let wrong = Predictions::new(vec![pred(1, &[(1, &[0, 1], Label::Contradict)])]);
        for mode in [AbstractMode::LabelOnly, AbstractMode::LabelRationale] {
            let m = abstract_metrics(&gold, &wrong, mode, &cfg).unwrap();
            assert_eq!((m.tp, m.fp), (0, 1));
        }
    }

    #[test]
    fn rationale_cap_excludes_long_rationales() {
        let cfg = EvalConfig::default();
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[(1, &[&[0, 1, 2, 3]], Label::Support)])],
        };
        let preds = Predictions::new(vec![pred(1, &[(1, &[0, 1, 2, 3], Label::Support)])]);
        assert_eq!(
            abstract_metrics(&gold, &preds, AbstractMode::LabelOnly, &cfg)
                .unwrap()
                .tp,
            1
        );
        assert_eq!(
            abstract_metrics(&gold, &preds, AbstractMode::LabelRationale, &cfg)
                .unwrap()
                .tp,
            0
        );
    }

    #[test]
    fn unknown_claim_in_predictions_is_error() {
        let gold = ClaimSet {
            claims: vec![gold_claim(1, &[])],
        };
        let preds = Predictions::new(vec![pred(9, &[(1, &[0], Label::Support)])]);
        assert!(sentence_metrics(&gold, &preds, SentenceMode::SelectionOnly).is_err());
    }

    #[test]
    fn reference_matrix_baseline() {
        let m = ConfusionMatrix {
            counts: [[47, 17, 7], [6, 104, 2], [8, 18, 112]],
        };
        let r = LabelReport::from_confusion(&m);
        assert!((100.0 * r.accuracy - 81.93).abs() <= 0.01);
        assert!((100.0 * r.macro_f1 - 80.19).abs() <= 0.01);
        assert!((100.0 * r.weighted_f1 - 81.85).abs() <= 0.01);
    }

    #[test]
    fn reference_matrix_two_step() {
        let m = ConfusionMatrix {
            counts: [[53, 7, 11], [2, 107, 3], [12, 10, 116]],
        };
        let r = LabelReport::from_confusion(&m);
        assert!((100.0 * r.accuracy - 85.98).abs() <= 0.01);
        assert!((100.0 * r.macro_f1 - 84.69).abs() <= 0.01);
        assert!((100.0 * r.weighted_f1 - 85.84).abs() <= 0.01);
    }

    #[test]
    fn perfect_labels() {
        let g = [Label::Support, Label::Contradict, Label::NotEnoughInfo, Label::Support];
        let r = label_metrics(&g, &g).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.weighted_f1), (1.0, 1.0, 1.0));
        assert_eq!(r.confusion.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 2]]);
        assert!(label_metrics(&g, &g[..2]).is_err());
    }

    #[test]
    fn oracle_and_empty_runs() {
        let gold = ClaimSet {
            claims: vec![
                gold_claim(1, &[(1, &[&[0], &[2, 3]], Label::Support)]),
                gold_claim(2, &[(2, &[&[1]], Label::Contradict)]),
                gold_claim(3, &[]),
            ],
        };
        let oracle = Predictions::new(vec![
            pred(1, &[(1, &[0, 2, 3], Label::Support)]),
            pred(2, &[(2, &[1], Label::Contradict)]),
        ]);
        let r = evaluate_run(&gold, &oracle, None, None, None, &EvalConfig::default()).unwrap();
        for p in [
            r.retrieval,
            r.abstract_label_only,
            r.abstract_label_rationale,
            r.sentence_selection_only,
            r.sentence_selection_label,
        ] {
            assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        }
        let empty = evaluate_run(&gold, &Predictions::default(), None, None, None, &EvalConfig::default()).unwrap();
        assert_eq!(empty.sentence_selection_only.recall, 0.0);
        assert_eq!(empty.abstract_label_only.recall, 0.0);
        assert!(r.to_table().contains("Selection+Label"));
    }

    proptest! {
        #[test]
        fn label_metrics_bounds(pairs in proptest::collection::vec((0usize..3, 0usize..3), 0..60)) {
            let g: Vec<Label> = pairs.iter().map(|p| Label::ALL[p.0]).collect();
            let p: Vec<Label> = pairs.iter().map(|p| Label::ALL[p.1]).collect();
            let r = label_metrics(&g, &p).unwrap();
            prop_assert_eq!(r.confusion.total(), pairs.len());
            for v in [r.accuracy, r.macro_f1, r.weighted_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
