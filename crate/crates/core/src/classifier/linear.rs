//! Feature-hashed logistic regression trained by SGD.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{featurize_pair, FeatureConfig};
use super::{check_scores, Capabilities, ClassScores, ScoreBackend, TaskTag, TextPair, ThreeWayBackend};
use crate::data_model::Label;
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub features: FeatureConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Loss weight applied to positive examples; 1.0 leaves the loss
    /// unweighted.
    pub positive_weight: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            features: FeatureConfig::default(),
            epochs: 10,
            learning_rate: 0.1,
            l2: 1e-5,
            seed: 13,
            positive_weight: 1.0,
        }
    }
}

impl Hyperparameters {
    fn validate(&self) -> Result<()> {
        self.features.tokenizer.validate()?;
        if !(1..=26).contains(&self.features.hash_bits) {
            return Err(Error::InvalidArgument(format!(
                "hash_bits {} outside 1..=26",
                self.features.hash_bits
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2 * self.learning_rate < 1.0) {
            return Err(Error::InvalidArgument(
                "l2 must be >= 0 and l2 * learning_rate < 1".into(),
            ));
        }
        if !(self.positive_weight > 0.0 && self.positive_weight.is_finite()) {
            return Err(Error::InvalidArgument("positive_weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub task: TaskTag,
    pub hyper: Hyperparameters,
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    pub fn zeros(task: TaskTag, hyper: Hyperparameters) -> Self {
        let dim = hyper.features.dim();
        LinearModel {
            task,
            hyper,
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// A copy of this model's parameters relabeled for another task, used to
    /// continue training one stage from another.
    pub fn warm_start_for(&self, task: TaskTag) -> Self {
        LinearModel { task, ..self.clone() }
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.hyper.features
    }

    fn logit_sparse(&self, x: &[(u32, f64)]) -> f64 {
        x.iter().map(|&(j, v)| self.weights[j as usize] * v).sum::<f64>() + self.bias
    }

    pub fn logit(&self, pair: &TextPair<'_>) -> f64 {
        let x = featurize_pair(pair, &self.hyper.features).to_sparse(&self.hyper.features);
        self.logit_sparse(&x)
    }

    pub fn probability(&self, pair: &TextPair<'_>) -> f64 {
        sigmoid(self.logit(pair))
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&("binary", self.task, &self.hyper))
    }
}

impl ScoreBackend for LinearModel {
    fn task(&self) -> TaskTag {
        self.task
    }

    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>> {
        let probs: Vec<f64> = pairs.iter().map(|p| self.probability(p)).collect();
        debug_assert!(check_scores(pairs.len(), &probs).is_ok());
        Ok(probs)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent_safe: true,
            trainable: true,
        }
    }
}

/// Trains from zero-initialized weights.
pub fn train_linear(task: TaskTag, examples: &[(TextPair<'_>, bool)], hyper: &Hyperparameters) -> Result<LinearModel> {
    hyper.validate()?;
    sgd(LinearModel::zeros(task, hyper.clone()), examples)
}

/// Continues training from `init`'s parameters. The initial model must use
/// the same feature space as `hyper`.
pub fn train_linear_warm(
    init: LinearModel,
    examples: &[(TextPair<'_>, bool)],
    hyper: &Hyperparameters,
) -> Result<LinearModel> {
    hyper.validate()?;
    if init.hyper.features != hyper.features {
        return Err(Error::Training(
            "warm start requires the initial model to share the feature configuration".into(),
        ));
    }
    let model = LinearModel {
        hyper: hyper.clone(),
        ..init
    };
    sgd(model, examples)
}

fn sgd(mut model: LinearModel, examples: &[(TextPair<'_>, bool)]) -> Result<LinearModel> {
    if examples.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::Training(format!(
            "training set for {} has a single class ({} of {} positive)",
            model.task,
            positives,
            examples.len()
        )));
    }
    let hyper = model.hyper.clone();
    let feats: Vec<Vec<(u32, f64)>> = examples
        .iter()
        .map(|(p, _)| featurize_pair(p, &hyper.features).to_sparse(&hyper.features))
        .collect();

    // weights are kept as scale * v so the L2 shrink is O(1) per step
    let mut v = std::mem::take(&mut model.weights);
    let mut scale = 1.0f64;
    let mut bias = model.bias;
    let lr = hyper.learning_rate;
    let decay = 1.0 - lr * hyper.l2;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);

    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &feats[i];
            let y = examples[i].1;
            let z = scale * x.iter().map(|&(j, xv)| v[j as usize] * xv).sum::<f64>() + bias;
            let weight = if y { hyper.positive_weight } else { 1.0 };
            let g = (sigmoid(z) - if y { 1.0 } else { 0.0 }) * weight;
            scale *= decay;
            let step = lr * g / scale;
            for &(j, xv) in x {
                v[j as usize] -= step * xv;
            }
            bias -= lr * g;
            if scale < 1e-9 {
                for w in &mut v {
                    *w *= scale;
                }
                scale = 1.0;
            }
        }
    }
    for w in &mut v {
        *w *= scale;
    }
    if !v.iter().all(|w| w.is_finite()) || !bias.is_finite() {
        return Err(Error::Training("training diverged to non-finite weights".into()));
    }
    model.weights = v;
    model.bias = bias;
    Ok(model)
}

/// One-vs-rest logistic heads in (C, N, S) order, softmax-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeWayLinear {
    pub heads: [LinearModel; 3],
}

impl ThreeWayLinear {
    pub fn fingerprint(&self) -> String {
        fingerprint(&("threeway", &self.heads[0].hyper))
    }

    pub fn class_scores(&self, pair: &TextPair<'_>) -> ClassScores {
        let z: Vec<f64> = self.heads.iter().map(|h| h.logit(pair)).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|zi| (zi - m).exp()).collect();
        let sum: f64 = e.iter().sum();
        ClassScores {
            contradict: e[0] / sum,
            nei: e[1] / sum,
            support: e[2] / sum,
        }
    }
}

impl ThreeWayBackend for ThreeWayLinear {
    fn score_classes(&self, pairs: &[TextPair<'_>]) -> Result<Vec<ClassScores>> {
        Ok(pairs.iter().map(|p| self.class_scores(p)).collect())
    }
}

pub fn train_three_way(examples: &[(TextPair<'_>, Label)], hyper: &Hyperparameters) -> Result<ThreeWayLinear> {
    let head = |label: Label| -> Result<LinearModel> {
        let binary: Vec<(TextPair<'_>, bool)> = examples.iter().map(|(p, l)| (*p, *l == label)).collect();
        train_linear(TaskTag::Threeway, &binary, hyper)
    };
    Ok(ThreeWayLinear {
        heads: [
            head(Label::Contradict)?,
            head(Label::NotEnoughInfo)?,
            head(Label::Support)?,
        ],
    })
}

// ---- model files ----

const MAGIC: &[u8; 4] = b"CCLM";
const VERSION: u16 = 1;
const KIND_BINARY: u8 = 1;
const KIND_THREEWAY: u8 = 2;

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Binary(LinearModel),
    ThreeWay(ThreeWayLinear),
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    task: TaskTag,
    hyper: Hyperparameters,
}

impl ModelFile {
    pub fn fingerprint(&self) -> String {
        match self {
            ModelFile::Binary(m) => m.fingerprint(),
            ModelFile::ThreeWay(m) => m.fingerprint(),
        }
    }

    /// Layout (little endian): magic, u16 version, u8 kind, length-prefixed
    /// fingerprint and JSON metadata, u8 head count, then per head the bias,
    /// the dense dimension, and the non-zero `(u32 index, f64 weight)` pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, heads): (u8, Vec<&LinearModel>) = match self {
            ModelFile::Binary(m) => (KIND_BINARY, vec![m]),
            ModelFile::ThreeWay(m) => (KIND_THREEWAY, m.heads.iter().collect()),
        };
        let meta = ModelMeta {
            task: heads[0].task,
            hyper: heads[0].hyper.clone(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(kind);
        put_str(&mut out, &self.fingerprint());
        put_str(&mut out, &serde_json::to_string(&meta).expect("meta serializes"));
        out.push(heads.len() as u8);
        for h in heads {
            out.extend_from_slice(&h.bias.to_le_bytes());
            out.extend_from_slice(&(h.weights.len() as u32).to_le_bytes());
            let nz: Vec<(usize, f64)> = h
                .weights
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, w)| *w != 0.0)
                .collect();
            out.extend_from_slice(&(nz.len() as u32).to_le_bytes());
            for (i, w) in nz {
                out.extend_from_slice(&(i as u32).to_le_bytes());
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let kind = r.take(1)?[0];
        let stored_fp = r.string()?;
        let meta: ModelMeta =
            serde_json::from_str(&r.string()?).map_err(|e| Error::ModelFormat(format!("metadata: {e}")))?;
        let n_heads = r.take(1)?[0] as usize;
        let expected_dim = meta.hyper.features.dim();
        let mut heads = Vec::with_capacity(n_heads);
        for _ in 0..n_heads {
            let bias = f64::from_le_bytes(r.array()?);
            let dim = u32::from_le_bytes(r.array()?) as usize;
            if dim != expected_dim {
                return Err(Error::ModelFormat(format!(
                    "weight dimension {dim} does not match feature config ({expected_dim})"
                )));
            }
            let nnz = u32::from_le_bytes(r.array()?) as usize;
            let mut weights = vec![0.0; dim];
            for _ in 0..nnz {
                let i = u32::from_le_bytes(r.array()?) as usize;
                let w = f64::from_le_bytes(r.array()?);
                *weights
                    .get_mut(i)
                    .ok_or_else(|| Error::ModelFormat(format!("weight index {i} out of range")))? = w;
            }
            heads.push(LinearModel {
                task: meta.task,
                hyper: meta.hyper.clone(),
                weights,
                bias,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }
        let model = match (kind, heads.len()) {
            (KIND_BINARY, 1) => ModelFile::Binary(heads.pop().expect("one head")),
            (KIND_THREEWAY, 3) => {
                let s = heads.pop().expect("three heads");
                let n = heads.pop().expect("three heads");
                let c = heads.pop().expect("three heads");
                ModelFile::ThreeWay(ThreeWayLinear { heads: [c, n, s] })
            }
            (k, n) => return Err(Error::ModelFormat(format!("kind {k} with {n} heads"))),
        };
        if model.fingerprint() != stored_fp {
            return Err(Error::FingerprintMismatch {
                artifact: "model file".into(),
                expected: model.fingerprint(),
                found: stored_fp,
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_bytes(&bytes)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn string(&mut self) -> Result<String> {
        let n = u32::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Hyperparameters {
        Hyperparameters {
            features: FeatureConfig {
                hash_bits: 12,
                ..FeatureConfig::default()
            },
            ..Hyperparameters::default()
        }
    }

    fn separable() -> Vec<(String, String, bool)> {
        let topics = ["protein", "gene", "cell", "tumor", "virus", "enzyme", "neuron", "dose"];
        let mut out = Vec::new();
        for (i, t) in topics.iter().enumerate() {
            for j in 0..4 {
                let claim = format!("{t} levels change under condition {j}");
                out.push((claim.clone(), format!("zzmarker {t} study result {i}"), true));
                out.push((claim, format!("unrelated survey {j} of {}", topics[(i + 3) % 8]), false));
            }
        }
        out
    }

    fn pairs(data: &[(String, String, bool)]) -> Vec<(TextPair<'_>, bool)> {
        data.iter().map(|(a, b, y)| (TextPair::new(a, b), *y)).collect()
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = LinearModel::zeros(TaskTag::Abstract, small());
        let p = m.score(&[TextPair::new("anything", "else")]).unwrap();
        assert_eq!(p, vec![0.5]);
        assert!(m.score(&[]).unwrap().is_empty());
    }

    #[test]
    fn separable_fixture_trains_and_is_deterministic() {
        let data = separable();
        let ex = pairs(&data);
        let a = train_linear(TaskTag::Abstract, &ex, &small()).unwrap();
        let b = train_linear(TaskTag::Abstract, &ex, &small()).unwrap();
        let bits = |m: &LinearModel| m.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
        let correct = ex.iter().filter(|(p, y)| (a.probability(p) > 0.5) == *y).count();
        assert!(correct as f64 / ex.len() as f64 >= 0.95);
    }

    #[test]
    fn empty_and_single_class_rejected() {
        assert!(matches!(
            train_linear(TaskTag::Abstract, &[], &small()),
            Err(Error::Training(_))
        ));
        let one = [(TextPair::new("a", "b"), true), (TextPair::new("c", "d"), true)];
        assert!(matches!(
            train_linear(TaskTag::Abstract, &one, &small()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn warm_start_with_zero_epochs_keeps_weights() {
        let data = separable();
        let ex = pairs(&data);
        let base = train_linear(TaskTag::Abstract, &ex, &small()).unwrap();
        let hyper = Hyperparameters { epochs: 0, ..small() };
        let cont = train_linear_warm(base.warm_start_for(TaskTag::Rationale), &ex, &hyper).unwrap();
        assert_eq!(cont.weights, base.weights);
        assert_eq!(cont.task, TaskTag::Rationale);
    }

    #[test]
    fn warm_start_rejects_feature_mismatch() {
        let base = LinearModel::zeros(TaskTag::Abstract, small());
        let other = Hyperparameters::default();
        let ex = [(TextPair::new("a", "b"), true), (TextPair::new("c", "d"), false)];
        assert!(train_linear_warm(base, &ex, &other).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let data = separable();
        let m = train_linear(TaskTag::Rationale, &pairs(&data), &small()).unwrap();
        let file = ModelFile::Binary(m.clone());
        let bytes = file.to_bytes();
        assert_eq!(ModelFile::from_bytes(&bytes).unwrap(), file);
        assert_eq!(file.to_bytes(), bytes);
    }

    #[test]
    fn model_file_rejects_corruption() {
        let file = ModelFile::Binary(LinearModel::zeros(TaskTag::Abstract, small()));
        let mut bytes = file.to_bytes();
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(ModelFile::from_bytes(&bytes), Err(Error::ModelFormat(_))));
    }

    #[test]
    fn three_way_scores_sum_to_one() {
        let claims = [
            "drug lowers blood pressure",
            "vaccine prevents infection",
            "diet affects mood",
        ];
        let mut owned = Vec::new();
        for c in claims {
            owned.push((c.to_string(), format!("results confirm {c}"), Label::Support));
            owned.push((
                c.to_string(),
                format!("no evidence that {c} refuted"),
                Label::Contradict,
            ));
            owned.push((c.to_string(), "the weather was mild".to_string(), Label::NotEnoughInfo));
        }
        let ex: Vec<(TextPair, Label)> = owned.iter().map(|(a, b, l)| (TextPair::new(a, b), *l)).collect();
        let m = train_three_way(&ex, &small()).unwrap();
        for (p, _) in &ex {
            let s = m.class_scores(p);
            assert!((s.contradict + s.nei + s.support - 1.0).abs() < 1e-12);
        }
        let file = ModelFile::ThreeWay(m);
        assert_eq!(ModelFile::from_bytes(&file.to_bytes()).unwrap(), file);
    }
}
