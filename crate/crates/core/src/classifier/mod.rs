//! Pluggable pair scorers.
//!
//! Every stage of the pipeline asks the same question of a backend: given a
//! batch of `(claim, text)` pairs, what is the probability of the positive
//! class for each? [`ScoreBackend`] is that contract. Two implementations
//! ship here: the feature-hashed [`LinearModel`] and the HTTP
//! [`RemoteScorer`].

mod features;
mod linear;
mod remote;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data_model::Label;
use crate::error::{Error, Result};

pub use features::{featurize_pair, FeatureConfig, PairFeatures, NUM_SCALAR_FEATURES};
pub use linear::{
    load_model_file, train_linear, train_linear_warm, train_three_way, Hyperparameters, LinearModel, ModelFile,
    ThreeWayLinear,
};
pub use remote::{Health, RemoteConfig, RemoteScorer, ScoreRequest, ScoreResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskTag {
    Abstract,
    Rationale,
    Neutral,
    Support,
    /// Three-class label scorer.
    Threeway,
    /// Similarity scorer used to rerank the candidate pool.
    Rerank,
}

impl TaskTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskTag::Abstract => "abstract",
            TaskTag::Rationale => "rationale",
            TaskTag::Neutral => "neutral",
            TaskTag::Support => "support",
            TaskTag::Threeway => "threeway",
            TaskTag::Rerank => "rerank",
        }
    }
}

impl fmt::Display for TaskTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "abstract" => TaskTag::Abstract,
            "rationale" => TaskTag::Rationale,
            "neutral" => TaskTag::Neutral,
            "support" => TaskTag::Support,
            "threeway" => TaskTag::Threeway,
            "rerank" => TaskTag::Rerank,
            other => return Err(Error::InvalidArgument(format!("unknown task tag {other:?}"))),
        })
    }
}

/// A claim paired with a title, sentence, or evidence passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextPair<'a> {
    pub claim: &'a str,
    pub text: &'a str,
}

impl<'a> TextPair<'a> {
    pub fn new(claim: &'a str, text: &'a str) -> Self {
        TextPair { claim, text }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub concurrent_safe: bool,
    pub trainable: bool,
}

/// Maps text pairs to positive-class probabilities.
///
/// Implementations must return exactly one probability in `[0, 1]` per
/// input pair, in input order, and must be deterministic for a fixed model
/// state.
pub trait ScoreBackend: Send + Sync {
    fn task(&self) -> TaskTag;

    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>>;

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent_safe: true,
            trainable: false,
        }
    }
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for Box<B> {
    fn task(&self) -> TaskTag {
        (**self).task()
    }
    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>> {
        (**self).score(pairs)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

impl<B: ScoreBackend + ?Sized> ScoreBackend for std::sync::Arc<B> {
    fn task(&self) -> TaskTag {
        (**self).task()
    }
    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>> {
        (**self).score(pairs)
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

/// Per-class probabilities from a three-way label scorer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub contradict: f64,
    pub nei: f64,
    pub support: f64,
}

impl ClassScores {
    /// Argmax with ties resolved NEI, then SUPPORT, then CONTRADICT.
    pub fn argmax(&self) -> Label {
        let mut best = (Label::NotEnoughInfo, self.nei);
        for (label, s) in [(Label::Support, self.support), (Label::Contradict, self.contradict)] {
            if s > best.1 {
                best = (label, s);
            }
        }
        best.0
    }
}

pub trait ThreeWayBackend: Send + Sync {
    fn score_classes(&self, pairs: &[TextPair<'_>]) -> Result<Vec<ClassScores>>;
}

impl<B: ThreeWayBackend + ?Sized> ThreeWayBackend for Box<B> {
    fn score_classes(&self, pairs: &[TextPair<'_>]) -> Result<Vec<ClassScores>> {
        (**self).score_classes(pairs)
    }
}

/// Thresholds positive-class probabilities: `true` iff `p > threshold`.
pub fn predict_binary<B: ScoreBackend + ?Sized>(
    backend: &B,
    pairs: &[TextPair<'_>],
    threshold: f64,
) -> Result<Vec<bool>> {
    check_threshold(threshold)?;
    Ok(backend.score(pairs)?.into_iter().map(|p| p > threshold).collect())
}

pub(crate) fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1]")))
    }
}

/// Verifies a backend reply against the scoring contract.
pub(crate) fn check_scores(expected: usize, probs: &[f64]) -> std::result::Result<(), String> {
    if probs.len() != expected {
        return Err(format!("expected {expected} probabilities, got {}", probs.len()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    Ok(())
}

/// Wraps a backend and counts invocations and scored pairs.
#[derive(Debug)]
pub struct Counted<B> {
    inner: B,
    calls: AtomicUsize,
    pairs: AtomicUsize,
}

impl<B> Counted<B> {
    pub fn new(inner: B) -> Self {
        Counted {
            inner,
            calls: AtomicUsize::new(0),
            pairs: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn pairs_scored(&self) -> usize {
        self.pairs.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ScoreBackend> ScoreBackend for Counted<B> {
    fn task(&self) -> TaskTag {
        self.inner.task()
    }

    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.pairs.fetch_add(pairs.len(), Ordering::SeqCst);
        self.inner.score(pairs)
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
}

/// Backend defined by a closure; useful for fixtures and hand-built oracles.
pub struct FnBackend<F> {
    task: TaskTag,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&TextPair<'_>) -> f64 + Send + Sync,
{
    pub fn new(task: TaskTag, f: F) -> Self {
        FnBackend { task, f }
    }
}

impl<F> ScoreBackend for FnBackend<F>
where
    F: Fn(&TextPair<'_>) -> f64 + Send + Sync,
{
    fn task(&self) -> TaskTag {
        self.task
    }

    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>> {
        Ok(pairs.iter().map(|p| (self.f)(p)).collect())
    }
}
