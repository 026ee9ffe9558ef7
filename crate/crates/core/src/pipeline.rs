//! Run configuration and stage wiring for training, prediction and
//! evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    self, check_same_run, read_meta, write_labels, write_predictions_artifact, write_rationales, write_retrieved,
    ArtifactKind,
};
use crate::classifier::{
    load_model_file, train_linear, train_linear_warm, train_three_way, Hyperparameters, LinearModel, ModelFile,
    RemoteConfig, RemoteScorer, ScoreBackend, TaskTag, TextPair, ThreeWayBackend,
};
use crate::data_model::{
    load_claims, load_corpus, load_predictions, Claim, ClaimSet, Corpus, DocPrediction, Label, Prediction, Predictions,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_run, retrieval_metrics, DenominatorMode, EvalConfig, LabelMap, MetricReport};
use crate::fingerprint::{fingerprint, hash_bytes};
use crate::label::{
    build_label_input, make_label_training_sets, CascadeConfig, LabelPredictor, LabelScheme, NeiSource, NeutralLabel,
    SupportLabel,
};
use crate::rationale::{
    make_rationale_training_set, select_rationales, subsample_negatives, RationaleConfig, RationaleMap, RetrievedMap,
};
use crate::retrieval::{candidate_pool, make_abstract_training_set, retrieve_abstracts, RetrievalConfig, TfidfScorer};
use crate::text::{index_fingerprint, TfidfConfig, TfidfIndex};

/// Overrides the endpoint of every remote backend binding.
pub const SCORER_URL_ENV: &str = "CLAIMCHECK_SCORER_URL";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub corpus: PathBuf,
    /// Claims to predict and evaluate.
    pub claims: PathBuf,
    pub train_claims: Option<PathBuf>,
    pub dev_claims: Option<PathBuf>,
    /// Train on train and dev claims together.
    pub merge_train_dev: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendBinding {
    Builtin { model: PathBuf },
    Remote(RemoteConfig),
    TfidfCosine,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Backends {
    #[serde(rename = "abstract")]
    pub abstract_: Option<BackendBinding>,
    pub rationale: Option<BackendBinding>,
    pub neutral: Option<BackendBinding>,
    pub support: Option<BackendBinding>,
    pub threeway: Option<BackendBinding>,
}

impl Backends {
    fn get(&self, stage: Stage) -> Option<&BackendBinding> {
        match stage {
            Stage::Abstract => self.abstract_.as_ref(),
            Stage::Rationale => self.rationale.as_ref(),
            Stage::Neutral => self.neutral.as_ref(),
            Stage::Support => self.support.as_ref(),
            Stage::Threeway => self.threeway.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Use each claim's cited documents instead of running retrieval.
    pub abstracts: bool,
    /// Use gold rationale sentences instead of running rationale selection.
    pub rationales: bool,
    /// A retrieval artifact to use instead of running retrieval.
    pub retrieved: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub tfidf: TfidfConfig,
    pub retrieval: RetrievalConfig,
    pub rationale: RationaleConfig,
    pub label: CascadeConfig,
    pub training: Hyperparameters,
    /// Initialize the rationale model from the trained abstract model.
    pub warm_start: bool,
    pub backends: Backends,
    pub oracle: OracleConfig,
    /// When set, replaces the training and NEI sampling seeds.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub models_dir: PathBuf,
    /// Per-claim parallelism; 1 runs sequentially, 0 uses all cores.
    pub workers: usize,
    pub index_cache: Option<PathBuf>,
    pub eval: EvalConfig,
    /// Evaluate predictions against the gold labels in `data.claims`.
    pub report: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: DataConfig::default(),
            tfidf: TfidfConfig::default(),
            retrieval: RetrievalConfig::default(),
            rationale: RationaleConfig::default(),
            label: CascadeConfig::default(),
            training: Hyperparameters::default(),
            warm_start: false,
            backends: Backends::default(),
            oracle: OracleConfig::default(),
            seed: None,
            output_dir: PathBuf::from("out"),
            models_dir: PathBuf::from("models"),
            workers: 1,
            index_cache: None,
            eval: EvalConfig::default(),
            report: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a TOML file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.corpus);
        fix(&mut self.data.claims);
        for p in [
            &mut self.data.train_claims,
            &mut self.data.dev_claims,
            &mut self.oracle.retrieved,
            &mut self.index_cache,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
        fix(&mut self.models_dir);
        for b in [
            &mut self.backends.abstract_,
            &mut self.backends.rationale,
            &mut self.backends.neutral,
            &mut self.backends.support,
            &mut self.backends.threeway,
        ]
        .into_iter()
        .flatten()
        {
            if let BackendBinding::Builtin { model } = b {
                fix(model);
            }
        }
    }

    /// Settings with the top-level seed applied.
    pub fn effective(&self) -> PipelineConfig {
        let mut c = self.clone();
        if let Some(seed) = self.seed {
            c.training.seed = seed;
            c.label.seed = seed;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.tfidf.tokenizer.validate()?;
        self.retrieval.validate()?;
        self.rationale.validate()?;
        self.label.validate()?;
        self.eval.validate()?;
        if self.oracle.rationales && !self.oracle.abstracts && self.oracle.retrieved.is_none() {
            return Err(Error::Config(
                "oracle.rationales needs oracle.abstracts or an explicit oracle.retrieved map".into(),
            ));
        }
        if self.oracle.abstracts && self.oracle.retrieved.is_some() {
            return Err(Error::Config(
                "oracle.abstracts and oracle.retrieved are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    fn model_path(&self, stage: Stage) -> PathBuf {
        match self.backends.get(stage) {
            Some(BackendBinding::Builtin { model }) => model.clone(),
            _ => self.models_dir.join(format!("{stage}.cclm")),
        }
    }

    fn binding(&self, stage: Stage) -> BackendBinding {
        self.backends
            .get(stage)
            .cloned()
            .unwrap_or_else(|| BackendBinding::Builtin {
                model: self.model_path(stage),
            })
    }
}

/// A trainable pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Abstract,
    Rationale,
    Neutral,
    Support,
    Threeway,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Abstract,
        Stage::Rationale,
        Stage::Neutral,
        Stage::Support,
        Stage::Threeway,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Abstract => "abstract",
            Stage::Rationale => "rationale",
            Stage::Neutral => "neutral",
            Stage::Support => "support",
            Stage::Threeway => "threeway",
        }
    }

    pub fn task(self) -> TaskTag {
        match self {
            Stage::Abstract => TaskTag::Abstract,
            Stage::Rationale => TaskTag::Rationale,
            Stage::Neutral => TaskTag::Neutral,
            Stage::Support => TaskTag::Support,
            Stage::Threeway => TaskTag::Threeway,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

/// Backends supplied in code; each one takes precedence over the configured
/// binding for its stage.
#[derive(Default, Clone)]
pub struct BackendOverrides {
    pub abstract_scorer: Option<Arc<dyn ScoreBackend>>,
    pub rationale: Option<Arc<dyn ScoreBackend>>,
    pub neutral: Option<Arc<dyn ScoreBackend>>,
    pub support: Option<Arc<dyn ScoreBackend>>,
    pub threeway: Option<Arc<dyn ThreeWayBackend>>,
}

fn check_exists(path: &Path, what: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::Config(format!("{what} path is not set")));
    }
    if !path.exists() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn file_hash(path: &Path) -> Result<String> {
    fs::read(path).map(|b| hash_bytes(&b)).map_err(|e| Error::io(path, e))
}

fn remote_config(cfg: &RemoteConfig) -> RemoteConfig {
    let mut cfg = cfg.clone();
    if let Ok(url) = std::env::var(SCORER_URL_ENV) {
        if !url.is_empty() {
            cfg.endpoint = url;
        }
    }
    cfg
}

/// Loads the cached index when it is fresh, otherwise builds it and
/// refreshes the cache.
pub fn load_or_build_index(corpus: &Corpus, config: &TfidfConfig, cache: Option<&Path>) -> Result<TfidfIndex> {
    let fp = index_fingerprint(corpus, config);
    if let Some(path) = cache {
        if path.exists() {
            match TfidfIndex::load(path, &fp) {
                Ok(Some(idx)) => return Ok(idx),
                Ok(None) => log::info!("index cache {} is stale; rebuilding", path.display()),
                Err(e) => log::warn!("index cache {} unreadable ({e}); rebuilding", path.display()),
            }
        }
    }
    let index = TfidfIndex::build(corpus, config)?;
    if let Some(path) = cache {
        index.save(path, &fp)?;
    }
    Ok(index)
}

struct Resolver<'a> {
    config: &'a PipelineConfig,
    overrides: &'a BackendOverrides,
    index: Option<Arc<TfidfIndex>>,
}

impl Resolver<'_> {
    fn score(&self, stage: Stage) -> Result<(Arc<dyn ScoreBackend>, String)> {
        let injected = match stage {
            Stage::Abstract => &self.overrides.abstract_scorer,
            Stage::Rationale => &self.overrides.rationale,
            Stage::Neutral => &self.overrides.neutral,
            Stage::Support => &self.overrides.support,
            Stage::Threeway => {
                return Err(Error::Config("the threeway stage has no binary scorer".into()));
            }
        };
        if let Some(b) = injected {
            return Ok((b.clone(), format!("injected:{}", b.task())));
        }
        match self.config.binding(stage) {
            BackendBinding::Builtin { model } => {
                check_exists(&model, &format!("{stage} model"))?;
                match load_model_file(&model)? {
                    ModelFile::Binary(m) if m.task == stage.task() => {
                        Ok((Arc::new(m), format!("builtin:{}", file_hash(&model)?)))
                    }
                    ModelFile::Binary(m) => Err(Error::Config(format!(
                        "{} holds a {} model, expected {}",
                        model.display(),
                        m.task,
                        stage.task()
                    ))),
                    ModelFile::ThreeWay(_) => Err(Error::Config(format!(
                        "{} holds a three-way model, expected a binary {stage} model",
                        model.display()
                    ))),
                }
            }
            BackendBinding::Remote(rc) => {
                let rc = remote_config(&rc);
                let id = format!("remote:{}:{}", rc.endpoint, stage.task());
                Ok((Arc::new(RemoteScorer::new(stage.task(), rc)?), id))
            }
            BackendBinding::TfidfCosine => {
                let index = self
                    .index
                    .clone()
                    .ok_or_else(|| Error::Config("tfidf_cosine binding needs the corpus index".into()))?;
                Ok((Arc::new(TfidfScorer::new(index)), "tfidf_cosine".into()))
            }
        }
    }

    fn threeway(&self) -> Result<(Arc<dyn ThreeWayBackend>, String)> {
        if let Some(b) = &self.overrides.threeway {
            return Ok((b.clone(), "injected:threeway".into()));
        }
        match self.config.binding(Stage::Threeway) {
            BackendBinding::Builtin { model } => {
                check_exists(&model, "threeway model")?;
                match load_model_file(&model)? {
                    ModelFile::ThreeWay(m) => Ok((Arc::new(m), format!("builtin:{}", file_hash(&model)?))),
                    ModelFile::Binary(_) => Err(Error::Config(format!(
                        "{} holds a binary model, expected a three-way model",
                        model.display()
                    ))),
                }
            }
            BackendBinding::Remote(rc) => {
                let rc = remote_config(&rc);
                let id = format!("remote:{}:threeway", rc.endpoint);
                Ok((Arc::new(RemoteScorer::new(TaskTag::Threeway, rc)?), id))
            }
            BackendBinding::TfidfCosine => Err(Error::Config("tfidf_cosine cannot predict three-way labels".into())),
        }
    }
}

/// Runs `f` over `items`, in parallel when `workers != 1`. Results keep input
/// order and the first error in input order is returned.
fn fan_out<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    if workers == 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<R>> = pool.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

fn cited_map(claims: &ClaimSet) -> RetrievedMap {
    claims
        .iter()
        .map(|c| {
            let mut docs = c.cited_doc_ids.clone();
            docs.sort_unstable();
            docs.dedup();
            (c.id, docs)
        })
        .collect()
}

fn run_retrieval(
    claims: &ClaimSet,
    corpus: &Corpus,
    config: &PipelineConfig,
    index: &TfidfIndex,
    backend: Option<&dyn ScoreBackend>,
) -> Result<RetrievedMap> {
    let claims: Vec<&Claim> = claims.iter().collect();
    let docs = fan_out(&claims, config.workers, |c| {
        retrieve_abstracts(c, index, corpus, backend, &config.retrieval)
    })?;
    Ok(claims.iter().map(|c| c.id).zip(docs).collect())
}

fn check_retrieved(map: &RetrievedMap, claims: &ClaimSet, corpus: &Corpus) -> Result<()> {
    for (id, docs) in map {
        if claims.get(*id).is_none() {
            return Err(Error::Integrity(format!("retrieved map names unknown claim {id}")));
        }
        for d in docs {
            if !corpus.contains(*d) {
                return Err(Error::Integrity(format!(
                    "retrieved doc {d} for claim {id} is not in the corpus"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPaths {
    pub retrieved: PathBuf,
    pub rationales: PathBuf,
    pub labels: PathBuf,
    pub predictions: PathBuf,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path) -> Self {
        RunPaths {
            retrieved: dir.join("retrieved.jsonl"),
            rationales: dir.join("rationales.jsonl"),
            labels: dir.join("labels.jsonl"),
            predictions: dir.join("predictions.jsonl"),
            report_json: dir.join("report.json"),
            report_txt: dir.join("report.txt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub fingerprint: String,
    pub retrieved: RetrievedMap,
    pub rationales: RationaleMap,
    pub labels: LabelMap,
    pub predictions: Predictions,
    pub report: Option<MetricReport>,
    pub paths: RunPaths,
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    tfidf: &'a TfidfConfig,
    retrieval: &'a RetrievalConfig,
    rationale: &'a RationaleConfig,
    label: &'a CascadeConfig,
    oracle_abstracts: bool,
    oracle_rationales: bool,
    oracle_retrieved: Option<String>,
    corpus: String,
    claims: String,
    backends: &'a BTreeMap<Stage, String>,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput> {
    run_pipeline_with(config, &BackendOverrides::default())
}

/// Retrieval, rationale selection and label prediction over `data.claims`.
///
/// Every stage's output is written to `output_dir` as soon as the stage
/// finishes, so a failing later stage leaves the earlier artifacts behind.
pub fn run_pipeline_with(config: &PipelineConfig, overrides: &BackendOverrides) -> Result<RunOutput> {
    let config = config.effective();
    config.validate()?;
    check_exists(&config.data.corpus, "corpus")?;
    check_exists(&config.data.claims, "claims file")?;
    if let Some(p) = &config.oracle.retrieved {
        check_exists(p, "oracle retrieved map")?;
    }
    let corpus = load_corpus(&config.data.corpus)?;
    let claims = load_claims(&config.data.claims, Some(&corpus))?;

    let run_retrieval_stage = !config.oracle.abstracts && config.oracle.retrieved.is_none();
    let needs_index = run_retrieval_stage
        || Stage::ALL
            .iter()
            .any(|s| matches!(config.backends.get(*s), Some(BackendBinding::TfidfCosine)));
    let index = if needs_index {
        Some(Arc::new(load_or_build_index(
            &corpus,
            &config.tfidf,
            config.index_cache.as_deref(),
        )?))
    } else {
        None
    };
    let resolver = Resolver {
        config: &config,
        overrides,
        index: index.clone(),
    };

    let mut identities = BTreeMap::new();
    let abstract_backend = if run_retrieval_stage && config.retrieval.needs_backend() {
        let (b, id) = resolver.score(Stage::Abstract)?;
        identities.insert(Stage::Abstract, id);
        Some(b)
    } else {
        None
    };
    let rationale_backend = if config.oracle.rationales {
        None
    } else {
        let (b, id) = resolver.score(Stage::Rationale)?;
        identities.insert(Stage::Rationale, id);
        Some(b)
    };
    let (neutral, support, threeway) = match config.label.scheme {
        LabelScheme::TwoStep => {
            let (n, nid) = resolver.score(Stage::Neutral)?;
            let (s, sid) = resolver.score(Stage::Support)?;
            identities.insert(Stage::Neutral, nid);
            identities.insert(Stage::Support, sid);
            (Some(n), Some(s), None)
        }
        LabelScheme::ThreeWay => {
            let (t, id) = resolver.threeway()?;
            identities.insert(Stage::Threeway, id);
            (None, None, Some(t))
        }
    };

    let identity = RunIdentity {
        tfidf: &config.tfidf,
        retrieval: &config.retrieval,
        rationale: &config.rationale,
        label: &config.label,
        oracle_abstracts: config.oracle.abstracts,
        oracle_rationales: config.oracle.rationales,
        oracle_retrieved: config.oracle.retrieved.as_deref().map(file_hash).transpose()?,
        corpus: file_hash(&config.data.corpus)?,
        claims: file_hash(&config.data.claims)?,
        backends: &identities,
    };
    let fp = fingerprint(&identity);

    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let paths = RunPaths::in_dir(&config.output_dir);

    // Retrieval.
    let retrieved = if config.oracle.abstracts {
        cited_map(&claims)
    } else if let Some(p) = &config.oracle.retrieved {
        let mut map = artifacts::read_retrieved(p, None)?;
        check_retrieved(&map, &claims, &corpus)?;
        for c in &claims {
            map.entry(c.id).or_default();
        }
        map
    } else {
        let index = index.as_deref().expect("index is built whenever retrieval runs");
        run_retrieval(&claims, &corpus, &config, index, abstract_backend.as_deref())?
    };
    write_retrieved(&retrieved, &paths.retrieved, &fp)?;

    // Rationale selection.
    let claim_refs: Vec<&Claim> = claims.iter().collect();
    let per_claim = fan_out(&claim_refs, config.workers, |claim| {
        let mut out = BTreeMap::new();
        for &doc_id in retrieved.get(&claim.id).map(Vec::as_slice).unwrap_or(&[]) {
            let sentences = match &rationale_backend {
                None => claim.gold_sentences(doc_id).into_iter().collect(),
                Some(b) => {
                    let doc = corpus.require(doc_id)?;
                    select_rationales(claim, doc, b.as_ref(), &config.rationale)?
                }
            };
            out.insert(doc_id, sentences);
        }
        Ok(out)
    })?;
    let rationales: RationaleMap = claim_refs.iter().map(|c| c.id).zip(per_claim).collect();
    write_rationales(&rationales, &paths.rationales, &fp)?;

    // Label prediction.
    let predictor = match (&neutral, &support, &threeway) {
        (Some(n), Some(s), _) => LabelPredictor::TwoStep {
            neutral: n.as_ref(),
            support: s.as_ref(),
        },
        (_, _, Some(t)) => LabelPredictor::ThreeWay(t.as_ref()),
        _ => unreachable!("label backends resolved above"),
    };
    let allow_empty = config.oracle.rationales;
    let per_claim = fan_out(&claim_refs, config.workers, |claim| {
        let mut labels = BTreeMap::new();
        let mut docs = Vec::new();
        let mut inputs = Vec::new();
        for (&doc_id, sentences) in &rationales[&claim.id] {
            if sentences.is_empty() && !allow_empty {
                labels.insert(doc_id, Label::NotEnoughInfo);
                continue;
            }
            inputs.push(build_label_input(claim, doc_id, sentences, &corpus, allow_empty)?);
            docs.push(doc_id);
        }
        if !inputs.is_empty() {
            let predicted = predictor
                .predict(&inputs, &config.label)
                .map_err(|e| Error::stage("label", claim.id.0, None, e))?;
            labels.extend(docs.into_iter().zip(predicted));
        }
        Ok(labels)
    })?;
    let labels: LabelMap = claim_refs.iter().map(|c| c.id).zip(per_claim).collect();
    write_labels(&labels, &paths.labels, &fp)?;

    let predictions = Predictions::new(
        claim_refs
            .iter()
            .map(|c| Prediction {
                claim_id: c.id,
                evidence: labels[&c.id]
                    .iter()
                    .filter(|(_, l)| **l != Label::NotEnoughInfo)
                    .filter_map(|(d, l)| {
                        let sentences = rationales[&c.id][d].clone();
                        (!sentences.is_empty()).then_some((*d, DocPrediction { sentences, label: *l }))
                    })
                    .collect(),
            })
            .collect(),
    );
    write_predictions_artifact(&predictions, &paths.predictions, &fp)?;

    let report = if config.report {
        let r = evaluate_run(
            &claims,
            &predictions,
            Some(&retrieved),
            Some(&labels),
            Some(&corpus),
            &config.eval,
        )?;
        write_report(&r, &paths)?;
        Some(r)
    } else {
        None
    };

    Ok(RunOutput {
        fingerprint: fp,
        retrieved,
        rationales,
        labels,
        predictions,
        report,
        paths,
    })
}

pub fn write_report(report: &MetricReport, paths: &RunPaths) -> Result<()> {
    let json = serde_json::to_vec_pretty(report).map_err(|e| Error::Contract(e.to_string()))?;
    fs::write(&paths.report_json, json).map_err(|e| Error::io(&paths.report_json, e))?;
    fs::write(&paths.report_txt, report.to_table()).map_err(|e| Error::io(&paths.report_txt, e))
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&raw).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Inputs for evaluating existing prediction files.
#[derive(Debug, Clone, Default)]
pub struct EvaluateRequest {
    pub gold: PathBuf,
    pub predictions: PathBuf,
    pub corpus: Option<PathBuf>,
    pub retrieved: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub config: EvalConfig,
}

/// Evaluates prediction files. When the prediction file carries a sidecar,
/// the optional retrieval and label artifacts must come from the same run.
pub fn evaluate_files(req: &EvaluateRequest) -> Result<MetricReport> {
    let corpus = req.corpus.as_deref().map(load_corpus).transpose()?;
    let gold = load_claims(&req.gold, corpus.as_ref())?;
    let predictions = load_predictions(&req.predictions)?;

    let mut metas = Vec::new();
    if artifacts::meta_path(&req.predictions).exists() {
        metas.push((
            req.predictions.as_path(),
            read_meta(&req.predictions, ArtifactKind::Predictions, None)?,
        ));
    }
    let expected = metas.first().map(|(_, m)| m.fingerprint.clone());
    let retrieved = match &req.retrieved {
        Some(p) => {
            let map = artifacts::read_retrieved(p, expected.as_deref())?;
            if artifacts::meta_path(p).exists() {
                metas.push((p.as_path(), read_meta(p, ArtifactKind::Retrieval, None)?));
            }
            Some(map)
        }
        None => None,
    };
    let labels = match &req.labels {
        Some(p) => {
            let map = artifacts::read_labels(p, expected.as_deref())?;
            if artifacts::meta_path(p).exists() {
                metas.push((p.as_path(), read_meta(p, ArtifactKind::Labels, None)?));
            }
            Some(map)
        }
        None => None,
    };
    let refs: Vec<(&Path, &artifacts::ArtifactMeta)> = metas.iter().map(|(p, m)| (*p, m)).collect();
    check_same_run(&refs)?;
    evaluate_run(
        &gold,
        &predictions,
        retrieved.as_ref(),
        labels.as_ref(),
        corpus.as_ref(),
        &req.config,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub docs: usize,
    pub degenerate_docs: usize,
    pub claims: usize,
    pub claims_with_evidence: usize,
    pub evidence_pairs: usize,
    pub vocab_size: usize,
    pub index_fingerprint: String,
    pub pool_size: usize,
    /// Share of gold evidence docs found in the candidate pool, over claims
    /// with evidence.
    pub pool_recall: f64,
}

/// Loads and validates the dataset, builds (or refreshes) the index cache and
/// reports basic statistics.
pub fn ingest(config: &PipelineConfig) -> Result<IngestSummary> {
    config.validate()?;
    check_exists(&config.data.corpus, "corpus")?;
    check_exists(&config.data.claims, "claims file")?;
    let corpus = load_corpus(&config.data.corpus)?;
    let claims = load_claims(&config.data.claims, Some(&corpus))?;
    let index = load_or_build_index(&corpus, &config.tfidf, config.index_cache.as_deref())?;
    let mut pools = RetrievedMap::new();
    for c in &claims {
        pools.insert(c.id, candidate_pool(&index, c, config.retrieval.pool_size)?.doc_ids());
    }
    let recall = retrieval_metrics(&claims, &pools, DenominatorMode::EvidenceClaimsOnly).recall;
    Ok(IngestSummary {
        docs: corpus.len(),
        degenerate_docs: corpus.degenerate().len(),
        claims: claims.len(),
        claims_with_evidence: claims.iter().filter(|c| c.has_evidence()).count(),
        evidence_pairs: claims.iter().map(|c| c.evidence.len()).sum(),
        vocab_size: index.vocab_size(),
        index_fingerprint: index_fingerprint(&corpus, &config.tfidf),
        pool_size: config.retrieval.pool_size,
        pool_recall: recall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    pub stage: Stage,
    pub path: PathBuf,
    pub fingerprint: String,
    pub examples: usize,
    pub positives: usize,
}

fn training_claims(config: &PipelineConfig, corpus: &Corpus) -> Result<ClaimSet> {
    let train = config
        .data
        .train_claims
        .as_ref()
        .ok_or_else(|| Error::Config("data.train_claims is required for training".into()))?;
    check_exists(train, "training claims")?;
    let mut set = load_claims(train, Some(corpus))?;
    if config.data.merge_train_dev {
        let dev = config
            .data
            .dev_claims
            .as_ref()
            .ok_or_else(|| Error::Config("merge_train_dev needs data.dev_claims".into()))?;
        check_exists(dev, "dev claims")?;
        let dev = load_claims(dev, Some(corpus))?;
        for c in dev.claims {
            if set.get(c.id).is_some() {
                return Err(Error::Integrity(format!(
                    "claim {} appears in both train and dev",
                    c.id
                )));
            }
            set.claims.push(c);
        }
        set.claims.sort_by_key(|c| c.id);
    }
    Ok(set)
}

fn training_retrieved(
    config: &PipelineConfig,
    claims: &ClaimSet,
    corpus: &Corpus,
    overrides: &BackendOverrides,
) -> Result<RetrievedMap> {
    if config.oracle.abstracts {
        return Ok(cited_map(claims));
    }
    let index = Arc::new(load_or_build_index(
        corpus,
        &config.tfidf,
        config.index_cache.as_deref(),
    )?);
    let resolver = Resolver {
        config,
        overrides,
        index: Some(index.clone()),
    };
    let backend = if config.retrieval.needs_backend() {
        Some(resolver.score(Stage::Abstract)?.0)
    } else {
        None
    };
    run_retrieval(claims, corpus, config, &index, backend.as_deref())
}

/// The model a stage starts from before training: the abstract model's
/// weights for a warm-started rationale stage, otherwise nothing.
pub fn initial_model(stage: Stage, config: &PipelineConfig) -> Result<Option<LinearModel>> {
    if stage != Stage::Rationale || !config.warm_start {
        return Ok(None);
    }
    let path = config.model_path(Stage::Abstract);
    check_exists(&path, "abstract model (needed for warm start)")?;
    match load_model_file(&path)? {
        ModelFile::Binary(m) if m.task == TaskTag::Abstract => Ok(Some(m.warm_start_for(TaskTag::Rationale))),
        _ => Err(Error::Config(format!("{} is not an abstract model", path.display()))),
    }
}

pub fn train_stage(stage: Stage, config: &PipelineConfig) -> Result<TrainOutput> {
    train_stage_with(stage, config, &BackendOverrides::default())
}

/// Trains the built-in model for one stage and writes it to the stage's
/// model path.
pub fn train_stage_with(stage: Stage, config: &PipelineConfig, overrides: &BackendOverrides) -> Result<TrainOutput> {
    let config = config.effective();
    config.validate()?;
    if !matches!(config.binding(stage), BackendBinding::Builtin { .. }) {
        return Err(Error::Config(format!(
            "stage {stage} is not bound to a built-in model; remote models train out of process"
        )));
    }
    check_exists(&config.data.corpus, "corpus")?;
    let corpus = load_corpus(&config.data.corpus)?;
    let claims = training_claims(&config, &corpus)?;
    let hyper = &config.training;

    let (model, examples, positives) = match stage {
        Stage::Abstract => {
            let index = load_or_build_index(&corpus, &config.tfidf, config.index_cache.as_deref())?;
            let set = make_abstract_training_set(&claims, &corpus, &index, config.retrieval.pool_size)?;
            let pairs: Vec<(TextPair, bool)> = set
                .iter()
                .map(|e| (TextPair::new(&e.claim, &e.title), e.label))
                .collect();
            let m = train_linear(TaskTag::Abstract, &pairs, hyper)?;
            (ModelFile::Binary(m), pairs.len(), count_true(&pairs))
        }
        Stage::Rationale => {
            let retrieved = training_retrieved(&config, &claims, &corpus, overrides)?;
            let mut set = make_rationale_training_set(&claims, &retrieved, &corpus)?;
            if let Some(keep) = config.rationale.negative_subsample {
                set = subsample_negatives(set, keep, hyper.seed);
            }
            let pairs: Vec<(TextPair, bool)> = set
                .iter()
                .map(|e| (TextPair::new(&e.claim, &e.sentence), e.label))
                .collect();
            let m = match initial_model(stage, &config)? {
                Some(init) => train_linear_warm(init, &pairs, hyper)?,
                None => train_linear(TaskTag::Rationale, &pairs, hyper)?,
            };
            (ModelFile::Binary(m), pairs.len(), count_true(&pairs))
        }
        Stage::Neutral | Stage::Support | Stage::Threeway => {
            let retrieved = if config.label.nei_source == NeiSource::Retrieved {
                Some(training_retrieved(&config, &claims, &corpus, overrides)?)
            } else {
                None
            };
            let sets = make_label_training_sets(&claims, &corpus, &config.label, retrieved.as_ref())?;
            match stage {
                Stage::Neutral => {
                    let pairs: Vec<(TextPair, bool)> = sets
                        .neutral_set
                        .iter()
                        .map(|(i, l)| (i.pair(), *l == NeutralLabel::EnoughInfo))
                        .collect();
                    let m = train_linear(TaskTag::Neutral, &pairs, hyper)?;
                    (ModelFile::Binary(m), pairs.len(), count_true(&pairs))
                }
                Stage::Support => {
                    let pairs: Vec<(TextPair, bool)> = sets
                        .support_set
                        .iter()
                        .map(|(i, l)| (i.pair(), *l == SupportLabel::Support))
                        .collect();
                    let m = train_linear(TaskTag::Support, &pairs, hyper)?;
                    (ModelFile::Binary(m), pairs.len(), count_true(&pairs))
                }
                _ => {
                    let pairs: Vec<(TextPair, Label)> = sets.threeway_set.iter().map(|(i, l)| (i.pair(), *l)).collect();
                    let m = train_three_way(&pairs, hyper)?;
                    let positives = pairs.iter().filter(|(_, l)| *l != Label::NotEnoughInfo).count();
                    (ModelFile::ThreeWay(m), pairs.len(), positives)
                }
            }
        }
    };

    let path = config.model_path(stage);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    model.save(&path)?;
    Ok(TrainOutput {
        stage,
        fingerprint: model.fingerprint(),
        path,
        examples,
        positives,
    })
}

fn count_true(pairs: &[(TextPair, bool)]) -> usize {
    pairs.iter().filter(|(_, l)| *l).count()
}
