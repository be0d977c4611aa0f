//! End-to-end pipeline steps and the request/response layer shared by the
//! CLI and the HTTP service.

pub mod server;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::AnnForest;
use crate::bm25::Bm25Index;
use crate::checkpoint;
use crate::config::Config;
use crate::corpus::{build_vocabulary, ingest_jsonl, CorpusStore, Document, Split, SplitSummary};
use crate::embedder::{train_embedder, EmbedderParams, TrainStats};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, MetricsReport, Predictions};
use crate::linalg::mix_seed;
use crate::rank::{rerank, train_ranker, RankerParams};
use crate::select::{select_with_embedding, CandidateSet, Origin};

pub const EMBEDDER_FILE: &str = "embedder.json";
pub const FOREST_FILE: &str = "forest.ann";
pub const RANKER_FILE: &str = "ranker.json";
pub const BM25_FILE: &str = "bm25.json";

/// Id given to request documents; ingest rejects empty ids, so it never
/// collides with a corpus document.
const REQUEST_ID: &str = "";

pub const MAX_K: usize = 500;

/// Reads a JSONL corpus and assigns splits from the configured years.
pub fn ingest(path: &Path, cfg: &Config) -> Result<(CorpusStore, SplitSummary)> {
    let mut store = ingest_jsonl(path, &cfg.limits())?;
    let summary = store.split_by_year(cfg.corpus.train_end_year, cfg.corpus.dev_end_year)?;
    Ok((store, summary))
}

/// Builds the vocabulary from the train split and trains the selection
/// embedder.
pub fn train_select(store: &CorpusStore, cfg: &Config) -> Result<(EmbedderParams, TrainStats)> {
    let vocab = build_vocabulary(store, &cfg.vocab())?;
    let mut init = EmbedderParams::new(vocab.text, cfg.select.dense_dimension, cfg.embedder_init_seed());
    if cfg.select.use_pretrained {
        let path = cfg
            .select
            .pretrained_path
            .as_deref()
            .ok_or_else(|| Error::Config("use_pretrained is set without pretrained_path".into()))?;
        let n = init.load_pretrained_directions(path)?;
        tracing::info!(loaded = n, "pretrained directions");
    }
    train_embedder(store, init, &cfg.sampler(), &cfg.ann(), &cfg.select_train())
}

/// Indexes every embeddable corpus document for serving and evaluation.
pub fn build_index(store: &CorpusStore, eparams: &EmbedderParams, cfg: &Config) -> Result<AnnForest> {
    let items: Vec<(String, Vec<f64>)> = eparams
        .embed_store(store)
        .into_iter()
        .zip(store.documents())
        .filter(|(e, _)| !e.empty)
        .map(|(e, d)| (d.id.clone(), e.vector))
        .collect();
    if items.is_empty() {
        return Err(Error::CorpusTooSmall("no embeddable documents to index".into()));
    }
    AnnForest::build(items, &cfg.ann())
}

/// Trains the reranker on top of a trained embedder.
pub fn train_rank(store: &CorpusStore, eparams: &EmbedderParams, cfg: &Config) -> Result<(RankerParams, TrainStats)> {
    let vocab = build_vocabulary(store, &cfg.vocab())?;
    let init = RankerParams::new(vocab, &cfg.ranker(), cfg.ranker_init_seed())?;
    train_ranker(store, eparams, init, &cfg.sampler(), &cfg.ann(), &cfg.rank_train())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SelectOnly,
    #[default]
    Rerank,
    Bm25,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "select_only" | "select" => Ok(Mode::SelectOnly),
            "rerank" => Ok(Mode::Rerank),
            "bm25" => Ok(Mode::Bm25),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultOrigin {
    Neighbor,
    NeighborCitation,
    Bm25,
}

impl From<Origin> for ResultOrigin {
    fn from(o: Origin) -> Self {
        match o {
            Origin::Neighbor => ResultOrigin::Neighbor,
            Origin::NeighborCitation => ResultOrigin::NeighborCitation,
        }
    }
}

/// Everything a running service needs, loaded once and never mutated.
#[derive(Debug)]
pub struct Artifacts {
    pub config: Config,
    pub store: CorpusStore,
    pub embedder: EmbedderParams,
    pub forest: AnnForest,
    pub ranker: Option<RankerParams>,
    pub bm25: Bm25Index,
    pub model_version: String,
}

impl Artifacts {
    pub fn new(
        config: Config,
        store: CorpusStore,
        embedder: EmbedderParams,
        forest: AnnForest,
        ranker: Option<RankerParams>,
        bm25: Option<Bm25Index>,
    ) -> Self {
        let bm25 = bm25.unwrap_or_else(|| Bm25Index::build(&store, &config.bm25));
        let mut h = mix_seed(embedder.vocab().fingerprint(), forest.len() as u64);
        if let Some(r) = &ranker {
            h = mix_seed(h, r.vocab().text.fingerprint() ^ r.input_width() as u64);
        }
        Artifacts {
            model_version: format!("{}+{:012x}", env!("CARGO_PKG_VERSION"), h >> 16),
            config,
            store,
            embedder,
            forest,
            ranker,
            bm25,
        }
    }

    /// Loads a model directory: the corpus store, embedder checkpoint and
    /// forest are required; ranker and BM25 index are optional (the index
    /// is rebuilt when missing).
    pub fn load(dir: &Path, config: Config) -> Result<Self> {
        let store = CorpusStore::load(dir)?;
        let embedder = checkpoint::load_embedder(&dir.join(EMBEDDER_FILE))?;
        let forest = AnnForest::load(&dir.join(FOREST_FILE))?;
        if forest.dim() != embedder.dim() {
            return Err(Error::Format(format!(
                "forest dimension {} does not match embedder dimension {}",
                forest.dim(),
                embedder.dim()
            )));
        }
        let ranker_path = dir.join(RANKER_FILE);
        let ranker = if ranker_path.exists() {
            Some(checkpoint::load_ranker(&ranker_path)?)
        } else {
            None
        };
        let bm25_path = dir.join(BM25_FILE);
        let bm25 = if bm25_path.exists() {
            Some(Bm25Index::load(&bm25_path)?)
        } else {
            None
        };
        Ok(Self::new(config, store, embedder, forest, ranker, bm25))
    }

    /// Candidate set for an arbitrary document, with the configured
    /// neighbor count.
    pub fn candidates(&self, doc: &Document) -> Result<CandidateSet> {
        let e = self.embedder.doc_embedding(doc);
        if e.empty {
            return Err(Error::Unembeddable(doc.id.clone()));
        }
        select_with_embedding(
            &doc.id,
            &e.vector,
            &self.embedder,
            &self.forest,
            &self.store,
            self.config.select.number_ann_neighbors,
            None,
        )
    }

    /// Ranked `(id, score, origin)` triples for `doc`; `top_n` of `None`
    /// keeps every candidate.
    pub fn predict(&self, doc: &Document, mode: Mode, top_n: Option<usize>) -> Result<Vec<(String, f64, ResultOrigin)>> {
        let top = top_n.unwrap_or(usize::MAX);
        match mode {
            Mode::Bm25 => {
                let n = top_n.unwrap_or(self.bm25.len());
                Ok(self
                    .bm25
                    .rank(doc, n, self.config.bm25.key_terms)
                    .into_iter()
                    .map(|(id, s)| (id, s, ResultOrigin::Bm25))
                    .collect())
            }
            Mode::SelectOnly => {
                let set = self.candidates(doc)?;
                Ok(set
                    .candidates
                    .into_iter()
                    .take(top)
                    .map(|c| (c.id, c.score, c.origin.into()))
                    .collect())
            }
            Mode::Rerank => {
                let ranker = self
                    .ranker
                    .as_ref()
                    .ok_or_else(|| Error::Config("no ranker checkpoint loaded".into()))?;
                let set = self.candidates(doc)?;
                let origins: std::collections::HashMap<&str, Origin> =
                    set.candidates.iter().map(|c| (c.id.as_str(), c.origin)).collect();
                Ok(rerank(doc, &set, &self.store, ranker, &self.embedder, top)
                    .into_iter()
                    .map(|s| {
                        let o = origins[s.id.as_str()];
                        (s.id, s.score, o.into())
                    })
                    .collect())
            }
        }
    }

    /// Full ranked lists for every evaluation query of `split`.
    pub fn predictions(&self, split: Split, mode: Mode) -> Result<Predictions> {
        let queries = self.store.query_indices(split);
        let lists: Vec<Result<(String, Vec<String>)>> = queries
            .par_iter()
            .map(|&q| {
                let doc = self.store.doc(q);
                let ranked = match self.predict(doc, mode, None) {
                    Ok(r) => r.into_iter().map(|(id, _, _)| id).collect(),
                    // no usable text: nothing to recommend
                    Err(Error::Unembeddable(_)) => Vec::new(),
                    Err(e) => return Err(e),
                };
                Ok((doc.id.clone(), ranked))
            })
            .collect();
        lists.into_iter().collect()
    }

    pub fn evaluate(&self, split: Split, mode: Mode, k_values: &[usize]) -> Result<MetricsReport> {
        let preds = self.predictions(split, mode)?;
        Ok(evaluate_run(&preds, &self.store.gold(split), k_values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendRequest {
    #[serde(default)]
    pub title: String,
    #[serde(default, rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub authors: Option<Vec<String>>,
    #[serde(default)]
    pub venue: Option<String>,
    #[serde(default)]
    pub keyphrases: Option<Vec<String>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub mode: Mode,
}

fn default_k() -> usize {
    20
}

impl RecommendRequest {
    pub fn new(title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        RecommendRequest {
            title: title.into(),
            abstract_text: abstract_text.into(),
            authors: None,
            venue: None,
            keyphrases: None,
            k: default_k(),
            mode: Mode::default(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), ApiError> {
        if self.title.trim().is_empty() && self.abstract_text.trim().is_empty() {
            return Err(ApiError::bad_request("title or abstract must be nonempty"));
        }
        if !(1..=MAX_K).contains(&self.k) {
            return Err(ApiError::bad_request(format!("k must be between 1 and {MAX_K}, got {}", self.k)));
        }
        Ok(())
    }

    /// The request as an ephemeral, uncited document.
    pub fn to_document(&self, cfg: &Config) -> Document {
        let limits = cfg.limits();
        let mut d = Document::from_text(REQUEST_ID, &self.title, &self.abstract_text, &limits);
        if let Some(a) = &self.authors {
            d = d.with_authors(a, &limits);
        }
        if let Some(v) = &self.venue {
            d = d.with_venue(v);
        }
        if let Some(k) = &self.keyphrases {
            d = d.with_keyphrases(k, &limits);
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub id: String,
    pub title: String,
    pub year: Option<i32>,
    pub venue: String,
    pub score: f64,
    pub origin: ResultOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub results: Vec<ResultItem>,
    pub model_version: String,
    pub timing_ms: f64,
}

/// Error payload with an HTTP status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub error: String,
}

impl ApiError {
    pub fn bad_request(msg: impl Into<String>) -> Self {
        ApiError {
            status: 400,
            error: msg.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Unembeddable(_) => 422,
            Error::Config(_) | Error::DimensionMismatch { .. } => 400,
            _ => 500,
        };
        let error = match e {
            Error::Unembeddable(_) => "unembeddable query: no in-vocabulary tokens".to_string(),
            e => e.to_string(),
        };
        ApiError { status, error }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.error, self.status)
    }
}

/// Answers one request against loaded artifacts. Read-only: the request
/// document is never added to the corpus.
pub fn recommend(art: &Artifacts, req: &RecommendRequest) -> std::result::Result<RecommendResponse, ApiError> {
    let start = Instant::now();
    req.validate()?;
    let doc = req.to_document(&art.config);
    let ranked = art.predict(&doc, req.mode, Some(req.k))?;
    let results = ranked
        .into_iter()
        .filter_map(|(id, score, origin)| {
            let d = art.store.get(&id)?;
            Some(ResultItem {
                title: d.title.clone(),
                year: d.year,
                venue: d.venue.clone(),
                id,
                score,
                origin,
            })
        })
        .collect();
    Ok(RecommendResponse {
        results,
        model_version: art.model_version.clone(),
        timing_ms: start.elapsed().as_secs_f64() * 1000.0,
    })
}

/// Writes every artifact of a trained model into `dir`.
pub fn save_model(
    dir: &Path,
    store: &CorpusStore,
    embedder: &EmbedderParams,
    forest: &AnnForest,
    ranker: Option<&RankerParams>,
    bm25: Option<&Bm25Index>,
) -> Result<()> {
    store.save(dir)?;
    checkpoint::save_embedder(&dir.join(EMBEDDER_FILE), embedder)?;
    forest.save(&dir.join(FOREST_FILE))?;
    if let Some(r) = ranker {
        checkpoint::save_ranker(&dir.join(RANKER_FILE), r)?;
    }
    if let Some(b) = bm25 {
        b.save(&dir.join(BM25_FILE))?;
    }
    Ok(())
}
