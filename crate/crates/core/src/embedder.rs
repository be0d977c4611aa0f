//! Candidate-selection document embeddings.
//!
//! Each text field is a sum over its unique in-vocabulary word types of a
//! learned magnitude times a unit direction. Field vectors are normalized
//! and mixed with two learned weights into the document embedding, and the
//! model is trained with a margin loss on (query, cited, not cited)
//! triplets.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{AnnConfig, AnnForest};
use crate::corpus::{CorpusStore, Document, Split, TokenId, TokenVocab};
use crate::error::{Error, Result};
use crate::linalg::{self, cosine, cosine_grad, normalize_backward, normalized, sigmoid, NORM_EPS};
use crate::optim::{finite_difference_check, Adam, Block, BlockGrad, GradCheck, Grads, TrainConfig, Trainable};
use crate::sampler::{SamplerConfig, SamplerContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Abstract,
}

/// Word table in magnitude-direction form. Magnitudes are stored
/// unconstrained and used through their absolute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTable {
    dim: usize,
    dir: Vec<f64>,
    mag: Vec<f64>,
}

impl TokenTable {
    /// Directions uniform in (-0.05, 0.05), magnitudes 1.
    pub fn random<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Self {
        Self::uniform(rows, dim, 0.05, rng)
    }

    pub fn uniform<R: Rng>(rows: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        TokenTable {
            dim,
            dir: (0..rows * dim).map(|_| rng.random_range(-scale..scale)).collect(),
            mag: vec![1.0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.mag.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn direction(&self, t: TokenId) -> &[f64] {
        &self.dir[t.index() * self.dim..(t.index() + 1) * self.dim]
    }

    pub fn set_direction(&mut self, t: TokenId, v: &[f64]) {
        let d = self.dim;
        self.dir[t.index() * d..(t.index() + 1) * d].copy_from_slice(v);
    }

    pub fn magnitude(&self, t: TokenId) -> f64 {
        self.mag[t.index()].abs()
    }

    pub fn set_magnitude(&mut self, t: TokenId, m: f64) {
        self.mag[t.index()] = m;
    }

    /// `sum_t |mag_t| * dir_t / |dir_t|` over the given (unique) types.
    pub fn field_vector(&self, ids: &[TokenId]) -> Vec<f64> {
        let mut f = vec![0.0; self.dim];
        for &t in ids {
            let w = self.direction(t);
            let n = linalg::norm(w);
            if n <= NORM_EPS {
                continue;
            }
            linalg::axpy(self.magnitude(t) / n, w, &mut f);
        }
        f
    }

    /// Accumulates `dL/d(dir)` and `dL/d(mag)` given `dL/df`.
    pub fn backward(&self, ids: &[TokenId], grad_f: &[f64], dir: &mut BlockGrad, mag: &mut BlockGrad) {
        for &t in ids {
            let w = self.direction(t);
            let n = linalg::norm(w);
            if n <= NORM_EPS {
                continue;
            }
            let proj = linalg::dot(w, grad_f) / n;
            let raw = self.mag[t.index()];
            mag.add(t.index(), 0, linalg::sign(raw) * proj);
            let scale = raw.abs() / n;
            let row = dir.row_mut(t.index());
            for ((r, wi), gi) in row.iter_mut().zip(w).zip(grad_f) {
                *r += scale * (gi - wi / n * proj);
            }
        }
    }

    pub(crate) fn blocks(&mut self) -> [Block<'_>; 2] {
        let dim = self.dim;
        [
            Block {
                values: &mut self.dir,
                width: dim,
            },
            Block {
                values: &mut self.mag,
                width: 1,
            },
        ]
    }

    fn is_finite(&self) -> bool {
        self.dir.iter().chain(&self.mag).all(|v| v.is_finite())
    }
}

/// Sorted unique in-vocabulary ids of a document's title and abstract.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedText {
    pub title: Vec<TokenId>,
    pub abstract_ids: Vec<TokenId>,
}

impl EncodedText {
    pub fn field(&self, field: Field) -> &[TokenId] {
        match field {
            Field::Title => &self.title,
            Field::Abstract => &self.abstract_ids,
        }
    }

    /// Removes each word type independently with probability `p`.
    pub fn dropped<R: Rng>(&self, p: f64, rng: &mut R) -> EncodedText {
        if p <= 0.0 {
            return self.clone();
        }
        EncodedText {
            title: drop_types(&self.title, p, rng),
            abstract_ids: drop_types(&self.abstract_ids, p, rng),
        }
    }
}

pub(crate) fn drop_types<R: Rng>(ids: &[TokenId], p: f64, rng: &mut R) -> Vec<TokenId> {
    ids.iter().copied().filter(|_| rng.random::<f64>() >= p).collect()
}

/// A document embedding; `empty` marks documents with no usable text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub empty: bool,
}

struct DocForward {
    text: EncodedText,
    f_title: Vec<f64>,
    f_abstract: Vec<f64>,
    n_title: Option<Vec<f64>>,
    n_abstract: Option<Vec<f64>>,
    e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderParams {
    vocab: TokenVocab,
    table: TokenTable,
    /// `[title, abstract]` field weights.
    lambdas: [f64; 2],
}

impl EmbedderParams {
    /// Fresh parameters: directions uniform(-0.05, 0.05), magnitudes and
    /// field weights 1.
    pub fn new(vocab: TokenVocab, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = TokenTable::random(vocab.len(), dim, &mut rng);
        EmbedderParams {
            vocab,
            table,
            lambdas: [1.0, 1.0],
        }
    }

    pub fn from_parts(vocab: TokenVocab, table: TokenTable, lambda_title: f64, lambda_abstract: f64) -> Result<Self> {
        if table.rows() != vocab.len() {
            return Err(Error::Config(format!(
                "table has {} rows for a vocabulary of {}",
                table.rows(),
                vocab.len()
            )));
        }
        Ok(EmbedderParams {
            vocab,
            table,
            lambdas: [lambda_title, lambda_abstract],
        })
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn vocab(&self) -> &TokenVocab {
        &self.vocab
    }

    pub fn table(&self) -> &TokenTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut TokenTable {
        &mut self.table
    }

    pub fn lambda_title(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn lambda_abstract(&self) -> f64 {
        self.lambdas[1]
    }

    pub fn set_lambdas(&mut self, title: f64, abstract_weight: f64) {
        self.lambdas = [title, abstract_weight];
    }

    pub fn is_finite(&self) -> bool {
        self.table.is_finite() && self.lambdas.iter().all(|v| v.is_finite())
    }

    pub fn encode(&self, doc: &Document) -> EncodedText {
        EncodedText {
            title: self.vocab.encode(&doc.title_tokens),
            abstract_ids: self.vocab.encode(&doc.abstract_tokens),
        }
    }

    /// Field vector of `doc`, skipping out-of-vocabulary tokens and any type
    /// listed in `dropout_mask`.
    pub fn field_vector(&self, doc: &Document, field: Field, dropout_mask: Option<&HashSet<TokenId>>) -> Vec<f64> {
        let enc = self.encode(doc);
        let ids: Vec<TokenId> = enc
            .field(field)
            .iter()
            .copied()
            .filter(|t| dropout_mask.is_none_or(|m| !m.contains(t)))
            .collect();
        self.table.field_vector(&ids)
    }

    pub fn doc_embedding(&self, doc: &Document) -> Embedding {
        self.embed_encoded(&self.encode(doc))
    }

    pub fn embed_encoded(&self, text: &EncodedText) -> Embedding {
        let fwd = self.forward(text.clone());
        Embedding {
            empty: fwd.n_title.is_none() && fwd.n_abstract.is_none(),
            vector: fwd.e,
        }
    }

    /// Embeds every document of the store in parallel; results are in store
    /// order.
    pub fn embed_store(&self, store: &CorpusStore) -> Vec<Embedding> {
        store
            .documents()
            .par_iter()
            .map(|d| self.doc_embedding(d))
            .collect()
    }

    fn forward(&self, text: EncodedText) -> DocForward {
        let f_title = self.table.field_vector(&text.title);
        let f_abstract = self.table.field_vector(&text.abstract_ids);
        let n_title = normalized(&f_title);
        let n_abstract = normalized(&f_abstract);
        let mut e = vec![0.0; self.dim()];
        if let Some(n) = &n_title {
            linalg::axpy(self.lambdas[0], n, &mut e);
        }
        if let Some(n) = &n_abstract {
            linalg::axpy(self.lambdas[1], n, &mut e);
        }
        DocForward {
            text,
            f_title,
            f_abstract,
            n_title,
            n_abstract,
            e,
        }
    }

    fn backward(&self, fwd: &DocForward, grad_e: &[f64], grads: &mut Grads) {
        let fields = [
            (&fwd.text.title, &fwd.f_title, &fwd.n_title, 0usize),
            (&fwd.text.abstract_ids, &fwd.f_abstract, &fwd.n_abstract, 1usize),
        ];
        for (ids, f, n, slot) in fields {
            let Some(n) = n else { continue };
            grads.blocks[2].add(slot, 0, linalg::dot(grad_e, n));
            let grad_n: Vec<f64> = grad_e.iter().map(|g| g * self.lambdas[slot]).collect();
            let grad_f = normalize_backward(f, &grad_n);
            let (dir, rest) = grads.blocks.split_at_mut(1);
            self.table.backward(ids, &grad_f, &mut dir[0], &mut rest[0]);
        }
    }

    /// Loss of one triplet; when `grads` is given, adds `scale * dLoss`.
    pub(crate) fn triplet_objective(
        &self,
        query: EncodedText,
        positive: EncodedText,
        negative: EncodedText,
        margin: f64,
        boosts: (f64, f64),
        grads: Option<(&mut Grads, f64)>,
    ) -> f64 {
        let q = self.forward(query);
        let p = self.forward(positive);
        let n = self.forward(negative);
        let s_pos = cosine(&q.e, &p.e);
        let s_neg = cosine(&q.e, &n.e);
        let loss = hinge(margin, s_pos, s_neg, boosts.0, boosts.1);
        if let Some((grads, scale)) = grads {
            if loss > 0.0 {
                let gq: Vec<f64> = cosine_grad(&q.e, &n.e)
                    .iter()
                    .zip(cosine_grad(&q.e, &p.e))
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                let gp: Vec<f64> = cosine_grad(&p.e, &q.e).iter().map(|g| -scale * g).collect();
                let gn: Vec<f64> = cosine_grad(&n.e, &q.e).iter().map(|g| scale * g).collect();
                self.backward(&q, &gq, grads);
                self.backward(&p, &gp, grads);
                self.backward(&n, &gn, grads);
            }
        }
        loss
    }

    /// Replaces direction rows with vectors from a whitespace-separated text
    /// file (`token v1 .. vD` per line; an optional `count dim` header line
    /// is skipped). Returns the number of rows replaced.
    pub fn load_pretrained_directions(&mut self, path: &Path) -> Result<usize> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut loaded = 0;
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::MalformedLine {
                    line: n + 1,
                    message: format!("{e}"),
                })?;
            if n == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            if values.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    id: token.to_string(),
                    expected: self.dim(),
                    got: values.len(),
                });
            }
            if let Some(id) = self.vocab.id(token) {
                self.table.set_direction(id, &values);
                loaded += 1;
            }
        }
        Ok(loaded)
    }
}

impl Trainable for EmbedderParams {
    fn blocks(&mut self) -> Vec<Block<'_>> {
        let [dir, mag] = self.table.blocks();
        vec![
            dir,
            mag,
            Block {
                values: &mut self.lambdas,
                width: 1,
            },
        ]
    }
}

/// Kind of a training negative; each carries its own base margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeType {
    Random,
    NearestNeighbor,
    CitationOfCitation,
}

impl NegativeType {
    pub const ALL: [NegativeType; 3] = [
        NegativeType::Random,
        NegativeType::NearestNeighbor,
        NegativeType::CitationOfCitation,
    ];

    /// Base margin before the margin multiplier.
    pub fn alpha(self) -> f64 {
        match self {
            NegativeType::Random => 0.3,
            NegativeType::NearestNeighbor => 0.2,
            NegativeType::CitationOfCitation => 0.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NegativeType::Random => "random",
            NegativeType::NearestNeighbor => "nearest_neighbor",
            NegativeType::CitationOfCitation => "citation_of_citation",
        }
    }
}

impl fmt::Display for NegativeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NegativeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NegativeType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownNegativeType(s.to_string()))
    }
}

/// Small score bonus for frequently cited documents:
/// `sigmoid(in_citations / 100) / 50`.
pub fn boost(in_citations: u32) -> f64 {
    sigmoid(f64::from(in_citations) / 100.0) / 50.0
}

fn hinge(margin: f64, s_pos: f64, s_neg: f64, b_pos: f64, b_neg: f64) -> f64 {
    (margin + s_neg + b_neg - s_pos - b_pos).max(0.0)
}

/// `max(gamma * alpha(type) + s_neg + b_neg - s_pos - b_pos, 0)`.
pub fn triplet_loss(s_pos: f64, s_neg: f64, neg_type: NegativeType, b_pos: f64, b_neg: f64, gamma: f64) -> f64 {
    hinge(gamma * neg_type.alpha(), s_pos, s_neg, b_pos, b_neg)
}

/// A training triplet; fields are indices into the [`CorpusStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub query: usize,
    pub positive: usize,
    pub negative: usize,
    pub negative_type: NegativeType,
}

impl Triplet {
    pub fn docs<'a>(&self, store: &'a CorpusStore) -> TripletDocs<'a> {
        TripletDocs {
            query: store.doc(self.query),
            positive: store.doc(self.positive),
            negative: store.doc(self.negative),
            negative_type: self.negative_type,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TripletDocs<'a> {
    pub query: &'a Document,
    pub positive: &'a Document,
    pub negative: &'a Document,
    pub negative_type: NegativeType,
}

impl TripletDocs<'_> {
    pub(crate) fn boosts(&self) -> (f64, f64) {
        (boost(self.positive.in_citation_count), boost(self.negative.in_citation_count))
    }
}

/// Loss of `triplet` under `params` with margin multiplier `gamma`, no
/// dropout.
pub fn embedder_triplet_loss(params: &EmbedderParams, triplet: &TripletDocs<'_>, gamma: f64) -> f64 {
    params.triplet_objective(
        params.encode(triplet.query),
        params.encode(triplet.positive),
        params.encode(triplet.negative),
        gamma * triplet.negative_type.alpha(),
        triplet.boosts(),
        None,
    )
}

/// Analytic gradient of the triplet loss with respect to every parameter.
pub fn embedder_gradient(params: &EmbedderParams, triplet: &TripletDocs<'_>, gamma: f64) -> (f64, Grads) {
    let mut grads = Grads::zeros(&params.clone().block_widths());
    let loss = params.triplet_objective(
        params.encode(triplet.query),
        params.encode(triplet.positive),
        params.encode(triplet.negative),
        gamma * triplet.negative_type.alpha(),
        triplet.boosts(),
        Some((&mut grads, 1.0)),
    );
    (loss, grads)
}

/// Maximum relative error between the analytic gradient and central
/// differences with step `eps`, over every parameter.
pub fn gradient_check(params: &EmbedderParams, triplet: &TripletDocs<'_>, gamma: f64, eps: f64) -> GradCheck {
    let (_, grads) = embedder_gradient(params, triplet, gamma);
    finite_difference_check(params, &grads, |p| embedder_triplet_loss(p, triplet, gamma), eps)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean triplet loss (without penalties) of each epoch.
    pub epoch_loss: Vec<f64>,
    pub epoch_triplets: Vec<usize>,
}

/// Training queries: train documents with enough citations.
pub(crate) fn training_queries(store: &CorpusStore, min_citations: usize) -> Vec<usize> {
    store
        .indices_in(Split::Train)
        .into_iter()
        .filter(|&i| store.citation_indices(i).count() >= min_citations.max(1))
        .collect()
}

/// For each query, its `k` nearest indexed neighbors (excluding itself), as
/// store indices.
pub(crate) fn neighbor_map(
    queries: &[usize],
    vectors: &[Embedding],
    forest: &AnnForest,
    pool: &[usize],
    k: usize,
    budget: Option<usize>,
) -> Vec<Vec<usize>> {
    queries
        .par_iter()
        .map(|&q| {
            if vectors[q].empty || k == 0 {
                return Vec::new();
            }
            forest
                .query_items(&vectors[q].vector, k + 1, budget)
                .into_iter()
                .map(|(item, _)| pool[item as usize])
                .filter(|&d| d != q)
                .take(k)
                .collect()
        })
        .collect()
}

/// Builds the forest over the non-empty embeddings of `pool`; returns the
/// forest and the pool restricted to indexed documents (item order).
pub(crate) fn index_pool(
    store: &CorpusStore,
    vectors: &[Embedding],
    pool: &[usize],
    ann: &AnnConfig,
) -> Result<(AnnForest, Vec<usize>)> {
    let indexed: Vec<usize> = pool.iter().copied().filter(|&i| !vectors[i].empty).collect();
    if indexed.is_empty() {
        return Err(Error::CorpusTooSmall("no embeddable documents to index".into()));
    }
    let items: Vec<(String, Vec<f64>)> = indexed
        .iter()
        .map(|&i| (store.doc(i).id.clone(), vectors[i].vector.clone()))
        .collect();
    Ok((AnnForest::build(items, ann)?, indexed))
}

/// Trains the embedder starting from `init`.
///
/// Before every epoch the current embeddings of the train split are indexed
/// and each training query's nearest neighbors are refreshed; triplets are
/// then drawn and optimized in minibatches.
pub fn train_embedder(
    store: &CorpusStore,
    init: EmbedderParams,
    sampler: &SamplerConfig,
    ann: &AnnConfig,
    cfg: &TrainConfig,
) -> Result<(EmbedderParams, TrainStats)> {
    cfg.validate()?;
    sampler.validate()?;
    let mut params = init;
    let pool_all = store.indices_in(Split::Train);
    if pool_all.len() < 2 {
        return Err(Error::CorpusTooSmall(format!("{} training documents", pool_all.len())));
    }
    let queries = training_queries(store, sampler.min_true_citations);
    if queries.is_empty() {
        return Err(Error::CorpusTooSmall("no training queries with enough citations".into()));
    }
    let encoded: Vec<EncodedText> = store.documents().iter().map(|d| params.encode(d)).collect();
    let mut ctx = SamplerContext::new(store, sampler, &pool_all);
    let mut opt = Adam::new(&mut params, cfg);
    let widths = params.block_widths();
    let mut stats = TrainStats::default();

    for epoch in 0..cfg.epochs {
        let vectors: Vec<Embedding> = encoded.par_iter().map(|t| params.embed_encoded(t)).collect();
        let epoch_ann = AnnConfig {
            seed: linalg::mix_seed(ann.seed, epoch as u64),
            ..*ann
        };
        let (forest, indexed) = index_pool(store, &vectors, &pool_all, &epoch_ann)?;
        let neighbors = neighbor_map(&queries, &vectors, &forest, &indexed, sampler.ann_neighbors, None);
        ctx.set_pool(&indexed);

        let mut triplets = ctx.epoch_triplets(&queries, &neighbors, epoch as u64, cfg.triplets_per_epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(linalg::mix_seed(cfg.rng_seed, 0x5eed_0000 + epoch as u64));
        triplets.shuffle(&mut rng);

        let mut total = 0.0;
        for (batch_no, batch) in triplets.chunks(cfg.batch_size).enumerate() {
            let mut grads = Grads::zeros(&widths);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for t in batch {
                let docs = t.docs(store);
                let loss = params.triplet_objective(
                    encoded[t.query].dropped(cfg.word_dropout, &mut rng),
                    encoded[t.positive].dropped(cfg.word_dropout, &mut rng),
                    encoded[t.negative].dropped(cfg.word_dropout, &mut rng),
                    cfg.gamma * t.negative_type.alpha(),
                    docs.boosts(),
                    Some((&mut grads, scale)),
                );
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    epoch,
                    batch: batch_no,
                });
            }
            if !grads.all_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    epoch,
                    batch: batch_no,
                });
            }
            opt.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    what: "parameter",
                    epoch,
                    batch: batch_no,
                });
            }
            total += batch_loss;
        }
        let mean = if triplets.is_empty() { 0.0 } else { total / triplets.len() as f64 };
        tracing::info!(epoch, triplets = triplets.len(), loss = mean, "embedder epoch");
        stats.epoch_loss.push(mean);
        stats.epoch_triplets.push(triplets.len());
    }
    Ok((params, stats))
}
