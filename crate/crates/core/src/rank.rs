//! Second-stage reranker: per-field cosine features, learned intersection
//! weights and citation counts fed to a three-layer feedforward scorer.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ann::{rank_order, AnnConfig};
use crate::corpus::{CorpusStore, Document, Split, TokenId, Vocabulary};
use crate::embedder::{
    boost, drop_types, index_pool, neighbor_map, training_queries, EmbedderParams, Embedding, TokenTable, TrainStats,
    TripletDocs,
};
use crate::error::{Error, Result};
use crate::linalg::{self, cosine, cosine_grad, elu, elu_grad, mix_seed, sigmoid};
use crate::optim::{finite_difference_check, Adam, Block, GradCheck, Grads, TrainConfig, Trainable};
use crate::sampler::{SamplerConfig, SamplerContext};
use crate::select::CandidateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerConfig {
    pub dense_dimension: usize,
    pub metadata_dimension: usize,
    /// Hidden width; `None` uses the dense dimension.
    pub hidden: Option<usize>,
    pub siamese: bool,
    pub use_metadata: bool,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            dense_dimension: 75,
            metadata_dimension: 25,
            hidden: None,
            siamese: true,
            use_metadata: true,
        }
    }
}

/// Named inputs of the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub g_title: f64,
    pub g_abstract: f64,
    pub g_authors: f64,
    pub g_venue: f64,
    pub g_keyphrases: f64,
    pub embed_cos: f64,
    pub sum_intersect_title: f64,
    pub sum_intersect_abstract: f64,
    pub log_in_citations: f64,
}

impl FeatureVector {
    /// Scorer input; metadata entries are dropped when `use_metadata` is off.
    pub fn to_input(&self, use_metadata: bool) -> Vec<f64> {
        let mut h = vec![self.g_title, self.g_abstract];
        if use_metadata {
            h.extend([self.g_authors, self.g_venue, self.g_keyphrases]);
        }
        h.extend([
            self.embed_cos,
            self.sum_intersect_title,
            self.sum_intersect_abstract,
            self.log_in_citations,
        ]);
        h
    }
}

pub fn feature_width(use_metadata: bool) -> usize {
    if use_metadata {
        9
    } else {
        6
    }
}

/// A document mapped to sorted unique ids of every vocabulary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankInput {
    pub title: Vec<TokenId>,
    pub abstract_ids: Vec<TokenId>,
    /// Authors, venue and keyphrases.
    pub meta: [Vec<TokenId>; 3],
    pub in_citations: u32,
}

impl RankInput {
    fn dropped<R: Rng>(&self, p: f64, rng: &mut R) -> RankInput {
        if p <= 0.0 {
            return self.clone();
        }
        RankInput {
            title: drop_types(&self.title, p, rng),
            abstract_ids: drop_types(&self.abstract_ids, p, rng),
            meta: self.meta.clone(),
            in_citations: self.in_citations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Side {
    text: TokenTable,
    /// Authors, venue and keyphrases tables when metadata is used.
    meta: Option<[TokenTable; 3]>,
}

impl Side {
    fn new<R: Rng>(vocab: &Vocabulary, cfg: &RankerConfig, rng: &mut R) -> Self {
        let meta = cfg.use_metadata.then(|| {
            [
                TokenTable::random(vocab.authors.len(), cfg.metadata_dimension, rng),
                TokenTable::random(vocab.venues.len(), cfg.metadata_dimension, rng),
                TokenTable::random(vocab.keyphrases.len(), cfg.metadata_dimension, rng),
            ]
        });
        Side {
            text: TokenTable::random(vocab.text.len(), cfg.dense_dimension, rng),
            meta,
        }
    }

    fn blocks(&mut self) -> Vec<Block<'_>> {
        let mut out: Vec<Block<'_>> = self.text.blocks().into_iter().collect();
        if let Some(meta) = &mut self.meta {
            for t in meta.iter_mut() {
                out.extend(t.blocks());
            }
        }
        out
    }

    fn n_blocks(&self) -> usize {
        if self.meta.is_some() {
            8
        } else {
            2
        }
    }

    fn table(&self, slot: usize) -> &TokenTable {
        match (slot, &self.meta) {
            (0, _) => &self.text,
            (s, Some(m)) => &m[s - 1],
            _ => unreachable!("metadata table requested without metadata"),
        }
    }

    fn is_finite(&self) -> bool {
        let ok = |t: &TokenTable| (0..t.rows()).all(|r| {
            let id = TokenId(r as u32);
            t.magnitude(id).is_finite() && t.direction(id).iter().all(|v| v.is_finite())
        });
        ok(&self.text) && self.meta.as_ref().is_none_or(|m| m.iter().all(ok))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerParams {
    vocab: Vocabulary,
    config: RankerConfig,
    query_side: Side,
    /// Candidate tables; absent when the two sides share weights.
    cand_side: Option<Side>,
    w_cap: Vec<f64>,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: [f64; 1],
}

fn xavier<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect()
}

struct Forward {
    h: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    p: f64,
}

/// Field vectors of both sides for one field slot.
struct FieldPair {
    vq: Vec<f64>,
    vc: Vec<f64>,
}

impl RankerParams {
    pub fn new(vocab: Vocabulary, cfg: &RankerConfig, seed: u64) -> Result<Self> {
        if cfg.dense_dimension == 0 || (cfg.use_metadata && cfg.metadata_dimension == 0) || cfg.hidden == Some(0) {
            return Err(Error::Config("ranker dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query_side = Side::new(&vocab, cfg, &mut rng);
        let cand_side = (!cfg.siamese).then(|| Side::new(&vocab, cfg, &mut rng));
        let f = feature_width(cfg.use_metadata);
        let hidden = cfg.hidden.unwrap_or(cfg.dense_dimension);
        Ok(RankerParams {
            w_cap: (0..vocab.text.len()).map(|_| rng.random_range(-0.05..0.05)).collect(),
            w1: xavier(f, hidden, &mut rng),
            b1: vec![0.0; hidden],
            w2: xavier(hidden, hidden, &mut rng),
            b2: vec![0.0; hidden],
            w3: xavier(hidden, 1, &mut rng),
            b3: [0.0],
            hidden,
            vocab,
            config: *cfg,
            query_side,
            cand_side,
        })
    }

    pub fn config(&self) -> &RankerConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn use_metadata(&self) -> bool {
        self.config.use_metadata
    }

    pub fn siamese(&self) -> bool {
        self.config.siamese
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_width(&self) -> usize {
        feature_width(self.config.use_metadata)
    }

    /// Sets every feedforward weight and bias to `v`.
    pub fn fill_feedforward(&mut self, v: f64) {
        for x in self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2).chain(&mut self.b2).chain(&mut self.w3) {
            *x = v;
        }
        self.b3 = [v];
    }

    pub fn is_finite(&self) -> bool {
        self.query_side.is_finite()
            && self.cand_side.as_ref().is_none_or(Side::is_finite)
            && self
                .w_cap
                .iter()
                .chain(&self.w1)
                .chain(&self.b1)
                .chain(&self.w2)
                .chain(&self.b2)
                .chain(&self.w3)
                .chain(&self.b3)
                .all(|v| v.is_finite())
    }

    fn cand(&self) -> &Side {
        self.cand_side.as_ref().unwrap_or(&self.query_side)
    }

    pub fn encode(&self, doc: &Document) -> RankInput {
        let venue: &[String] = if doc.venue.is_empty() {
            &[]
        } else {
            std::slice::from_ref(&doc.venue)
        };
        RankInput {
            title: self.vocab.text.encode(&doc.title_tokens),
            abstract_ids: self.vocab.text.encode(&doc.abstract_tokens),
            meta: [
                self.vocab.authors.encode(&doc.authors),
                self.vocab.venues.encode(venue),
                self.vocab.keyphrases.encode(&doc.keyphrases),
            ],
            in_citations: doc.in_citation_count,
        }
    }

    fn slot_ids<'a>(input: &'a RankInput, slot: usize) -> &'a [TokenId] {
        match slot {
            0 => &input.title,
            1 => &input.abstract_ids,
            s => &input.meta[s - 2],
        }
    }

    /// Table index inside a side for field slot (title/abstract share text).
    fn table_slot(slot: usize) -> usize {
        slot.saturating_sub(1)
    }

    fn n_slots(&self) -> usize {
        if self.config.use_metadata {
            5
        } else {
            2
        }
    }

    fn field_pairs(&self, q: &RankInput, c: &RankInput) -> Vec<FieldPair> {
        (0..self.n_slots())
            .map(|slot| {
                let ts = Self::table_slot(slot);
                FieldPair {
                    vq: self.query_side.table(ts).field_vector(Self::slot_ids(q, slot)),
                    vc: self.cand().table(ts).field_vector(Self::slot_ids(c, slot)),
                }
            })
            .collect()
    }

    fn intersect(a: &[TokenId], b: &[TokenId]) -> Vec<TokenId> {
        let (mut i, mut j, mut out) = (0, 0, Vec::new());
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }

    fn features_from(&self, q: &RankInput, c: &RankInput, embed_cos: f64, pairs: &[FieldPair]) -> FeatureVector {
        let g: Vec<f64> = pairs.iter().map(|p| cosine(&p.vq, &p.vc)).collect();
        let sum = |a: &[TokenId], b: &[TokenId]| Self::intersect(a, b).iter().map(|t| self.w_cap[t.index()]).sum();
        let meta = |i: usize| g.get(i).copied().unwrap_or(0.0);
        FeatureVector {
            g_title: g[0],
            g_abstract: g[1],
            g_authors: meta(2),
            g_venue: meta(3),
            g_keyphrases: meta(4),
            embed_cos,
            sum_intersect_title: sum(&q.title, &c.title),
            sum_intersect_abstract: sum(&q.abstract_ids, &c.abstract_ids),
            log_in_citations: f64::from(c.in_citations).ln_1p(),
        }
    }

    /// Features of an encoded pair, with the embedding cosine supplied.
    pub fn features_encoded(&self, q: &RankInput, c: &RankInput, embed_cos: f64) -> FeatureVector {
        self.features_from(q, c, embed_cos, &self.field_pairs(q, c))
    }

    fn forward_input(&self, h: Vec<f64>) -> Forward {
        let hn = self.hidden;
        let f = h.len();
        let z1: Vec<f64> = (0..hn)
            .map(|i| linalg::dot(&self.w1[i * f..(i + 1) * f], &h) + self.b1[i])
            .collect();
        let a1: Vec<f64> = z1.iter().map(|&z| elu(z)).collect();
        let z2: Vec<f64> = (0..hn)
            .map(|i| linalg::dot(&self.w2[i * hn..(i + 1) * hn], &a1) + self.b2[i])
            .collect();
        let a2: Vec<f64> = z2.iter().map(|&z| elu(z)).collect();
        let p = sigmoid(linalg::dot(&self.w3, &a2) + self.b3[0]);
        Forward { h, z1, a1, z2, a2, p }
    }

    /// Probability for a raw scorer input.
    pub fn score_input(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.input_width() {
            return Err(Error::Config(format!(
                "feature width {} does not match scorer input {}",
                h.len(),
                self.input_width()
            )));
        }
        Ok(self.forward_input(h.to_vec()).p)
    }

    /// Adds `dp * dp/dtheta` for one scored pair.
    fn backward(&self, q: &RankInput, c: &RankInput, pairs: &[FieldPair], fwd: &Forward, dp: f64, grads: &mut Grads) {
        let hn = self.hidden;
        let f = fwd.h.len();
        let layout = self.layout();
        let dz3 = dp * fwd.p * (1.0 - fwd.p);
        let mut da2 = vec![0.0; hn];
        for i in 0..hn {
            grads.blocks[layout.w3].add(i, 0, dz3 * fwd.a2[i]);
            da2[i] = dz3 * self.w3[i];
        }
        grads.blocks[layout.w3 + 1].add(0, 0, dz3);
        let dz2: Vec<f64> = da2.iter().zip(&fwd.z2).map(|(d, &z)| d * elu_grad(z)).collect();
        let mut da1 = vec![0.0; hn];
        for i in 0..hn {
            if dz2[i] == 0.0 {
                continue;
            }
            let row = grads.blocks[layout.w2].row_mut(i);
            for j in 0..hn {
                row[j] += dz2[i] * fwd.a1[j];
                da1[j] += dz2[i] * self.w2[i * hn + j];
            }
            grads.blocks[layout.w2 + 1].add(i, 0, dz2[i]);
        }
        let dz1: Vec<f64> = da1.iter().zip(&fwd.z1).map(|(d, &z)| d * elu_grad(z)).collect();
        let mut dh = vec![0.0; f];
        for i in 0..hn {
            if dz1[i] == 0.0 {
                continue;
            }
            let row = grads.blocks[layout.w1].row_mut(i);
            for j in 0..f {
                row[j] += dz1[i] * fwd.h[j];
                dh[j] += dz1[i] * self.w1[i * f + j];
            }
            grads.blocks[layout.w1 + 1].add(i, 0, dz1[i]);
        }

        // input order: fields, embed_cos, intersections, log count
        let n_slots = pairs.len();
        for (slot, pair) in pairs.iter().enumerate() {
            let g = dh[slot];
            if g == 0.0 {
                continue;
            }
            let ts = Self::table_slot(slot);
            let gq: Vec<f64> = cosine_grad(&pair.vq, &pair.vc).iter().map(|x| g * x).collect();
            let gc: Vec<f64> = cosine_grad(&pair.vc, &pair.vq).iter().map(|x| g * x).collect();
            let (qb, cb) = (layout.query + 2 * ts, layout.cand + 2 * ts);
            let (dir, mag) = split_pair(&mut grads.blocks, qb);
            self.query_side.table(ts).backward(Self::slot_ids(q, slot), &gq, dir, mag);
            let (dir, mag) = split_pair(&mut grads.blocks, cb);
            self.cand().table(ts).backward(Self::slot_ids(c, slot), &gc, dir, mag);
        }
        for (k, (a, b)) in [(&q.title, &c.title), (&q.abstract_ids, &c.abstract_ids)].into_iter().enumerate() {
            let g = dh[n_slots + 1 + k];
            for t in Self::intersect(a, b) {
                grads.blocks[layout.w_cap].add(t.index(), 0, g);
            }
        }
    }

    fn layout(&self) -> Layout {
        let side = self.query_side.n_blocks();
        let cand = if self.cand_side.is_some() { side } else { 0 };
        let w_cap = side + cand;
        Layout {
            query: 0,
            cand,
            w_cap,
            w1: w_cap + 1,
            w2: w_cap + 3,
            w3: w_cap + 5,
        }
    }

    /// Loss of one triplet given encoded documents and embedding cosines
    /// `(query-positive, query-negative)`; adds `scale * dLoss` to `grads`.
    #[allow(clippy::too_many_arguments)]
    fn triplet_objective(
        &self,
        q: &RankInput,
        pos: &RankInput,
        neg: &RankInput,
        embed_cos: (f64, f64),
        margin: f64,
        grads: Option<(&mut Grads, f64)>,
    ) -> f64 {
        let pp = self.field_pairs(q, pos);
        let pn = self.field_pairs(q, neg);
        let use_meta = self.config.use_metadata;
        let fp = self.forward_input(self.features_from(q, pos, embed_cos.0, &pp).to_input(use_meta));
        let fneg = self.forward_input(self.features_from(q, neg, embed_cos.1, &pn).to_input(use_meta));
        let b_pos = boost(pos.in_citations);
        let b_neg = boost(neg.in_citations);
        let loss = (margin + fneg.p + b_neg - fp.p - b_pos).max(0.0);
        if let Some((grads, scale)) = grads {
            if loss > 0.0 {
                self.backward(q, pos, &pp, &fp, -scale, grads);
                self.backward(q, neg, &pn, &fneg, scale, grads);
            }
        }
        loss
    }
}

struct Layout {
    query: usize,
    cand: usize,
    w_cap: usize,
    w1: usize,
    w2: usize,
    w3: usize,
}

fn split_pair(blocks: &mut [crate::optim::BlockGrad], at: usize) -> (&mut crate::optim::BlockGrad, &mut crate::optim::BlockGrad) {
    let (a, b) = blocks[at..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

impl Trainable for RankerParams {
    fn blocks(&mut self) -> Vec<Block<'_>> {
        let f = feature_width(self.config.use_metadata);
        let hn = self.hidden;
        let mut out = self.query_side.blocks();
        if let Some(c) = &mut self.cand_side {
            out.extend(c.blocks());
        }
        out.push(Block {
            values: &mut self.w_cap,
            width: 1,
        });
        out.push(Block {
            values: &mut self.w1,
            width: f,
        });
        out.push(Block {
            values: &mut self.b1,
            width: 1,
        });
        out.push(Block {
            values: &mut self.w2,
            width: hn,
        });
        out.push(Block {
            values: &mut self.b2,
            width: 1,
        });
        out.push(Block {
            values: &mut self.w3,
            width: 1,
        });
        out.push(Block {
            values: &mut self.b3,
            width: 1,
        });
        out
    }
}

/// Features of a (query, candidate) pair; the embedding cosine comes from
/// the frozen selection embedder.
pub fn rank_features(query: &Document, cand: &Document, rparams: &RankerParams, eparams: &EmbedderParams) -> FeatureVector {
    let ec = cosine(&eparams.doc_embedding(query).vector, &eparams.doc_embedding(cand).vector);
    rparams.features_encoded(&rparams.encode(query), &rparams.encode(cand), ec)
}

/// Probability that the query cites the candidate described by `features`.
pub fn rank_score(features: &FeatureVector, rparams: &RankerParams) -> f64 {
    rparams.forward_input(features.to_input(rparams.use_metadata())).p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
}

/// Scores every candidate and keeps the best `top_n`, probability
/// descending, ties by id. Candidates absent from the store are skipped.
pub fn rerank(
    query: &Document,
    candidates: &CandidateSet,
    store: &CorpusStore,
    rparams: &RankerParams,
    eparams: &EmbedderParams,
    top_n: usize,
) -> Vec<Scored> {
    let q = rparams.encode(query);
    let eq = eparams.doc_embedding(query).vector;
    let mut out: Vec<Scored> = candidates
        .candidates
        .iter()
        .filter_map(|c| {
            let doc = store.get(&c.id)?;
            let ec = cosine(&eq, &eparams.doc_embedding(doc).vector);
            let f = rparams.features_encoded(&q, &rparams.encode(doc), ec);
            Some(Scored {
                id: c.id.clone(),
                score: rank_score(&f, rparams),
            })
        })
        .collect();
    out.sort_by(|a, b| rank_order(a.score, &a.id, b.score, &b.id));
    out.truncate(top_n);
    out
}

/// Triplet loss with the reranker as scorer.
pub fn ranker_triplet_loss(rparams: &RankerParams, eparams: &EmbedderParams, t: &TripletDocs<'_>, gamma: f64) -> f64 {
    let (q, p, n, ec) = triplet_inputs(rparams, eparams, t);
    rparams.triplet_objective(&q, &p, &n, ec, gamma * t.negative_type.alpha(), None)
}

fn triplet_inputs(
    rparams: &RankerParams,
    eparams: &EmbedderParams,
    t: &TripletDocs<'_>,
) -> (RankInput, RankInput, RankInput, (f64, f64)) {
    let eq = eparams.doc_embedding(t.query).vector;
    let ec = (
        cosine(&eq, &eparams.doc_embedding(t.positive).vector),
        cosine(&eq, &eparams.doc_embedding(t.negative).vector),
    );
    (rparams.encode(t.query), rparams.encode(t.positive), rparams.encode(t.negative), ec)
}

pub fn ranker_gradient(rparams: &RankerParams, eparams: &EmbedderParams, t: &TripletDocs<'_>, gamma: f64) -> (f64, Grads) {
    let mut grads = Grads::zeros(&rparams.clone().block_widths());
    let (q, p, n, ec) = triplet_inputs(rparams, eparams, t);
    let loss = rparams.triplet_objective(&q, &p, &n, ec, gamma * t.negative_type.alpha(), Some((&mut grads, 1.0)));
    (loss, grads)
}

/// Central-difference check of the full composite gradient.
pub fn ranker_gradient_check(
    rparams: &RankerParams,
    eparams: &EmbedderParams,
    t: &TripletDocs<'_>,
    gamma: f64,
    eps: f64,
) -> GradCheck {
    let (_, grads) = ranker_gradient(rparams, eparams, t, gamma);
    finite_difference_check(rparams, &grads, |p| ranker_triplet_loss(p, eparams, t, gamma), eps)
}

/// Trains the reranker from `init`. Hard negatives come from nearest
/// neighbors under the frozen selection embedder, computed once.
pub fn train_ranker(
    store: &CorpusStore,
    eparams: &EmbedderParams,
    init: RankerParams,
    sampler: &SamplerConfig,
    ann: &AnnConfig,
    cfg: &TrainConfig,
) -> Result<(RankerParams, TrainStats)> {
    cfg.validate()?;
    sampler.validate()?;
    let mut params = init;
    let pool = store.indices_in(Split::Train);
    if pool.len() < 2 {
        return Err(Error::CorpusTooSmall(format!("{} training documents", pool.len())));
    }
    let queries = training_queries(store, sampler.min_true_citations);
    if queries.is_empty() {
        return Err(Error::CorpusTooSmall("no training queries with enough citations".into()));
    }
    let vectors: Vec<Embedding> = eparams.embed_store(store);
    let (forest, indexed) = index_pool(store, &vectors, &pool, ann)?;
    let neighbors = neighbor_map(&queries, &vectors, &forest, &indexed, sampler.ann_neighbors, None);
    let inputs: Vec<RankInput> = store.documents().iter().map(|d| params.encode(d)).collect();
    let mut ctx = SamplerContext::new(store, sampler, &pool);
    ctx.set_pool(&indexed);
    let mut opt = Adam::new(&mut params, cfg);
    let widths = params.block_widths();
    let mut stats = TrainStats::default();
    let mut cos_cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ecos = |a: usize, b: usize| *cos_cache.entry((a, b)).or_insert_with(|| cosine(&vectors[a].vector, &vectors[b].vector));

    for epoch in 0..cfg.epochs {
        let mut triplets = ctx.epoch_triplets(&queries, &neighbors, epoch as u64, cfg.triplets_per_epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.rng_seed, 0x7261_6e6b + epoch as u64));
        triplets.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_no, batch) in triplets.chunks(cfg.batch_size).enumerate() {
            let mut grads = Grads::zeros(&widths);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for t in batch {
                let ec = (ecos(t.query, t.positive), ecos(t.query, t.negative));
                batch_loss += params.triplet_objective(
                    &inputs[t.query].dropped(cfg.word_dropout, &mut rng),
                    &inputs[t.positive].dropped(cfg.word_dropout, &mut rng),
                    &inputs[t.negative].dropped(cfg.word_dropout, &mut rng),
                    ec,
                    cfg.gamma * t.negative_type.alpha(),
                    Some((&mut grads, scale)),
                );
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
        tracing::info!(epoch, triplets = triplets.len(), loss = mean, "ranker epoch");
        stats.epoch_loss.push(mean);
        stats.epoch_triplets.push(triplets.len());
    }
    Ok((params, stats))
}
