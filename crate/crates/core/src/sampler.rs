//! Training triplet generation: random, hard nearest-neighbor and
//! citation-of-citation negatives.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Document};
use crate::embedder::{NegativeType, Triplet};
use crate::error::{Error, Result};
use crate::linalg::{mix_seed, str_key};

const REJECTION_TRIES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub triplets_per_query: usize,
    /// Share of random, nearest-neighbor and citation-of-citation negatives.
    pub mix: [f64; 3],
    pub max_true_citations: usize,
    pub min_true_citations: usize,
    pub jaccard_percentile: f64,
    /// Neighbors fetched per query when mining hard negatives.
    pub ann_neighbors: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            triplets_per_query: 6,
            mix: [3.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0],
            max_true_citations: 100,
            min_true_citations: 2,
            jaccard_percentile: 5.0,
            ann_neighbors: 10,
            rng_seed: 42,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.triplets_per_query == 0 {
            return Err(Error::Config("triplets_per_query must be at least 1".into()));
        }
        if self.mix.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config(format!("negative mix ratios must be >= 0, got {:?}", self.mix)));
        }
        let sum: f64 = self.mix.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("negative mix ratios must sum to 1, got {sum}")));
        }
        if !(0.0..=100.0).contains(&self.jaccard_percentile) {
            return Err(Error::Config(format!(
                "jaccard_percentile must be in [0, 100], got {}",
                self.jaccard_percentile
            )));
        }
        if self.max_true_citations == 0 {
            return Err(Error::Config("max_true_citations must be positive".into()));
        }
        Ok(())
    }

    /// Per-type slot counts for one query, by largest remainder.
    pub fn slots(&self) -> [usize; 3] {
        allocate(self.triplets_per_query, &self.mix)
    }
}

/// Splits `n` slots across `ratios` with the largest-remainder rule; ties go
/// to the earlier entry.
pub fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n.saturating_sub(out.iter().sum());
    for i in order.iter().cycle().take(3 * n.max(1)) {
        if left == 0 {
            break;
        }
        out[*i] += 1;
        left -= 1;
    }
    out
}

/// Jaccard similarity of the unique title and abstract tokens; 0 when both
/// documents are empty.
pub fn jaccard_similarity(a: &Document, b: &Document) -> f64 {
    let sa: HashSet<&str> = a.text_token_set().into_iter().collect();
    let sb: HashSet<&str> = b.text_token_set().into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// `p`-th percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Documents cited by the query's citations but not by the query itself.
pub fn citations_of_citations(store: &CorpusStore, query: usize) -> BTreeSet<usize> {
    let direct: HashSet<usize> = store.citation_indices(query).collect();
    store
        .citation_indices(query)
        .flat_map(|c| store.citation_indices(c))
        .filter(|d| *d != query && !direct.contains(d))
        .collect()
}

/// Interned text token sets and the current negative pool.
pub struct SamplerContext<'a> {
    store: &'a CorpusStore,
    cfg: SamplerConfig,
    tokens: Vec<Vec<u32>>,
    pool: Vec<usize>,
}

impl<'a> SamplerContext<'a> {
    pub fn new(store: &'a CorpusStore, cfg: &SamplerConfig, pool: &[usize]) -> Self {
        let mut intern: HashMap<&str, u32> = HashMap::new();
        let tokens = store
            .documents()
            .iter()
            .map(|d| {
                let mut ids: Vec<u32> = d
                    .text_token_set()
                    .into_iter()
                    .map(|t| {
                        let next = intern.len() as u32;
                        *intern.entry(t).or_insert(next)
                    })
                    .collect();
                ids.sort_unstable();
                ids
            })
            .collect();
        SamplerContext {
            store,
            cfg: cfg.clone(),
            tokens,
            pool: pool.to_vec(),
        }
    }

    /// Replaces the set random negatives are drawn from.
    pub fn set_pool(&mut self, pool: &[usize]) {
        self.pool = pool.to_vec();
    }

    pub fn jaccard(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (&self.tokens[a], &self.tokens[b]);
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = x.len() + y.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Neighbors that are not cited by the query and whose Jaccard
    /// similarity to it is below the configured percentile of the query's
    /// true-citation similarities.
    pub fn hard_negatives(&self, query: usize, neighbors: &[usize]) -> Vec<usize> {
        let cited: HashSet<usize> = self.store.citation_indices(query).collect();
        let sims: Vec<f64> = cited.iter().map(|&c| self.jaccard(query, c)).collect();
        let Some(threshold) = percentile(&sims, self.cfg.jaccard_percentile) else {
            tracing::warn!(query = %self.store.doc(query).id, "no true citations; no hard negatives");
            return Vec::new();
        };
        neighbors
            .iter()
            .copied()
            .filter(|n| *n != query && !cited.contains(n) && self.jaccard(query, *n) < threshold)
            .collect()
    }

    fn random_negative(&self, query: usize, cited: &HashSet<usize>, rng: &mut ChaCha8Rng) -> Result<usize> {
        let ok = |d: &usize| *d != query && !cited.contains(d);
        if !self.pool.is_empty() {
            for _ in 0..REJECTION_TRIES {
                let d = self.pool[rng.random_range(0..self.pool.len())];
                if ok(&d) {
                    return Ok(d);
                }
            }
        }
        let valid: Vec<usize> = self.pool.iter().copied().filter(ok).collect();
        valid
            .get(rng.random_range(0..valid.len().max(1)))
            .copied()
            .ok_or_else(|| {
                Error::CorpusTooSmall(format!(
                    "no valid negative for `{}`",
                    self.store.doc(query).id
                ))
            })
    }

    /// Triplets of one query. Deterministic in (seed, round, query id).
    pub fn sample_query(&self, query: usize, neighbors: &[usize], round: u64) -> Result<Vec<Triplet>> {
        if self.store.len() < 2 {
            return Err(Error::CorpusTooSmall(format!("{} documents", self.store.len())));
        }
        let id = &self.store.doc(query).id;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.cfg.rng_seed, round), str_key(id)));
        let cited: HashSet<usize> = self.store.citation_indices(query).collect();
        let mut positives: Vec<usize> = self.store.citation_indices(query).collect();
        if positives.is_empty() {
            return Ok(Vec::new());
        }
        if positives.len() > self.cfg.max_true_citations {
            positives.shuffle(&mut rng);
            positives.truncate(self.cfg.max_true_citations);
        }
        let [n_random, n_hard, n_coc] = self.cfg.slots();
        let hard = if n_hard > 0 {
            self.hard_negatives(query, neighbors)
        } else {
            Vec::new()
        };
        let coc: Vec<usize> = if n_coc > 0 {
            citations_of_citations(self.store, query).into_iter().collect()
        } else {
            Vec::new()
        };
        let plan = [
            (NegativeType::Random, n_random, &[][..]),
            (NegativeType::NearestNeighbor, n_hard, &hard[..]),
            (NegativeType::CitationOfCitation, n_coc, &coc[..]),
        ];
        let mut out = Vec::with_capacity(self.cfg.triplets_per_query);
        for (kind, count, candidates) in plan {
            for _ in 0..count {
                let positive = positives[rng.random_range(0..positives.len())];
                let (negative, negative_type) = if kind == NegativeType::Random || candidates.is_empty() {
                    (self.random_negative(query, &cited, &mut rng)?, NegativeType::Random)
                } else {
                    (candidates[rng.random_range(0..candidates.len())], kind)
                };
                out.push(Triplet {
                    query,
                    positive,
                    negative,
                    negative_type,
                });
            }
        }
        Ok(out)
    }

    /// Triplets for one epoch. `neighbors[i]` belongs to `queries[i]`.
    /// With `limit == 0` every query is sampled once; otherwise queries are
    /// cycled in shuffled rounds until `limit` triplets exist.
    pub fn epoch_triplets(&self, queries: &[usize], neighbors: &[Vec<usize>], epoch: u64, limit: usize) -> Result<Vec<Triplet>> {
        let one_round = |round: u64, order: &[usize]| -> Result<Vec<Triplet>> {
            let parts: Vec<Vec<Triplet>> = order
                .par_iter()
                .map(|&i| self.sample_query(queries[i], &neighbors[i], round))
                .collect::<Result<_>>()?;
            Ok(parts.into_iter().flatten().collect())
        };
        let base = mix_seed(epoch, 0x7269_706c);
        let identity: Vec<usize> = (0..queries.len()).collect();
        if limit == 0 {
            return one_round(base, &identity);
        }
        let mut out = Vec::with_capacity(limit);
        let mut round = 0u64;
        while out.len() < limit {
            let key = mix_seed(base, round);
            let mut order = identity.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.rng_seed, key)));
            let batch = one_round(key, &order)?;
            if batch.is_empty() {
                break;
            }
            out.extend(batch);
            round += 1;
        }
        out.truncate(limit);
        Ok(out)
    }
}
