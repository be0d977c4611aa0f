//! Forest of random-hyperplane trees for approximate cosine nearest
//! neighbors.
//!
//! Each tree splits its points recursively by the perpendicular bisector of
//! two randomly chosen points. Queries walk all trees with one shared
//! priority queue ordered by hyperplane margin, collect leaf items until the
//! search budget is spent, and rank the distinct candidates by exact cosine.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cosine, mix_seed};

const MAGIC: &[u8; 8] = b"CITEANN\0";
const VERSION: u32 = 1;
const METRIC_COSINE: u8 = 0;
const SPLIT_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnConfig {
    pub n_trees: usize,
    pub leaf_capacity: usize,
    /// Default search budget is `n_trees * k * search_k_factor`.
    pub search_k_factor: usize,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            n_trees: 100,
            leaf_capacity: 32,
            search_k_factor: 40,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(Vec<u32>),
    Split {
        normal: Vec<f64>,
        offset: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

/// One query hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub neighbors: Vec<Neighbor>,
    /// Set when `k` exceeded the number of indexed points.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnForest {
    dim: usize,
    leaf_capacity: usize,
    search_k_factor: usize,
    seed: u64,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    by_id: HashMap<String, u32>,
    trees: Vec<Tree>,
}

impl AnnForest {
    /// Builds the forest. Trees are built in parallel, each from its own
    /// seed derived from `(cfg.seed, tree index)`.
    pub fn build(items: Vec<(String, Vec<f64>)>, cfg: &AnnConfig) -> Result<Self> {
        let Some(dim) = items.first().map(|(_, v)| v.len()) else {
            return Err(Error::CorpusTooSmall("cannot index zero points".into()));
        };
        if cfg.leaf_capacity == 0 {
            return Err(Error::Config("leaf_capacity must be positive".into()));
        }
        let mut by_id = HashMap::with_capacity(items.len());
        let mut ids = Vec::with_capacity(items.len());
        let mut vectors = Vec::with_capacity(items.len());
        for (i, (id, v)) in items.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    id,
                    expected: dim,
                    got: v.len(),
                });
            }
            if by_id.insert(id.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            vectors.push(v);
        }
        let unit: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| linalg::normalized(v).unwrap_or_else(|| vec![0.0; dim]))
            .collect();
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, t as u64));
                let mut nodes = Vec::new();
                let all: Vec<u32> = (0..unit.len() as u32).collect();
                build_node(&unit, all, cfg.leaf_capacity, &mut rng, &mut nodes);
                Tree { nodes }
            })
            .collect();
        Ok(AnnForest {
            dim,
            leaf_capacity: cfg.leaf_capacity,
            search_k_factor: cfg.search_k_factor,
            seed: cfg.seed,
            ids,
            vectors,
            by_id,
            trees,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.by_id.get(id).map(|&i| self.vectors[i as usize].as_slice())
    }

    pub fn default_budget(&self, k: usize) -> usize {
        self.trees
            .len()
            .max(1)
            .saturating_mul(k)
            .saturating_mul(self.search_k_factor)
    }

    /// Leaf sizes of one tree, for structural checks.
    pub fn leaf_items(&self, tree: usize) -> Vec<Vec<String>> {
        self.trees[tree]
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf(items) => Some(items.iter().map(|&i| self.ids[i as usize].clone()).collect()),
                Node::Split { .. } => None,
            })
            .collect()
    }

    /// Approximate top-`k` by cosine, similarity descending, ties by id.
    /// `budget` of `None` uses [`AnnForest::default_budget`].
    pub fn query(&self, q: &[f64], k: usize, budget: Option<usize>) -> Result<QueryResult> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                id: "<query>".into(),
                expected: self.dim,
                got: q.len(),
            });
        }
        let truncated = k > self.len();
        if truncated {
            tracing::warn!(k, size = self.len(), "k exceeds index size");
        }
        let neighbors = self
            .query_items(q, k, budget)
            .into_iter()
            .map(|(i, s)| Neighbor {
                id: self.ids[i as usize].clone(),
                similarity: s,
            })
            .collect();
        Ok(QueryResult { neighbors, truncated })
    }

    /// Like [`AnnForest::query`] but returns item indices in insertion order
    /// numbering. The query must have the index dimension.
    pub fn query_items(&self, q: &[f64], k: usize, budget: Option<usize>) -> Vec<(u32, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let budget = budget.unwrap_or_else(|| self.default_budget(k));
        let mut heap: BinaryHeap<(OrderedFloat<f64>, u32, u32)> = BinaryHeap::new();
        for t in 0..self.trees.len() {
            heap.push((OrderedFloat(f64::INFINITY), t as u32, 0));
        }
        let mut seen = vec![false; self.len()];
        let mut candidates = Vec::new();
        let mut inspected = 0usize;
        while inspected < budget {
            let Some((OrderedFloat(d), t, n)) = heap.pop() else { break };
            match &self.trees[t as usize].nodes[n as usize] {
                Node::Leaf(items) => {
                    inspected += items.len();
                    for &i in items {
                        if !std::mem::replace(&mut seen[i as usize], true) {
                            candidates.push(i);
                        }
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let m = linalg::dot(normal, q) + offset;
                    heap.push((OrderedFloat(d.min(m)), t, *right));
                    heap.push((OrderedFloat(d.min(-m)), t, *left));
                }
            }
        }
        let mut scored: Vec<(u32, f64)> = candidates
            .into_iter()
            .map(|i| (i, cosine(q, &self.vectors[i as usize])))
            .collect();
        scored.sort_by(|a, b| rank_order(a.1, &self.ids[a.0 as usize], b.1, &self.ids[b.0 as usize]));
        scored.truncate(k);
        scored
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.dim as u32);
        put_u32(&mut out, self.trees.len() as u32);
        out.push(METRIC_COSINE);
        put_u32(&mut out, self.leaf_capacity as u32);
        put_u32(&mut out, self.search_k_factor as u32);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            put_u32(&mut out, id.len() as u32);
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        for tree in &self.trees {
            put_u32(&mut out, tree.nodes.len() as u32);
            for node in &tree.nodes {
                match node {
                    Node::Leaf(items) => {
                        out.push(0);
                        put_u32(&mut out, items.len() as u32);
                        for &i in items {
                            put_u32(&mut out, i);
                        }
                    }
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        out.push(1);
                        for x in normal {
                            out.extend_from_slice(&x.to_le_bytes());
                        }
                        out.extend_from_slice(&offset.to_le_bytes());
                        put_u32(&mut out, *left);
                        put_u32(&mut out, *right);
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let dim = r.u32()? as usize;
        let n_trees = r.u32()? as usize;
        if r.take(1)?[0] != METRIC_COSINE {
            return Err(Error::Format("unsupported metric".into()));
        }
        let leaf_capacity = r.u32()? as usize;
        let search_k_factor = r.u32()? as usize;
        let seed = r.u64()?;
        let n = r.u64()? as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut vectors = Vec::with_capacity(n.min(1 << 20));
        let mut by_id = HashMap::new();
        for i in 0..n {
            let len = r.u32()? as usize;
            let id = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("id is not utf-8".into()))?;
            let v = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            by_id.insert(id.clone(), i as u32);
            ids.push(id);
            vectors.push(v);
        }
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let count = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(count.min(1 << 20));
            for _ in 0..count {
                let node = match r.take(1)?[0] {
                    0 => {
                        let len = r.u32()? as usize;
                        let items = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                        if items.iter().any(|&i| i as usize >= n) {
                            return Err(Error::Format("leaf item out of range".into()));
                        }
                        Node::Leaf(items)
                    }
                    1 => {
                        let normal = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                        let offset = r.f64()?;
                        let left = r.u32()?;
                        let right = r.u32()?;
                        if left as usize >= count || right as usize >= count {
                            return Err(Error::Format("child index out of range".into()));
                        }
                        Node::Split {
                            normal,
                            offset,
                            left,
                            right,
                        }
                    }
                    tag => return Err(Error::Format(format!("unknown node tag {tag}"))),
                };
                nodes.push(node);
            }
            if nodes.is_empty() {
                return Err(Error::Format("empty tree".into()));
            }
            trees.push(Tree { nodes });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(AnnForest {
            dim,
            leaf_capacity,
            search_k_factor,
            seed,
            ids,
            vectors,
            by_id,
            trees,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Similarity descending, then id ascending.
pub(crate) fn rank_order(sa: f64, ida: &str, sb: f64, idb: &str) -> Ordering {
    sb.total_cmp(&sa).then_with(|| ida.cmp(idb))
}

fn build_node(unit: &[Vec<f64>], items: Vec<u32>, leaf_capacity: usize, rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>) -> u32 {
    let me = nodes.len() as u32;
    if items.len() <= leaf_capacity {
        nodes.push(Node::Leaf(items));
        return me;
    }
    let dim = unit[0].len();
    let mut split = None;
    for _ in 0..SPLIT_ATTEMPTS {
        let a = rng.random_range(0..items.len());
        let mut b = rng.random_range(0..items.len() - 1);
        if b >= a {
            b += 1;
        }
        let (pa, pb) = (&unit[items[a] as usize], &unit[items[b] as usize]);
        let normal: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x - y).collect();
        let mid: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| (x + y) / 2.0).collect();
        let offset = -linalg::dot(&normal, &mid);
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &i in &items {
            let m = linalg::dot(&normal, &unit[i as usize]) + offset;
            let go_right = if m > 0.0 {
                true
            } else if m < 0.0 {
                false
            } else {
                rng.random::<bool>()
            };
            if go_right {
                right.push(i);
            } else {
                left.push(i);
            }
        }
        if !left.is_empty() && !right.is_empty() {
            split = Some((normal, offset, left, right));
            break;
        }
    }
    // Degenerate data (e.g. duplicates): random halves under a null plane,
    // so queries explore both sides equally.
    let (normal, offset, left, right) = split.unwrap_or_else(|| {
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &i in &items {
            if rng.random::<bool>() {
                right.push(i);
            } else {
                left.push(i);
            }
        }
        if left.is_empty() {
            left.push(right.pop().expect("more than leaf_capacity items"));
        } else if right.is_empty() {
            right.push(left.pop().expect("more than leaf_capacity items"));
        }
        (vec![0.0; dim], 0.0, left, right)
    });
    nodes.push(Node::Leaf(Vec::new()));
    let l = build_node(unit, left, leaf_capacity, rng, nodes);
    let r = build_node(unit, right, leaf_capacity, rng, nodes);
    nodes[me as usize] = Node::Split {
        normal,
        offset,
        left: l,
        right: r,
    };
    me
}

/// Exact top-`k` by cosine with the same ordering rule as the forest.
pub fn brute_force_knn(embeddings: &[(String, Vec<f64>)], q: &[f64], k: usize) -> Vec<Neighbor> {
    let mut scored: Vec<(&str, f64)> = embeddings
        .iter()
        .map(|(id, v)| (id.as_str(), cosine(q, v)))
        .collect();
    scored.sort_by(|a, b| rank_order(a.1, a.0, b.1, b.0));
    scored
        .into_iter()
        .take(k)
        .map(|(id, s)| Neighbor {
            id: id.to_string(),
            similarity: s,
        })
        .collect()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("unexpected end of index file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
