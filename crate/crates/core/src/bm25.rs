//! Okapi BM25 over title and abstract tokens, queried with a document's
//! top TF-IDF key terms.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ann::rank_order;
use crate::corpus::{CorpusStore, Document};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
    pub key_terms: usize,
}

impl Default for Bm25Config {
    fn default() -> Self {
        Bm25Config {
            k1: 1.2,
            b: 0.75,
            key_terms: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avgdl: f64,
    /// token -> (document, term frequency), by document.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

fn doc_terms(d: &Document) -> impl Iterator<Item = &str> {
    d.title_tokens.iter().chain(&d.abstract_tokens).map(String::as_str)
}

impl Bm25Index {
    pub fn build(store: &CorpusStore, cfg: &Bm25Config) -> Self {
        Self::from_documents(store.documents().iter(), cfg)
    }

    pub fn from_documents<'a>(docs: impl Iterator<Item = &'a Document>, cfg: &Bm25Config) -> Self {
        let mut doc_ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (i, d) in docs.enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            let mut len = 0u32;
            for t in doc_terms(d) {
                *tf.entry(t).or_default() += 1;
                len += 1;
            }
            for (t, n) in tf {
                postings.entry(t.to_string()).or_default().push((i as u32, n));
            }
            doc_ids.push(d.id.clone());
            doc_len.push(len);
        }
        let avgdl = if doc_len.is_empty() {
            0.0
        } else {
            doc_len.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_len.len() as f64
        };
        Bm25Index {
            k1: cfg.k1,
            b: cfg.b,
            doc_ids,
            doc_len,
            avgdl,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc: usize) -> f64 {
        let tf = f64::from(tf);
        let norm = if self.avgdl > 0.0 {
            f64::from(self.doc_len[doc]) / self.avgdl
        } else {
            0.0
        };
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * norm))
    }

    /// Score of one indexed document; 0 for unknown ids or no overlap.
    pub fn score(&self, terms: &[String], doc_id: &str) -> f64 {
        let Some(doc) = self.doc_ids.iter().position(|d| d == doc_id) else {
            return 0.0;
        };
        terms
            .iter()
            .filter_map(|t| {
                let list = self.postings.get(t)?;
                let i = list.binary_search_by_key(&(doc as u32), |p| p.0).ok()?;
                Some(self.idf(t) * self.term_weight(list[i].1, doc))
            })
            .sum()
    }

    /// Scores every document sharing a term with the query by walking the
    /// postings lists; best `top_n` by score, ties by id, `exclude` skipped.
    pub fn search(&self, terms: &[String], top_n: usize, exclude: Option<&str>) -> Vec<(String, f64)> {
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for t in terms {
            let Some(list) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(doc, tf) in list {
                *acc.entry(doc).or_default() += idf * self.term_weight(tf, doc as usize);
            }
        }
        let mut out: Vec<(String, f64)> = acc
            .into_iter()
            .map(|(d, s)| (self.doc_ids[d as usize].clone(), s))
            .filter(|(id, _)| Some(id.as_str()) != exclude)
            .collect();
        out.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
        out.truncate(top_n);
        out
    }

    /// Top `n` distinct tokens of the document by `tf * ln((N+1)/(df+1))`,
    /// ties lexicographic.
    pub fn key_terms(&self, doc: &Document, n: usize) -> Vec<String> {
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for t in doc_terms(doc) {
            *tf.entry(t).or_default() += 1;
        }
        let total = self.len() as f64;
        let mut scored: Vec<(&str, f64)> = tf
            .into_iter()
            .map(|(t, c)| (t, f64::from(c) * ((total + 1.0) / (self.doc_freq(t) as f64 + 1.0)).ln()))
            .collect();
        scored.sort_by(|a, b| rank_order(a.1, a.0, b.1, b.0));
        scored.into_iter().take(n).map(|(t, _)| t.to_string()).collect()
    }

    /// Ranks indexed documents for `query` (never returning the query's own
    /// id).
    pub fn rank(&self, query: &Document, top_n: usize, n_terms: usize) -> Vec<(String, f64)> {
        let terms = self.key_terms(query, n_terms);
        self.search(&terms, top_n, Some(&query.id))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Limits;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document::from_text(id, text, "", &Limits::default())
    }

    fn index(docs: &[Document]) -> Bm25Index {
        Bm25Index::from_documents(docs.iter(), &Bm25Config::default())
    }

    fn terms(t: &[&str]) -> Vec<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_document_hand_case() {
        let idx = index(&[doc("d1", "x y"), doc("d2", "z w")]);
        let s = idx.score(&terms(&["x"]), "d1");
        assert!((s - 2f64.ln()).abs() < 1e-12, "{s}");
        assert_eq!(idx.score(&terms(&["x"]), "d2"), 0.0);
    }

    #[test]
    fn term_frequency_saturates() {
        let one = index(&[doc("a", "x y"), doc("b", "z w")]).score(&terms(&["x"]), "a");
        let two = index(&[doc("a", "x x"), doc("b", "z w")]).score(&terms(&["x"]), "a");
        assert!(two > one && two < 2.0 * one);
    }

    #[test]
    fn key_term_ordering() {
        let docs = [doc("a", "rare rare common"), doc("b", "common"), doc("c", "common")];
        let idx = index(&docs);
        assert_eq!(idx.key_terms(&docs[0], 1), vec!["rare"]);
        assert_eq!(idx.key_terms(&docs[0], 10), vec!["rare", "common"]);
        let tie = index(&[doc("a", "beta alpha"), doc("b", "gamma")]);
        assert_eq!(tie.key_terms(&doc("q", "beta alpha"), 2), vec!["alpha", "beta"]);
    }

    #[test]
    fn ranking_cases() {
        let docs = [doc("a", "graph neural network"), doc("b", "protein folding"), doc("c", "neural")];
        let idx = index(&docs);
        let r = idx.rank(&doc("q", "graph neural network"), 3, 20);
        assert_eq!(r[0].0, "a");
        assert!(idx.rank(&doc("q", "unseen words"), 3, 20).is_empty());
        let two = index(&[doc("a", "apple pie"), doc("b", "banana")]);
        assert_eq!(two.rank(&doc("q", "apple"), 1, 20)[0].0, "a");
        assert!(idx.rank(&docs[0], 3, 20).iter().all(|(id, _)| id != "a"));
    }

    fn naive(docs: &[Document], q: &[String], target: usize) -> f64 {
        let n = docs.len() as f64;
        let lens: Vec<f64> = docs.iter().map(|d| doc_terms(d).count() as f64).collect();
        let avg = lens.iter().sum::<f64>() / n;
        let (k1, b) = (1.2, 0.75);
        q.iter()
            .map(|t| {
                let df = docs.iter().filter(|d| doc_terms(d).any(|x| x == t)).count() as f64;
                let tf = doc_terms(&docs[target]).filter(|x| x == t).count() as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * lens[target] / avg))
            })
            .sum()
    }

    proptest! {
        #[test]
        fn postings_equal_naive_scoring(
            texts in proptest::collection::vec(proptest::collection::vec(0u8..12, 0..15), 1..40),
            query in proptest::collection::vec(0u8..14, 1..6),
        ) {
            let docs: Vec<Document> = texts
                .iter()
                .enumerate()
                .map(|(i, ws)| doc(&format!("d{i:03}"), &ws.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ")))
                .collect();
            let mut q: Vec<String> = query.iter().map(|w| format!("w{w}")).collect();
            q.sort();
            q.dedup();
            let idx = index(&docs);
            let hits: HashMap<String, f64> = idx.search(&q, usize::MAX, None).into_iter().collect();
            for (i, d) in docs.iter().enumerate() {
                let expected = naive(&docs, &q, i);
                prop_assert!((idx.score(&q, &d.id) - expected).abs() < 1e-9);
                prop_assert!((hits.get(&d.id).copied().unwrap_or(0.0) - expected).abs() < 1e-9);
                prop_assert!(expected >= 0.0);
            }
        }
    }
}
