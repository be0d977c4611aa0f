//! Document corpora: JSONL ingest, normalization, year-based splits and
//! vocabularies.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scholarly record after normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Original title text, kept for display.
    #[serde(default)]
    pub title: String,
    pub title_tokens: Vec<String>,
    pub abstract_tokens: Vec<String>,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub venue: String,
    #[serde(default)]
    pub keyphrases: Vec<String>,
    #[serde(default)]
    pub year: Option<i32>,
    #[serde(default)]
    pub out_citations: Vec<String>,
    /// Derived from the other documents of the same corpus.
    #[serde(default)]
    pub in_citation_count: u32,
}

impl Document {
    /// Builds a normalized document from raw text fields.
    pub fn from_text(id: impl Into<String>, title: &str, abstract_text: &str, limits: &Limits) -> Self {
        Document {
            id: id.into(),
            title: title.trim().to_string(),
            title_tokens: tokenize(title, limits.max_title_len),
            abstract_tokens: tokenize(abstract_text, limits.max_abstract_len),
            authors: Vec::new(),
            venue: String::new(),
            keyphrases: Vec::new(),
            year: None,
            out_citations: Vec::new(),
            in_citation_count: 0,
        }
    }

    pub fn with_authors<I, S>(mut self, authors: I, limits: &Limits) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.authors = normalize_names(authors, limits.max_authors, false);
        self
    }

    pub fn with_keyphrases<I, S>(mut self, keyphrases: I, limits: &Limits) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.keyphrases = normalize_names(keyphrases, limits.max_keyphrases, true);
        self
    }

    pub fn with_venue(mut self, venue: &str) -> Self {
        self.venue = venue.trim().to_string();
        self
    }

    pub fn with_year(mut self, year: i32) -> Self {
        self.year = Some(year);
        self
    }

    pub fn with_citations<I, S>(mut self, cites: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.out_citations = cites.into_iter().map(Into::into).collect();
        self
    }

    pub fn has_text(&self) -> bool {
        !self.title_tokens.is_empty() || !self.abstract_tokens.is_empty()
    }

    /// Unique tokens of title and abstract, sorted.
    pub fn text_token_set(&self) -> Vec<&str> {
        let mut set: Vec<&str> = self
            .title_tokens
            .iter()
            .chain(&self.abstract_tokens)
            .map(String::as_str)
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

/// Length caps applied during normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_title_len: usize,
    pub max_abstract_len: usize,
    pub max_authors: usize,
    pub max_keyphrases: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_title_len: 50,
            max_abstract_len: 500,
            max_authors: 8,
            max_keyphrases: 20,
        }
    }
}

/// Lowercases, splits on every non-alphanumeric run and keeps at most
/// `max_len` tokens.
pub fn tokenize(text: &str, max_len: usize) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_len)
        .map(str::to_string)
        .collect()
}

fn normalize_names<I, S>(names: I, cap: usize, lowercase: bool) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for name in names {
        let name = name.as_ref().trim();
        if name.is_empty() {
            continue;
        }
        let name = if lowercase {
            name.to_lowercase()
        } else {
            name.to_string()
        };
        if seen.insert(name.clone()) {
            out.push(name);
            if out.len() == cap {
                break;
            }
        }
    }
    out
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    title: String,
    #[serde(rename = "abstract")]
    abstract_text: String,
    #[serde(default)]
    authors: Vec<String>,
    #[serde(default)]
    venue: Option<String>,
    #[serde(default)]
    keyphrases: Vec<String>,
    #[serde(default)]
    year: Option<i32>,
    #[serde(default)]
    out_citations: Vec<String>,
}

impl RawRecord {
    fn into_document(self, limits: &Limits) -> Document {
        let mut doc = Document::from_text(self.id, &self.title, &self.abstract_text, limits)
            .with_authors(&self.authors, limits)
            .with_keyphrases(&self.keyphrases, limits)
            .with_venue(self.venue.as_deref().unwrap_or(""))
            .with_citations(self.out_citations);
        doc.year = self.year;
        doc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub pruned_edges: usize,
    pub self_citations_dropped: usize,
    pub duplicate_citations_dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitSummary {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub dev_queries: usize,
    pub test_queries: usize,
    pub warnings: Vec<String>,
}

/// An immutable set of documents addressed both by id and by dense index.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "StoreRepr", into = "StoreRepr")]
pub struct CorpusStore {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
    splits: Vec<Split>,
    report: IngestReport,
}

#[derive(Serialize, Deserialize)]
struct StoreRepr {
    documents: Vec<Document>,
    splits: Vec<Split>,
    report: IngestReport,
}

impl From<StoreRepr> for CorpusStore {
    fn from(r: StoreRepr) -> Self {
        let index = r
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        let mut splits = r.splits;
        splits.resize(r.documents.len(), Split::Train);
        CorpusStore {
            docs: r.documents,
            index,
            splits,
            report: r.report,
        }
    }
}

impl From<CorpusStore> for StoreRepr {
    fn from(s: CorpusStore) -> Self {
        StoreRepr {
            documents: s.docs,
            splits: s.splits,
            report: s.report,
        }
    }
}

pub const STORE_FILE: &str = "store.json";

impl CorpusStore {
    /// Validates ids, prunes dangling and self citations and derives
    /// incoming-citation counts. Every document starts in the train split.
    pub fn from_documents(mut docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if index.insert(d.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(d.id.clone()));
            }
        }
        let mut report = IngestReport {
            documents: docs.len(),
            ..Default::default()
        };
        let mut in_counts = vec![0u32; docs.len()];
        for d in docs.iter_mut() {
            let mut seen = HashSet::new();
            let own = d.id.clone();
            d.out_citations.retain(|c| {
                if *c == own {
                    report.self_citations_dropped += 1;
                    false
                } else if !index.contains_key(c) {
                    report.pruned_edges += 1;
                    false
                } else if !seen.insert(c.clone()) {
                    report.duplicate_citations_dropped += 1;
                    false
                } else {
                    true
                }
            });
            for c in &d.out_citations {
                in_counts[index[c]] += 1;
            }
        }
        for (d, n) in docs.iter_mut().zip(in_counts) {
            d.in_citation_count = n;
        }
        let splits = vec![Split::Train; docs.len()];
        Ok(CorpusStore {
            docs,
            index,
            splits,
            report,
        })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, idx: usize) -> &Document {
        &self.docs[idx]
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn split_of(&self, idx: usize) -> Split {
        self.splits[idx]
    }

    /// Indices of the documents assigned to `split`, in corpus order.
    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.docs.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Evaluation queries of a split: documents with at least one citation.
    pub fn query_indices(&self, split: Split) -> Vec<usize> {
        (0..self.docs.len())
            .filter(|&i| self.splits[i] == split && !self.docs[i].out_citations.is_empty())
            .collect()
    }

    /// Indices of the documents cited by `idx`.
    pub fn citation_indices(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.docs[idx]
            .out_citations
            .iter()
            .filter_map(|c| self.index.get(c).copied())
    }

    /// Assigns train/dev/test by publication year:
    /// `year <= train_end` is train, `year <= dev_end` is dev, the rest test.
    pub fn split_by_year(&mut self, train_end: i32, dev_end: i32) -> Result<SplitSummary> {
        if train_end >= dev_end {
            return Err(Error::Config(format!(
                "train_end ({train_end}) must be before dev_end ({dev_end})"
            )));
        }
        let mut splits = Vec::with_capacity(self.docs.len());
        for d in &self.docs {
            let year = d
                .year
                .ok_or_else(|| Error::Config(format!("document `{}` has no year", d.id)))?;
            splits.push(if year <= train_end {
                Split::Train
            } else if year <= dev_end {
                Split::Dev
            } else {
                Split::Test
            });
        }
        self.splits = splits;

        let count = |s| self.splits.iter().filter(|&&x| x == s).count();
        let mut summary = SplitSummary {
            train: count(Split::Train),
            dev: count(Split::Dev),
            test: count(Split::Test),
            dev_queries: self.query_indices(Split::Dev).len(),
            test_queries: self.query_indices(Split::Test).len(),
            warnings: Vec::new(),
        };
        if summary.dev == 0 {
            summary.warnings.push("dev split is empty".into());
        }
        if summary.test == 0 {
            summary.warnings.push("test split is empty".into());
        }
        for w in &summary.warnings {
            tracing::warn!("{w}");
        }
        Ok(summary)
    }

    /// Gold citations of every evaluation query in `split`.
    pub fn gold(&self, split: Split) -> BTreeMap<String, HashSet<String>> {
        self.query_indices(split)
            .into_iter()
            .map(|i| {
                let d = &self.docs[i];
                (d.id.clone(), d.out_citations.iter().cloned().collect())
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(STORE_FILE);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(STORE_FILE);
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// Reads a JSONL corpus, one document per line. Blank lines are skipped.
pub fn ingest_jsonl(path: &Path, limits: &Limits) -> Result<CorpusStore> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(f), limits)
}

pub fn ingest_reader<R: BufRead>(reader: R, limits: &Limits) -> Result<CorpusStore> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        docs.push(raw.into_document(limits));
    }
    let store = CorpusStore::from_documents(docs)?;
    tracing::info!(
        documents = store.report.documents,
        pruned_edges = store.report.pruned_edges,
        "ingested corpus"
    );
    Ok(store)
}

/// Dense id of a vocabulary entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A token universe with document frequencies, ordered by descending
/// frequency then lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct TokenVocab {
    tokens: Vec<String>,
    doc_freq: Vec<u32>,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    doc_freq: Vec<u32>,
}

impl From<VocabRepr> for TokenVocab {
    fn from(r: VocabRepr) -> Self {
        TokenVocab::from_entries(r.tokens.into_iter().zip(r.doc_freq).collect())
    }
}

impl From<TokenVocab> for VocabRepr {
    fn from(v: TokenVocab) -> Self {
        VocabRepr {
            tokens: v.tokens,
            doc_freq: v.doc_freq,
        }
    }
}

impl TokenVocab {
    pub fn from_entries(entries: Vec<(String, u32)>) -> Self {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut doc_freq = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (t, df) in entries {
            if index.contains_key(&t) {
                continue;
            }
            index.insert(t.clone(), TokenId(tokens.len() as u32));
            tokens.push(t);
            doc_freq.push(df);
        }
        TokenVocab {
            tokens,
            doc_freq,
            index,
        }
    }

    /// Keeps entries with `df >= min_df`, most frequent first, at most `cap`.
    fn from_counts(counts: HashMap<String, u32>, cap: usize, min_df: u32) -> Self {
        let mut entries: Vec<(String, u32)> =
            counts.into_iter().filter(|(_, df)| *df >= min_df).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(cap);
        Self::from_entries(entries)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn doc_freq(&self, id: TokenId) -> u32 {
        self.doc_freq[id.index()]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sorted, unique ids of the in-vocabulary tokens.
    pub fn encode<'a, I>(&self, tokens: I) -> Vec<TokenId>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut ids: Vec<TokenId> = tokens.into_iter().filter_map(|t| self.id(t)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// FNV-1a over the token list; identifies the vocabulary in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(0xff)) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub text_cap: usize,
    pub min_papers_per_author: u32,
    pub min_papers_per_venue: u32,
    pub min_papers_per_keyphrase: u32,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            text_cap: 200_000,
            min_papers_per_author: 10,
            min_papers_per_venue: 10,
            min_papers_per_keyphrase: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub text: TokenVocab,
    pub authors: TokenVocab,
    pub venues: TokenVocab,
    pub keyphrases: TokenVocab,
}

/// Builds vocabularies from the train split.
pub fn build_vocabulary(store: &CorpusStore, cfg: &VocabConfig) -> Result<Vocabulary> {
    if cfg.text_cap == 0 {
        return Err(Error::Config("text vocabulary cap must be positive".into()));
    }
    let train = store.indices_in(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let mut text = HashMap::new();
    let mut authors = HashMap::new();
    let mut venues = HashMap::new();
    let mut keyphrases = HashMap::new();
    let bump = |m: &mut HashMap<String, u32>, t: &str| *m.entry(t.to_string()).or_insert(0) += 1;
    for i in train {
        let d = store.doc(i);
        for t in d.text_token_set() {
            bump(&mut text, t);
        }
        for a in d.authors.iter().collect::<HashSet<_>>() {
            bump(&mut authors, a);
        }
        if !d.venue.is_empty() {
            bump(&mut venues, &d.venue);
        }
        for k in d.keyphrases.iter().collect::<HashSet<_>>() {
            bump(&mut keyphrases, k);
        }
    }
    Ok(Vocabulary {
        text: TokenVocab::from_counts(text, cfg.text_cap, 1),
        authors: TokenVocab::from_counts(authors, usize::MAX, cfg.min_papers_per_author),
        venues: TokenVocab::from_counts(venues, usize::MAX, cfg.min_papers_per_venue),
        keyphrases: TokenVocab::from_counts(keyphrases, usize::MAX, cfg.min_papers_per_keyphrase),
    })
}
