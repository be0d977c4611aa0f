//! Seeded synthetic corpora with topical clusters, author communities and
//! citation preferences, for demos and end-to-end checks.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Document, Limits};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub documents: usize,
    pub clusters: usize,
    pub subtopics: usize,
    pub cluster_words: usize,
    pub subtopic_words: usize,
    pub general_words: usize,
    pub authors_per_cluster: usize,
    pub title_len: usize,
    pub abstract_len: usize,
    pub min_citations: usize,
    pub max_citations: usize,
    /// Probability that a citation stays inside the citing cluster.
    pub in_cluster: f64,
    /// Citation weight multiplier for a shared author.
    pub author_affinity: f64,
    /// Citation weight multiplier for a shared subtopic.
    pub subtopic_affinity: f64,
    pub first_year: i32,
    pub last_year: i32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            documents: 2000,
            clusters: 20,
            subtopics: 4,
            cluster_words: 40,
            subtopic_words: 15,
            general_words: 300,
            authors_per_cluster: 40,
            title_len: 8,
            abstract_len: 60,
            min_citations: 4,
            max_citations: 14,
            in_cluster: 0.85,
            author_affinity: 4.0,
            subtopic_affinity: 3.0,
            first_year: 1995,
            last_year: 2016,
            seed: 7,
        }
    }
}

const SYLLABLES: [&str; 24] = [
    "ba", "ce", "di", "fo", "gu", "ka", "le", "mi", "no", "pu", "ra", "se", "ti", "vo", "za", "bre", "cla", "dro", "fle",
    "gri", "pla", "sto", "tri", "vel",
];

/// Pronounceable pseudo-word for an integer, unique per `n`.
fn word(n: usize) -> String {
    let mut n = n;
    let mut s = String::new();
    for _ in 0..3 {
        s.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    while n > 0 {
        s.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    s
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

struct Meta {
    cluster: usize,
    subtopic: usize,
    authors: Vec<usize>,
}

/// Generates a corpus in year order: each document cites earlier ones,
/// mostly in its own cluster, preferring popular documents, its own
/// subtopic and documents sharing an author.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Document>> {
    if cfg.documents == 0 || cfg.clusters == 0 || cfg.subtopics == 0 || cfg.authors_per_cluster < 2 {
        return Err(Error::Config("synthetic corpus sizes must be positive".into()));
    }
    if cfg.last_year < cfg.first_year || cfg.min_citations > cfg.max_citations {
        return Err(Error::Config("invalid synthetic ranges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let limits = Limits::default();

    // word ids: general, then per cluster, then per (cluster, subtopic)
    let general: Vec<String> = (0..cfg.general_words).map(word).collect();
    let mut next = cfg.general_words;
    let mut take = |n: usize| {
        let v: Vec<String> = (next..next + n).map(word).collect();
        next += n;
        v
    };
    let cluster_words: Vec<Vec<String>> = (0..cfg.clusters).map(|_| take(cfg.cluster_words)).collect();
    let sub_words: Vec<Vec<Vec<String>>> = (0..cfg.clusters)
        .map(|_| (0..cfg.subtopics).map(|_| take(cfg.subtopic_words)).collect())
        .collect();
    let venues: Vec<Vec<String>> = (0..cfg.clusters)
        .map(|c| {
            (0..2)
                .map(|v| format!("Journal of {} {}", capitalized(&cluster_words[c][v]), ["Studies", "Letters"][v]))
                .collect()
        })
        .collect();
    let author_names: Vec<Vec<String>> = (0..cfg.clusters)
        .map(|c| {
            (0..cfg.authors_per_cluster)
                .map(|a| {
                    format!(
                        "{}. {}",
                        (b'A' + ((c * 7 + a) % 26) as u8) as char,
                        capitalized(&word(100_000 + c * cfg.authors_per_cluster + a))
                    )
                })
                .collect()
        })
        .collect();
    // a few prolific authors per cluster
    let author_weight: Vec<f64> = (0..cfg.authors_per_cluster).map(|a| 1.0 / (1.0 + a as f64 * 0.1)).collect();

    let years = (cfg.last_year - cfg.first_year + 1) as usize;
    let mut metas: Vec<Meta> = Vec::with_capacity(cfg.documents);
    let mut docs: Vec<Document> = Vec::with_capacity(cfg.documents);
    let mut in_count = vec![0usize; cfg.documents];
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); cfg.clusters];

    for i in 0..cfg.documents {
        let cluster = rng.random_range(0..cfg.clusters);
        let subtopic = rng.random_range(0..cfg.subtopics);
        let year = cfg.first_year + (i * years / cfg.documents) as i32;
        let draw = |n: usize, rng: &mut ChaCha8Rng| -> String {
            (0..n)
                .map(|_| {
                    let r: f64 = rng.random();
                    let pool = if r < 0.30 {
                        &cluster_words[cluster]
                    } else if r < 0.50 {
                        &sub_words[cluster][subtopic]
                    } else if r < 0.58 {
                        &cluster_words[rng.random_range(0..cfg.clusters)]
                    } else {
                        &general
                    };
                    pool.choose(rng).expect("nonempty word pool").clone()
                })
                .collect::<Vec<_>>()
                .join(" ")
        };
        let title = draw(cfg.title_len, &mut rng);
        let abstract_text = draw(cfg.abstract_len, &mut rng);

        let mut authors = Vec::new();
        while authors.len() < 2 {
            let a = weighted(&author_weight, &mut rng);
            if !authors.contains(&a) {
                authors.push(a);
            }
        }
        let keyphrases: Vec<String> = sub_words[cluster][subtopic]
            .choose_multiple(&mut rng, 3)
            .map(|w| format!("{} {}", cluster_words[cluster][0], w))
            .collect();

        let n_cite = rng.random_range(cfg.min_citations..=cfg.max_citations);
        let mut cited: Vec<usize> = Vec::new();
        let mut seen = HashSet::new();
        let mut attempts = 0;
        while cited.len() < n_cite && attempts < n_cite * 8 {
            attempts += 1;
            let candidates: &[usize] = if rng.random::<f64>() < cfg.in_cluster {
                &by_cluster[cluster]
            } else {
                &by_cluster[rng.random_range(0..cfg.clusters)]
            };
            let pool: Vec<usize> = candidates.iter().copied().filter(|j| !seen.contains(j)).collect();
            if pool.is_empty() {
                continue;
            }
            let weights: Vec<f64> = pool
                .iter()
                .map(|&j| {
                    let m = &metas[j];
                    let mut w = 1.0 + in_count[j] as f64;
                    if m.cluster == cluster && m.subtopic == subtopic {
                        w *= cfg.subtopic_affinity;
                    }
                    if m.cluster == cluster && m.authors.iter().any(|a| authors.contains(a)) {
                        w *= cfg.author_affinity;
                    }
                    w
                })
                .collect();
            let j = pool[weighted(&weights, &mut rng)];
            seen.insert(j);
            cited.push(j);
        }
        for &j in &cited {
            in_count[j] += 1;
        }
        cited.shuffle(&mut rng);

        let doc = Document::from_text(format!("p{i:05}"), &capitalized(&title), &abstract_text, &limits)
            .with_authors(authors.iter().map(|&a| author_names[cluster][a].as_str()), &limits)
            .with_venue(&venues[cluster][rng.random_range(0..2)])
            .with_keyphrases(keyphrases, &limits)
            .with_year(year)
            .with_citations(cited.iter().map(|&j| format!("p{j:05}")));
        docs.push(doc);
        metas.push(Meta {
            cluster,
            subtopic,
            authors,
        });
        by_cluster[cluster].push(i);
    }
    Ok(docs)
}

fn weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Generates the corpus as a store (in-citations derived, no split yet).
pub fn generate_store(cfg: &SynthConfig) -> Result<CorpusStore> {
    CorpusStore::from_documents(generate(cfg)?)
}

/// Writes the corpus as JSONL in the ingest schema.
pub fn write_jsonl(docs: &[Document], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for d in docs {
        let line = serde_json::json!({
            "id": d.id,
            "title": d.title,
            "abstract": d.abstract_tokens.join(" "),
            "authors": d.authors,
            "venue": d.venue,
            "keyphrases": d.keyphrases,
            "year": d.year,
            "out_citations": d.out_citations,
        });
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Expected recall at `k` of a uniformly random ranking over `n` candidates.
pub fn random_recall_at(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (k.min(n)) as f64 / n as f64
    }
}
