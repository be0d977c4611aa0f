//! TOML configuration. Keys follow the usual hyperparameter names
//! (learning rate, word dropout, dense dimension, ...); every key is
//! optional and falls back to the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ann::AnnConfig;
use crate::bm25::Bm25Config;
use crate::corpus::{Limits, VocabConfig};
use crate::error::{Error, Result};
use crate::linalg::mix_seed;
use crate::optim::TrainConfig;
use crate::rank::RankerConfig;
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub title_abstract_vocabulary_size: usize,
    pub maximum_title_length: usize,
    pub maximum_abstract_length: usize,
    pub min_papers_per_author_included: u32,
    pub min_papers_per_venue_included: u32,
    pub min_papers_per_keyphrases_included: u32,
    pub max_authors_per_document: usize,
    pub max_keyphrases_per_document: usize,
    pub train_end_year: i32,
    pub dev_end_year: i32,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            title_abstract_vocabulary_size: 200_000,
            maximum_title_length: 50,
            maximum_abstract_length: 500,
            min_papers_per_author_included: 10,
            min_papers_per_venue_included: 10,
            min_papers_per_keyphrases_included: 10,
            max_authors_per_document: 8,
            max_keyphrases_per_document: 20,
            train_end_year: 2014,
            dev_end_year: 2015,
        }
    }
}

/// Optimization settings shared by both models.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub l2_regularization: f64,
    pub l1_regularization: f64,
    pub word_dropout: f64,
    pub margin_multiplier: f64,
    pub triplets_per_batch_size: usize,
    /// Zero means one pass over the training queries per epoch.
    pub triplets_per_epoch: usize,
    pub triplets_per_training: usize,
    /// Overrides the epoch count derived from the two triplet totals.
    pub epochs: Option<usize>,
}

impl TrainSection {
    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or_else(|| {
            if self.triplets_per_epoch == 0 {
                1
            } else {
                self.triplets_per_training.div_ceil(self.triplets_per_epoch).max(1)
            }
        })
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            gamma: self.margin_multiplier,
            learning_rate: self.learning_rate,
            l1_weight: self.l1_regularization,
            l2_weight: self.l2_regularization,
            word_dropout: self.word_dropout,
            batch_size: self.triplets_per_batch_size,
            triplets_per_epoch: self.triplets_per_epoch,
            epochs: self.epochs(),
            rng_seed: seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSection {
    pub learning_rate: f64,
    pub l2_regularization: f64,
    pub l1_regularization: f64,
    pub word_dropout: f64,
    pub margin_multiplier: f64,
    pub triplets_per_batch_size: usize,
    /// Zero means one pass over the training queries per epoch.
    pub triplets_per_epoch: usize,
    pub triplets_per_training: usize,
    /// Overrides the epoch count derived from the two triplet totals.
    pub epochs: Option<usize>,
    pub dense_dimension: usize,
    pub use_pretrained: bool,
    pub pretrained_path: Option<PathBuf>,
    /// Neighbors fetched per query at selection time.
    pub number_ann_neighbors: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            learning_rate: 0.001,
            l2_regularization: 1e-5,
            l1_regularization: 1e-7,
            word_dropout: 0.1,
            margin_multiplier: 1.0,
            triplets_per_batch_size: 256,
            triplets_per_epoch: 2_500_000,
            triplets_per_training: 25_000_000,
            epochs: None,
            dense_dimension: 75,
            use_pretrained: false,
            pretrained_path: None,
            number_ann_neighbors: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSection {
    pub learning_rate: f64,
    pub l2_regularization: f64,
    pub l1_regularization: f64,
    pub word_dropout: f64,
    pub margin_multiplier: f64,
    pub triplets_per_batch_size: usize,
    /// Zero means one pass over the training queries per epoch.
    pub triplets_per_epoch: usize,
    pub triplets_per_training: usize,
    /// Overrides the epoch count derived from the two triplet totals.
    pub epochs: Option<usize>,
    pub dense_dimension: usize,
    pub metadata_dimension: usize,
    pub hidden_dimension: Option<usize>,
    pub use_siamese_embeddings: bool,
    pub use_metadata: bool,
}

impl Default for RankSection {
    fn default() -> Self {
        RankSection {
            learning_rate: 0.001,
            l2_regularization: 1e-5,
            l1_regularization: 1e-7,
            word_dropout: 0.1,
            margin_multiplier: 1.0,
            triplets_per_batch_size: 32,
            triplets_per_epoch: 2_500_000,
            triplets_per_training: 100_000_000,
            epochs: None,
            dense_dimension: 75,
            metadata_dimension: 25,
            hidden_dimension: None,
            use_siamese_embeddings: true,
            use_metadata: true,
        }
    }
}

macro_rules! train_section {
    ($t:ty) => {
        impl $t {
            pub fn train(&self) -> TrainSection {
                TrainSection {
                    learning_rate: self.learning_rate,
                    l2_regularization: self.l2_regularization,
                    l1_regularization: self.l1_regularization,
                    word_dropout: self.word_dropout,
                    margin_multiplier: self.margin_multiplier,
                    triplets_per_batch_size: self.triplets_per_batch_size,
                    triplets_per_epoch: self.triplets_per_epoch,
                    triplets_per_training: self.triplets_per_training,
                    epochs: self.epochs,
                }
            }
        }
    };
}

train_section!(SelectSection);
train_section!(RankSection);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub training_triplets_per_query: usize,
    pub minimum_true_citations_per_document: usize,
    pub maximum_true_citations_per_document: usize,
    /// Shares of random, nearest-neighbor and citation-of-citation negatives.
    pub negative_mix: [f64; 3],
    pub jaccard_percentile: f64,
    pub hard_negative_neighbors: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerSection {
            training_triplets_per_query: s.triplets_per_query,
            minimum_true_citations_per_document: s.min_true_citations,
            maximum_true_citations_per_document: s.max_true_citations,
            negative_mix: s.mix,
            jaccard_percentile: s.jaccard_percentile,
            hard_negative_neighbors: s.ann_neighbors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnSection {
    pub n_trees: usize,
    pub leaf_capacity: usize,
    pub search_k_factor: usize,
}

impl Default for AnnSection {
    fn default() -> Self {
        let a = AnnConfig::default();
        AnnSection {
            n_trees: a.n_trees,
            leaf_capacity: a.leaf_capacity,
            search_k_factor: a.search_k_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub address: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            address: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub corpus: CorpusSection,
    pub select: SelectSection,
    pub rank: RankSection,
    pub sampler: SamplerSection,
    pub ann: AnnSection,
    pub bm25: Bm25Config,
    pub serve: ServeSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_title_len: self.corpus.maximum_title_length,
            max_abstract_len: self.corpus.maximum_abstract_length,
            max_authors: self.corpus.max_authors_per_document,
            max_keyphrases: self.corpus.max_keyphrases_per_document,
        }
    }

    pub fn vocab(&self) -> VocabConfig {
        VocabConfig {
            text_cap: self.corpus.title_abstract_vocabulary_size,
            min_papers_per_author: self.corpus.min_papers_per_author_included,
            min_papers_per_venue: self.corpus.min_papers_per_venue_included,
            min_papers_per_keyphrase: self.corpus.min_papers_per_keyphrases_included,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            triplets_per_query: self.sampler.training_triplets_per_query,
            mix: self.sampler.negative_mix,
            max_true_citations: self.sampler.maximum_true_citations_per_document,
            min_true_citations: self.sampler.minimum_true_citations_per_document,
            jaccard_percentile: self.sampler.jaccard_percentile,
            ann_neighbors: self.sampler.hard_negative_neighbors,
            rng_seed: mix_seed(self.seed, 1),
        }
    }

    pub fn ann(&self) -> AnnConfig {
        AnnConfig {
            n_trees: self.ann.n_trees,
            leaf_capacity: self.ann.leaf_capacity,
            search_k_factor: self.ann.search_k_factor,
            seed: mix_seed(self.seed, 2),
        }
    }

    pub fn select_train(&self) -> TrainConfig {
        self.select.train().train_config(mix_seed(self.seed, 3))
    }

    pub fn rank_train(&self) -> TrainConfig {
        self.rank.train().train_config(mix_seed(self.seed, 4))
    }

    pub fn ranker(&self) -> RankerConfig {
        RankerConfig {
            dense_dimension: self.rank.dense_dimension,
            metadata_dimension: self.rank.metadata_dimension,
            hidden: self.rank.hidden_dimension,
            siamese: self.rank.use_siamese_embeddings,
            use_metadata: self.rank.use_metadata,
        }
    }

    /// Seed for initializing the selection embedder.
    pub fn embedder_init_seed(&self) -> u64 {
        mix_seed(self.seed, 5)
    }

    pub fn ranker_init_seed(&self) -> u64 {
        mix_seed(self.seed, 6)
    }
}
