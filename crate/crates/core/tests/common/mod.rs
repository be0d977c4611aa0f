#![allow(dead_code)]

use citerec::app::{self, Artifacts};
use citerec::config::Config;
use citerec::corpus::CorpusStore;
use citerec::synth::{self, SynthConfig};

/// Small, fast settings: a few seconds of training at most.
pub fn tiny_config() -> Config {
    let mut c = Config::default();
    c.seed = 11;
    c.corpus.min_papers_per_author_included = 2;
    c.corpus.min_papers_per_venue_included = 2;
    c.corpus.min_papers_per_keyphrases_included = 2;
    c.corpus.train_end_year = 2012;
    c.corpus.dev_end_year = 2014;
    c.select.dense_dimension = 16;
    c.select.learning_rate = 0.01;
    c.select.triplets_per_batch_size = 64;
    c.select.triplets_per_epoch = 0;
    c.select.epochs = Some(5);
    c.select.number_ann_neighbors = 8;
    c.rank.dense_dimension = 8;
    c.rank.metadata_dimension = 8;
    c.rank.hidden_dimension = Some(8);
    c.rank.learning_rate = 0.01;
    c.rank.triplets_per_epoch = 0;
    c.rank.epochs = Some(3);
    c.ann.n_trees = 8;
    c
}

pub fn synthetic(documents: usize, clusters: usize) -> SynthConfig {
    SynthConfig {
        documents,
        clusters,
        ..SynthConfig::default()
    }
}

pub fn split_store(sc: &SynthConfig, cfg: &Config) -> CorpusStore {
    let mut store = CorpusStore::from_documents(synth::generate(sc).unwrap()).unwrap();
    store.split_by_year(cfg.corpus.train_end_year, cfg.corpus.dev_end_year).unwrap();
    store
}

/// A fully trained model over a 400-document synthetic corpus.
pub fn trained() -> Artifacts {
    let cfg = tiny_config();
    let store = split_store(&synthetic(400, 5), &cfg);
    let (e, _) = app::train_select(&store, &cfg).unwrap();
    let forest = app::build_index(&store, &e, &cfg).unwrap();
    let (r, _) = app::train_rank(&store, &e, &cfg).unwrap();
    Artifacts::new(cfg, store, e, forest, Some(r), None)
}
