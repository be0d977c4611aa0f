use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use citerec::app::server::{serve, AppState};
use citerec::app::{self, Artifacts, Mode, RecommendRequest, BM25_FILE, EMBEDDER_FILE, FOREST_FILE, RANKER_FILE};
use citerec::bm25::Bm25Index;
use citerec::checkpoint;
use citerec::config::Config;
use citerec::corpus::{ingest_jsonl, CorpusStore, Split};
use citerec::eval::{evaluate_run, Predictions};
use citerec::select::{select_candidates, sweep_neighbor_count};
use citerec::synth::{self, SynthConfig};
use citerec::{Error, Result};

#[derive(Parser)]
#[command(name = "citerec", version, about = "Content-based citation recommendation")]
struct Cli {
    /// TOML configuration file; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelDir {
    /// Directory holding the corpus store and trained artifacts.
    #[arg(long, default_value = "model")]
    model_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    SelectOnly,
    Rerank,
    Bm25,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SelectOnly => Mode::SelectOnly,
            ModeArg::Rerank => Mode::Rerank,
            ModeArg::Bm25 => Mode::Bm25,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus as JSONL.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        documents: usize,
        #[arg(long, default_value_t = 20)]
        clusters: usize,
    },
    /// Read a JSONL corpus, assign splits and store it in the model directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        dir: ModelDir,
    },
    /// Train the selection embedder.
    TrainSelect {
        #[command(flatten)]
        dir: ModelDir,
    },
    /// Index every embeddable corpus document.
    BuildIndex {
        #[command(flatten)]
        dir: ModelDir,
    },
    /// Train the reranker.
    TrainRank {
        #[command(flatten)]
        dir: ModelDir,
    },
    /// Score a split against its gold citations.
    Evaluate {
        #[command(flatten)]
        dir: ModelDir,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum, default_value = "rerank")]
        mode: ModeArg,
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20])]
        k: Vec<usize>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Recall, precision and latency of selection for several neighbor counts.
    SweepK {
        #[command(flatten)]
        dir: ModelDir,
        #[arg(long, value_enum, default_value = "dev")]
        split: SplitArg,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10, 50])]
        k: Vec<usize>,
        /// Use at most this many queries.
        #[arg(long, default_value_t = 1000)]
        queries: usize,
    },
    /// Build the BM25 index or rank query documents with it.
    Bm25 {
        #[command(flatten)]
        dir: ModelDir,
        #[arg(long)]
        build: bool,
        /// JSONL query documents.
        #[arg(long)]
        query_file: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Candidate sets for JSONL query documents.
    Select {
        #[command(flatten)]
        dir: ModelDir,
        #[arg(long)]
        query_file: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 100)]
        top: usize,
    },
    /// Recommend citations for a draft title and abstract.
    Recommend {
        #[command(flatten)]
        dir: ModelDir,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long = "abstract", default_value = "")]
        abstract_text: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, value_enum, default_value = "rerank")]
        mode: ModeArg,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        dir: ModelDir,
        #[arg(long)]
        address: Option<SocketAddr>,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn bm25_index(dir: &Path, store: &CorpusStore, cfg: &Config) -> Result<Bm25Index> {
    let p = dir.join(BM25_FILE);
    if p.exists() {
        Bm25Index::load(&p)
    } else {
        Ok(Bm25Index::build(store, &cfg.bm25))
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth {
            out,
            documents,
            clusters,
        } => {
            let sc = SynthConfig {
                documents,
                clusters,
                seed: cfg.seed,
                ..SynthConfig::default()
            };
            let docs = synth::generate(&sc)?;
            synth::write_jsonl(&docs, &out)?;
            eprintln!("wrote {} documents to {}", docs.len(), out.display());
        }
        Command::Ingest { input, dir } => {
            let (store, summary) = app::ingest(&input, &cfg)?;
            store.save(&dir.model_dir)?;
            print_json(&serde_json::json!({ "report": store.report(), "splits": summary }))?;
        }
        Command::TrainSelect { dir } => {
            let store = CorpusStore::load(&dir.model_dir)?;
            let (params, stats) = app::train_select(&store, &cfg)?;
            checkpoint::save_embedder(&dir.model_dir.join(EMBEDDER_FILE), &params)?;
            print_json(&stats)?;
        }
        Command::BuildIndex { dir } => {
            let store = CorpusStore::load(&dir.model_dir)?;
            let params = checkpoint::load_embedder(&dir.model_dir.join(EMBEDDER_FILE))?;
            let forest = app::build_index(&store, &params, &cfg)?;
            forest.save(&dir.model_dir.join(FOREST_FILE))?;
            eprintln!("indexed {} documents in {} trees", forest.len(), forest.n_trees());
        }
        Command::TrainRank { dir } => {
            let store = CorpusStore::load(&dir.model_dir)?;
            let eparams = checkpoint::load_embedder(&dir.model_dir.join(EMBEDDER_FILE))?;
            let (params, stats) = app::train_rank(&store, &eparams, &cfg)?;
            checkpoint::save_ranker(&dir.model_dir.join(RANKER_FILE), &params)?;
            print_json(&stats)?;
        }
        Command::Evaluate {
            dir,
            split,
            mode,
            k,
            json,
        } => {
            let split: Split = split.into();
            let mode: Mode = mode.into();
            let report = if let Mode::Bm25 = mode {
                // needs no trained model
                let store = CorpusStore::load(&dir.model_dir)?;
                let index = bm25_index(&dir.model_dir, &store, &cfg)?;
                let preds: Predictions = store
                    .query_indices(split)
                    .into_iter()
                    .map(|q| {
                        let d = store.doc(q);
                        let ranked = index.rank(d, index.len(), cfg.bm25.key_terms);
                        (d.id.clone(), ranked.into_iter().map(|(id, _)| id).collect())
                    })
                    .collect();
                evaluate_run(&preds, &store.gold(split), &k)
            } else {
                Artifacts::load(&dir.model_dir, cfg)?.evaluate(split, mode, &k)?
            };
            if json {
                print_json(&report)?;
            } else {
                print!("{}", report.text_table(&format!("{mode:?}")));
                if report.excluded > 0 {
                    eprintln!("{} queries without gold citations excluded", report.excluded);
                }
            }
        }
        Command::SweepK {
            dir,
            split,
            k,
            queries,
        } => {
            let a = Artifacts::load(&dir.model_dir, cfg)?;
            let mut q = a.store.query_indices(split.into());
            q.truncate(queries);
            let report = sweep_neighbor_count(&q, &a.embedder, &a.forest, &a.store, &k)?;
            print!("{}", report.text_table());
        }
        Command::Bm25 {
            dir,
            build,
            query_file,
            top,
        } => {
            if !build && query_file.is_none() {
                return Err(Error::Config("bm25 needs --build or --query-file".into()));
            }
            let store = CorpusStore::load(&dir.model_dir)?;
            let index = if build {
                let index = Bm25Index::build(&store, &cfg.bm25);
                index.save(&dir.model_dir.join(BM25_FILE))?;
                eprintln!("indexed {} documents, avgdl {:.1}", index.len(), index.avgdl());
                index
            } else {
                bm25_index(&dir.model_dir, &store, &cfg)?
            };
            if let Some(qf) = query_file {
                let queries = ingest_jsonl(&qf, &cfg.limits())?;
                let mut out = std::io::stdout().lock();
                for d in queries.documents() {
                    let ranked: Vec<_> = index
                        .rank(d, top, cfg.bm25.key_terms)
                        .into_iter()
                        .map(|(id, score)| serde_json::json!({ "id": id, "score": score }))
                        .collect();
                    let line = serde_json::json!({ "query_id": d.id, "results": ranked });
                    writeln!(out, "{line}").map_err(|e| Error::Format(e.to_string()))?;
                }
            }
        }
        Command::Select {
            dir,
            query_file,
            k,
            top,
        } => {
            let k = k.unwrap_or(cfg.select.number_ann_neighbors);
            let a = Artifacts::load(&dir.model_dir, cfg)?;
            let queries = ingest_jsonl(&query_file, &a.config.limits())?;
            let mut out = std::io::stdout().lock();
            for d in queries.documents() {
                let line = match select_candidates(d, &a.embedder, &a.forest, &a.store, k, None) {
                    Ok(mut set) => {
                        set.candidates.truncate(top);
                        serde_json::to_value(&set)?
                    }
                    Err(e @ Error::Unembeddable(_)) => serde_json::json!({ "query_id": d.id, "error": e.to_string() }),
                    Err(e) => return Err(e),
                };
                writeln!(out, "{line}").map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        Command::Recommend {
            dir,
            title,
            abstract_text,
            k,
            mode,
        } => {
            let a = Artifacts::load(&dir.model_dir, cfg)?;
            let req = RecommendRequest {
                k,
                mode: mode.into(),
                ..RecommendRequest::new(title, abstract_text)
            };
            match app::recommend(&a, &req) {
                Ok(resp) => print_json(&resp)?,
                Err(e) => return Err(Error::Config(e.to_string())),
            }
        }
        Command::Serve { dir, address } => {
            let addr = match address {
                Some(a) => a,
                None => cfg
                    .serve
                    .address
                    .parse()
                    .map_err(|e| Error::Config(format!("serve.address: {e}")))?,
            };
            let a = Artifacts::load(&dir.model_dir, cfg)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Format(e.to_string()))?;
            rt.block_on(serve(addr, AppState::new(a)))
                .map_err(|e| Error::Format(format!("server: {e}")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
