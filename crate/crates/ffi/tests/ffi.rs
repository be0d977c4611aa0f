use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use citerec::app;
use citerec::config::Config;
use citerec::corpus::CorpusStore;
use citerec::synth::{self, SynthConfig};
use citerec_ffi::*;

fn small_config() -> Config {
    let mut c = Config::default();
    c.corpus.min_papers_per_author_included = 2;
    c.corpus.min_papers_per_venue_included = 2;
    c.corpus.min_papers_per_keyphrases_included = 2;
    c.corpus.train_end_year = 2012;
    c.corpus.dev_end_year = 2014;
    c.select.dense_dimension = 8;
    c.select.triplets_per_epoch = 0;
    c.select.epochs = Some(1);
    c.rank.dense_dimension = 4;
    c.rank.metadata_dimension = 4;
    c.rank.hidden_dimension = Some(4);
    c.rank.triplets_per_epoch = 0;
    c.rank.epochs = Some(1);
    c.ann.n_trees = 4;
    c
}

/// Trains a tiny model into `dir`; returns the title of one corpus document.
fn write_model(dir: &Path) -> String {
    let cfg = small_config();
    let docs = synth::generate(&SynthConfig {
        documents: 300,
        clusters: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut store = CorpusStore::from_documents(docs).unwrap();
    store.split_by_year(cfg.corpus.train_end_year, cfg.corpus.dev_end_year).unwrap();
    let (e, _) = app::train_select(&store, &cfg).unwrap();
    let forest = app::build_index(&store, &e, &cfg).unwrap();
    let (r, _) = app::train_rank(&store, &e, &cfg).unwrap();
    app::save_model(dir, &store, &e, &forest, Some(&r), None).unwrap();
    std::fs::write(dir.join("config.toml"), cfg.to_toml()).unwrap();
    store.doc(250).title.clone()
}

fn last_error() -> String {
    let p = citerec_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn open(dir: &Path) -> *mut CiterecEngine {
    let d = CString::new(dir.to_str().unwrap()).unwrap();
    let c = CString::new(dir.join("config.toml").to_str().unwrap()).unwrap();
    let mut engine = ptr::null_mut();
    let s = unsafe { citerec_engine_open(d.as_ptr(), c.as_ptr(), &mut engine) };
    assert_eq!(s, CiterecStatus::Ok);
    assert!(!engine.is_null());
    engine
}

fn call(engine: *const CiterecEngine, json: &str) -> (CiterecStatus, Option<serde_json::Value>) {
    let req = CString::new(json).unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { citerec_recommend_json(engine, req.as_ptr(), &mut out) };
    if out.is_null() {
        return (s, None);
    }
    let v = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { citerec_string_free(out) };
    (s, Some(v))
}

#[test]
fn open_recommend_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let title = write_model(dir.path());
    let engine = open(dir.path());
    assert_eq!(unsafe { citerec_engine_corpus_size(engine) }, 300);

    let req = serde_json::json!({ "title": title, "k": 5, "mode": "select_only" }).to_string();
    let (s, v) = call(engine, &req);
    assert_eq!(s, CiterecStatus::Ok);
    let v = v.unwrap();
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    let scores: Vec<f64> = results.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(call(engine, &req).1.unwrap()["results"], v["results"]);

    let (s, v) = call(engine, &serde_json::json!({ "title": title, "k": 3 }).to_string());
    assert_eq!(s, CiterecStatus::Ok);
    assert_eq!(v.unwrap()["results"].as_array().unwrap().len(), 3);

    let (s, v) = call(engine, r#"{"title": "", "abstract": ""}"#);
    assert_eq!((s, v), (CiterecStatus::InvalidRequest, None));
    assert!(last_error().contains("nonempty"));

    let (s, _) = call(engine, r#"{"title": "x", "k": 0}"#);
    assert_eq!(s, CiterecStatus::InvalidRequest);

    let (s, _) = call(engine, r#"{"title": "qqqqzz wwwwyy"}"#);
    assert_eq!(s, CiterecStatus::Unembeddable);

    let (s, _) = call(engine, "not json");
    assert_eq!(s, CiterecStatus::Format);

    // success clears the previous error
    call(engine, &req);
    assert!(citerec_last_error_message().is_null());

    unsafe { citerec_engine_free(engine) };
}

#[test]
fn null_and_missing_arguments() {
    let mut engine = ptr::null_mut();
    let s = unsafe { citerec_engine_open(ptr::null(), ptr::null(), &mut engine) };
    assert_eq!(s, CiterecStatus::NullArgument);
    assert!(engine.is_null());

    let missing = CString::new("/nonexistent/citerec/model").unwrap();
    let s = unsafe { citerec_engine_open(missing.as_ptr(), ptr::null(), &mut engine) };
    assert_eq!(s, CiterecStatus::Io);
    assert!(last_error().contains("nonexistent"));
    assert!(engine.is_null());

    let s = unsafe { citerec_engine_open(missing.as_ptr(), ptr::null(), ptr::null_mut()) };
    assert_eq!(s, CiterecStatus::NullArgument);

    let req = CString::new("{}").unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { citerec_recommend_json(ptr::null(), req.as_ptr(), &mut out) };
    assert_eq!(s, CiterecStatus::NullArgument);
    assert!(out.is_null());

    unsafe {
        citerec_engine_free(ptr::null_mut());
        citerec_string_free(ptr::null_mut());
    }
    assert_eq!(unsafe { citerec_engine_corpus_size(ptr::null()) }, 0);

    let v = unsafe { CStr::from_ptr(citerec_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/citerec.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "citerec_engine_open",
        "citerec_engine_free",
        "citerec_recommend_json",
        "citerec_string_free",
        "citerec_last_error_message",
        "citerec_version",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    assert!(text.contains("typedef struct CiterecEngine CiterecEngine;"));
    assert!(text.contains("CITEREC_STATUS_UNEMBEDDABLE = 6"));

    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-std=c99", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        eprintln!("no C compiler available, syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
