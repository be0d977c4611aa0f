mod common;

use citerec::app::server::{router, AppState};
use citerec::app::Artifacts;
use citerec::corpus::Split;
use serde_json::{json, Value};

use common::trained;

struct Harness {
    rt: tokio::runtime::Runtime,
    base: String,
    client: reqwest::Client,
}

impl Harness {
    fn start(state: AppState) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let base = rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            let addr = listener.local_addr().unwrap();
            tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
            format!("http://{addr}")
        });
        Harness {
            rt,
            base,
            client: reqwest::Client::new(),
        }
    }

    fn get(&self, path: &str) -> (u16, Value) {
        self.rt.block_on(async {
            let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
            (r.status().as_u16(), r.json().await.unwrap())
        })
    }

    fn post(&self, body: &str) -> (u16, Value) {
        self.rt.block_on(async {
            let r = self
                .client
                .post(format!("{}/recommend", self.base))
                .header("content-type", "application/json")
                .body(body.to_string())
                .send()
                .await
                .unwrap();
            (r.status().as_u16(), r.json().await.unwrap())
        })
    }
}

#[test]
fn endpoints() {
    let art = trained();
    let doc = art.store.doc(art.store.query_indices(Split::Test)[0]).clone();
    let h = Harness::start(AppState::new(art));

    let (s, v) = h.get("/health");
    assert_eq!(s, 200);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["corpus_size"], 400);
    assert_eq!(v["ranker_loaded"], true);
    assert!(v["indexed"].as_u64().unwrap() > 0);

    let (s, v) = h.get(&format!("/document/{}", doc.id));
    assert_eq!(s, 200);
    assert_eq!(v["id"], doc.id.as_str());
    assert_eq!(v["title"], doc.title.as_str());
    let (s, v) = h.get("/document/no-such-paper");
    assert_eq!(s, 404);
    assert!(v["error"].as_str().unwrap().contains("no-such-paper"));

    let body = json!({ "title": doc.title, "abstract": doc.abstract_tokens.join(" "), "k": 7 }).to_string();
    let (s, v) = h.post(&body);
    assert_eq!(s, 200);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 7);
    for r in results {
        assert!(r["id"].is_string() && r["title"].is_string() && r["score"].is_number());
        assert!(["neighbor", "neighbor_citation"].contains(&r["origin"].as_str().unwrap()));
    }
    assert!(v["timing_ms"].as_f64().unwrap() >= 0.0);
    assert_eq!(h.post(&body).1["results"], v["results"]);

    let (s, v) = h.post(&json!({ "title": doc.title, "mode": "bm25", "k": 3 }).to_string());
    assert_eq!(s, 200);
    assert!(v["results"].as_array().unwrap().iter().all(|r| r["origin"] == "bm25"));

    assert_eq!(h.post(r#"{"title": "", "abstract": ""}"#).0, 400);
    assert_eq!(h.post(r#"{"title": "x", "k": 0}"#).0, 400);
    assert_eq!(h.post(r#"{"title": "x", "mode": "nope"}"#).0, 400);
    assert_eq!(h.post("not json").0, 400);
    let (s, v) = h.post(r#"{"title": "qqqzzz", "abstract": "xxxyyy"}"#);
    assert_eq!(s, 422);
    assert!(v["error"].is_string());
}

#[test]
fn cors_and_hot_swap() {
    let art = trained();
    let cfg = art.config.clone();
    let store = art.store.clone();
    let select_only = Artifacts::new(cfg, store, art.embedder.clone(), art.forest.clone(), None, None);
    let state = AppState::new(art);
    let h = Harness::start(state.clone());

    let origin = h.rt.block_on(async {
        let r = h
            .client
            .get(format!("{}/health", h.base))
            .header("origin", "http://localhost:5173")
            .send()
            .await
            .unwrap();
        r.headers().get("access-control-allow-origin").map(|v| v.to_str().unwrap().to_string())
    });
    assert_eq!(origin.as_deref(), Some("*"));

    assert_eq!(h.get("/health").1["ranker_loaded"], true);
    state.swap(select_only);
    assert_eq!(h.get("/health").1["ranker_loaded"], false);
    // rerank needs a ranker; selection still works
    assert_eq!(h.post(r#"{"title": "a", "abstract": "b"}"#).0 / 100, 4);
}
