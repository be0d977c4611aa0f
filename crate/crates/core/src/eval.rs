//! Ranking metrics and the shared-author rank analysis.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusStore;

/// Ranked predictions per query id.
pub type Predictions = BTreeMap<String, Vec<String>>;
/// Cited ids per query id.
pub type Gold = BTreeMap<String, HashSet<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: String,
    pub hits: BTreeMap<usize, usize>,
    pub gold_size: usize,
    pub reciprocal_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub f1_at_20: f64,
    pub mrr: f64,
    pub queries: usize,
    /// Prediction queries skipped for lacking gold citations.
    pub excluded: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_query: Option<Vec<QueryMetrics>>,
}

impl MetricsReport {
    pub fn precision_at(&self, k: usize) -> f64 {
        self.precision.get(&k).copied().unwrap_or(0.0)
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(0.0)
    }

    /// Fixed-width table with P@10, P@20, R@20, F1@20 and MRR columns.
    pub fn text_table(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>7} {:>7} {:>7} {:>7} {:>7}", "run", "P@10", "P@20", "R@20", "F1@20", "MRR");
        let _ = writeln!(
            s,
            "{:<20} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
            label,
            self.precision_at(10),
            self.precision_at(20),
            self.recall_at(20),
            self.f1_at_20,
            self.mrr
        );
        s
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn reciprocal_rank(ranked: &[String], gold: &HashSet<String>) -> f64 {
    ranked
        .iter()
        .position(|id| gold.contains(id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Macro-averaged precision and recall at each cutoff (20 is always
/// included), F1@20 from the averaged values, and MRR. Queries without gold
/// citations are excluded and counted.
pub fn evaluate_run(predictions: &Predictions, gold: &Gold, k_values: &[usize]) -> MetricsReport {
    evaluate_inner(predictions, gold, k_values, false)
}

/// As [`evaluate_run`], keeping per-query hit counts.
pub fn evaluate_run_detailed(predictions: &Predictions, gold: &Gold, k_values: &[usize]) -> MetricsReport {
    evaluate_inner(predictions, gold, k_values, true)
}

fn evaluate_inner(predictions: &Predictions, gold: &Gold, k_values: &[usize], keep: bool) -> MetricsReport {
    let mut ks: Vec<usize> = k_values.iter().copied().filter(|&k| k > 0).collect();
    ks.push(20);
    ks.sort_unstable();
    ks.dedup();

    let mut precision: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut recall = precision.clone();
    let mut rr_sum = 0.0;
    let mut per_query = Vec::new();
    let mut excluded = 0;
    let mut n = 0usize;
    for (q, ranked) in predictions {
        let Some(g) = gold.get(q).filter(|g| !g.is_empty()) else {
            excluded += 1;
            continue;
        };
        n += 1;
        let mut hits = BTreeMap::new();
        for &k in &ks {
            // repeated predictions occupy slots but only hit once
            let h = ranked
                .iter()
                .take(k)
                .filter(|id| g.contains(*id))
                .collect::<HashSet<_>>()
                .len();
            *precision.get_mut(&k).expect("cutoff present") += h as f64 / k as f64;
            *recall.get_mut(&k).expect("cutoff present") += h as f64 / g.len() as f64;
            hits.insert(k, h);
        }
        let rr = reciprocal_rank(ranked, g);
        rr_sum += rr;
        if keep {
            per_query.push(QueryMetrics {
                query: q.clone(),
                hits,
                gold_size: g.len(),
                reciprocal_rank: rr,
            });
        }
    }
    if excluded > 0 {
        tracing::warn!(excluded, "queries without gold citations were excluded");
    }
    let denom = n.max(1) as f64;
    precision.values_mut().for_each(|v| *v /= denom);
    recall.values_mut().for_each(|v| *v /= denom);
    MetricsReport {
        f1_at_20: harmonic(precision[&20], recall[&20]),
        precision,
        recall,
        mrr: rr_sum / denom,
        queries: n,
        excluded,
        per_query: keep.then_some(per_query),
    }
}

/// Mean reciprocal rank of the first gold item over queries with gold.
pub fn mrr(predictions: &Predictions, gold: &Gold) -> f64 {
    let rrs: Vec<f64> = predictions
        .iter()
        .filter_map(|(q, ranked)| gold.get(q).filter(|g| !g.is_empty()).map(|g| reciprocal_rank(ranked, g)))
        .collect();
    if rrs.is_empty() {
        0.0
    } else {
        rrs.iter().sum::<f64>() / rrs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCitationRow {
    pub n: usize,
    pub mean_rank: Option<f64>,
    pub max_rank: Option<usize>,
    pub pairs: usize,
}

/// For each cutoff `n`, the mean and max 1-based rank of predictions that
/// share an author with their query, pooled over all (query, prediction)
/// pairs in the top `n`. Queries and predictions are looked up in `store`.
pub fn self_citation_stats(predictions: &Predictions, store: &CorpusStore, n_values: &[usize]) -> Vec<SelfCitationRow> {
    let shared: Vec<Vec<usize>> = predictions
        .iter()
        .filter_map(|(q, ranked)| {
            let qa: HashSet<&String> = store.get(q)?.authors.iter().collect();
            Some(
                ranked
                    .iter()
                    .enumerate()
                    .filter(|(_, id)| store.get(id).is_some_and(|d| d.authors.iter().any(|a| qa.contains(a))))
                    .map(|(i, _)| i + 1)
                    .collect(),
            )
        })
        .collect();
    n_values
        .iter()
        .map(|&n| {
            let ranks: Vec<usize> = shared.iter().flatten().copied().filter(|&r| r <= n).collect();
            SelfCitationRow {
                n,
                mean_rank: (!ranks.is_empty()).then(|| ranks.iter().sum::<usize>() as f64 / ranks.len() as f64),
                max_rank: ranks.iter().max().copied(),
                pairs: ranks.len(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Limits};
    use proptest::prelude::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn set(v: &[String]) -> HashSet<String> {
        v.iter().cloned().collect()
    }

    #[test]
    fn single_query_fixture() {
        let gold_ids = ids("g", 5);
        let mut ranked = gold_ids[..3].to_vec();
        ranked.extend(ids("x", 17));
        let preds: Predictions = [("q".to_string(), ranked)].into_iter().collect();
        let gold: Gold = [("q".to_string(), set(&gold_ids))].into_iter().collect();
        let r = evaluate_run(&preds, &gold, &[20]);
        assert_eq!(r.precision_at(20), 0.15);
        assert_eq!(r.recall_at(20), 0.6);
        assert!((r.f1_at_20 - 0.24).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_macro_average() {
        let g = ids("g", 20);
        let preds: Predictions = [("q".to_string(), g.clone())].into_iter().collect();
        let gold: Gold = [("q".to_string(), set(&g))].into_iter().collect();
        let r = evaluate_run(&preds, &gold, &[20]);
        assert_eq!((r.precision_at(20), r.recall_at(20), r.f1_at_20), (1.0, 1.0, 1.0));

        let mut preds = Predictions::new();
        let mut gold = Gold::new();
        preds.insert("a".into(), vec!["a1".into()]);
        gold.insert("a".into(), set(&["a1".to_string()]));
        preds.insert("b".into(), vec!["zz".into()]);
        gold.insert("b".into(), set(&["b1".to_string()]));
        let r = evaluate_run(&preds, &gold, &[20]);
        assert_eq!(r.recall_at(20), 0.5);
        assert_eq!(r.precision_at(20), 0.025);
    }

    #[test]
    fn mrr_fixtures() {
        let gold: Gold = [("a".to_string(), set(&["g".to_string()])), ("b".to_string(), set(&["g".to_string()]))]
            .into_iter()
            .collect();
        let mut preds = Predictions::new();
        preds.insert("a".into(), vec!["g".into()]);
        assert_eq!(mrr(&preds, &gold), 1.0);
        preds.insert("a".into(), vec!["x".into(), "y".into(), "z".into(), "g".into()]);
        assert_eq!(mrr(&preds, &gold), 0.25);
        preds.insert("a".into(), vec!["g".into()]);
        preds.insert("b".into(), vec!["x".into(), "g".into()]);
        assert_eq!(mrr(&preds, &gold), 0.75);
        assert_eq!(evaluate_run(&preds, &gold, &[]).mrr, 0.75);
    }

    #[test]
    fn missing_gold_is_excluded() {
        let preds: Predictions = [("q".to_string(), vec!["a".to_string()]), ("r".to_string(), vec![])]
            .into_iter()
            .collect();
        let gold: Gold = [("q".to_string(), set(&["a".to_string()]))].into_iter().collect();
        let r = evaluate_run(&preds, &gold, &[1]);
        assert_eq!((r.queries, r.excluded), (1, 1));
        assert_eq!(r.precision_at(1), 1.0);
    }

    fn authored(id: &str, authors: &[&str]) -> Document {
        Document::from_text(id, id, "", &Limits::default()).with_authors(authors.iter().copied(), &Limits::default())
    }

    #[test]
    fn self_citation_fixtures() {
        let store = CorpusStore::from_documents(vec![
            authored("q", &["ann"]),
            authored("a", &["bob"]),
            authored("b", &["cy"]),
            authored("c", &["ann", "dee"]),
        ])
        .unwrap();
        let preds: Predictions = [("q".to_string(), vec!["a".into(), "b".into(), "c".into()])].into_iter().collect();
        let rows = self_citation_stats(&preds, &store, &[10, 2]);
        assert_eq!(rows[0].mean_rank, Some(3.0));
        assert_eq!(rows[0].max_rank, Some(3));
        assert_eq!(rows[1].mean_rank, None);
        assert_eq!(rows[1].max_rank, None);
    }

    proptest! {
        #[test]
        fn hit_counts_are_integral_and_f1_bounded(
            ranked in proptest::collection::vec(0u8..30, 0..40),
            gold in proptest::collection::hash_set(0u8..30, 1..10),
            k in 1usize..30,
        ) {
            let ranked: Vec<String> = ranked.iter().map(|i| format!("d{i}")).collect();
            let gold: HashSet<String> = gold.iter().map(|i| format!("d{i}")).collect();
            let g_len = gold.len();
            let preds: Predictions = [("q".to_string(), ranked.clone())].into_iter().collect();
            let golds: Gold = [("q".to_string(), gold)].into_iter().collect();
            let r = evaluate_run(&preds, &golds, &[k]);
            let ph = r.precision_at(k) * k as f64;
            let rh = r.recall_at(k) * g_len as f64;
            prop_assert!((ph - ph.round()).abs() < 1e-9);
            prop_assert!((rh - rh.round()).abs() < 1e-9);
            let (p, rc) = (r.precision_at(20), r.recall_at(20));
            prop_assert!(r.f1_at_20 >= p.min(rc) - 1e-12 && r.f1_at_20 <= p.max(rc) + 1e-12);
            for v in r.precision.values().chain(r.recall.values()) {
                prop_assert!((0.0..=1.0).contains(v));
            }

            // permuting below the first hit leaves MRR unchanged
            if let Some(first) = ranked.iter().position(|id| golds["q"].contains(id)) {
                let mut permuted = ranked.clone();
                permuted[first + 1..].reverse();
                let p2: Predictions = [("q".to_string(), permuted)].into_iter().collect();
                prop_assert_eq!(mrr(&preds, &golds), mrr(&p2, &golds));
            }
        }
    }
}
