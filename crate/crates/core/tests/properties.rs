mod common;

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use citerec::app::Artifacts;
use citerec::bm25::{Bm25Config, Bm25Index};
use citerec::corpus::Split;
use citerec::eval::{evaluate_run, mrr, Gold, Predictions};
use citerec::linalg::cosine;
use citerec::rank::rerank;
use citerec::select::{select_candidates, Origin};
use proptest::prelude::*;

fn model() -> &'static Artifacts {
    static M: OnceLock<Artifacts> = OnceLock::new();
    M.get_or_init(common::trained)
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn selection_scores_are_exact_cosines(pick in any::<prop::sample::Index>(), k in 1usize..25) {
        let a = model();
        let queries = a.store.query_indices(Split::Test);
        let q = a.store.doc(queries[pick.index(queries.len())]);
        let set = select_candidates(q, &a.embedder, &a.forest, &a.store, k, None).unwrap();
        let eq = a.embedder.doc_embedding(q).vector;

        let mut seen = HashSet::new();
        for c in &set.candidates {
            prop_assert!(seen.insert(c.id.clone()), "duplicate {}", c.id);
            prop_assert_ne!(&c.id, &q.id);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c.score));
            let oracle = cosine(&eq, &a.embedder.doc_embedding(a.store.get(&c.id).unwrap()).vector);
            prop_assert!((c.score - oracle).abs() < 1e-9, "{} vs {}", c.score, oracle);
        }
        prop_assert!(set.candidates.windows(2).all(|w| w[0].score >= w[1].score));
        let neighbors = set.candidates.iter().filter(|c| c.origin == Origin::Neighbor).count();
        prop_assert!(neighbors <= k);
        // every expansion is cited by some selected neighbor
        for c in set.candidates.iter().filter(|c| c.origin == Origin::NeighborCitation) {
            prop_assert!(set.candidates.iter().any(|n| n.origin == Origin::Neighbor
                && a.store.get(&n.id).unwrap().out_citations.contains(&c.id)));
        }
    }

    #[test]
    fn rerank_permutes_a_prefix_of_candidates(pick in any::<prop::sample::Index>(), top in 1usize..40) {
        let a = model();
        let queries = a.store.query_indices(Split::Dev);
        let q = a.store.doc(queries[pick.index(queries.len())]);
        let set = select_candidates(q, &a.embedder, &a.forest, &a.store, 8, None).unwrap();
        let out = rerank(q, &set, &a.store, a.ranker.as_ref().unwrap(), &a.embedder, top);
        prop_assert_eq!(out.len(), top.min(set.len()));
        let ids: HashSet<_> = set.ids().into_iter().collect();
        prop_assert!(out.iter().all(|s| ids.contains(&s.id)));
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
        prop_assert!(out.iter().all(|s| s.score > 0.0 && s.score < 1.0));
    }
}

fn bm25() -> &'static Bm25Index {
    static I: OnceLock<Bm25Index> = OnceLock::new();
    I.get_or_init(|| Bm25Index::build(&model().store, &Bm25Config::default()))
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn bm25_scores_grow_with_matching_terms(pick in any::<prop::sample::Index>(), n in 1usize..10) {
        let index = bm25();
        let store = &model().store;
        let d = store.doc(pick.index(store.len()));
        let terms: Vec<String> = d.abstract_tokens.iter().take(n + 1).cloned().collect();
        let fewer = index.score(&terms[..terms.len() - 1], &d.id);
        let more = index.score(&terms, &d.id);
        prop_assert!(fewer >= 0.0);
        prop_assert!(more > fewer, "{more} <= {fewer}");
    }

    #[test]
    fn bm25_search_is_sorted_and_excludes(pick in any::<prop::sample::Index>(), top in 1usize..30) {
        let index = bm25();
        let store = &model().store;
        let d = store.doc(pick.index(store.len()));
        let terms = index.key_terms(d, 20);
        let hits = index.search(&terms, top, Some(&d.id));
        prop_assert!(hits.len() <= top);
        prop_assert!(hits.iter().all(|(id, _)| id != &d.id));
        prop_assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));
        for (id, s) in &hits {
            prop_assert!((index.score(&terms, id) - s).abs() < 1e-9);
        }
    }
}

/// Predictions over ids `0..40` for a few queries, each with nonempty gold.
fn run_strategy() -> impl Strategy<Value = (Predictions, Gold)> {
    prop::collection::vec(
        (
            Just((0..40u32).collect::<Vec<_>>()).prop_shuffle(),
            1usize..40,
            prop::collection::hash_set(0..60u32, 1..8),
        ),
        1..6,
    )
    .prop_map(|qs| {
        let mut p = BTreeMap::new();
        let mut g = BTreeMap::new();
        for (i, (order, len, gold)) in qs.into_iter().enumerate() {
            let q = format!("q{i}");
            p.insert(q.clone(), order.into_iter().take(len).map(|x| x.to_string()).collect());
            g.insert(q, gold.into_iter().map(|x| x.to_string()).collect());
        }
        (p, g)
    })
}

proptest! {
    #![proptest_config(cases(128))]

    #[test]
    fn metric_bounds((p, g) in run_strategy()) {
        let r = evaluate_run(&p, &g, &[1, 5, 20]);
        prop_assert_eq!(r.queries, p.len());
        for k in [1, 5, 20] {
            prop_assert!((0.0..=1.0).contains(&r.precision_at(k)));
            prop_assert!((0.0..=1.0).contains(&r.recall_at(k)));
        }
        prop_assert!(r.recall_at(1) <= r.recall_at(5) && r.recall_at(5) <= r.recall_at(20));
        let (lo, hi) = {
            let (a, b) = (r.precision_at(20), r.recall_at(20));
            (a.min(b), a.max(b))
        };
        prop_assert!(r.f1_at_20 >= lo - 1e-12 && r.f1_at_20 <= hi + 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.mrr));
        prop_assert!((r.mrr - mrr(&p, &g)).abs() < 1e-12);
    }

    #[test]
    fn mrr_ignores_order_after_first_hit((p, g) in run_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shuffled: Predictions = p
            .iter()
            .map(|(q, ranked)| {
                let mut ranked = ranked.clone();
                if let Some(first) = ranked.iter().position(|id| g[q].contains(id)) {
                    ranked[first + 1..].shuffle(&mut rng);
                }
                (q.clone(), ranked)
            })
            .collect();
        prop_assert_eq!(mrr(&p, &g), mrr(&shuffled, &g));
    }
}
