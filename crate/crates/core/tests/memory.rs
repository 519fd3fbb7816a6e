use std::collections::{BTreeMap, BTreeSet, HashSet};

use autopilot_core::memory::{
    merge_rankings, Extractor, Matcher, MemorySource, MemoryStore, RecordMeta, RetrievalQuery, RuleExtractor,
};
use proptest::prelude::*;

fn l(items: &[(&str, f64)]) -> Vec<(String, f64)> {
    items.iter().map(|(d, s)| (d.to_string(), *s)).collect()
}

fn meta(user: &str) -> RecordMeta {
    RecordMeta { timestamp: "2024-03-01T10:00:00Z".into(), source: MemorySource::Note, user_id: user.into() }
}

#[test]
fn merge_golden() {
    let a = l(&[("A", 0.8), ("B", 0.7)]);
    let b = l(&[("B", 0.9), ("C", 0.6)]);
    let r = merge_rankings([&a, &b, &[], &[]], None);
    assert_eq!(r.pairs(), l(&[("B", 0.9), ("A", 0.8), ("C", 0.6)]));
    assert_eq!(r.entries[0].provenance, BTreeSet::from([Matcher::DocSoft, Matcher::PropSoft]));
}

#[test]
fn yellow_river_decomposition() {
    let props = RuleExtractor.extract("The Yellow River is in China and has a length of 5,464 km.").unwrap();
    let got: Vec<_> = props
        .iter()
        .map(|p| (p.text.as_str(), p.concept.as_str(), p.perspective.as_str(), p.mentioned_concepts.clone()))
        .collect();
    assert_eq!(
        got,
        vec![
            ("The Yellow River is in China", "Yellow River", "country", vec!["yellow river".to_string(), "china".to_string()]),
            ("The length of Yellow River is 5,464 km", "Yellow River", "length", vec!["yellow river".to_string()]),
        ]
    );
}

#[test]
fn concept_hard_scores_overlap_ratio() {
    let store = MemoryStore::default();
    let docs = [
        "The Yellow River is in China.",
        "Mount Fuji is in Japan.",
        "The Danube flows through Vienna.",
        "Paris is the capital of France.",
        "The Amazon is a river in Brazil.",
    ];
    for d in docs {
        store.ingest(d, meta("u")).unwrap();
    }
    let q = RetrievalQuery::from_text("how long is the Yellow River", 5, store.embedder()).with_concepts(["Yellow River", "length"]);
    let lists = store.match_lists(&q, "u", None);
    assert_eq!(lists.concept_hard, vec![("doc-000001".to_string(), 0.5)]);
    assert_eq!(store.retrieve(&q, "u").entries[0].doc_id, "doc-000001");
}

/// Sorted by score desc, then the priority of the first matcher (in list
/// order) that reached the best score, then doc id.
fn oracle(lists: &[Vec<(String, f64)>; 4]) -> Vec<(String, f64)> {
    let mut best: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (m, list) in lists.iter().enumerate() {
        for (d, s) in list {
            let e = best.entry(d.clone()).or_insert((f64::NEG_INFINITY, usize::MAX));
            if *s > e.0 {
                *e = (*s, m);
            } else if *s == e.0 && m < e.1 {
                e.1 = m;
            }
        }
    }
    let mut v: Vec<_> = best.into_iter().collect();
    v.sort_by(|(da, (sa, ma)), (db, (sb, mb))| sb.partial_cmp(sa).unwrap().then(ma.cmp(mb)).then(da.cmp(db)));
    v.into_iter().map(|(d, (s, _))| (d, s)).collect()
}

fn scored_list() -> impl Strategy<Value = Vec<(String, f64)>> {
    // Few ids and coarse scores so duplicates and ties are common.
    prop::collection::btree_map(0u8..12, 0u8..=10, 0..8)
        .prop_map(|m| m.into_iter().map(|(d, s)| (format!("D{d}"), f64::from(s) / 10.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn merge_matches_oracle(a in scored_list(), b in scored_list(), c in scored_list(), d in scored_list()) {
        let lists = [a, b, c, d];
        let r = merge_rankings([&lists[0], &lists[1], &lists[2], &lists[3]], None);
        let got = r.pairs();
        prop_assert_eq!(&got, &oracle(&lists));
        let ids: HashSet<_> = got.iter().map(|(d, _)| d).collect();
        prop_assert_eq!(ids.len(), got.len());
        for w in got.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
        for e in &r.entries {
            let max = lists.iter().flatten().filter(|(d, _)| *d == e.doc_id).map(|(_, s)| *s).fold(f64::MIN, f64::max);
            prop_assert_eq!(e.score, max);
            for (m, list) in Matcher::ALL.iter().zip(&lists) {
                prop_assert_eq!(e.provenance.contains(m), list.iter().any(|(d, _)| *d == e.doc_id));
            }
        }
    }

    #[test]
    fn top_k_is_a_prefix(a in scored_list(), b in scored_list(), k in 0usize..10) {
        let full = merge_rankings([&a, &b, &[], &[]], None).pairs();
        let top = merge_rankings([&a, &b, &[], &[]], Some(k)).pairs();
        prop_assert_eq!(&top[..], &full[..k.min(full.len())]);
    }
}

const NAMES: &[&str] = &["Alice", "Bob", "Carol", "Dmitri", "Elena", "Farah", "Goro", "Hana", "Ivan", "Jun"];
const PLACES: &[&str] = &["Seattle", "Lagos", "Oslo", "Lima", "Kyoto", "Quebec", "Tunis", "Perth", "Riga", "Cusco"];
const WORDS: &[&str] = &[
    "likes", "apples", "trains", "music", "painting", "rivers", "coffee", "chess", "sailing", "poetry", "tea",
    "mountains", "bread", "cycling", "gardens", "stars", "puzzles", "weaving", "lanterns", "maps",
];

fn corpus(n: usize) -> Vec<String> {
    let mut rng = 0x9e3779b97f4a7c15u64;
    let mut next = move |m: usize| {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        (rng % m as u64) as usize
    };
    (0..n)
        .map(|i| {
            let a = NAMES[i % NAMES.len()];
            let p = PLACES[(i / NAMES.len()) % PLACES.len()];
            let extra: Vec<&str> = (0..4).map(|_| WORDS[next(WORDS.len())]).collect();
            format!("{a} lives in {p}. {a} enjoys {} and {} near {}, item {i}.", extra[0], extra[1], extra[2..].join(" "))
        })
        .collect()
}

#[test]
fn self_query_ranks_first_and_concept_hard_matches_oracle() {
    let store = MemoryStore::default();
    let docs = corpus(100);
    let ids: Vec<String> = docs.iter().map(|d| store.ingest(d, meta("u")).unwrap()).collect();
    let mut firsts = 0;
    for (id, text) in ids.iter().zip(&docs) {
        let q = RetrievalQuery::from_text(text, 5, store.embedder());
        let r = store.retrieve(&q, "u");
        firsts += usize::from(r.entries.first().map(|e| &e.doc_id) == Some(id));

        let lists = store.match_lists(&q, "u", None);
        let qc: BTreeSet<&str> = q.concepts.iter().map(String::as_str).collect();
        let mut expect: Vec<(String, f64)> = Vec::new();
        for r in store.snapshot("u").iter() {
            let mut mentioned = BTreeSet::new();
            for p in &r.propositions {
                for c in &p.mentioned_concepts {
                    mentioned.insert(c.as_str());
                }
            }
            let shared = qc.intersection(&mentioned).count();
            if shared > 0 {
                expect.push((r.doc_id.clone(), shared as f64 / qc.len() as f64));
            }
        }
        expect.sort_by(|(da, a), (db, b)| b.partial_cmp(a).unwrap().then(da.cmp(db)));
        assert_eq!(lists.concept_hard, expect, "{text}");
    }
    assert_eq!(firsts, 100);
}

#[test]
fn retrieval_is_a_superset_of_every_matcher() {
    let store = MemoryStore::default();
    for d in corpus(30) {
        store.ingest(&d, meta("u")).unwrap();
    }
    let q = RetrievalQuery::from_text("Where does Carol live, Oslo?", 5, store.embedder());
    let lists = store.match_lists(&q, "u", None);
    let merged: HashSet<String> = lists.merge(None).entries.into_iter().map(|e| e.doc_id).collect();
    for m in Matcher::ALL {
        for (d, _) in lists.get(m) {
            assert!(merged.contains(d));
        }
    }
}

#[test]
fn dialogue_turns_use_content_at_time() {
    let store = MemoryStore::default();
    let id = store.store_dialogue("I moved to Lisbon", "2024-05-01T09:00:00Z", "u").unwrap();
    assert_eq!(store.get("u", &id).unwrap().text, "I moved to Lisbon@@2024-05-01T09:00:00Z");
}
