//! Maximum-similarity merge of the four matcher rankings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Matchers in tie-break priority order (highest first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    DocSoft,
    PropSoft,
    ConceptSoft,
    ConceptHard,
}

impl Matcher {
    pub const ALL: [Matcher; 4] = [Matcher::DocSoft, Matcher::PropSoft, Matcher::ConceptSoft, Matcher::ConceptHard];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub provenance: BTreeSet<Matcher>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    pub fn pairs(&self) -> Vec<(String, f64)> {
        self.entries.iter().map(|e| (e.doc_id.clone(), e.score)).collect()
    }
}

pub type ScoredList = Vec<(String, f64)>;

/// Merges per-matcher lists given in [`Matcher::ALL`] order.
///
/// Each document's score is the maximum it received; its provenance is every
/// list it appeared in. Ties on score are broken by the highest-priority
/// matcher that produced the winning score, then by doc id.
pub fn merge_rankings(lists: [&[(String, f64)]; 4], k: Option<usize>) -> RankedResult {
    struct Acc {
        score: f64,
        best: Matcher,
        provenance: BTreeSet<Matcher>,
    }
    let mut docs: BTreeMap<&str, Acc> = BTreeMap::new();
    for (matcher, list) in Matcher::ALL.into_iter().zip(lists) {
        for (doc, score) in list {
            if score.is_nan() {
                continue;
            }
            let acc = docs.entry(doc.as_str()).or_insert(Acc {
                score: *score,
                best: matcher,
                provenance: BTreeSet::new(),
            });
            acc.provenance.insert(matcher);
            if *score > acc.score || (*score == acc.score && matcher < acc.best) {
                acc.score = *score;
                acc.best = matcher;
            }
        }
    }
    let mut ranked: Vec<(&str, Acc)> = docs.into_iter().collect();
    ranked.sort_by(|(da, a), (db, b)| {
        b.score.total_cmp(&a.score).then(a.best.cmp(&b.best)).then(da.cmp(db))
    });
    if let Some(k) = k {
        ranked.truncate(k);
    }
    RankedResult {
        entries: ranked
            .into_iter()
            .map(|(d, a)| RankedEntry { doc_id: d.to_string(), score: a.score, provenance: a.provenance })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(items: &[(&str, f64)]) -> ScoredList {
        items.iter().map(|(d, s)| (d.to_string(), *s)).collect()
    }

    #[test]
    fn singleton_passthrough() {
        let one = l(&[("A", 0.4)]);
        let r = merge_rankings([&[], &one, &[], &[]], None);
        assert_eq!(r.pairs(), vec![("A".to_string(), 0.4)]);
        assert_eq!(r.entries[0].provenance, BTreeSet::from([Matcher::PropSoft]));
    }

    #[test]
    fn same_score_everywhere() {
        let x = l(&[("D", 0.7)]);
        let r = merge_rankings([&x, &x, &x, &x], Some(10));
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].score, 0.7);
        assert_eq!(r.entries[0].provenance.len(), 4);
    }

    #[test]
    fn tie_break_by_winning_matcher() {
        let hard = l(&[("A", 0.5)]);
        let soft = l(&[("Z", 0.5), ("A", 0.1)]);
        let r = merge_rankings([&soft, &[], &[], &hard], None);
        assert_eq!(r.pairs(), vec![("Z".to_string(), 0.5), ("A".to_string(), 0.5)]);
    }
}
